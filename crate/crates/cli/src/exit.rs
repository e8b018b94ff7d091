//! Process exit codes: 0 success, 2 bad input, 3 infeasible, 4 inconsistent.

use std::fmt;

use sfl_core::Error;

pub const INPUT: u8 = 2;
pub const INFEASIBLE: u8 = 3;
pub const INCONSISTENT: u8 = 4;

/// A plan or trace that disagrees with the scenario or the analytic model.
#[derive(Debug)]
pub struct Inconsistency(pub String);

impl fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Inconsistency {}

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Inconsistency>() {
            return INCONSISTENT;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            if e.is_infeasible() {
                return INFEASIBLE;
            }
            if matches!(e, Error::InvalidPlan(_)) {
                return INCONSISTENT;
            }
            return INPUT;
        }
    }
    INPUT
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        let infeasible = anyhow::Error::from(Error::InfeasibleTarget {
            t_theta: 1.0,
            floor: 2.0,
        });
        assert_eq!(code(&infeasible), INFEASIBLE);
        let wrapped = infeasible.context("allocating");
        assert_eq!(code(&wrapped), INFEASIBLE);
        let bad = anyhow::Error::from(Inconsistency("drift".into()));
        assert_eq!(code(&bad), INCONSISTENT);
        assert_eq!(
            code(&anyhow::Error::from(Error::InvalidPlan("x".into()))),
            INCONSISTENT
        );
        assert_eq!(code(&anyhow::Error::from(Error::Domain("x".into()))), INPUT);
        assert_eq!(code(&anyhow::anyhow!("io")), INPUT);
    }
}
