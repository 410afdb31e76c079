//! Schedule construction, admission, bid evaluation, failure repair and the
//! exhaustive oracle.

mod admission;
mod oracle;
pub mod planning;
mod repair;
mod rules;

use thiserror::Error;

use crate::agents::Bid;

pub use admission::{admission_check, plan_order, AdmissionResult, OrderPlan, PlanContext};
pub use oracle::{
    brute_force_optimum, permutation_makespan, random_instance, OracleError, OracleInstance,
    OracleJob, OracleResult,
};
pub use planning::{Insertion, PlanningState, Timeline};
pub use repair::{repair_on_failure, RepairOutcome, RepairStrategy};
pub use rules::{
    build_static_schedule, effective_rule, order_priority, plan_initial, DispatchRule, InitialPlan,
};

/// Thirty days of minutes.
pub const DEFAULT_HORIZON: crate::domain::Minutes = 30 * 24 * 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("no capacity for {op_id}: {reason}")]
    NoCapacity { op_id: String, reason: String },
    #[error("order {0} is not an initial order")]
    NotInitial(String),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BidError {
    #[error("no bids to evaluate")]
    EmptyBidSet,
    #[error("bids cover different operations")]
    MixedOperations,
}

/// Picks the bid with the earliest completion; equal completions go to the
/// lowest machine id.
pub fn evaluate_bids(bids: &[Bid]) -> Result<&Bid, BidError> {
    let first = bids.first().ok_or(BidError::EmptyBidSet)?;
    if bids.iter().any(|b| b.op_id != first.op_id) {
        return Err(BidError::MixedOperations);
    }
    Ok(bids
        .iter()
        .min_by(|a, b| (a.completion, &a.machine_id).cmp(&(b.completion, &b.machine_id)))
        .expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bid(m: &str, c: i64) -> Bid {
        Bid {
            machine_id: m.into(),
            op_id: "op".into(),
            earliest_start: c - 1,
            completion: c,
        }
    }

    #[test]
    fn argmin_completion() {
        let bids = [bid("M1", 12), bid("M2", 9), bid("M3", 14)];
        assert_eq!(evaluate_bids(&bids).unwrap().machine_id, "M2");
    }

    #[test]
    fn tie_goes_to_lowest_machine() {
        let bids = [bid("M2", 9), bid("M1", 9)];
        assert_eq!(evaluate_bids(&bids).unwrap().machine_id, "M1");
    }

    #[test]
    fn empty_bid_set() {
        assert_eq!(evaluate_bids(&[]), Err(BidError::EmptyBidSet));
    }

    #[test]
    fn mixed_ops_rejected() {
        let mut b = bid("M2", 3);
        b.op_id = "other".into();
        assert_eq!(
            evaluate_bids(&[bid("M1", 2), b]),
            Err(BidError::MixedOperations)
        );
    }
}
