//! Exhaustive permutation search for desk-sized flow lines. With one machine
//! per stage and at most three stages a permutation schedule is optimal for
//! makespan, so enumerating job orders yields the true optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    DeadlineClass, Factory, Machine, Minutes, Order, OrderSource, ProductModel, ProfileTier,
    RouteStep, Stage, TransportConfig, TravelLeg, Workstation,
};

pub const MAX_ORACLE_JOBS: usize = 6;
pub const MAX_ORACLE_STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleJob {
    pub id: String,
    /// Processing time per stage, in flow order.
    pub times: Vec<Minutes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub due: Option<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub jobs: Vec<OracleJob>,
    /// Travel time of each stage-to-stage leg; missing legs are zero.
    #[serde(default)]
    pub transport: Vec<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub makespan: Minutes,
    pub sequence: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for exhaustive search ({jobs} jobs, {stages} stages)")]
    InstanceTooLarge { jobs: usize, stages: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

impl OracleInstance {
    pub fn stages(&self) -> usize {
        self.jobs.first().map(|j| j.times.len()).unwrap_or(0)
    }

    fn leg(&self, k: usize) -> Minutes {
        self.transport.get(k).copied().unwrap_or(0)
    }

    fn check(&self) -> Result<(), OracleError> {
        let stages = self.stages();
        if self.jobs.len() > MAX_ORACLE_JOBS || stages > MAX_ORACLE_STAGES {
            return Err(OracleError::InstanceTooLarge {
                jobs: self.jobs.len(),
                stages,
            });
        }
        for j in &self.jobs {
            if j.times.len() != stages || j.times.is_empty() {
                return Err(OracleError::InvalidInstance(format!(
                    "job {} has {} stages, expected {}",
                    j.id,
                    j.times.len(),
                    stages
                )));
            }
            if j.times.iter().any(|&t| t <= 0) {
                return Err(OracleError::InvalidInstance(format!(
                    "job {} has a non-positive processing time",
                    j.id
                )));
            }
        }
        let mut ids: Vec<&str> = self.jobs.iter().map(|j| j.id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(OracleError::InvalidInstance("duplicate job ids".into()));
        }
        if self.transport.iter().any(|&t| t < 0) {
            return Err(OracleError::InvalidInstance(
                "negative transport time".into(),
            ));
        }
        Ok(())
    }

    /// The same instance as a factory with one machine per stage, one model
    /// and one single-unit order per job (order id = job id).
    pub fn to_problem(&self) -> (Factory, Vec<ProductModel>, Vec<Order>) {
        let stages = self.stages();
        let mut stations = Vec::new();
        let mut machines = Vec::new();
        for (i, stage) in Stage::ALL.iter().take(stages).enumerate() {
            let sid = format!("S{}", i + 1);
            let mid = format!("M{}1", i + 1);
            machines.push(Machine {
                machine_id: mid.clone(),
                station_id: sid.clone(),
                failure_windows: vec![],
            });
            stations.push(Workstation {
                station_id: sid,
                stage: *stage,
                machines: vec![mid],
            });
        }
        let travel = (0..stages.saturating_sub(1))
            .filter(|&k| self.leg(k) > 0)
            .map(|k| TravelLeg {
                from: format!("S{}", k + 1),
                to: format!("S{}", k + 2),
                minutes: self.leg(k),
            })
            .collect();
        let factory = Factory {
            stations,
            machines,
            transport: TransportConfig {
                fleet_size: self.jobs.len().max(1) as u32,
                travel,
            },
            warehouses: crate::domain::default_warehouses(),
        };
        let models = self
            .jobs
            .iter()
            .map(|j| ProductModel {
                model_id: format!("m-{}", j.id),
                name: format!("model for {}", j.id),
                profile_tier: ProfileTier::Medium,
                color: "white".into(),
                routing: j
                    .times
                    .iter()
                    .zip(Stage::ALL)
                    .map(|(&p, stage)| RouteStep {
                        stage,
                        processing_time: p,
                        max_wait_after: None,
                    })
                    .collect(),
            })
            .collect();
        let orders = self
            .jobs
            .iter()
            .map(|j| Order {
                order_id: j.id.clone(),
                model_id: format!("m-{}", j.id),
                quantity: 1,
                release_time: 0,
                due_date: j.due.unwrap_or(10_000),
                deadline_class: DeadlineClass::Soft,
                source: OrderSource::Initial,
                period: None,
            })
            .collect();
        (factory, models, orders)
    }
}

/// Seeded instance with 1..=5 jobs, 1..=3 stages, processing times in
/// 1..=9, due dates in 5..=40 and zero transport.
pub fn random_instance(seed: u64) -> OracleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = rng.gen_range(1..=MAX_ORACLE_STAGES);
    let jobs = (1..=rng.gen_range(1..=5))
        .map(|i| OracleJob {
            id: format!("J{i}"),
            times: (0..stages).map(|_| rng.gen_range(1..=9)).collect(),
            due: Some(rng.gen_range(5..=40)),
        })
        .collect();
    OracleInstance {
        jobs,
        transport: vec![],
    }
}

/// Makespan of the permutation schedule visiting jobs in `order`.
pub fn permutation_makespan(inst: &OracleInstance, order: &[usize]) -> Minutes {
    let stages = inst.stages();
    let mut machine_free = vec![0; stages];
    for &j in order {
        let mut ready = 0;
        for (s, free) in machine_free.iter_mut().enumerate() {
            let arrival = if s == 0 { 0 } else { ready + inst.leg(s - 1) };
            let start = arrival.max(*free);
            *free = start + inst.jobs[j].times[s];
            ready = *free;
        }
    }
    machine_free.last().copied().unwrap_or(0)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Minimum makespan over all job permutations, with the lexicographically
/// smallest witnessing sequence of job ids.
pub fn brute_force_optimum(inst: &OracleInstance) -> Result<OracleResult, OracleError> {
    inst.check()?;
    let mut by_id: Vec<usize> = (0..inst.jobs.len()).collect();
    by_id.sort_by(|&a, &b| inst.jobs[a].id.cmp(&inst.jobs[b].id));
    // Permuting ranks in lexicographic order visits id sequences in lexicographic order.
    let mut ranks: Vec<usize> = (0..by_id.len()).collect();
    let mut best: Option<(Minutes, Vec<usize>)> = None;
    loop {
        let seq: Vec<usize> = ranks.iter().map(|&r| by_id[r]).collect();
        let span = permutation_makespan(inst, &seq);
        if best.as_ref().is_none_or(|(b, _)| span < *b) {
            best = Some((span, seq));
        }
        if !next_permutation(&mut ranks) {
            break;
        }
    }
    let (makespan, seq) = best.unwrap_or((0, vec![]));
    Ok(OracleResult {
        makespan,
        sequence: seq.iter().map(|&j| inst.jobs[j].id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(jobs: &[(&str, &[Minutes])], transport: &[Minutes]) -> OracleInstance {
        OracleInstance {
            jobs: jobs
                .iter()
                .map(|(id, t)| OracleJob {
                    id: id.to_string(),
                    times: t.to_vec(),
                    due: None,
                })
                .collect(),
            transport: transport.to_vec(),
        }
    }

    #[test]
    fn single_job_sums_times_and_transport() {
        let r = brute_force_optimum(&inst(&[("J1", &[4, 3, 2])], &[1, 2])).unwrap();
        assert_eq!(r.makespan, 4 + 3 + 2 + 1 + 2);
        assert_eq!(r.sequence, vec!["J1"]);
    }

    #[test]
    fn three_job_instance_optimum_is_ten() {
        let r = brute_force_optimum(&inst(
            &[("J1", &[3, 2]), ("J2", &[1, 4]), ("J3", &[2, 3])],
            &[],
        ))
        .unwrap();
        assert_eq!(r.makespan, 10);
        assert_eq!(r.sequence, vec!["J2", "J1", "J3"]);
    }

    #[test]
    fn all_six_sequences_of_the_three_job_instance() {
        let i = inst(&[("J1", &[3, 2]), ("J2", &[1, 4]), ("J3", &[2, 3])], &[]);
        let spans: Vec<(Vec<usize>, Minutes)> = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ]
        .iter()
        .map(|p| (p.to_vec(), permutation_makespan(&i, p)))
        .collect();
        let optimal: Vec<_> = spans
            .iter()
            .filter(|(_, m)| *m == 10)
            .map(|(p, _)| p.clone())
            .collect();
        assert_eq!(optimal, vec![vec![1, 0, 2], vec![1, 2, 0]]);
        assert!(spans.iter().all(|(_, m)| *m >= 10));
    }

    #[test]
    fn too_large() {
        let jobs: Vec<(String, Vec<Minutes>)> =
            (0..7).map(|i| (format!("J{i}"), vec![1, 1])).collect();
        let i = OracleInstance {
            jobs: jobs
                .into_iter()
                .map(|(id, times)| OracleJob {
                    id,
                    times,
                    due: None,
                })
                .collect(),
            transport: vec![],
        };
        assert!(matches!(
            brute_force_optimum(&i),
            Err(OracleError::InstanceTooLarge { jobs: 7, .. })
        ));
    }

    #[test]
    fn random_instances_are_seeded_and_in_range() {
        assert_eq!(random_instance(7), random_instance(7));
        for seed in 0..50 {
            let i = random_instance(seed);
            assert!((1..=5).contains(&i.jobs.len()));
            assert!((1..=3).contains(&i.stages()));
            assert!(brute_force_optimum(&i).is_ok());
        }
    }

    #[test]
    fn empty_instance() {
        let r = brute_force_optimum(&inst(&[], &[])).unwrap();
        assert_eq!(r.makespan, 0);
    }

    #[test]
    fn witness_is_lexicographically_smallest_with_unsorted_input() {
        let r = brute_force_optimum(&inst(
            &[("J3", &[2, 3]), ("J1", &[3, 2]), ("J2", &[1, 4])],
            &[],
        ))
        .unwrap();
        assert_eq!(r.sequence, vec!["J2", "J1", "J3"]);
    }
}
