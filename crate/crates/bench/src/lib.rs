//! Benchmark fixtures.

use flowline_core::scenario::{disturbance_suite, generate_ybg_scenario, Scenario};
use flowline_core::scheduler::{OracleInstance, OracleJob};

/// The bundled case study.
pub fn ybg() -> Scenario {
    generate_ybg_scenario(42)
}

/// First scenario of the disturbance suite.
pub fn disturbed() -> Scenario {
    disturbance_suite().swap_remove(0)
}

/// Largest instance the exhaustive oracle accepts at three stages.
pub fn oracle_instance() -> OracleInstance {
    let times = [
        [5, 3, 7],
        [2, 8, 4],
        [6, 6, 1],
        [3, 2, 9],
        [7, 4, 3],
        [1, 5, 5],
    ];
    OracleInstance {
        jobs: times
            .iter()
            .enumerate()
            .map(|(i, t)| OracleJob {
                id: format!("J{}", i + 1),
                times: t.to_vec(),
                due: None,
            })
            .collect(),
        transport: vec![],
    }
}
