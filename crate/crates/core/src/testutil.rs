//! Small fixtures shared by unit tests.

use crate::domain::*;
use crate::scheduler::{OracleInstance, OracleJob};

/// A flow line with one station per entry of `machines_per_stage`, stations
/// `S1..`, machines `M<station><k>` and `travel` minutes between neighbours.
pub fn flow_factory(machines_per_stage: &[usize], travel: Minutes) -> Factory {
    let mut stations = Vec::new();
    let mut machines = Vec::new();
    for (i, (&n, stage)) in machines_per_stage.iter().zip(Stage::ALL).enumerate() {
        let sid = format!("S{}", i + 1);
        let ids: Vec<String> = (1..=n).map(|k| format!("M{}{}", i + 1, k)).collect();
        for id in &ids {
            machines.push(Machine {
                machine_id: id.clone(),
                station_id: sid.clone(),
                failure_windows: vec![],
            });
        }
        stations.push(Workstation {
            station_id: sid,
            stage,
            machines: ids,
        });
    }
    let travel = if travel > 0 {
        (1..machines_per_stage.len())
            .map(|i| TravelLeg {
                from: format!("S{i}"),
                to: format!("S{}", i + 1),
                minutes: travel,
            })
            .collect()
    } else {
        vec![]
    };
    Factory {
        stations,
        machines,
        transport: TransportConfig {
            fleet_size: 1,
            travel,
        },
        warehouses: default_warehouses(),
    }
}

pub fn model_with(id: &str, times: &[Minutes]) -> ProductModel {
    ProductModel {
        model_id: id.into(),
        name: id.into(),
        profile_tier: ProfileTier::Economic,
        color: "white".into(),
        routing: times
            .iter()
            .zip(Stage::ALL)
            .map(|(&p, stage)| RouteStep {
                stage,
                processing_time: p,
                max_wait_after: None,
            })
            .collect(),
    }
}

/// One job with the given per-stage times on the stations of `f`.
pub fn job_with(job_id: &str, f: &Factory, times: &[Minutes]) -> Job {
    let operations = times
        .iter()
        .zip(Stage::ALL)
        .map(|(&p, stage)| Operation {
            op_id: op_id_for(job_id, stage),
            job_id: job_id.into(),
            stage,
            processing_time: p,
            eligible_machines: f
                .station_for(stage)
                .map(|s| s.machines.clone())
                .unwrap_or_default(),
            max_wait_after: None,
        })
        .collect();
    Job {
        job_id: job_id.into(),
        order_id: order_of_job(job_id).into(),
        operations,
    }
}

pub fn oracle_problem(
    jobs: &[(&str, &[Minutes], Minutes)],
) -> (Factory, Vec<ProductModel>, Vec<Order>) {
    let inst = OracleInstance {
        jobs: jobs
            .iter()
            .map(|(id, t, due)| OracleJob {
                id: id.to_string(),
                times: t.to_vec(),
                due: Some(*due),
            })
            .collect(),
        transport: vec![],
    };
    inst.to_problem()
}

/// Three jobs on two single-machine stages; optimum makespan 10.
pub fn three_job_instance() -> (Factory, Vec<ProductModel>, Vec<Order>) {
    oracle_problem(&[("J1", &[3, 2], 12), ("J2", &[1, 4], 5), ("J3", &[2, 3], 10)])
}

pub fn jobs_of(orders: &[Order], models: &[ProductModel], f: &Factory) -> Vec<Job> {
    orders
        .iter()
        .flat_map(|o| expand_order_in(o, models, f).unwrap())
        .collect()
}
