//! Seeded generator for the YBG door and window plant.
//!
//! Model names beyond the five product types known from the plant, colour
//! names, processing times, travel times, order streams and failures are
//! generator choices, not plant data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::ManagerPolicy;
use crate::domain::{
    default_warehouses, DeadlineClass, Factory, Machine, Minutes, Order, OrderSource, ProductModel,
    ProfileTier, RouteStep, Stage, TimeWindow, TransportConfig, TravelLeg, Workstation,
};
use crate::scenario::{Disturbance, Policy, Scenario};
use crate::scheduler::{DispatchRule, DEFAULT_HORIZON};

/// Fifteen product models; the first five are the plant's named types.
pub const YBG_MODEL_NAMES: [&str; 15] = [
    "Tilt and turn window",
    "Slide hung window",
    "Top light",
    "Sliding folding door",
    "Center hinge pivot window",
    "Casement window",
    "Fixed light",
    "Bay window",
    "Tilt only window",
    "French door",
    "Entrance door",
    "Lift and slide patio door",
    "Awning window",
    "Arched window",
    "Balcony door",
];

/// Knobs for generated scenarios. [`GeneratorParams::ybg`] gives the bundled
/// case study; the test suites use smaller variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorParams {
    pub initial_orders: usize,
    pub dynamic_orders: usize,
    pub failures: usize,
    /// Dynamic arrivals are spread over `[1, arrival_span]`.
    pub arrival_span: Minutes,
    pub hard_percent: u32,
    pub max_quantity: u32,
}

impl GeneratorParams {
    pub fn ybg() -> Self {
        Self {
            initial_orders: 12,
            dynamic_orders: 24,
            failures: 4,
            arrival_span: 2400,
            hard_percent: 30,
            max_quantity: 4,
        }
    }

    /// Denser arrivals over ten hours, used for the disturbance suite.
    pub fn disturbance() -> Self {
        Self {
            initial_orders: 8,
            dynamic_orders: 20,
            failures: 4,
            arrival_span: 600,
            hard_percent: 30,
            max_quantity: 3,
        }
    }
}

fn tier_color_combos() -> Vec<(ProfileTier, &'static str)> {
    ProfileTier::ALL
        .iter()
        .flat_map(|&t| t.colors().iter().map(move |&c| (t, c)))
        .collect()
}

fn ybg_factory(rng: &mut ChaCha8Rng) -> Factory {
    let layout = [
        (Stage::Cutting, "CUT", 2usize),
        (Stage::Welding, "WELD", 2),
        (Stage::Assembly, "ASM", 3),
        (Stage::Quality, "QC", 1),
    ];
    let mut stations = Vec::new();
    let mut machines = Vec::new();
    for (stage, code, n) in layout {
        let sid = format!("ST-{code}");
        let ids: Vec<String> = (1..=n).map(|k| format!("{code}-{k}")).collect();
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
    let travel = stations
        .windows(2)
        .map(|w| TravelLeg {
            from: w[0].station_id.clone(),
            to: w[1].station_id.clone(),
            minutes: rng.gen_range(1..=3),
        })
        .collect();
    Factory {
        stations,
        machines,
        transport: TransportConfig {
            fleet_size: 2,
            travel,
        },
        warehouses: default_warehouses(),
    }
}

fn ybg_models(rng: &mut ChaCha8Rng) -> Vec<ProductModel> {
    let combos = tier_color_combos();
    YBG_MODEL_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (tier, color) = combos[i % combos.len()];
            let ranges = [(4, 12), (6, 15), (8, 25), (3, 8)];
            let routing = Stage::ALL
                .iter()
                .zip(ranges)
                .map(|(&stage, (lo, hi))| RouteStep {
                    stage,
                    processing_time: rng.gen_range(lo..=hi),
                    max_wait_after: None,
                })
                .collect();
            ProductModel {
                model_id: format!("YBG-{:02}", i + 1),
                name: name.to_string(),
                profile_tier: tier,
                color: color.to_string(),
                routing,
            }
        })
        .collect()
}

fn work(model: &ProductModel) -> Minutes {
    model.routing.iter().map(|s| s.processing_time).sum()
}

fn order(
    rng: &mut ChaCha8Rng,
    id: String,
    models: &[ProductModel],
    release: Minutes,
    source: OrderSource,
    p: &GeneratorParams,
) -> Order {
    let model = &models[rng.gen_range(0..models.len())];
    let quantity = rng.gen_range(1..=p.max_quantity.max(1));
    let hard = rng.gen_range(0..100) < p.hard_percent;
    // due date: total work times a slack factor between 1.5 and 6
    let slack_tenths = rng.gen_range(15..=60);
    let due_date = release + work(model) * quantity as Minutes * slack_tenths / 10;
    Order {
        order_id: id,
        model_id: model.model_id.clone(),
        quantity,
        release_time: release,
        due_date,
        deadline_class: if hard {
            DeadlineClass::Hard
        } else {
            DeadlineClass::Soft
        },
        source,
        period: None,
    }
}

/// A YBG-style scenario with the given order stream and failure counts.
pub fn generate_scenario(seed: u64, params: &GeneratorParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factory = ybg_factory(&mut rng);
    let models = ybg_models(&mut rng);

    let mut orders = Vec::new();
    for i in 0..params.initial_orders {
        let o = order(
            &mut rng,
            format!("I{:03}", i + 1),
            &models,
            0,
            OrderSource::Initial,
            params,
        );
        orders.push(o);
    }
    let mut arrivals: Vec<Minutes> = (0..params.dynamic_orders)
        .map(|_| rng.gen_range(1..=params.arrival_span.max(1)))
        .collect();
    arrivals.sort();
    for (i, t) in arrivals.into_iter().enumerate() {
        let o = order(
            &mut rng,
            format!("D{:03}", i + 1),
            &models,
            t,
            OrderSource::Dynamic,
            params,
        );
        orders.push(o);
    }

    let mut disturbances: Vec<Disturbance> = Vec::new();
    for _ in 0..params.failures {
        let m = &factory.machines[rng.gen_range(0..factory.machines.len())];
        let start = rng.gen_range(1..=params.arrival_span.max(1));
        let window = TimeWindow::new(start, start + rng.gen_range(30..=120));
        disturbances.push(Disturbance {
            machine_id: m.machine_id.clone(),
            window,
        });
    }
    disturbances.sort_by(|a, b| (a.window, &a.machine_id).cmp(&(b.window, &b.machine_id)));

    Scenario {
        name: format!("ybg-{seed}"),
        factory,
        models,
        orders,
        disturbances,
        policy: Policy {
            rule: DispatchRule::EDD,
            manager: ManagerPolicy::Auto,
            seed,
            horizon: DEFAULT_HORIZON,
            message_latency: 0,
            decision_timeout: None,
        },
    }
}

/// The bundled YBG case study.
pub fn generate_ybg_scenario(seed: u64) -> Scenario {
    generate_scenario(seed, &GeneratorParams::ybg())
}

/// The fixed ten-scenario suite used to compare dynamic rescheduling with
/// the static-then-append baseline.
pub fn disturbance_suite() -> Vec<Scenario> {
    (1..=10)
        .map(|seed| {
            let mut s = generate_scenario(seed, &GeneratorParams::disturbance());
            s.name = format!("disturbance-{seed}");
            s
        })
        .collect()
}
