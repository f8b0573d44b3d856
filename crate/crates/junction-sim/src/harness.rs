//! Experiment driver: named scenario variants, penetration x flow sweeps
//! over seed ensembles, schema-stable CSV rendering, and saturation
//! diagnostics. Cells run in parallel; output is byte-identical regardless
//! of thread count because rows are keyed and aggregated in list order.

use rayon::prelude::*;
use thiserror::Error;

use crate::arbitration::{ConflictRule, SignalCycle};
use crate::core::{Approach, Road, VehicleClass};
use crate::engine::{run_scenario, Arrival, CavFollower, MetricsReport, ScenarioConfig};
use crate::wiedemann::WiedemannParams;

/// Reference saturation flow the degree-of-saturation ratio is measured
/// against (veh/h/lane).
pub const SATURATION_FLOW: f64 = 900.0;
/// Flow at which the intersection approaches its stable service limit
/// (veh/h/lane).
pub const CRITICAL_FLOW: f64 = 750.0;
/// Degree of saturation below which operation counts as under-saturated.
pub const UNDER_SATURATION_DEGREE: f64 = 0.85;

pub const SWEEP_CSV_HEADER: &str = "variant,penetration,flow,seed,mean_energy_per_s,\
mean_travel_time_s,rear_end_violations,lateral_collisions,throughput_veh,frozen_veh";

/// A named bundle of config toggles. Variants differ from the base config
/// only in the arbitration rule, the CAV follower implementation, and the
/// human close-up smoothing flag; the signal baseline additionally forces an
/// all-human population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Every approach yields through full stop-bar arbitration; CAVs follow
    /// predecessors with the human car-following model.
    FullArbitrationWiedemannFollower,
    /// Major road has priority; CAVs follow with the human model.
    PartialArbitrationWiedemannFollower,
    /// Major road has priority; CAVs track predecessors optimally.
    PartialArbitrationOptimalFollower,
    /// Like the partial Wiedemann variant with softened human approach.
    PartialArbitrationWiedemannSmooth,
    /// Like the partial optimal variant with softened human approach.
    PartialArbitrationOptimalSmooth,
    /// Fixed-time signal over an all-human population.
    SignalBaseline,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FullArbitrationWiedemannFollower,
        Variant::PartialArbitrationWiedemannFollower,
        Variant::PartialArbitrationOptimalFollower,
        Variant::PartialArbitrationWiedemannSmooth,
        Variant::PartialArbitrationOptimalSmooth,
        Variant::SignalBaseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::FullArbitrationWiedemannFollower => "s1",
            Variant::PartialArbitrationWiedemannFollower => "s2",
            Variant::PartialArbitrationOptimalFollower => "s3",
            Variant::PartialArbitrationWiedemannSmooth => "s4",
            Variant::PartialArbitrationOptimalSmooth => "s5",
            Variant::SignalBaseline => "tlc",
        }
    }

    pub fn from_label(label: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.label() == label)
    }

    /// Applies this variant's toggles to a copy of `base`.
    pub fn apply(self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        let major = match base.rule {
            ConflictRule::Ca2Partial { major } => major,
            _ => Road::NorthSouth,
        };
        let (rule, follower, smooth) = match self {
            Variant::FullArbitrationWiedemannFollower => {
                (ConflictRule::Ca3Full, CavFollower::Wiedemann, false)
            }
            Variant::PartialArbitrationWiedemannFollower => {
                (ConflictRule::Ca2Partial { major }, CavFollower::Wiedemann, false)
            }
            Variant::PartialArbitrationOptimalFollower => {
                (ConflictRule::Ca2Partial { major }, CavFollower::OptimalAf, false)
            }
            Variant::PartialArbitrationWiedemannSmooth => {
                (ConflictRule::Ca2Partial { major }, CavFollower::Wiedemann, true)
            }
            Variant::PartialArbitrationOptimalSmooth => {
                (ConflictRule::Ca2Partial { major }, CavFollower::OptimalAf, true)
            }
            Variant::SignalBaseline => {
                cfg.penetration = 0.0;
                (ConflictRule::Tlc(SignalCycle::default()), CavFollower::Wiedemann, false)
            }
        };
        cfg.rule = rule;
        cfg.cav_follower = follower;
        cfg.wiedemann.smooth_closeup = smooth;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub penetrations: Vec<f64>,
    pub flow_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub base: ScenarioConfig,
}

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("{0} list must not be empty")]
    EmptyList(&'static str),
    #[error("penetration must be in [0, 1], got {0}")]
    PenetrationOutOfRange(f64),
    #[error("flow must be positive and finite, got {0}")]
    BadFlow(f64),
    #[error("sweeps draw their own arrival streams; scripted arrivals are not allowed")]
    ScriptedArrivals,
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for (name, len) in [
            ("penetrations", self.penetrations.len()),
            ("flow_rates", self.flow_rates.len()),
            ("seeds", self.seeds.len()),
        ] {
            if len == 0 {
                return Err(HarnessError::EmptyList(name));
            }
        }
        if let Some(&p) = self.penetrations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(HarnessError::PenetrationOutOfRange(p));
        }
        if let Some(&f) = self.flow_rates.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(HarnessError::BadFlow(f));
        }
        if self.base.scripted_arrivals.is_some() {
            return Err(HarnessError::ScriptedArrivals);
        }
        self.variant.apply(&self.base).validate()?;
        Ok(())
    }
}

/// Metric columns of one run, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub mean_energy_per_s: f64,
    pub mean_travel_time_s: f64,
    pub rear_end_violations: u32,
    pub lateral_collisions: u32,
    pub throughput_veh: u32,
    pub frozen_veh: u32,
}

impl RunMetrics {
    fn from_report(r: &MetricsReport) -> RunMetrics {
        RunMetrics {
            mean_energy_per_s: r.mean_energy_per_s,
            mean_travel_time_s: r.mean_travel_time_s,
            rear_end_violations: r.rear_end_violations,
            lateral_collisions: r.lateral_collisions,
            throughput_veh: r.throughput_veh,
            frozen_veh: r.frozen_veh,
        }
    }

    fn as_array(&self) -> [f64; 6] {
        [
            self.mean_energy_per_s,
            self.mean_travel_time_s,
            self.rear_end_violations as f64,
            self.lateral_collisions as f64,
            self.throughput_veh as f64,
            self.frozen_veh as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    /// Index into `cells`; penetration values alone need not be unique
    /// because the signal baseline pins every run to zero penetration.
    pub cell: usize,
    pub penetration: f64,
    pub flow: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Per-cell seed ensemble aggregate; `std` is the sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub penetration: f64,
    pub flow: f64,
    pub runs: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub penetration: f64,
    pub flow: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub variant: Variant,
    pub rows: Vec<SeedRow>,
    pub cells: Vec<CellRow>,
    pub errors: Vec<ErrorRow>,
}

impl SweepSummary {
    pub fn cell(&self, penetration: f64, flow: f64) -> Option<&CellRow> {
        self.cells.iter().find(|c| c.penetration == penetration && c.flow == flow)
    }
}

/// Runs every (penetration, flow, seed) combination of the spec and
/// aggregates per cell. Failed runs land in `errors` and drop out of the
/// aggregates; the sweep itself keeps going.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepSummary, HarnessError> {
    spec.validate()?;
    let template = spec.variant.apply(&spec.base);
    let jobs: Vec<(usize, usize, usize)> = spec
        .penetrations
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| {
            spec.flow_rates.iter().enumerate().flat_map(move |(fi, _)| {
                (0..spec.seeds.len()).map(move |si| (pi, fi, si))
            })
        })
        .collect();

    let outcomes: Vec<(usize, usize, usize, Result<RunMetrics, String>)> = jobs
        .par_iter()
        .map(|&(pi, fi, si)| {
            let mut cfg = template.clone();
            if spec.variant != Variant::SignalBaseline {
                cfg.penetration = spec.penetrations[pi];
            }
            cfg.flow_rate = spec.flow_rates[fi];
            cfg.seed = spec.seeds[si];
            let result = run_scenario(&cfg)
                .map(|r| RunMetrics::from_report(&r))
                .map_err(|e| e.to_string());
            (pi, fi, si, result)
        })
        .collect();

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for pi in 0..spec.penetrations.len() {
        let penetration = if spec.variant == Variant::SignalBaseline {
            0.0
        } else {
            spec.penetrations[pi]
        };
        for fi in 0..spec.flow_rates.len() {
            let flow = spec.flow_rates[fi];
            let cell = cells.len();
            let mut samples: Vec<[f64; 6]> = Vec::new();
            for (si, &seed) in spec.seeds.iter().enumerate() {
                let outcome = outcomes
                    .iter()
                    .find(|(p, f, s, _)| (*p, *f, *s) == (pi, fi, si))
                    .map(|(_, _, _, r)| r)
                    .expect("every job ran");
                match outcome {
                    Ok(metrics) => {
                        samples.push(metrics.as_array());
                        rows.push(SeedRow { cell, penetration, flow, seed, metrics: *metrics });
                    }
                    Err(message) => errors.push(ErrorRow {
                        penetration,
                        flow,
                        seed,
                        message: message.clone(),
                    }),
                }
            }
            let n = samples.len();
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            if n > 0 {
                for s in &samples {
                    for k in 0..6 {
                        mean[k] += s[k];
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
            }
            if n > 1 {
                for s in &samples {
                    for k in 0..6 {
                        std[k] += (s[k] - mean[k]).powi(2);
                    }
                }
                for v in &mut std {
                    *v = (*v / (n - 1) as f64).sqrt();
                }
            }
            cells.push(CellRow { penetration, flow, runs: n, mean, std });
        }
    }
    Ok(SweepSummary { variant: spec.variant, rows, cells, errors })
}

/// Rendered CSV bodies: the main file carries one row per seed plus a
/// `seed=mean` aggregate per cell; the sibling carries `seed=std` rows; the
/// errors file exists only when runs failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsv {
    pub main: String,
    pub stddev: String,
    pub errors: Option<String>,
}

fn push_metric_cols(line: &mut String, values: &[f64; 6]) {
    for v in values {
        line.push_str(&format!(",{v:.6}"));
    }
}

pub fn render_sweep_csv(summary: &SweepSummary) -> SweepCsv {
    let label = summary.variant.label();
    let mut main = String::from(SWEEP_CSV_HEADER);
    main.push('\n');
    for (ci, cell) in summary.cells.iter().enumerate() {
        for row in summary.rows.iter().filter(|r| r.cell == ci) {
            let m = &row.metrics;
            main.push_str(&format!(
                "{label},{},{},{},{:.6},{:.6},{},{},{},{}\n",
                row.penetration,
                row.flow,
                row.seed,
                m.mean_energy_per_s,
                m.mean_travel_time_s,
                m.rear_end_violations,
                m.lateral_collisions,
                m.throughput_veh,
                m.frozen_veh,
            ));
        }
        let mut line = format!("{label},{},{},mean", cell.penetration, cell.flow);
        push_metric_cols(&mut line, &cell.mean);
        line.push('\n');
        main.push_str(&line);
    }

    let mut stddev = String::from(SWEEP_CSV_HEADER);
    stddev.push('\n');
    for cell in &summary.cells {
        let mut line = format!("{label},{},{},std", cell.penetration, cell.flow);
        push_metric_cols(&mut line, &cell.std);
        line.push('\n');
        stddev.push_str(&line);
    }

    let errors = if summary.errors.is_empty() {
        None
    } else {
        let mut body = String::from("variant,penetration,flow,seed,error\n");
        for e in &summary.errors {
            body.push_str(&format!(
                "{label},{},{},{},\"{}\"\n",
                e.penetration,
                e.flow,
                e.seed,
                e.message.replace('"', "'"),
            ));
        }
        Some(body)
    };
    SweepCsv { main, stddev, errors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaturationRegime {
    UnderSaturated,
    NearSaturated,
    OverSaturated,
}

impl SaturationRegime {
    pub fn label(self) -> &'static str {
        match self {
            SaturationRegime::UnderSaturated => "under-saturated",
            SaturationRegime::NearSaturated => "near-saturated",
            SaturationRegime::OverSaturated => "over-saturated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationDiagnostics {
    /// Requested arrival rate (veh/h/lane).
    pub flow: f64,
    pub saturation_flow: f64,
    pub critical_flow: f64,
    pub degree_of_saturation: f64,
    /// Zone transit plus one scheduled headway at the mean arrival speed (s).
    pub service_time_s: f64,
    /// Arrivals summed over all approaches (veh/s).
    pub total_arrival_rate: f64,
    /// Arrival pressure stays below twice the service rate.
    pub stable: bool,
    pub regime: SaturationRegime,
}

pub fn saturation(flow: f64, cfg: &ScenarioConfig) -> Result<SaturationDiagnostics, HarnessError> {
    if !(flow.is_finite() && flow > 0.0) {
        return Err(HarnessError::BadFlow(flow));
    }
    let (lo, hi) = cfg.initial_speed_range;
    let mean_speed = 0.5 * (lo + hi);
    let service_time_s = (cfg.geometry.mz_length + cfg.min_gap) / mean_speed;
    let total_arrival_rate = 4.0 * flow / 3600.0;
    let degree = flow / SATURATION_FLOW;
    let regime = if degree > 1.0 {
        SaturationRegime::OverSaturated
    } else if degree >= UNDER_SATURATION_DEGREE || flow >= CRITICAL_FLOW {
        SaturationRegime::NearSaturated
    } else {
        SaturationRegime::UnderSaturated
    };
    Ok(SaturationDiagnostics {
        flow,
        saturation_flow: SATURATION_FLOW,
        critical_flow: CRITICAL_FLOW,
        degree_of_saturation: degree,
        service_time_s,
        total_arrival_rate,
        stable: total_arrival_rate < 2.0 / service_time_s,
        regime,
    })
}

/// Canned two-vehicle scenario: a constant-speed human enters first, a
/// faster planner enters 2 s later on the same approach and closes in.
/// `headway` sets both the scheduler spacing and the tracked gap; with
/// `adaptive` off the second vehicle never reacts to the first.
pub fn two_vehicle_demo(headway: f64, adaptive: bool) -> ScenarioConfig {
    ScenarioConfig {
        rule: ConflictRule::Ca1Passive,
        cav_follower: if adaptive { CavFollower::OptimalAf } else { CavFollower::Disabled },
        bounds: crate::core::ConstraintBounds { v_min: 0.0, v_max: 20.0, u_min: -6.0, u_max: 3.0 },
        wiedemann: WiedemannParams { desired_speed: 10.0, jitter: 0.0, ..Default::default() },
        min_gap: headway,
        engage_gap: headway,
        horizon: 60.0,
        warmup: 0.0,
        record_trace: true,
        scripted_arrivals: Some(vec![
            Arrival {
                time: 0.0,
                approach: Approach::North,
                class: VehicleClass::Human,
                v0: 10.0,
                driver_seed: 1,
            },
            Arrival {
                time: 2.0,
                approach: Approach::North,
                class: VehicleClass::Cav,
                v0: 15.0,
                driver_seed: 2,
            },
        ]),
        ..ScenarioConfig::default()
    }
}
