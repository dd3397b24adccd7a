//! Co-simulation driver: the step loop, plugins, recording and the
//! multi-case runner.
//!
//! Each traffic step runs, in order: schedule events, pre-step plugins,
//! traffic, stations (charging and V2G discharge), vehicle decisions,
//! post-step plugins and recording. The grid and V2G features are the
//! built-in [`PdnPlugin`] and [`V2gPlugin`].

mod plugin;
mod record;
mod world;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decisions::DepartureStrategy;
use crate::scenario::{Scenario, ScenarioError};
use crate::stations::ScheduleEvent;
use crate::tripgen::DAY_S;

pub use plugin::{PdnPlugin, Plugin, PluginError, PluginRegistry, V2gPlugin};
pub use record::{EnergyLedger, Manifest, RunRecord, RunStats, STREAMS};
pub use world::World;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("config error in {field}: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error("grid infeasible in two consecutive intervals, last at t={t}: {detail}")]
    Infeasible { t: f64, detail: String },
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write {0}: {1}")]
    Io(String, String),
    #[error("case panicked: {0}")]
    Panic(String),
}

impl EngineError {
    pub fn config(field: impl Into<String>, msg: impl ToString) -> Self {
        Self::Config {
            field: field.into(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Plugin(_) => 2,
            _ => 3,
        }
    }
}

impl From<ScenarioError> for EngineError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid { field, msg } => Self::Config { field, msg },
            ScenarioError::Io(file, msg) | ScenarioError::Parse { file, msg } => Self::Config { field: file, msg },
        }
    }
}

/// Per-run overrides on top of `scenario.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_pdn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<DepartureStrategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v2g: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<bool>,
    /// Station id -> unit price override.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub upp: BTreeMap<String, f64>,
    /// Replaces `schedule.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScheduleEvent>>,
}

/// One entry of a `cases.json` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub scenario: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub options: RunOptions,
}

/// A scenario with overrides applied, ready to run.
pub struct Engine {
    scenario: Scenario,
    options: RunOptions,
    plugins: PluginRegistry,
}

fn steps_of(field: &str, span: f64, dt: f64) -> Result<u64, EngineError> {
    let k = (span / dt).round();
    if k < 1.0 || (k * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(EngineError::config(field, format!("{span} s is not a whole number of {dt} s steps")));
    }
    Ok(k as u64)
}

impl Engine {
    /// Apply `options` and register the built-in plugins the scenario asks for.
    pub fn new(scenario: Scenario, options: RunOptions) -> Result<Self, EngineError> {
        let mut engine = Self::bare(scenario, options)?;
        let cfg = &engine.scenario.config;
        let mut builtins: Vec<Box<dyn Plugin>> = Vec::new();
        if cfg.pdn_enabled {
            builtins.push(Box::new(PdnPlugin::new(engine.scenario.pdn.clone(), cfg.dt_pdn)));
        }
        if cfg.v2g.enabled {
            builtins.push(Box::new(V2gPlugin::new(
                cfg.v2g.window.clone(),
                &cfg.v2g.strategy,
                cfg.dt_pdn,
            )?));
        }
        engine.plugins.register_all(builtins)?;
        Ok(engine)
    }

    /// Like [`Engine::new`] but with no plugins registered.
    pub fn bare(mut scenario: Scenario, options: RunOptions) -> Result<Self, EngineError> {
        let cfg = &mut scenario.config;
        if let Some(d) = options.days {
            cfg.days = d;
        }
        if let Some(dt) = options.dt {
            cfg.traffic.dt = dt;
        }
        if let Some(dt) = options.dt_pdn {
            cfg.dt_pdn = dt;
        }
        if let Some(s) = options.strategy {
            cfg.strategy = s;
        }
        if let Some(v) = options.v2g {
            cfg.v2g.enabled = v;
        }
        if let Some(w) = options.warmup {
            cfg.warmup = w;
        }
        if let Some(s) = &options.schedule {
            scenario.schedule = s.clone();
        }
        for (id, &upp) in &options.upp {
            let rec = scenario
                .stations
                .iter_mut()
                .find(|s| &s.id == id)
                .ok_or_else(|| EngineError::config("upp", format!("unknown station {id}")))?;
            if !(upp >= 0.0 && upp.is_finite()) {
                return Err(EngineError::config("upp", format!("{id}: price {upp}")));
            }
            rec.upp = Some(upp);
        }
        let cfg = &scenario.config;
        if cfg.days == 0 {
            return Err(EngineError::config("days", "must be at least 1"));
        }
        scenario.validate()?;
        let dt = cfg.traffic.dt;
        for (field, span) in [
            ("record_dt", cfg.record_dt),
            ("dt_pdn", cfg.dt_pdn),
            ("ev_sample_dt", cfg.ev_sample_dt),
        ] {
            steps_of(field, span, dt)?;
            steps_of(field, DAY_S, span)?;
        }
        steps_of("dt", DAY_S, dt)?;
        Ok(Self {
            scenario,
            options,
            plugins: PluginRegistry::new(),
        })
    }

    pub fn register(&mut self, plugin: Box<dyn Plugin>) -> Result<(), PluginError> {
        self.plugins.register(plugin)
    }

    pub fn register_all(&mut self, plugins: Vec<Box<dyn Plugin>>) -> Result<(), PluginError> {
        self.plugins.register_all(plugins)
    }

    pub fn plugin_order(&self) -> Vec<String> {
        self.plugins.names()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Hex SHA-256 of the scenario inputs and the run options.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        self.scenario.hash_inputs(&mut h);
        h.update(serde_json::to_string(&self.options).expect("options serialize").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn run(mut self) -> Result<RunRecord, EngineError> {
        let cfg = self.scenario.config.clone();
        let dt = cfg.traffic.dt;
        let cadence = world::Cadence {
            record: steps_of("record_dt", cfg.record_dt, dt)?,
            sample: steps_of("ev_sample_dt", cfg.ev_sample_dt, dt)?,
            sample_count: cfg.ev_sample_count,
        };
        let total_days = cfg.days + cfg.warmup as usize;
        let total_steps = steps_of("dt", DAY_S, dt)? * total_days as u64;
        let config_hash = self.config_hash();
        let names = self.plugins.names();
        let mut world = World::new(&self.scenario, self.options.seed, cadence)?;

        let mut plugins = self.plugins.ordered_mut();
        let every: Vec<u64> = plugins
            .iter()
            .map(|p| p.step_interval().map_or(Ok(1), |s| steps_of(p.name(), s, dt)))
            .collect::<Result<_, _>>()?;
        for p in plugins.iter_mut() {
            p.init(&mut world)?;
        }
        for _ in 0..total_steps {
            let i = world.step_index();
            world.begin_step()?;
            for (p, &k) in plugins.iter_mut().zip(&every) {
                if i % k == 0 {
                    p.pre_step(&mut world)?;
                }
            }
            world.step_traffic();
            world.step_stations();
            world.step_decisions();
            for (p, &k) in plugins.iter_mut().zip(&every) {
                if (i + 1) % k == 0 {
                    p.post_step(&mut world)?;
                }
            }
            world.end_step();
        }
        let seed = self.options.seed;
        Ok(world.finish(|ledger, stats| Manifest {
            seed,
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            days: cfg.days,
            dt,
            dt_pdn: cfg.dt_pdn,
            warmup: cfg.warmup,
            plugins: names,
            ledger,
            stats,
        }))
    }
}

/// Load, run and (when `out` is set) write one case.
pub fn run_case(spec: &CaseSpec) -> Result<RunRecord, EngineError> {
    let scenario = Scenario::load(&spec.scenario)?;
    let record = Engine::new(scenario, spec.options.clone())?.run()?;
    if let Some(out) = &spec.out {
        record.write(out)?;
    }
    Ok(record)
}

/// Run cases on `workers` threads. Results come back in input order and a
/// failing case never stops its siblings.
pub fn run_parallel(specs: &[CaseSpec], workers: usize) -> Vec<Result<RunRecord, EngineError>> {
    use rayon::prelude::*;
    let isolated = |spec: &CaseSpec| {
        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_case(spec))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(EngineError::Panic(msg))
        })
    };
    let mut outs: Vec<_> = specs.iter().map(|s| s.out.as_deref()).collect();
    outs.retain(|o| o.is_some());
    let distinct: std::collections::HashSet<Option<&Path>> = outs.iter().copied().collect();
    if distinct.len() != outs.len() {
        let err = EngineError::config("out", "cases share an output directory");
        return specs.iter().map(|_| Err(err.clone())).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(|| specs.par_iter().map(isolated).collect()),
        Err(e) => specs.iter().map(|_| Err(EngineError::Runtime(e.to_string()))).collect(),
    }
}
