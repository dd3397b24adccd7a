use std::collections::HashMap;

use thiserror::Error;

use super::world::World;
use super::EngineError;
use crate::pdn::{PdnCase, PdnSolver, SolverSettings};
use crate::v2g::{strategy_by_name, V2gStrategy, V2gWindow};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PluginError {
    #[error("plugin dependency cycle among {0:?}")]
    PluginCycle(Vec<String>),
    #[error("plugin {plugin} needs {dependency}, which is not registered")]
    MissingDependency { plugin: String, dependency: String },
    #[error("plugin {0} registered twice")]
    Duplicate(String),
}

/// A step-based extension. Pre-step hooks run before traffic moves, post-step
/// hooks after decisions; both only on steps matching `step_interval`.
pub trait Plugin: Send {
    fn name(&self) -> &str;

    fn dependencies(&self) -> Vec<String> {
        Vec::new()
    }

    /// Seconds between hook calls; `None` calls them every traffic step.
    fn step_interval(&self) -> Option<f64> {
        None
    }

    /// Called once before the first step.
    fn init(&mut self, _world: &mut World) -> Result<(), EngineError> {
        Ok(())
    }

    /// Called at the start of every step that begins an interval.
    fn pre_step(&mut self, _world: &mut World) -> Result<(), EngineError> {
        Ok(())
    }

    /// Called at the end of every step that closes an interval.
    fn post_step(&mut self, _world: &mut World) -> Result<(), EngineError> {
        Ok(())
    }
}

/// Registered plugins and their execution order.
#[derive(Default)]
pub struct PluginRegistry {
    plugins: Vec<Box<dyn Plugin>>,
    order: Vec<usize>,
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, plugin: Box<dyn Plugin>) -> Result<(), PluginError> {
        self.register_all(vec![plugin])
    }

    /// Register a batch whose members may depend on each other. On error the
    /// registry is left unchanged.
    pub fn register_all(&mut self, batch: Vec<Box<dyn Plugin>>) -> Result<(), PluginError> {
        let mut names: Vec<String> = self.plugins.iter().map(|p| p.name().to_string()).collect();
        for p in &batch {
            if names.iter().any(|n| n == p.name()) {
                return Err(PluginError::Duplicate(p.name().to_string()));
            }
            names.push(p.name().to_string());
        }
        let deps: Vec<Vec<String>> = self
            .plugins
            .iter()
            .chain(batch.iter())
            .map(|p| p.dependencies())
            .collect();
        let order = topo_order(&names, &deps)?;
        self.plugins.extend(batch);
        self.order = order;
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.order.iter().map(|&i| self.plugins[i].name().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.plugins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plugins.is_empty()
    }

    pub(crate) fn ordered_mut(&mut self) -> Vec<&mut Box<dyn Plugin>> {
        let mut slots: Vec<Option<&mut Box<dyn Plugin>>> = self.plugins.iter_mut().map(Some).collect();
        self.order.iter().map(|&i| slots[i].take().expect("order is a permutation")).collect()
    }
}

/// Kahn's algorithm; among ready plugins the earliest registered goes first.
fn topo_order(names: &[String], deps: &[Vec<String>]) -> Result<Vec<usize>, PluginError> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n = names.len();
    let mut indegree = vec![0usize; n];
    let mut dependents = vec![Vec::new(); n];
    for (i, ds) in deps.iter().enumerate() {
        for d in ds {
            let j = *index.get(d.as_str()).ok_or_else(|| PluginError::MissingDependency {
                plugin: names[i].clone(),
                dependency: d.clone(),
            })?;
            indegree[i] += 1;
            dependents[j].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &k in &dependents[i] {
            indegree[k] -= 1;
            if indegree[k] == 0 {
                ready.insert(k);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).filter(|i| !order.contains(i)).map(|i| names[i].clone()).collect();
        return Err(PluginError::PluginCycle(stuck));
    }
    Ok(order)
}

/// Solves the grid at every interval end from the interval's average
/// charging load and the V2G capacity on offer.
pub struct PdnPlugin {
    base: PdnCase,
    solver: PdnSolver,
    interval_s: f64,
    infeasible_streak: usize,
}

impl PdnPlugin {
    pub const NAME: &'static str = "pdn";

    pub fn new(base: PdnCase, interval_s: f64) -> Self {
        Self {
            base,
            solver: PdnSolver::new(SolverSettings::default()),
            interval_s,
            infeasible_streak: 0,
        }
    }
}

impl Plugin for PdnPlugin {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn step_interval(&self) -> Option<f64> {
        Some(self.interval_s)
    }

    fn init(&mut self, world: &mut World) -> Result<(), EngineError> {
        world.enable_pdn(&self.base, self.interval_s)
    }

    fn post_step(&mut self, world: &mut World) -> Result<(), EngineError> {
        let ok = world.solve_pdn(&self.base, &mut self.solver)?;
        if ok {
            self.infeasible_streak = 0;
        } else {
            self.infeasible_streak += 1;
            if self.infeasible_streak >= 2 {
                return Err(EngineError::Infeasible {
                    t: world.step_end(),
                    detail: world.last_pdn_error().unwrap_or_default(),
                });
            }
        }
        Ok(())
    }
}

/// Splits the dispatched V2G power of each station among its vehicles.
pub struct V2gPlugin {
    window: V2gWindow,
    strategy: Box<dyn V2gStrategy>,
    interval_s: f64,
}

impl V2gPlugin {
    pub const NAME: &'static str = "v2g";

    pub fn new(window: V2gWindow, strategy: &str, interval_s: f64) -> Result<Self, EngineError> {
        Ok(Self {
            window,
            strategy: strategy_by_name(strategy).map_err(|e| EngineError::config("v2g.strategy", e))?,
            interval_s,
        })
    }
}

impl Plugin for V2gPlugin {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dependencies(&self) -> Vec<String> {
        vec![PdnPlugin::NAME.to_string()]
    }

    fn step_interval(&self) -> Option<f64> {
        Some(self.interval_s)
    }

    fn init(&mut self, world: &mut World) -> Result<(), EngineError> {
        world.enable_v2g(self.window.clone());
        Ok(())
    }

    fn post_step(&mut self, world: &mut World) -> Result<(), EngineError> {
        world.dispatch_v2g(self.strategy.as_ref(), self.interval_s)
    }
}
