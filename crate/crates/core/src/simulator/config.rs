//! Scenario files: a TOML tree covering the cluster, the workload, the
//! disturbances and the balancing parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balancer::VictimFill;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    /// Seconds per message.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
}

impl NetworkModel {
    /// `latency + bytes / bandwidth`.
    pub fn transfer_time(&self, bytes: u64) -> f64 {
        self.latency + bytes as f64 / self.bandwidth
    }
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            latency: 1e-5,
            bandwidth: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub ranks: usize,
    pub cores_per_rank: usize,
    /// Per-rank speed multipliers; empty means nominal speed everywhere.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub core_speed: Vec<f64>,
    /// Each rank's speed is further scaled by a factor drawn uniformly
    /// from `[1 - jitter, 1 + jitter]`.
    #[serde(default)]
    pub speed_jitter: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `total_tasks` split evenly.
    Regular,
    /// Fixed skew between `base` and `heavy` tasks per rank.
    StaticAmr,
    /// The static skew drifting every step plus periodic re-meshes.
    DynamicAmr,
    /// One rank holds `hotspot_factor` times the average of `total_tasks`.
    Hotspot,
    /// `counts[step][rank]`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub generator: GeneratorKind,
    /// Seconds on a nominal core.
    pub task_cost: f64,
    #[serde(default)]
    pub input_bytes: u64,
    #[serde(default)]
    pub output_bytes: u64,
    /// Non-offloadable tasks per rank and step, on top of the generated ones.
    #[serde(default)]
    pub local_tasks: usize,
    /// Fixed serial time added after every barrier, seconds.
    #[serde(default)]
    pub serial_overhead: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tasks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heavy: Option<usize>,
    /// Ranks that keep exactly `base` tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_ranks: Option<usize>,
    /// Relative per-step change bound of every rank's count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remesh_period: Option<usize>,
    /// Extra serial time of a re-mesh step, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remesh_overhead: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hotspot_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hotspot_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    /// The rank's cores stall for `delay` seconds at the start of every
    /// step `s` with `s % period == offset`.
    Delay {
        rank: usize,
        period: usize,
        delay: f64,
        #[serde(default)]
        offset: usize,
    },
    /// The rank's speed is multiplied by `speed_factor` for the inclusive
    /// step range.
    Slowdown {
        rank: usize,
        from_step: usize,
        to_step: usize,
        speed_factor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalancingMode {
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "ccp")]
    Ccp,
    #[serde(rename = "diffusion")]
    Diffusion,
    #[serde(rename = "ccp+diffusion")]
    CcpDiffusion,
}

impl BalancingMode {
    pub const ALL: [BalancingMode; 4] = [
        BalancingMode::Off,
        BalancingMode::Ccp,
        BalancingMode::Diffusion,
        BalancingMode::CcpDiffusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BalancingMode::Off => "off",
            BalancingMode::Ccp => "ccp",
            BalancingMode::Diffusion => "diffusion",
            BalancingMode::CcpDiffusion => "ccp+diffusion",
        }
    }
}

impl fmt::Display for BalancingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BalancingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown balancing mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    Replace,
    #[default]
    Accumulate,
}

impl From<FillRule> for VictimFill {
    fn from(f: FillRule) -> Self {
        match f {
            FillRule::Replace => VictimFill::Replace,
            FillRule::Accumulate => VictimFill::Accumulate,
        }
    }
}

fn default_omega_avg() -> f64 {
    crate::stats::DEFAULT_DECAY
}
fn default_window() -> usize {
    crate::stats::DEFAULT_WINDOW_CAPACITY
}
fn default_omega_diff() -> f64 {
    1.0
}
fn default_stats_lag() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancingConfig {
    pub mode: BalancingMode,
    #[serde(default = "default_omega_avg")]
    pub omega_avg: f64,
    /// Moving average capacity.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Initial relaxation factor.
    #[serde(default = "default_omega_diff")]
    pub omega_diff: f64,
    /// Enables the reinforcement rule with this threshold; static
    /// relaxation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_reinf: Option<f64>,
    /// Starvation guard; `2 * cores_per_rank` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starvation_c: Option<usize>,
    #[serde(default)]
    pub urgent_recompute: bool,
    /// Messages become visible at network arrival even on busy ranks.
    #[serde(default)]
    pub eager_pickup: bool,
    /// Balancing after step k sees the statistics of step k + 1 - lag.
    #[serde(default = "default_stats_lag")]
    pub stats_lag: usize,
    /// Wait reduction per hosted task, seconds; the rank's task cost when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_per_received: Option<f64>,
    #[serde(default)]
    pub victim_fill: FillRule,
    /// Evaluate the runtime invariants at every event.
    #[serde(default)]
    pub check_invariants: bool,
}

impl BalancingConfig {
    pub fn new(mode: BalancingMode) -> Self {
        Self {
            mode,
            omega_avg: default_omega_avg(),
            window: default_window(),
            omega_diff: default_omega_diff(),
            omega_reinf: None,
            starvation_c: None,
            urgent_recompute: false,
            eager_pickup: false,
            stats_lag: default_stats_lag(),
            penalty_per_received: None,
            victim_fill: FillRule::default(),
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub steps: usize,
    pub cluster: ClusterConfig,
    pub workload: WorkloadSpec,
    #[serde(default, rename = "disturbance", skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<Disturbance>,
    pub balancing: BalancingConfig,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
    Error::ScenarioParse {
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

impl Scenario {
    /// Parses without validating; see [`Scenario::validate`].
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(text, e))
    }

    /// Parses and rejects scenarios with invariant violations.
    pub fn parse_valid(text: &str) -> Result<Self> {
        let scenario = Self::parse(text)?;
        scenario.ensure_valid()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse_valid(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialization: every field, defaults spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is serializable")
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ScenarioInvalid(problems))
        }
    }

    /// Every invariant violation, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let c = &self.cluster;
        let w = &self.workload;
        let b = &self.balancing;
        if self.steps == 0 {
            v.push("steps must be at least 1".into());
        }
        if c.ranks == 0 {
            v.push("cluster.ranks must be at least 1".into());
        }
        if c.cores_per_rank == 0 {
            v.push("cluster.cores_per_rank must be at least 1".into());
        }
        if !c.core_speed.is_empty() && c.core_speed.len() != c.ranks {
            v.push(format!(
                "cluster.core_speed has {} entries for {} ranks",
                c.core_speed.len(),
                c.ranks
            ));
        }
        if c.core_speed.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            v.push("cluster.core_speed entries must be positive".into());
        }
        if !(0.0..1.0).contains(&c.speed_jitter) {
            v.push("cluster.speed_jitter must lie in [0, 1)".into());
        }
        if !(c.network.latency >= 0.0 && c.network.latency.is_finite()) {
            v.push("cluster.network.latency must be non-negative".into());
        }
        if !(c.network.bandwidth > 0.0) {
            v.push("cluster.network.bandwidth must be positive".into());
        }

        if !(w.task_cost > 0.0 && w.task_cost.is_finite()) {
            v.push("workload.task_cost must be positive".into());
        }
        if !(w.serial_overhead >= 0.0 && w.serial_overhead.is_finite()) {
            v.push("workload.serial_overhead must be non-negative".into());
        }
        let mut need = |field: &str, present: bool| {
            if !present {
                v.push(format!("workload.{field} is required by generator {:?}", w.generator));
            }
        };
        match w.generator {
            GeneratorKind::Regular => need("total_tasks", w.total_tasks.is_some()),
            GeneratorKind::StaticAmr => {
                need("base", w.base.is_some());
                need("heavy", w.heavy.is_some());
            }
            GeneratorKind::DynamicAmr => {
                need("base", w.base.is_some());
                need("heavy", w.heavy.is_some());
                need("drift", w.drift.is_some());
                need("remesh_period", w.remesh_period.is_some());
            }
            GeneratorKind::Hotspot => {
                need("total_tasks", w.total_tasks.is_some());
                need("hotspot_factor", w.hotspot_factor.is_some());
            }
            GeneratorKind::Explicit => need("counts", w.counts.is_some()),
        }
        if let (Some(base), Some(heavy)) = (w.base, w.heavy) {
            if heavy < base {
                v.push("workload.heavy must not be below workload.base".into());
            }
        }
        if let Some(l) = w.light_ranks {
            if l >= c.ranks.max(1) {
                v.push("workload.light_ranks must leave at least one heavier rank".into());
            }
        }
        if let Some(d) = w.drift {
            if !(0.0..1.0).contains(&d) {
                v.push("workload.drift must lie in [0, 1)".into());
            }
        }
        if w.remesh_period == Some(0) {
            v.push("workload.remesh_period must be at least 1".into());
        }
        if let Some(o) = w.remesh_overhead {
            if !(o >= 0.0) {
                v.push("workload.remesh_overhead must be non-negative".into());
            }
        }
        if let Some(r) = w.hotspot_rank {
            if r >= c.ranks {
                v.push(format!("workload.hotspot_rank {r} out of range"));
            }
        }
        if let Some(f) = w.hotspot_factor {
            if !(f >= 1.0 && f <= c.ranks as f64) {
                v.push("workload.hotspot_factor must lie in [1, ranks]".into());
            }
        }
        if w.generator == GeneratorKind::Explicit {
            if let Some(counts) = &w.counts {
                for step in counts.len()..self.steps {
                    v.push(format!("workload missing for step {}", step + 1));
                }
                for (s, row) in counts.iter().enumerate() {
                    if row.len() != c.ranks {
                        v.push(format!(
                            "workload.counts step {} has {} ranks, expected {}",
                            s + 1,
                            row.len(),
                            c.ranks
                        ));
                    }
                }
            }
        }

        for (k, d) in self.disturbances.iter().enumerate() {
            match *d {
                Disturbance::Delay {
                    rank, period, delay, ..
                } => {
                    if rank >= c.ranks {
                        v.push(format!("disturbance {k}: rank {rank} out of range"));
                    }
                    if period == 0 {
                        v.push(format!("disturbance {k}: period must be at least 1"));
                    }
                    if !(delay >= 0.0 && delay.is_finite()) {
                        v.push(format!("disturbance {k}: delay must be non-negative"));
                    }
                }
                Disturbance::Slowdown {
                    rank,
                    from_step,
                    to_step,
                    speed_factor,
                } => {
                    if rank >= c.ranks {
                        v.push(format!("disturbance {k}: rank {rank} out of range"));
                    }
                    if from_step > to_step {
                        v.push(format!("disturbance {k}: from_step after to_step"));
                    }
                    if !(speed_factor > 0.0 && speed_factor.is_finite()) {
                        v.push(format!("disturbance {k}: speed_factor must be positive"));
                    }
                }
            }
        }

        if !(b.omega_avg > 0.0 && b.omega_avg <= 1.0) {
            v.push("balancing.omega_avg must lie in (0, 1]".into());
        }
        if b.window == 0 {
            v.push("balancing.window must be at least 1".into());
        }
        if !(0.1..=1.0).contains(&b.omega_diff) {
            v.push("balancing.omega_diff must lie in [0.1, 1]".into());
        }
        if let Some(r) = b.omega_reinf {
            if !(r > 0.0 && r <= 1.0) {
                v.push("balancing.omega_reinf must lie in (0, 1]".into());
            }
        }
        if b.stats_lag == 0 {
            v.push("balancing.stats_lag must be at least 1".into());
        }
        if let Some(p) = b.penalty_per_received {
            if !(p >= 0.0 && p.is_finite()) {
                v.push("balancing.penalty_per_received must be non-negative".into());
            }
        }
        v
    }

    /// Applies a `key=value` override. Keys are dotted paths such as
    /// `balancing.omega_reinf` or bare field names, which are looked up in
    /// the balancing, cluster, network, workload and top level sections
    /// in that order. Values use TOML syntax; anything that does not
    /// parse as TOML is taken as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let paths: Vec<Vec<&str>> = if key.contains('.') {
            vec![key.split('.').collect()]
        } else {
            [
                vec!["balancing"],
                vec!["cluster"],
                vec!["cluster", "network"],
                vec!["workload"],
                vec![],
            ]
            .into_iter()
            .map(|mut p| {
                p.push(key);
                p
            })
            .collect()
        };

        let base = toml::Value::try_from(&*self)
            .map_err(|e| Error::InvalidInput(format!("cannot serialize scenario: {e}")))?;
        let mut last_err = None;
        for path in paths {
            let mut tree = base.clone();
            if !set_path(&mut tree, &path, value.clone()) {
                continue;
            }
            match tree.try_into::<Scenario>() {
                Ok(s) => {
                    *self = s;
                    return Ok(());
                }
                Err(e) => last_err = Some(e.message().trim().to_string()),
            }
        }
        Err(Error::InvalidInput(match last_err {
            Some(e) => format!("override {key}: {e}"),
            None => format!("unknown scenario key {key:?}"),
        }))
    }
}

fn set_path(tree: &mut toml::Value, path: &[&str], value: toml::Value) -> bool {
    let (last, parents) = match path.split_last() {
        Some(x) => x,
        None => return false,
    };
    let mut node = tree;
    for p in parents {
        node = match node.get_mut(*p) {
            Some(n) => n,
            None => return false,
        };
    }
    match node.as_table_mut() {
        Some(t) => {
            t.insert(last.to_string(), value);
            true
        }
        None => false,
    }
}
