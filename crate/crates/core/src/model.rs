//! Integrated-system description: gas network, power grid, GTU couplings and
//! the scenario block, loaded from one JSON file.
//!
//! Units: gas quantities are SI (kg/m³, kg/s, Pa, m, s). Electric quantities
//! are MW/MVAr in the grid tables and per-unit on `base_mva` everywhere else.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matpower;
use crate::scenario::NoiseSpec;

pub const PA_PER_BAR: f64 = 1e5;
pub const DEFAULT_AVG_VELOCITY: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Sink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasNode {
    pub id: usize,
    pub kind: NodeKind,
    /// ρ_Cs in kg/m³, present iff the node is a source.
    pub fixed_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub from: usize,
    pub to: usize,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// |v̄_G| in m/s
    pub avg_velocity: f64,
}

impl Pipeline {
    pub fn cross_section(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasNetwork {
    /// Sorted by id; node `k` sits at index `k - 1`.
    pub nodes: Vec<GasNode>,
    pub pipelines: Vec<Pipeline>,
    pub friction: f64,
    pub sound_speed: f64,
    pub dt: f64,
}

impl GasNetwork {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_pipes(&self) -> usize {
        self.pipelines.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n_nodes() + 2 * self.n_pipes()
    }

    pub fn source_ids(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Source).map(|n| n.id).collect()
    }

    pub fn sink_ids(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Sink).map(|n| n.id).collect()
    }

    pub fn source_densities(&self) -> Vec<f64> {
        self.nodes.iter().filter_map(|n| n.fixed_density).collect()
    }

    /// Position of a sink in the sink ordering used by B22 and 𝒰.
    pub fn sink_position(&self, id: usize) -> Option<usize> {
        self.sink_ids().iter().position(|&s| s == id)
    }

    pub fn density_to_pressure(&self, rho: f64) -> f64 {
        rho * self.sound_speed * self.sound_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// MW
    #[serde(default)]
    pub pd: f64,
    /// MVAr
    #[serde(default)]
    pub qd: f64,
    /// Shunt conductance, MW at 1 p.u.
    #[serde(default)]
    pub gs: f64,
    /// Shunt susceptance, MVAr at 1 p.u.
    #[serde(default)]
    pub bs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_setpoint: Option<f64>,
    /// Reference solution magnitude, if the case file ships one.
    #[serde(default = "one")]
    pub vm: f64,
    /// Reference solution angle in degrees.
    #[serde(default)]
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    /// MW
    pub pg: f64,
    #[serde(default)]
    pub qg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal turns ratio at the from end; 1 for lines.
    #[serde(default = "one")]
    pub tap_ratio: f64,
    /// Phase shift in degrees.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerGrid {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

impl PowerGrid {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> usize {
        self.buses.iter().find(|b| b.kind == BusKind::Slack).map(|b| b.id).unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtuCoupling {
    pub bus: usize,
    pub gas_sink: usize,
    /// η_i in MW·s/kg
    pub eta: f64,
}

// ---------------------------------------------------------------------------
// Scenario configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    /// Warped daily cosine between a trough and a peak hour, `1 ± amplitude`.
    Daily { amplitude: f64, trough_hour: f64, peak_hour: f64 },
    Constant,
    /// Explicit per-step multipliers; the last value is held past the end.
    Series { values: Vec<f64> },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Daily { amplitude: 0.3, trough_hour: 4.0, peak_hour: 18.0 }
    }
}

impl Profile {
    /// Multiplier on nominal at step `t` with step length `dt` seconds.
    pub fn value(&self, t: usize, dt: f64) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::Series { values } => match values.get(t) {
                Some(v) => *v,
                None => values.last().copied().unwrap_or(1.0),
            },
            Profile::Daily { amplitude, trough_hour, peak_hour } => {
                let h = (t as f64 * dt / 3600.0).rem_euclid(24.0);
                let rise = (peak_hour - trough_hour).rem_euclid(24.0);
                let since_trough = (h - trough_hour).rem_euclid(24.0);
                let shape = if since_trough < rise {
                    -(PI * since_trough / rise).cos()
                } else {
                    (PI * (since_trough - rise) / (24.0 - rise)).cos()
                };
                1.0 + amplitude * shape
            }
        }
    }

    /// Largest multiplier over the horizon.
    pub fn peak(&self, steps: usize, dt: f64) -> f64 {
        (0..steps.max(1)).map(|t| self.value(t, dt)).fold(f64::MIN, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smoothing {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing { alpha: 0.8, beta: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasLoad {
    pub node: usize,
    /// kg/s
    pub nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtuPower {
    pub bus: usize,
    pub nominal_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseUnits {
    /// Gas noise is σ times the channel's nominal magnitude.
    #[default]
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Process variance on every voltage component, p.u.².
    pub q_electric: f64,
    /// Std of a sink's load-prediction error in kg/s; defaults to the
    /// flow-meter std.
    pub load_std: Option<f64>,
    /// Extra diagonal process variance on non-source densities, (kg/m³)².
    pub density_floor: f64,
    /// Replace the load-shaped gas process covariance with `value · I`.
    pub gas_q_diagonal: Option<f64>,
    pub p0_electric: f64,
    /// Replace the load-shaped initial gas covariance with `value · I`.
    pub p0_gas_diagonal: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            q_electric: 1e-4,
            load_std: None,
            density_floor: 0.0,
            gas_q_diagonal: None,
            p0_electric: 1e-2,
            p0_gas_diagonal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchEnd {
    From,
    To,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchMeter {
    /// 1-based branch index in grid order.
    pub branch: usize,
    pub end: BranchEnd,
}

/// Electric meter subset; `None` means every bus or branch end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeterConfig {
    pub voltage: Option<Vec<usize>>,
    pub branch_current: Option<Vec<BranchMeter>>,
    pub injection: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon_steps: usize,
    pub seed: u64,
    pub smoothing: Smoothing,
    pub electric_profile: Profile,
    pub gas_profile: Profile,
    pub gtu_profile: Profile,
    /// Relative std of the per-step load perturbation.
    pub perturbation: f64,
    pub gas_loads: Vec<GasLoad>,
    pub gtu_power: Vec<GtuPower>,
    /// Later entries override earlier ones on the channels they target.
    pub noise: Vec<NoiseSpec>,
    pub gas_noise_units: NoiseUnits,
    /// Pa; defaults to the largest source pressure.
    pub pressure_scale: Option<f64>,
    /// kg/s; defaults to the peak scheduled sink offtake.
    pub flow_scale: Option<f64>,
    pub estimator: EstimatorConfig,
    pub warmup_steps: usize,
    pub meters: MeterConfig,
    /// Sanity band on truth voltage magnitudes, p.u.
    pub voltage_band: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            horizon_steps: 144,
            seed: 42,
            smoothing: Smoothing::default(),
            electric_profile: Profile::default(),
            gas_profile: Profile::default(),
            gtu_profile: Profile::default(),
            perturbation: 0.01,
            gas_loads: Vec::new(),
            gtu_power: Vec::new(),
            noise: vec![NoiseSpec::gaussian(0.02)],
            gas_noise_units: NoiseUnits::Relative,
            pressure_scale: None,
            flow_scale: None,
            estimator: EstimatorConfig::default(),
            warmup_steps: 2,
            meters: MeterConfig::default(),
            voltage_band: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgesModel {
    pub gas: GasNetwork,
    pub grid: PowerGrid,
    pub gtus: Vec<GtuCoupling>,
    pub scenario: ScenarioConfig,
}

impl IgesModel {
    pub fn gtu_at_sink(&self, sink: usize) -> Option<&GtuCoupling> {
        self.gtus.iter().find(|g| g.gas_sink == sink)
    }

    /// Nominal (profile multiplier 1) offtake at each sink, in sink order.
    pub fn nominal_sink_loads(&self) -> Vec<f64> {
        let loads: HashMap<usize, f64> =
            self.scenario.gas_loads.iter().map(|l| (l.node, l.nominal)).collect();
        self.gas.sink_ids().iter().map(|s| loads.get(s).copied().unwrap_or(0.0)).collect()
    }

    pub fn gtu_nominal_mw(&self, bus: usize) -> Option<f64> {
        self.scenario.gtu_power.iter().find(|g| g.bus == bus).map(|g| g.nominal_mw)
    }

    /// Pressure normalization for gas noise and metrics, Pa.
    pub fn pressure_scale(&self) -> f64 {
        if self.scenario.gas_noise_units == NoiseUnits::Absolute {
            return 1.0;
        }
        self.scenario.pressure_scale.unwrap_or_else(|| {
            let rho = self.gas.source_densities().into_iter().fold(0.0, f64::max);
            self.gas.density_to_pressure(rho)
        })
    }

    /// Flow normalization: peak scheduled offtake over all sinks, kg/s.
    pub fn flow_scale(&self) -> f64 {
        if self.scenario.gas_noise_units == NoiseUnits::Absolute {
            return 1.0;
        }
        if let Some(s) = self.scenario.flow_scale {
            return s;
        }
        let sc = &self.scenario;
        let dt = self.gas.dt;
        let gas_peak = sc.gas_profile.peak(sc.horizon_steps, dt);
        let gtu_peak = sc.gtu_profile.peak(sc.horizon_steps, dt);
        let loads = sc.gas_loads.iter().map(|l| l.nominal.abs() * gas_peak);
        let gtus = self.gtus.iter().filter_map(|g| {
            self.gtu_nominal_mw(g.bus).map(|p| p.abs() * gtu_peak / g.eta)
        });
        let peak = loads.chain(gtus).fold(0.0, f64::max);
        if peak > 0.0 {
            peak
        } else {
            1.0
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_velocity() -> f64 {
    DEFAULT_AVG_VELOCITY
}

fn default_segments() -> usize {
    1
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: usize,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pressure_bar: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePipe {
    from: usize,
    to: usize,
    length: f64,
    diameter: f64,
    #[serde(default = "default_velocity")]
    avg_velocity: f64,
    #[serde(default = "default_segments")]
    segments: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGas {
    friction: f64,
    sound_speed: f64,
    dt: f64,
    nodes: Vec<FileNode>,
    pipelines: Vec<FilePipe>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    gas_network: FileGas,
    /// Inline grid tables or `{"matpower": "case.m"}`.
    power_grid: serde_json::Value,
    #[serde(default)]
    gtus: Vec<GtuCoupling>,
    #[serde(default)]
    scenario: ScenarioConfig,
}

/// Load, canonicalize and validate a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<IgesModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_model(&text, &base)
}

/// Parse a model from JSON text; MATPOWER references resolve against `base_dir`.
pub fn parse_model(text: &str, base_dir: &Path) -> Result<IgesModel> {
    let file: FileConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    let grid = match file.power_grid.get("matpower") {
        Some(serde_json::Value::String(rel)) => {
            let p: PathBuf = base_dir.join(rel);
            let src = std::fs::read_to_string(&p)
                .map_err(|e| Error::Parse(format!("cannot read case file {}: {e}", p.display())))?;
            matpower::parse_case(&src)?
        }
        Some(_) => return Err(Error::Parse("power_grid.matpower: expected a file path".into())),
        None => serde_json::from_value(file.power_grid)
            .map_err(|e| Error::Parse(format!("power_grid: {e}")))?,
    };
    let mut model = build(file.gas_network, grid, file.gtus, file.scenario)?;
    canonicalize(&mut model)?;
    let issues = validate(&model);
    if !issues.is_empty() {
        let msg: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return Err(Error::Validation(msg.join("; ")));
    }
    Ok(model)
}

fn build(
    gas: FileGas,
    grid: PowerGrid,
    gtus: Vec<GtuCoupling>,
    scenario: ScenarioConfig,
) -> Result<IgesModel> {
    let c2 = gas.sound_speed * gas.sound_speed;
    let mut nodes = Vec::with_capacity(gas.nodes.len());
    for n in &gas.nodes {
        let fixed_density = match (n.fixed_density, n.pressure_bar) {
            (Some(_), Some(_)) => {
                return Err(Error::Parse(format!(
                    "gas_network.nodes[id={}]: give fixed_density or pressure_bar, not both",
                    n.id
                )))
            }
            (Some(r), None) => Some(r),
            (None, Some(p)) => Some(p * PA_PER_BAR / c2),
            (None, None) => None,
        };
        nodes.push(GasNode { id: n.id, kind: n.kind, fixed_density });
    }
    let mut pipelines = Vec::new();
    let mut next_id = nodes.iter().map(|n| n.id).max().unwrap_or(0) + 1;
    for p in &gas.pipelines {
        if p.segments == 0 {
            return Err(Error::Parse(format!("pipeline {}-{}: segments must be ≥ 1", p.from, p.to)));
        }
        // Subdivision inserts zero-offtake junctions numbered after every
        // existing node; each segment is oriented low id to high id.
        let mut chain = vec![p.from];
        for _ in 1..p.segments {
            nodes.push(GasNode { id: next_id, kind: NodeKind::Sink, fixed_density: None });
            chain.push(next_id);
            next_id += 1;
        }
        chain.push(p.to);
        let seg = p.length / p.segments as f64;
        for w in chain.windows(2) {
            // A mis-oriented input pipe keeps its raw order so validation sees it.
            let (a, b) = if p.from >= p.to { (w[0], w[1]) } else { (w[0].min(w[1]), w[0].max(w[1])) };
            pipelines.push(Pipeline {
                from: a,
                to: b,
                length: seg,
                diameter: p.diameter,
                avg_velocity: p.avg_velocity,
            });
        }
    }
    Ok(IgesModel {
        gas: GasNetwork {
            nodes,
            pipelines,
            friction: gas.friction,
            sound_speed: gas.sound_speed,
            dt: gas.dt,
        },
        grid,
        gtus,
        scenario,
    })
}

/// Map unique ids onto 1..n preserving order, rewriting every reference.
fn dense_map(ids: &[usize]) -> Option<HashMap<usize, usize>> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some(sorted.iter().enumerate().map(|(k, &id)| (id, k + 1)).collect())
}

fn canonicalize(m: &mut IgesModel) -> Result<()> {
    let node_ids: Vec<usize> = m.gas.nodes.iter().map(|n| n.id).collect();
    if let Some(map) = dense_map(&node_ids) {
        let re = |id: &mut usize| {
            if let Some(&k) = map.get(id) {
                *id = k;
            }
        };
        m.gas.nodes.iter_mut().for_each(|n| re(&mut n.id));
        for p in &mut m.gas.pipelines {
            re(&mut p.from);
            re(&mut p.to);
        }
        m.gtus.iter_mut().for_each(|g| re(&mut g.gas_sink));
        m.scenario.gas_loads.iter_mut().for_each(|l| re(&mut l.node));
        m.gas.nodes.sort_by_key(|n| n.id);
    }
    let bus_ids: Vec<usize> = m.grid.buses.iter().map(|b| b.id).collect();
    if let Some(map) = dense_map(&bus_ids) {
        let re = |id: &mut usize| {
            if let Some(&k) = map.get(id) {
                *id = k;
            }
        };
        m.grid.buses.iter_mut().for_each(|b| re(&mut b.id));
        for br in &mut m.grid.branches {
            re(&mut br.from);
            re(&mut br.to);
        }
        m.grid.generators.iter_mut().for_each(|g| re(&mut g.bus));
        m.gtus.iter_mut().for_each(|g| re(&mut g.bus));
        m.scenario.gtu_power.iter_mut().for_each(|g| re(&mut g.bus));
        let meters = &mut m.scenario.meters;
        if let Some(v) = meters.voltage.as_mut() {
            v.iter_mut().for_each(re);
        }
        if let Some(v) = meters.injection.as_mut() {
            v.iter_mut().for_each(re);
        }
        m.grid.buses.sort_by_key(|b| b.id);
    }
    Ok(())
}

/// Serialize to the JSON config format; `parse_model` inverts it.
pub fn serialize(model: &IgesModel) -> Result<String> {
    let file = FileConfig {
        gas_network: FileGas {
            friction: model.gas.friction,
            sound_speed: model.gas.sound_speed,
            dt: model.gas.dt,
            nodes: model
                .gas
                .nodes
                .iter()
                .map(|n| FileNode { id: n.id, kind: n.kind, fixed_density: n.fixed_density, pressure_bar: None })
                .collect(),
            pipelines: model
                .gas
                .pipelines
                .iter()
                .map(|p| FilePipe {
                    from: p.from,
                    to: p.to,
                    length: p.length,
                    diameter: p.diameter,
                    avg_velocity: p.avg_velocity,
                    segments: 1,
                })
                .collect(),
        },
        power_grid: serde_json::to_value(&model.grid).map_err(|e| Error::Parse(e.to_string()))?,
        gtus: model.gtus.clone(),
        scenario: model.scenario.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IssueCode {
    DuplicateNode,
    NodeIdsNotDense,
    UnknownNode,
    PipelineOrientation,
    NonPositiveParameter,
    SourceWithoutDensity,
    SinkWithDensity,
    NoSource,
    Disconnected,
    DuplicateBus,
    BusIdsNotDense,
    SlackCount,
    MissingSetpoint,
    UnknownBus,
    GtuSinkNotSink,
    GtuUnknownNode,
    GtuUnknownBus,
    LoadAtSource,
    LoadAtGtuSink,
    LoadAtGtuBus,
    BadSmoothing,
    HorizonTooShort,
    BadNoise,
    BadMeter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

/// Check every structural invariant; an empty list means the model is usable.
pub fn validate(model: &IgesModel) -> Vec<Issue> {
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Issue { code, message });

    let gas = &model.gas;
    let mut seen = HashSet::new();
    for n in &gas.nodes {
        if !seen.insert(n.id) {
            push(IssueCode::DuplicateNode, format!("gas node id {} appears twice", n.id));
        }
        match (n.kind, n.fixed_density) {
            (NodeKind::Source, None) => {
                push(IssueCode::SourceWithoutDensity, format!("source node {} has no fixed_density", n.id))
            }
            (NodeKind::Source, Some(r)) if !(r > 0.0) => {
                push(IssueCode::NonPositiveParameter, format!("source node {}: fixed_density must be > 0", n.id))
            }
            (NodeKind::Sink, Some(_)) => {
                push(IssueCode::SinkWithDensity, format!("sink node {} carries a fixed_density", n.id))
            }
            _ => {}
        }
    }
    let n_nodes = gas.nodes.len();
    if gas.nodes.iter().enumerate().any(|(k, n)| n.id != k + 1) && seen.len() == n_nodes {
        push(IssueCode::NodeIdsNotDense, "gas node ids must be 1..n in order".into());
    }
    if !gas.nodes.iter().any(|n| n.kind == NodeKind::Source) {
        push(IssueCode::NoSource, "gas network has no source node".into());
    }
    for (name, v) in [("friction", gas.friction), ("sound_speed", gas.sound_speed), ("dt", gas.dt)] {
        if !(v > 0.0) {
            push(IssueCode::NonPositiveParameter, format!("gas_network.{name} must be > 0"));
        }
    }
    for (l, p) in gas.pipelines.iter().enumerate() {
        let tag = format!("pipeline {} ({}-{})", l + 1, p.from, p.to);
        if !seen.contains(&p.from) || !seen.contains(&p.to) {
            push(IssueCode::UnknownNode, format!("{tag}: endpoint is not a node"));
        }
        if p.from >= p.to {
            push(IssueCode::PipelineOrientation, format!("{tag}: from must be smaller than to"));
        }
        for (name, v) in [("length", p.length), ("diameter", p.diameter), ("avg_velocity", p.avg_velocity)] {
            if !(v > 0.0) {
                push(IssueCode::NonPositiveParameter, format!("{tag}: {name} must be > 0"));
            }
        }
    }
    if n_nodes > 0 && !connected(n_nodes, gas.pipelines.iter().map(|p| (p.from, p.to))) {
        push(IssueCode::Disconnected, "gas network is not connected".into());
    }

    let grid = &model.grid;
    let mut buses = HashSet::new();
    for b in &grid.buses {
        if !buses.insert(b.id) {
            push(IssueCode::DuplicateBus, format!("bus id {} appears twice", b.id));
        }
        if b.kind != BusKind::Pq && b.v_setpoint.map_or(true, |v| !(v > 0.0)) {
            push(IssueCode::MissingSetpoint, format!("bus {}: slack/PV bus needs v_setpoint > 0", b.id));
        }
    }
    if grid.buses.iter().enumerate().any(|(k, b)| b.id != k + 1) && buses.len() == grid.buses.len() {
        push(IssueCode::BusIdsNotDense, "bus ids must be 1..n in order".into());
    }
    let slacks = grid.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slacks != 1 {
        push(IssueCode::SlackCount, format!("expected exactly one slack bus, found {slacks}"));
    }
    if !(grid.base_mva > 0.0) {
        push(IssueCode::NonPositiveParameter, "power_grid.base_mva must be > 0".into());
    }
    for (k, br) in grid.branches.iter().enumerate() {
        if !buses.contains(&br.from) || !buses.contains(&br.to) {
            push(IssueCode::UnknownBus, format!("branch {}: endpoint bus missing", k + 1));
        }
        if br.r == 0.0 && br.x == 0.0 {
            push(IssueCode::NonPositiveParameter, format!("branch {}: zero impedance", k + 1));
        }
        if !(br.tap_ratio > 0.0) {
            push(IssueCode::NonPositiveParameter, format!("branch {}: tap_ratio must be > 0", k + 1));
        }
    }
    for g in &grid.generators {
        if !buses.contains(&g.bus) {
            push(IssueCode::UnknownBus, format!("generator at unknown bus {}", g.bus));
        }
    }

    for g in &model.gtus {
        match gas.nodes.iter().find(|n| n.id == g.gas_sink) {
            None => push(IssueCode::GtuUnknownNode, format!("GTU at bus {}: gas node {} missing", g.bus, g.gas_sink)),
            Some(n) if n.kind != NodeKind::Sink => push(
                IssueCode::GtuSinkNotSink,
                format!("GTU at bus {}: gas node {} is not a sink", g.bus, g.gas_sink),
            ),
            _ => {}
        }
        match grid.buses.iter().find(|b| b.id == g.bus) {
            None => push(IssueCode::GtuUnknownBus, format!("GTU bus {} missing", g.bus)),
            Some(b) if b.pd != 0.0 => push(
                IssueCode::LoadAtGtuBus,
                format!("electric load at GTU bus {}; the GTU output is the net bus injection", g.bus),
            ),
            _ => {}
        }
        if !(g.eta > 0.0) {
            push(IssueCode::NonPositiveParameter, format!("GTU at bus {}: eta must be > 0", g.bus));
        }
    }

    let sc = &model.scenario;
    let sm = &sc.smoothing;
    if !(sm.alpha > 0.0 && sm.alpha < 1.0 && sm.beta > 0.0 && sm.beta < 1.0) {
        push(IssueCode::BadSmoothing, "smoothing alpha and beta must lie in (0,1)".into());
    }
    if sc.horizon_steps < 3 {
        push(IssueCode::HorizonTooShort, "horizon_steps must be ≥ 3".into());
    }
    for l in &sc.gas_loads {
        match gas.nodes.iter().find(|n| n.id == l.node) {
            None => push(IssueCode::UnknownNode, format!("gas load at unknown node {}", l.node)),
            Some(n) if n.kind == NodeKind::Source => {
                push(IssueCode::LoadAtSource, format!("gas load at source node {}", l.node))
            }
            _ if model.gtus.iter().any(|g| g.gas_sink == l.node) => push(
                IssueCode::LoadAtGtuSink,
                format!("gas load at node {}, which feeds a GTU; its offtake follows the GTU output", l.node),
            ),
            _ => {}
        }
    }
    for g in &sc.gtu_power {
        if !model.gtus.iter().any(|c| c.bus == g.bus) {
            push(IssueCode::GtuUnknownBus, format!("gtu_power for bus {} without a GTU", g.bus));
        }
    }
    for (k, n) in sc.noise.iter().enumerate() {
        if let Err(msg) = n.check() {
            push(IssueCode::BadNoise, format!("scenario.noise[{k}]: {msg}"));
        }
    }
    let m = &sc.meters;
    for b in m.voltage.iter().flatten().chain(m.injection.iter().flatten()) {
        if !buses.contains(b) {
            push(IssueCode::BadMeter, format!("meter at unknown bus {b}"));
        }
    }
    for bm in m.branch_current.iter().flatten() {
        if bm.branch == 0 || bm.branch > grid.branches.len() {
            push(IssueCode::BadMeter, format!("current meter on unknown branch {}", bm.branch));
        }
    }
    out
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![1usize];
    let mut count = 0;
    while let Some(v) = stack.pop() {
        if v > n || seen[v] {
            continue;
        }
        seen[v] = true;
        count += 1;
        stack.extend(adj.get(&v).into_iter().flatten().copied());
    }
    count == n
}
