//! Ground-truth trajectories and synthetic measurements.
//!
//! Random numbers come from ChaCha20 with separate streams for the truth
//! perturbations and the meter noise. Variates are produced by fixed
//! transforms of 53-bit uniforms on (0, 1): Box–Muller (cosine branch) for
//! normals, inverse CDF for Laplace, the tangent transform for Cauchy. Every
//! channel consumes exactly two uniforms per step whatever its distribution,
//! so changing one channel's noise model never shifts another's draws.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::injected_power;
use crate::error::{Error, Result};
use crate::gas::{self, GasTransition};
use crate::model::{IgesModel, PA_PER_BAR};
use crate::power::{self, Admittance, ElectricMeterPlan, OperatingPoint};

const TRUTH_STREAM: u64 = 1;
const METER_STREAM: u64 = 2;

/// Measurement channels biased in the `biased` preset.
pub const BIAS_CHANNELS: [&str; 4] = ["node14.pressure_bar", "node21.net_flow", "bus11.e", "bus11.f"];

// ---------------------------------------------------------------------------
// Noise specification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    BiasedGaussian { sigma: f64, bias: f64 },
    Cauchy { location: f64, scale: f64 },
    Laplace { location: f64, scale: f64 },
}

/// A noise model and the channels it applies to. Values are in normalized
/// units: p.u. for electric meters, fractions of the channel scale for gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    /// `all`, a group (`voltage`, `branch_current`, `injection_current`,
    /// `pressure`, `flow`, `electric`, `gas`, `state`) or a channel name.
    #[serde(default = "all_target")]
    pub target: String,
}

fn all_target() -> String {
    "all".into()
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian { sigma }, target: all_target() }
    }

    pub fn on(mut self, target: &str) -> Self {
        self.target = target.into();
        self
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let ok = match self.kind {
            NoiseKind::Gaussian { sigma } | NoiseKind::BiasedGaussian { sigma, .. } => sigma > 0.0,
            NoiseKind::Cauchy { scale, .. } | NoiseKind::Laplace { scale, .. } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err("sigma/scale must be > 0".into())
        }
    }

    /// Std the filter assumes for this channel (its R entry, normalized).
    pub fn nominal_std(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian { sigma } | NoiseKind::BiasedGaussian { sigma, .. } => sigma,
            NoiseKind::Cauchy { scale, .. } => scale,
            NoiseKind::Laplace { scale, .. } => scale * std::f64::consts::SQRT_2,
        }
    }

    /// Same family rescaled so that `nominal_std` becomes `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let kind = match self.kind {
            NoiseKind::Gaussian { .. } => NoiseKind::Gaussian { sigma },
            NoiseKind::BiasedGaussian { bias, .. } => NoiseKind::BiasedGaussian { sigma, bias },
            NoiseKind::Cauchy { location, .. } => NoiseKind::Cauchy { location, scale: sigma },
            NoiseKind::Laplace { location, .. } => {
                NoiseKind::Laplace { location, scale: sigma / std::f64::consts::SQRT_2 }
            }
        };
        NoiseSpec { kind, target: self.target.clone() }
    }

    /// One draw from two independent uniforms on (0, 1).
    pub fn sample(&self, u1: f64, u2: f64) -> f64 {
        match self.kind {
            NoiseKind::Gaussian { sigma } => sigma * box_muller(u1, u2),
            NoiseKind::BiasedGaussian { sigma, bias } => bias + sigma * box_muller(u1, u2),
            NoiseKind::Laplace { location, scale } => location + scale * laplace_icdf(u1),
            NoiseKind::Cauchy { location, scale } => location + scale * (PI * (u1 - 0.5)).tan(),
        }
    }
}

pub fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Standard Laplace quantile (unit scale).
pub fn laplace_icdf(u: f64) -> f64 {
    let d = u - 0.5;
    -d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

/// Uniform on the open interval (0, 1) from 53 random bits.
pub fn uniform_open(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    box_muller(u1, u2)
}

pub fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Named noise regimes. `sigma` is the Gaussian std; `bias` applies to the
/// `biased` preset only.
pub fn preset(name: &str, sigma: f64, bias: f64) -> Result<Vec<NoiseSpec>> {
    let base = NoiseSpec::gaussian(sigma);
    Ok(match name {
        "gaussian" => vec![base],
        "biased" => {
            let mut v = vec![base];
            for ch in BIAS_CHANNELS {
                v.push(NoiseSpec { kind: NoiseKind::BiasedGaussian { sigma, bias }, target: ch.into() });
            }
            v
        }
        "laplace" => vec![
            base,
            NoiseSpec {
                kind: NoiseKind::Laplace { location: 0.0, scale: sigma / std::f64::consts::SQRT_2 },
                target: "state".into(),
            },
        ],
        "cauchy" => vec![
            base,
            NoiseSpec { kind: NoiseKind::Cauchy { location: 0.0, scale: sigma }, target: "state".into() },
        ],
        other => {
            return Err(Error::Validation(format!(
                "unknown scenario '{other}' (expected gaussian, biased, laplace or cauchy)"
            )))
        }
    })
}

// ---------------------------------------------------------------------------
// Channels

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGroup {
    Voltage,
    BranchCurrent,
    InjectionCurrent,
    Pressure,
    Flow,
}

impl ChannelGroup {
    pub fn matches(&self, selector: &str) -> bool {
        use ChannelGroup::*;
        match selector {
            "all" => true,
            "voltage" => *self == Voltage,
            "branch_current" => *self == BranchCurrent,
            "injection_current" => *self == InjectionCurrent,
            "pressure" => *self == Pressure,
            "flow" => *self == Flow,
            "electric" => matches!(self, Voltage | BranchCurrent | InjectionCurrent),
            "gas" => matches!(self, Pressure | Flow),
            "state" => matches!(self, Voltage | Pressure | Flow),
            _ => false,
        }
    }

    pub fn is_selector(s: &str) -> bool {
        matches!(
            s,
            "all" | "voltage" | "branch_current" | "injection_current" | "pressure" | "flow" | "electric" | "gas" | "state"
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub group: ChannelGroup,
    /// Multiplier from normalized noise to SI (1 for electric meters).
    pub scale: f64,
}

/// Measurement channels in the row order of H_I.
pub fn measurement_channels(model: &IgesModel, plan: &ElectricMeterPlan) -> Vec<Channel> {
    let mut out = Vec::new();
    let nv = plan.voltage_meters.len();
    let nb = plan.branch_current_meters.len();
    for (k, name) in plan.channel_names().into_iter().enumerate() {
        let group = if k < 2 * nv {
            ChannelGroup::Voltage
        } else if k < 2 * (nv + nb) {
            ChannelGroup::BranchCurrent
        } else {
            ChannelGroup::InjectionCurrent
        };
        out.push(Channel { name, group, scale: 1.0 });
    }
    let (ps, fs) = (model.pressure_scale(), model.flow_scale());
    for n in 1..=model.gas.n_nodes() {
        out.push(Channel { name: format!("node{n}.pressure_bar"), group: ChannelGroup::Pressure, scale: ps });
    }
    for n in 1..=model.gas.n_nodes() {
        out.push(Channel { name: format!("node{n}.net_flow"), group: ChannelGroup::Flow, scale: fs });
    }
    out
}

/// Noise spec governing each channel (later specs win).
pub fn assign_noise<'a>(channels: &[Channel], specs: &'a [NoiseSpec]) -> Result<Vec<&'a NoiseSpec>> {
    let mut out: Vec<Option<&NoiseSpec>> = vec![None; channels.len()];
    for spec in specs {
        spec.check().map_err(|m| Error::Validation(format!("noise on '{}': {m}", spec.target)))?;
        if ChannelGroup::is_selector(&spec.target) {
            for (k, c) in channels.iter().enumerate() {
                if c.group.matches(&spec.target) {
                    out[k] = Some(spec);
                }
            }
        } else {
            let k = channels
                .iter()
                .position(|c| c.name == spec.target)
                .ok_or_else(|| Error::Validation(format!("noise target '{}' is not a channel", spec.target)))?;
            out[k] = Some(spec);
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(s, c)| s.ok_or_else(|| Error::Validation(format!("no noise model covers channel {}", c.name))))
        .collect()
}

/// Diagonal R in SI units from the assigned nominal stds.
pub fn measurement_variances(channels: &[Channel], specs: &[NoiseSpec]) -> Result<DVector<f64>> {
    let assigned = assign_noise(channels, specs)?;
    Ok(DVector::from_iterator(
        channels.len(),
        channels.iter().zip(&assigned).map(|(c, s)| (s.nominal_std() * c.scale).powi(2)),
    ))
}

// ---------------------------------------------------------------------------
// Truth simulation

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSeries {
    /// Joint states x_I,t.
    pub states: Vec<DVector<f64>>,
    /// Commanded offtake at each sink, sink order, kg/s.
    pub sink_outflows: Vec<Vec<f64>>,
}

/// Electric, gas and GTU profile multipliers at step `t`.
fn multipliers(model: &IgesModel, t: usize) -> (f64, f64, f64) {
    let sc = &model.scenario;
    let dt = model.gas.dt;
    (sc.electric_profile.value(t, dt), sc.gas_profile.value(t, dt), sc.gtu_profile.value(t, dt))
}

/// Generate the ground-truth trajectory for `model.scenario`.
pub fn simulate_truth(model: &IgesModel, adm: &Admittance, tr: &GasTransition) -> Result<TruthSeries> {
    let sc = &model.scenario;
    let grid = &model.grid;
    let net = &model.gas;
    let (nb, nn) = (grid.n_buses(), net.n_nodes());
    let base = OperatingPoint::base(grid);
    let sinks = net.sink_ids();
    let loads = model.nominal_sink_loads();
    let src = net.source_densities();
    let mut rng = stream(sc.seed, TRUTH_STREAM);

    let mut states = Vec::with_capacity(sc.horizon_steps);
    let mut outflows_series = Vec::with_capacity(sc.horizon_steps);
    let mut prev_e: Option<DVector<f64>> = None;
    let mut xg: Option<DVector<f64>> = None;
    for t in 0..sc.horizon_steps {
        let (fe, fg, fgtu) = multipliers(model, t);
        let mut op = base.clone();
        for i in 0..nb {
            let k = fe * (1.0 + sc.perturbation * standard_normal(&mut rng));
            op.pd[i] = base.pd[i] * k;
            op.qd[i] = base.qd[i] * k;
        }
        for i in 0..nb {
            op.pg[i] = base.pg[i] * fe;
        }
        for g in &model.gtus {
            let nominal = model.gtu_nominal_mw(g.bus).unwrap_or(base.pg[g.bus - 1]);
            op.pg[g.bus - 1] = nominal * fgtu;
        }
        let xe = power::power_flow(grid, adm, &op, prev_e.as_ref())
            .map_err(|e| if let Error::NonConvergence { .. } = e { e } else { e.at_step(t) })?;
        let [lo, hi] = sc.voltage_band;
        for (i, v) in power::to_complex(&xe).iter().enumerate() {
            if !(v.norm() > lo && v.norm() < hi) {
                return Err(Error::NumericFailure {
                    step: Some(t),
                    msg: format!("bus {} voltage {:.4} p.u. outside sanity band", i + 1, v.norm()),
                });
            }
        }

        let pert: Vec<f64> = (0..nn).map(|_| standard_normal(&mut rng)).collect();
        let mut out: Vec<f64> = sinks
            .iter()
            .zip(&loads)
            .map(|(&s, &l)| l * fg * (1.0 + sc.perturbation * pert[s - 1]))
            .collect();
        for g in &model.gtus {
            let p_mw = injected_power(&xe, adm, g.bus) * grid.base_mva;
            let pos = net.sink_position(g.gas_sink).expect("validated GTU sink");
            out[pos] = crate::coupling::gtu_power_to_flow(p_mw, g.eta);
        }
        let next = match &xg {
            None => gas::solve_steady(net, &src, &out)?,
            Some(x) => gas::step_gas(tr, x, &gas::boundary_vector(net, &src, &out)?)?,
        };
        if let Some((i, r)) = next.rows(0, nn).iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
            return Err(Error::NumericFailure {
                step: Some(t),
                msg: format!("node {} density {r:.4} kg/m³ is not positive", i + 1),
            });
        }
        let mut x = DVector::zeros(2 * nb + net.state_dim());
        x.rows_mut(0, 2 * nb).copy_from(&xe);
        x.rows_mut(2 * nb, net.state_dim()).copy_from(&next);
        states.push(x);
        outflows_series.push(out);
        prev_e = Some(xe);
        xg = Some(next);
    }
    Ok(TruthSeries { states, sink_outflows: outflows_series })
}

/// z_t = H_I x_t + w_t with w drawn per channel from its noise model.
pub fn synthesize_measurements(
    states: &[DVector<f64>],
    h: &DMatrix<f64>,
    channels: &[Channel],
    specs: &[NoiseSpec],
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let assigned = assign_noise(channels, specs)?;
    let mut rng = stream(seed, METER_STREAM);
    let mut out = Vec::with_capacity(states.len());
    for x in states {
        let mut z = h * x;
        for (k, (c, spec)) in channels.iter().zip(&assigned).enumerate() {
            let u1 = uniform_open(&mut rng);
            let u2 = uniform_open(&mut rng);
            z[k] += spec.sample(u1, u2) * c.scale;
        }
        out.push(z);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tables in file units

/// Wide table of one series in file units (pressures in bar).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Column names of a joint state in file units.
pub fn state_columns(model: &IgesModel) -> Vec<String> {
    let mut cols = Vec::new();
    for b in 1..=model.grid.n_buses() {
        cols.push(format!("bus{b}.e"));
        cols.push(format!("bus{b}.f"));
    }
    for n in 1..=model.gas.n_nodes() {
        cols.push(format!("node{n}.pressure_bar"));
    }
    let mut seen = std::collections::HashMap::new();
    for p in &model.gas.pipelines {
        let base = format!("pipe{}_{}", p.from, p.to);
        let k = seen.entry(base.clone()).or_insert(0usize);
        *k += 1;
        let name = if *k == 1 { base } else { format!("{base}_{k}") };
        cols.push(format!("{name}.mflow_i"));
        cols.push(format!("{name}.mflow_j"));
    }
    cols
}

pub fn states_to_table(model: &IgesModel, states: &[DVector<f64>]) -> Table {
    let ne = 2 * model.grid.n_buses();
    let nn = model.gas.n_nodes();
    let c2 = model.gas.sound_speed.powi(2);
    let rows = states
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(k, v)| if k >= ne && k < ne + nn { v * c2 / PA_PER_BAR } else { *v })
                .collect()
        })
        .collect();
    Table { columns: state_columns(model), rows }
}

pub fn table_to_states(model: &IgesModel, table: &Table) -> Result<Vec<DVector<f64>>> {
    expect_columns(table, &state_columns(model))?;
    let ne = 2 * model.grid.n_buses();
    let nn = model.gas.n_nodes();
    let c2 = model.gas.sound_speed.powi(2);
    Ok(table
        .rows
        .iter()
        .map(|r| {
            DVector::from_iterator(
                r.len(),
                r.iter().enumerate().map(|(k, v)| if k >= ne && k < ne + nn { v * PA_PER_BAR / c2 } else { *v }),
            )
        })
        .collect())
}

pub fn measurements_to_table(channels: &[Channel], z: &[DVector<f64>]) -> Table {
    let rows = z
        .iter()
        .map(|zt| {
            zt.iter()
                .zip(channels)
                .map(|(v, c)| if c.group == ChannelGroup::Pressure { v / PA_PER_BAR } else { *v })
                .collect()
        })
        .collect();
    Table { columns: channels.iter().map(|c| c.name.clone()).collect(), rows }
}

pub fn table_to_measurements(channels: &[Channel], table: &Table) -> Result<Vec<DVector<f64>>> {
    let names: Vec<String> = channels.iter().map(|c| c.name.clone()).collect();
    expect_columns(table, &names)?;
    Ok(table
        .rows
        .iter()
        .map(|r| {
            DVector::from_iterator(
                r.len(),
                r.iter()
                    .zip(channels)
                    .map(|(v, c)| if c.group == ChannelGroup::Pressure { v * PA_PER_BAR } else { *v }),
            )
        })
        .collect())
}

fn expect_columns(table: &Table, want: &[String]) -> Result<()> {
    if table.columns != want {
        let first = table.columns.iter().zip(want).position(|(a, b)| a != b);
        let detail = match first {
            Some(k) => format!("column {} is '{}', expected '{}'", k + 1, table.columns[k], want[k]),
            None => format!("{} columns, expected {}", table.columns.len(), want.len()),
        };
        return Err(Error::Parse(format!("table layout does not match the model: {detail}")));
    }
    if let Some(r) = table.rows.iter().position(|r| r.len() != want.len()) {
        return Err(Error::Parse(format!("row {} has the wrong number of fields", r + 1)));
    }
    Ok(())
}

pub fn write_table(path: &std::path::Path, table: &Table) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(format!("writing {}", path.display()), e),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["step".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (t, row) in table.rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_table(path: &std::path::Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(format!("reading {}", path.display()), e),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let header = r.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?.clone();
    if header.get(0) != Some("step") {
        return Err(Error::Parse(format!("{}: first column must be 'step'", path.display())));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}: row {}: cannot parse '{f}'", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Aligned per-channel series on the state-like meters (voltages, nodal
/// pressures, nodal net flows), normalized by the channel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub channel_names: Vec<String>,
    pub groups: Vec<ChannelGroup>,
    /// `[step][channel]`.
    pub truth: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
}

impl RunArtifacts {
    pub fn build(
        channels: &[Channel],
        h: &DMatrix<f64>,
        truth: &[DVector<f64>],
        measurements: &[DVector<f64>],
        estimates: &[DVector<f64>],
    ) -> Result<Self> {
        crate::error::check_len("measurement steps", measurements.len(), truth.len())?;
        crate::error::check_len("estimate steps", estimates.len(), truth.len())?;
        crate::error::check_len("channels", channels.len(), h.nrows())?;
        let sel: Vec<usize> = (0..channels.len()).filter(|&k| channels[k].group.matches("state")).collect();
        let project = |x: &DVector<f64>| -> Vec<f64> {
            sel.iter().map(|&k| h.row(k).dot(&x.transpose()) / channels[k].scale).collect()
        };
        Ok(RunArtifacts {
            channel_names: sel.iter().map(|&k| channels[k].name.clone()).collect(),
            groups: sel.iter().map(|&k| channels[k].group).collect(),
            truth: truth.iter().map(project).collect(),
            measurements: measurements.iter().map(|z| sel.iter().map(|&k| z[k] / channels[k].scale).collect()).collect(),
            estimates: estimates.iter().map(project).collect(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.truth.len()
    }

    /// (truth, measurement, estimate) series of channel `k`.
    pub fn series(&self, k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[k]).collect::<Vec<f64>>();
        (col(&self.truth), col(&self.measurements), col(&self.estimates))
    }
}
