//! End-to-end runs: model → truth → measurements → estimates → metrics.
//!
//! Every series that crosses a file boundary is passed through its table
//! conversion before use, so estimating from files written by a previous
//! run gives exactly the same numbers as a single in-process run.

use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::coupling::{build_joint, JointModel};
use crate::error::{Error, Result};
use crate::estimator::{self, CovarianceSettings, DseInit, DseOutput, NoiseCov};
use crate::eval::{self, MetricsReport};
use crate::gas::{self, GasTransition};
use crate::model::{self, IgesModel, ScenarioConfig};
use crate::power::{self, Admittance, ElectricMeterPlan};
use crate::scenario::{self, Channel, NoiseSpec, RunArtifacts, Table, TruthSeries};

pub const TRUTH_FILE: &str = "truth.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Bias used by the `biased` preset when none is given.
pub const DEFAULT_BIAS: f64 = 0.02;
/// Gaussian std of the presets when none is given.
pub const DEFAULT_SIGMA: f64 = 0.02;

/// Everything derived once from a validated model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: IgesModel,
    pub adm: Admittance,
    pub transition: GasTransition,
    pub plan: ElectricMeterPlan,
    pub joint: JointModel,
    pub channels: Vec<Channel>,
}

pub fn prepare(model: IgesModel) -> Result<Prepared> {
    let adm = power::build_admittance(&model.grid);
    let transition = gas::build_transition(&model.gas)?;
    let plan = ElectricMeterPlan::from_config(&model.grid, &model.scenario.meters);
    let h_e = power::electric_measurement_matrix(&model.grid, &adm, &plan);
    let h_g = gas::gas_measurement_matrix(&model.gas);
    let joint = build_joint(&model, &transition, &h_e, &h_g)?;
    let channels = scenario::measurement_channels(&model, &plan);
    Ok(Prepared { model, adm, transition, plan, joint, channels })
}

impl Prepared {
    pub fn simulate(&self) -> Result<TruthSeries> {
        scenario::simulate_truth(&self.model, &self.adm, &self.transition)
    }

    pub fn measure(&self, truth: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let sc = &self.model.scenario;
        scenario::synthesize_measurements(truth, &self.joint.h, &self.channels, &sc.noise, sc.seed)
    }

    /// Q, P₀ settings resolved against the configured meter noise.
    pub fn covariance_settings(&self, r: &DVector<f64>) -> CovarianceSettings {
        let est = &self.model.scenario.estimator;
        let me = self.joint.layout.n_meas_electric;
        // Std of the loosest sink flow meter, kg/s.
        let flow_std = estimator::sink_meter_rows(&self.joint)
            .into_iter()
            .map(|k| r[me + k].sqrt())
            .fold(0.0, f64::max);
        CovarianceSettings {
            q_electric: est.q_electric,
            load_std: est.load_std.unwrap_or(flow_std),
            density_floor: est.density_floor,
            gas_q_diagonal: est.gas_q_diagonal,
            p0_electric: est.p0_electric,
            p0_gas_std: flow_std,
            p0_gas_diagonal: est.p0_gas_diagonal,
        }
    }

    pub fn measurement_variances(&self) -> Result<DVector<f64>> {
        scenario::measurement_variances(&self.channels, &self.model.scenario.noise)
    }

    /// Static estimates for steps 0 and 1, then the Kalman filter.
    pub fn estimate(&self, measurements: &[DVector<f64>]) -> Result<DseOutput> {
        if measurements.len() < 2 {
            return Err(Error::Validation("need at least two measurement steps".into()));
        }
        let r = self.measurement_variances()?;
        let s = self.covariance_settings(&r);
        let cov = NoiseCov { q: estimator::process_covariance(&self.joint, &s), r: r.clone() };
        let init = DseInit {
            x0: estimator::static_estimate(&self.joint, &measurements[0], &r).map_err(|e| e.at_step(0))?,
            x1: estimator::static_estimate(&self.joint, &measurements[1], &r).map_err(|e| e.at_step(1))?,
            p1: estimator::initial_covariance(&self.joint, &s),
        };
        estimator::run_dse(&self.joint, measurements, &cov, &init)
    }

    pub fn evaluate(
        &self,
        truth: &[DVector<f64>],
        measurements: &[DVector<f64>],
        estimates: &[DVector<f64>],
    ) -> Result<MetricsReport> {
        let art = RunArtifacts::build(&self.channels, &self.joint.h, truth, measurements, estimates)?;
        eval::report(&art, self.model.scenario.warmup_steps)
    }

    pub fn state_table(&self, states: &[DVector<f64>]) -> Table {
        scenario::states_to_table(&self.model, states)
    }

    pub fn measurement_table(&self, z: &[DVector<f64>]) -> Table {
        scenario::measurements_to_table(&self.channels, z)
    }

    /// States as they read back from their CSV file.
    pub fn through_state_file(&self, states: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        scenario::table_to_states(&self.model, &self.state_table(states))
    }

    pub fn through_measurement_file(&self, z: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        scenario::table_to_measurements(&self.channels, &self.measurement_table(z))
    }
}

/// Outputs of one complete run, in file precision.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub truth: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub dse: DseOutput,
    pub report: MetricsReport,
}

pub fn run(p: &Prepared) -> Result<RunOutcome> {
    let truth = p.through_state_file(&p.simulate()?.states)?;
    let measurements = p.through_measurement_file(&p.measure(&truth)?)?;
    let dse = p.estimate(&measurements)?;
    let report = p.evaluate(&truth, &measurements, &dse.estimates)?;
    Ok(RunOutcome { truth, measurements, dse, report })
}

// ---------------------------------------------------------------------------
// Requests and manifests

/// Overrides applied on top of a model file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Overrides {
    /// Noise preset name; `None` keeps the noise list of the config.
    pub scenario: Option<String>,
    pub sigma: Option<f64>,
    pub bias: Option<f64>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
}

impl Overrides {
    pub fn scenario_label(&self) -> String {
        self.scenario.clone().unwrap_or_else(|| "config".into())
    }

    pub fn apply(&self, model: &mut IgesModel) -> Result<()> {
        let sc = &mut model.scenario;
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(n) = self.steps {
            sc.horizon_steps = n;
        }
        match &self.scenario {
            Some(name) => {
                sc.noise = scenario::preset(
                    name,
                    self.sigma.unwrap_or(DEFAULT_SIGMA),
                    self.bias.unwrap_or(DEFAULT_BIAS),
                )?
            }
            None => {
                if let Some(sigma) = self.sigma {
                    sc.noise = sc.noise.iter().map(|n| n.with_sigma(sigma)).collect();
                }
            }
        }
        let issues = model::validate(model);
        if !issues.is_empty() {
            let msg: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
            return Err(Error::Validation(msg.join("; ")));
        }
        Ok(())
    }
}

pub fn load_with(config: &Path, overrides: &Overrides) -> Result<IgesModel> {
    let mut model = model::load_model(config)?;
    overrides.apply(&mut model)?;
    Ok(model)
}

/// Record of a run, enough to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_path: PathBuf,
    pub scenario: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub overrides: Overrides,
    pub version: String,
    /// Resolved scenario settings after defaults and overrides.
    pub resolved: ScenarioConfig,
    pub noise: Vec<NoiseSpec>,
}

impl RunManifest {
    pub fn new(config: &Path, out: &Path, overrides: &Overrides, model: &IgesModel) -> Self {
        RunManifest {
            model_path: config.to_path_buf(),
            scenario: overrides.scenario_label(),
            seed: model.scenario.seed,
            out_dir: out.to_path_buf(),
            overrides: overrides.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            resolved: model.scenario.clone(),
            noise: model.scenario.noise.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Rebuild the model the manifest describes. The recorded scenario
    /// settings take precedence over the config file's current ones.
    pub fn model(&self) -> Result<IgesModel> {
        let mut model = load_with(&self.model_path, &self.overrides)?;
        if model.scenario != self.resolved {
            log::warn!("config scenario changed since the manifest was written; using the recorded settings");
            model.scenario = self.resolved.clone();
        }
        Ok(model)
    }
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))
}

/// Truth and measurements only; writes truth.csv and measurements.csv.
pub fn simulate_to(p: &Prepared, out: &Path) -> Result<()> {
    create_dir(out)?;
    let truth = p.through_state_file(&p.simulate()?.states)?;
    let z = p.measure(&truth)?;
    scenario::write_table(&out.join(TRUTH_FILE), &p.state_table(&truth))?;
    scenario::write_table(&out.join(MEASUREMENTS_FILE), &p.measurement_table(&z))?;
    Ok(())
}

/// Estimate from `dir/measurements.csv`; writes estimates.csv, and
/// metrics.csv when a truth.csv sits next to the measurements.
pub fn estimate_from(p: &Prepared, dir: &Path, out: &Path) -> Result<(DseOutput, Option<MetricsReport>)> {
    create_dir(out)?;
    let z = scenario::table_to_measurements(&p.channels, &scenario::read_table(&dir.join(MEASUREMENTS_FILE))?)?;
    let dse = p.estimate(&z)?;
    scenario::write_table(&out.join(ESTIMATES_FILE), &p.state_table(&dse.estimates))?;
    let truth_path = dir.join(TRUTH_FILE);
    let report = if truth_path.exists() {
        let truth = scenario::table_to_states(&p.model, &scenario::read_table(&truth_path)?)?;
        let report = p.evaluate(&truth, &z, &dse.estimates)?;
        eval::write_metrics(&out.join(METRICS_FILE), &report)?;
        Some(report)
    } else {
        None
    };
    Ok((dse, report))
}

/// Full run writing all five outputs.
pub fn run_to(config: &Path, overrides: &Overrides, out: &Path) -> Result<RunOutcome> {
    let model = load_with(config, overrides)?;
    let manifest = RunManifest::new(config, out, overrides, &model);
    run_model_to(model, &manifest, out)
}

pub fn run_manifest(manifest: &RunManifest, out: &Path) -> Result<RunOutcome> {
    let mut m = manifest.clone();
    m.out_dir = out.to_path_buf();
    run_model_to(manifest.model()?, &m, out)
}

fn run_model_to(model: IgesModel, manifest: &RunManifest, out: &Path) -> Result<RunOutcome> {
    create_dir(out)?;
    let p = prepare(model)?;
    let outcome = run(&p)?;
    scenario::write_table(&out.join(TRUTH_FILE), &p.state_table(&outcome.truth))?;
    scenario::write_table(&out.join(MEASUREMENTS_FILE), &p.measurement_table(&outcome.measurements))?;
    scenario::write_table(&out.join(ESTIMATES_FILE), &p.state_table(&outcome.dse.estimates))?;
    eval::write_metrics(&out.join(METRICS_FILE), &outcome.report)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    info!(
        "{}: {} steps, mean KF step {:.3} ms",
        out.display(),
        outcome.truth.len(),
        outcome.dse.mean_step_seconds() * 1e3
    );
    Ok(outcome)
}

/// Channel-wise mean metrics of one prepared model over several seeds.
pub fn seed_averaged(model: &IgesModel, seeds: &[u64]) -> Result<(MetricsReport, Vec<f64>)> {
    let mut reports = Vec::with_capacity(seeds.len());
    let mut step_ms = Vec::new();
    let mut p = prepare(model.clone())?;
    for &s in seeds {
        p.model.scenario.seed = s;
        let o = run(&p)?;
        step_ms.push(o.dse.mean_step_seconds() * 1e3);
        reports.push(o.report);
    }
    Ok((eval::average(&reports)?, step_ms))
}
