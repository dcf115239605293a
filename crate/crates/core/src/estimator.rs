//! Linear Kalman filter over the joint model.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::coupling::{InputBuilder, JointModel};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// Process covariance `q` (any symmetric PSD matrix) and diagonal
/// measurement variances `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCov {
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// x̂ ← F x̂ + u, P ← F P Fᵀ + Q.
pub fn kf_predict(kf: &KalmanState, f: &DMatrix<f64>, u: &DVector<f64>, q: &DMatrix<f64>) -> KalmanState {
    let x = f * &kf.x + u;
    let mut p = f * &kf.p * f.transpose() + q;
    symmetrize(&mut p);
    KalmanState { x, p }
}

/// Joseph-form measurement update with diagonal R.
pub fn kf_update(kf: &KalmanState, z: &DVector<f64>, h: &DMatrix<f64>, r: &DVector<f64>) -> Result<KalmanState> {
    let n = kf.x.len();
    check_len("measurement", z.len(), h.nrows())?;
    check_len("R diagonal", r.len(), h.nrows())?;
    check_len("H columns", h.ncols(), n)?;
    let hp = h * &kf.p;
    let mut s = &hp * h.transpose();
    for i in 0..r.len() {
        s[(i, i)] += r[i];
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numeric("innovation covariance is not positive definite"))?;
    // K = P Hᵀ S⁻¹, obtained as Kᵀ = S⁻¹ H P.
    let k = chol.solve(&hp).transpose();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("Kalman gain is not finite"));
    }
    let x = &kf.x + &k * (z - h * &kf.x);
    let mut ikh = -(&k * h);
    for i in 0..n {
        ikh[(i, i)] += 1.0;
    }
    let mut kr = k.clone();
    for (j, mut col) in kr.column_iter_mut().enumerate() {
        col *= r[j];
    }
    let mut p = &ikh * &kf.p * ikh.transpose() + kr * k.transpose();
    symmetrize(&mut p);
    Ok(KalmanState { x, p })
}

/// Weighted least squares through a possibly rank-deficient H
/// (minimum-norm solution on the unobservable part).
pub fn weighted_least_squares(h: &DMatrix<f64>, z: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("measurement", z.len(), h.nrows())?;
    let w: Vec<f64> = r.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut hw = h.clone();
    let mut zw = z.clone();
    for i in 0..h.nrows() {
        hw.row_mut(i).scale_mut(w[i]);
        zw[i] *= w[i];
    }
    hw.svd(true, true).solve(&zw, 1e-12).map_err(|e| Error::numeric(format!("least squares: {e}")))
}

/// Static joint estimate from one measurement vector: voltages by weighted
/// least squares through H_E, gas by fitting every sink's offtake on the
/// steady-state map to all gas meters.
pub fn static_estimate(jm: &JointModel, z: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let l = &jm.layout;
    check_len("measurement", z.len(), l.n_meas())?;
    let (ne, me, mg) = (l.n_electric(), l.n_meas_electric, l.n_meas_gas);
    let h_e = jm.h.view((0, 0), (me, ne)).into_owned();
    let h_g = jm.h.view((me, ne), (mg, l.n_gas())).into_owned();
    let xe = weighted_least_squares(&h_e, &z.rows(0, me).into_owned(), &r.rows(0, me).into_owned())?;
    let zg = z.rows(me, mg) - &h_g * &jm.steady_x0;
    let loads = weighted_least_squares(&(&h_g * &jm.steady_g), &zg, &r.rows(me, mg).into_owned())?;
    let xg = &jm.steady_x0 + &jm.steady_g * loads;
    let mut x = DVector::zeros(l.dim());
    x.rows_mut(0, ne).copy_from(&xe);
    x.rows_mut(ne, l.n_gas()).copy_from(&xg);
    Ok(x)
}

/// Tuning knobs for Q and P₀; see `EstimatorConfig` for meanings.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSettings {
    pub q_electric: f64,
    pub load_std: f64,
    pub density_floor: f64,
    pub gas_q_diagonal: Option<f64>,
    pub p0_electric: f64,
    pub p0_gas_std: f64,
    pub p0_gas_diagonal: Option<f64>,
}

/// Block process covariance. The gas block lies in the span of the sink
/// responses Ξ (columns of 𝒜⁻¹), where load-prediction errors enter.
pub fn process_covariance(jm: &JointModel, s: &CovarianceSettings) -> DMatrix<f64> {
    let l = &jm.layout;
    let (ne, ng) = (l.n_electric(), l.n_gas());
    let mut q = DMatrix::zeros(l.dim(), l.dim());
    q.view_mut((0, 0), (ne, ne)).fill_diagonal(s.q_electric);
    let qg = match s.gas_q_diagonal {
        Some(v) => DMatrix::from_diagonal_element(ng, ng, v),
        None => {
            let xi = jm.gas.sink_response();
            let mut qg = &xi * xi.transpose() * (s.load_std * s.load_std);
            for node in 1..=l.n_nodes {
                if !jm.source_ids.contains(&node) {
                    qg[(node - 1, node - 1)] += s.density_floor;
                }
            }
            qg
        }
    };
    q.view_mut((ne, ne), (ng, ng)).copy_from(&qg);
    q
}

pub fn initial_covariance(jm: &JointModel, s: &CovarianceSettings) -> DMatrix<f64> {
    let l = &jm.layout;
    let (ne, ng) = (l.n_electric(), l.n_gas());
    let mut p = DMatrix::zeros(l.dim(), l.dim());
    p.view_mut((0, 0), (ne, ne)).fill_diagonal(s.p0_electric);
    let pg = match s.p0_gas_diagonal {
        Some(v) => DMatrix::from_diagonal_element(ng, ng, v),
        None => {
            let xi = jm.gas.sink_response();
            &xi * xi.transpose() * (s.p0_gas_std * s.p0_gas_std)
        }
    };
    p.view_mut((ne, ne), (ng, ng)).copy_from(&pg);
    p
}

/// Starting point for `run_dse`: the static estimates at steps 0 and 1 and
/// the covariance attached to the latter.
#[derive(Debug, Clone, PartialEq)]
pub struct DseInit {
    pub x0: DVector<f64>,
    pub x1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DseOutput {
    pub estimates: Vec<DVector<f64>>,
    /// Wall time of predict + update per filtered step, seconds.
    pub step_seconds: Vec<f64>,
}

impl DseOutput {
    pub fn mean_step_seconds(&self) -> f64 {
        if self.step_seconds.is_empty() {
            return 0.0;
        }
        self.step_seconds.iter().sum::<f64>() / self.step_seconds.len() as f64
    }
}

/// Filter a measurement series. Steps 0 and 1 are the static estimates in
/// `init`; from step 2 on each step builds u_I, predicts and updates.
pub fn run_dse(jm: &JointModel, measurements: &[DVector<f64>], cov: &NoiseCov, init: &DseInit) -> Result<DseOutput> {
    run_dse_observed(jm, measurements, cov, init, |_, _| {})
}

/// `run_dse` with a callback on every filtered Kalman state.
pub fn run_dse_observed(
    jm: &JointModel,
    measurements: &[DVector<f64>],
    cov: &NoiseCov,
    init: &DseInit,
    mut observe: impl FnMut(usize, &KalmanState),
) -> Result<DseOutput> {
    let mut out = DseOutput { estimates: Vec::new(), step_seconds: Vec::new() };
    if measurements.is_empty() {
        return Ok(out);
    }
    out.estimates.push(init.x0.clone());
    if measurements.len() == 1 {
        return Ok(out);
    }
    out.estimates.push(init.x1.clone());
    let me = jm.layout.n_meas_electric;
    let flow_rows = sink_meter_rows(jm);
    let observed = |z: &DVector<f64>| DVector::from_iterator(flow_rows.len(), flow_rows.iter().map(|&r| z[me + r]));
    let mut builder = InputBuilder::new(jm, &init.x0, &init.x1, &observed(&measurements[0]), &observed(&measurements[1]))?;
    let mut kf = KalmanState { x: init.x1.clone(), p: init.p1.clone() };
    for (t, z) in measurements.iter().enumerate().skip(2) {
        let u = builder.next_input(jm, &kf.x).map_err(|e| e.at_step(t))?;
        let start = Instant::now();
        let pred = kf_predict(&kf, &jm.f, &u, &cov.q);
        kf = kf_update(&pred, z, &jm.h, &cov.r).map_err(|e| e.at_step(t))?;
        out.step_seconds.push(start.elapsed().as_secs_f64());
        if kf.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("state estimate is not finite").at_step(t));
        }
        observe(t, &kf);
        out.estimates.push(kf.x.clone());
    }
    Ok(out)
}

/// Gas-measurement row of each sink's net-flow meter.
pub fn sink_meter_rows(jm: &JointModel) -> Vec<usize> {
    jm.sink_ids.iter().map(|s| jm.layout.n_nodes + s - 1).collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    p.clone().symmetric_eigenvalues().min()
}
