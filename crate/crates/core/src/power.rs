//! Bus admittance, Newton–Raphson AC power flow, the linear current
//! measurement model in rectangular coordinates, and Holt's double
//! exponential smoothing.
//!
//! Electric states are interleaved rectangular voltages `(e_1, f_1, …)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_len, Error, Result};
use crate::model::{BranchEnd, BusKind, MeterConfig, PowerGrid};

pub const PF_TOL: f64 = 1e-8;
pub const PF_MAX_ITER: usize = 20;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Admittance {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn y(&self, i: usize, k: usize) -> Complex64 {
        Complex64::new(self.g[(i, k)], self.b[(i, k)])
    }

    pub fn complex(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n(), self.n(), |i, k| self.y(i, k))
    }
}

/// π-model two-port of one branch: (y_ff, y_ft, y_tf, y_tt).
pub fn branch_two_port(r: f64, x: f64, b: f64, tap_ratio: f64, shift_deg: f64) -> [Complex64; 4] {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let tap = Complex64::from_polar(tap_ratio, shift_deg.to_radians());
    let ytt = ys + J * (b / 2.0);
    let yff = ytt / (tap_ratio * tap_ratio);
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    [yff, yft, ytf, ytt]
}

pub fn build_admittance(grid: &PowerGrid) -> Admittance {
    let n = grid.n_buses();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in &grid.branches {
        let [yff, yft, ytf, ytt] = branch_two_port(br.r, br.x, br.b, br.tap_ratio, br.shift);
        let (f, t) = (br.from - 1, br.to - 1);
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    for bus in &grid.buses {
        let i = bus.id - 1;
        y[(i, i)] += Complex64::new(bus.gs, bus.bs) / grid.base_mva;
    }
    Admittance { g: y.map(|c| c.re), b: y.map(|c| c.im) }
}

pub fn to_complex(x: &DVector<f64>) -> Vec<Complex64> {
    (0..x.len() / 2).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect()
}

pub fn from_complex(v: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|c| [c.re, c.im]))
}

/// Complex bus power injections S = V ⊙ conj(Y V), p.u.
pub fn power_injections(adm: &Admittance, v: &[Complex64]) -> Vec<Complex64> {
    let n = adm.n();
    (0..n)
        .map(|i| {
            let cur: Complex64 = (0..n).map(|k| adm.y(i, k) * v[k]).sum();
            v[i] * cur.conj()
        })
        .collect()
}

/// Per-bus schedule for one power-flow solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// MW
    pub pd: Vec<f64>,
    /// MVAr
    pub qd: Vec<f64>,
    /// Total generator MW at each bus.
    pub pg: Vec<f64>,
    /// Voltage magnitude setpoint, p.u. (used at slack and PV buses).
    pub v_set: Vec<f64>,
}

impl OperatingPoint {
    /// Schedule straight from the grid tables.
    pub fn base(grid: &PowerGrid) -> Self {
        let n = grid.n_buses();
        let mut pg = vec![0.0; n];
        for g in &grid.generators {
            pg[g.bus - 1] += g.pg;
        }
        OperatingPoint {
            pd: grid.buses.iter().map(|b| b.pd).collect(),
            qd: grid.buses.iter().map(|b| b.qd).collect(),
            pg,
            v_set: grid.buses.iter().map(|b| b.v_setpoint.unwrap_or(1.0)).collect(),
        }
    }

    /// Scheduled complex injection at every bus, p.u.
    pub fn s_sched(&self, base_mva: f64) -> Vec<Complex64> {
        (0..self.pd.len())
            .map(|i| Complex64::new(self.pg[i] - self.pd[i], -self.qd[i]) / base_mva)
            .collect()
    }
}

/// Solve the AC power flow; returns rectangular voltages.
///
/// Tries a flat start first, then one retry from `previous` if given.
pub fn power_flow(
    grid: &PowerGrid,
    adm: &Admittance,
    op: &OperatingPoint,
    previous: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = grid.n_buses();
    check_len("operating point", op.pd.len(), n)?;
    let flat: Vec<Complex64> = grid
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| Complex64::new(if b.kind == BusKind::Pq { 1.0 } else { op.v_set[i] }, 0.0))
        .collect();
    match newton_raphson(grid, adm, op, flat) {
        Ok(v) => Ok(from_complex(&v)),
        Err(first) => {
            let Some(prev) = previous else { return Err(first) };
            let mut v0 = to_complex(prev);
            for (i, b) in grid.buses.iter().enumerate() {
                if b.kind != BusKind::Pq {
                    v0[i] = Complex64::from_polar(op.v_set[i], v0[i].arg());
                }
            }
            log::debug!("power flow: flat start failed, retrying from previous solution");
            newton_raphson(grid, adm, op, v0).map(|v| from_complex(&v))
        }
    }
}

fn newton_raphson(
    grid: &PowerGrid,
    adm: &Admittance,
    op: &OperatingPoint,
    mut v: Vec<Complex64>,
) -> Result<Vec<Complex64>> {
    let n = grid.n_buses();
    let pvpq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind == BusKind::Pq).collect();
    let (n1, n2) = (pvpq.len(), pq.len());
    let s_sched = op.s_sched(grid.base_mva);
    let y = adm.complex();

    let mismatch = |v: &[Complex64]| -> DVector<f64> {
        let s = power_injections(adm, v);
        let mut f = DVector::zeros(n1 + n2);
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = (s[i] - s_sched[i]).re;
        }
        for (k, &i) in pq.iter().enumerate() {
            f[n1 + k] = (s[i] - s_sched[i]).im;
        }
        f
    };

    let mut f = mismatch(&v);
    let mut norm = f.amax();
    for _ in 0..PF_MAX_ITER {
        if norm < PF_TOL {
            return Ok(v);
        }
        let cur: Vec<Complex64> = (0..n).map(|i| (0..n).map(|k| y[(i, k)] * v[k]).sum()).collect();
        let unit: Vec<Complex64> = v.iter().map(|c| c / c.norm()).collect();
        // dS/dθ and dS/d|V| in the usual complex form.
        let ds_da = |i: usize, k: usize| {
            let d = if i == k { cur[i] } else { Complex64::new(0.0, 0.0) };
            J * v[i] * (d - y[(i, k)] * v[k]).conj()
        };
        let ds_dm = |i: usize, k: usize| {
            let mut s = v[i] * (y[(i, k)] * unit[k]).conj();
            if i == k {
                s += cur[i].conj() * unit[i];
            }
            s
        };
        let mut jac = DMatrix::zeros(n1 + n2, n1 + n2);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_da(i, k).re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, n1 + c)] = ds_dm(i, k).re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(n1 + r, c)] = ds_da(i, k).im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(n1 + r, n1 + c)] = ds_dm(i, k).im;
            }
        }
        let dx = jac.lu().solve(&(-&f)).ok_or_else(|| Error::NonConvergence {
            iterations: PF_MAX_ITER,
            mismatch: norm,
        })?;
        for (k, &i) in pvpq.iter().enumerate() {
            v[i] *= Complex64::from_polar(1.0, dx[k]);
        }
        for (k, &i) in pq.iter().enumerate() {
            let m = v[i].norm() + dx[n1 + k];
            v[i] = Complex64::from_polar(m, v[i].arg());
        }
        f = mismatch(&v);
        norm = f.amax();
        if !norm.is_finite() {
            break;
        }
    }
    if norm < PF_TOL {
        return Ok(v);
    }
    Err(Error::NonConvergence { iterations: PF_MAX_ITER, mismatch: norm })
}

// ---------------------------------------------------------------------------
// Measurement model

#[derive(Debug, Clone, PartialEq)]
pub struct ElectricMeterPlan {
    pub voltage_meters: Vec<usize>,
    /// (1-based branch index, end)
    pub branch_current_meters: Vec<(usize, BranchEnd)>,
    pub injection_meters: Vec<usize>,
}

impl ElectricMeterPlan {
    pub fn full(grid: &PowerGrid) -> Self {
        let buses: Vec<usize> = (1..=grid.n_buses()).collect();
        let branch_current_meters =
            (1..=grid.n_branches()).flat_map(|k| [(k, BranchEnd::From), (k, BranchEnd::To)]).collect();
        ElectricMeterPlan { voltage_meters: buses.clone(), branch_current_meters, injection_meters: buses }
    }

    pub fn voltage_only(grid: &PowerGrid) -> Self {
        ElectricMeterPlan {
            voltage_meters: (1..=grid.n_buses()).collect(),
            branch_current_meters: Vec::new(),
            injection_meters: Vec::new(),
        }
    }

    pub fn from_config(grid: &PowerGrid, cfg: &MeterConfig) -> Self {
        let full = Self::full(grid);
        ElectricMeterPlan {
            voltage_meters: cfg.voltage.clone().unwrap_or(full.voltage_meters),
            branch_current_meters: cfg
                .branch_current
                .as_ref()
                .map(|v| v.iter().map(|m| (m.branch, m.end)).collect())
                .unwrap_or(full.branch_current_meters),
            injection_meters: cfg.injection.clone().unwrap_or(full.injection_meters),
        }
    }

    pub fn n_rows(&self) -> usize {
        2 * (self.voltage_meters.len() + self.branch_current_meters.len() + self.injection_meters.len())
    }

    /// Row labels, in the row order of `electric_measurement_matrix`.
    pub fn channel_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_rows());
        for b in &self.voltage_meters {
            out.push(format!("bus{b}.e"));
            out.push(format!("bus{b}.f"));
        }
        for (k, end) in &self.branch_current_meters {
            let tag = match end {
                BranchEnd::From => "from",
                BranchEnd::To => "to",
            };
            out.push(format!("branch{k}.{tag}_re"));
            out.push(format!("branch{k}.{tag}_im"));
        }
        for b in &self.injection_meters {
            out.push(format!("bus{b}.inj_re"));
            out.push(format!("bus{b}.inj_im"));
        }
        out
    }
}

/// Add `y·V_k` to a (re, im) row pair over interleaved (e, f).
fn add_linear(h: &mut DMatrix<f64>, row: usize, bus0: usize, y: Complex64) {
    h[(row, 2 * bus0)] += y.re;
    h[(row, 2 * bus0 + 1)] -= y.im;
    h[(row + 1, 2 * bus0)] += y.im;
    h[(row + 1, 2 * bus0 + 1)] += y.re;
}

/// H_E: metered voltages, branch-end currents and injected currents as
/// linear functions of the rectangular voltages.
pub fn electric_measurement_matrix(grid: &PowerGrid, adm: &Admittance, plan: &ElectricMeterPlan) -> DMatrix<f64> {
    let n = grid.n_buses();
    let mut h = DMatrix::zeros(plan.n_rows(), 2 * n);
    let mut row = 0;
    for &b in &plan.voltage_meters {
        h[(row, 2 * (b - 1))] = 1.0;
        h[(row + 1, 2 * (b - 1) + 1)] = 1.0;
        row += 2;
    }
    for &(k, end) in &plan.branch_current_meters {
        let br = &grid.branches[k - 1];
        let [yff, yft, ytf, ytt] = branch_two_port(br.r, br.x, br.b, br.tap_ratio, br.shift);
        let (yf, yt) = match end {
            BranchEnd::From => (yff, yft),
            BranchEnd::To => (ytf, ytt),
        };
        add_linear(&mut h, row, br.from - 1, yf);
        add_linear(&mut h, row, br.to - 1, yt);
        row += 2;
    }
    for &b in &plan.injection_meters {
        for k in 0..n {
            let y = adm.y(b - 1, k);
            if y != Complex64::new(0.0, 0.0) {
                add_linear(&mut h, row, k, y);
            }
        }
        row += 2;
    }
    h
}

// ---------------------------------------------------------------------------
// Holt's exponential smoothing

#[derive(Debug, Clone, PartialEq)]
pub struct HoltState {
    pub level: DVector<f64>,
    pub trend: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl HoltState {
    /// One-step-ahead prediction L + T.
    pub fn forecast(&self) -> DVector<f64> {
        &self.level + &self.trend
    }
}

/// Level = x2, trend = x2 − x1.
pub fn holt_init(x1: &DVector<f64>, x2: &DVector<f64>, alpha: f64, beta: f64) -> Result<HoltState> {
    check_len("holt init", x1.len(), x2.len())?;
    Ok(HoltState { level: x2.clone(), trend: x2 - x1, alpha, beta })
}

/// Absorb an observation. Returns the new state, the prediction for the
/// next step, and the control input `prediction − α·observed`.
pub fn holt_step(h: &HoltState, observed: &DVector<f64>) -> Result<(HoltState, DVector<f64>, DVector<f64>)> {
    check_len("holt observation", observed.len(), h.level.len())?;
    let (a, b) = (h.alpha, h.beta);
    let level = observed * a + (&h.level + &h.trend) * (1.0 - a);
    let trend = (&level - &h.level) * b + &h.trend * (1.0 - b);
    let next = HoltState { level, trend, alpha: a, beta: b };
    let predicted = next.forecast();
    let u = &predicted - observed * a;
    Ok((next, predicted, u))
}
