//! Gas-turbine coupling and the joint electric–gas state-space model.
//!
//! Joint state: `[e_1, f_1, …, e_nB, f_nB, ρ_1, …, ρ_nN, ṁ…]`. The blocks of
//! F_I and H_I never mix; the two networks talk only through u_I.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::gas::{self, GasTransition};
use crate::model::{GtuCoupling, IgesModel};
use crate::power::{holt_init, holt_step, Admittance, HoltState};

/// Fuel flow in kg/s for a GTU output of `p_out` MW.
pub fn gtu_power_to_flow(p_out: f64, eta: f64) -> f64 {
    p_out / eta
}

/// Real power injected at `bus` (1-based), p.u.
pub fn injected_power(x_e: &DVector<f64>, adm: &Admittance, bus: usize) -> f64 {
    let i = bus - 1;
    let (ei, fi) = (x_e[2 * i], x_e[2 * i + 1]);
    (0..adm.n())
        .map(|j| {
            let (g, b) = (adm.g[(i, j)], adm.b[(i, j)]);
            let (ej, fj) = (x_e[2 * j], x_e[2 * j + 1]);
            ei * (g * ej - b * fj) + fi * (g * fj + b * ej)
        })
        .sum()
}

/// Gas offtake of a GTU implied by a (predicted) voltage state, kg/s.
pub fn gtu_predicted_offtake(x_e: &DVector<f64>, adm: &Admittance, gtu: &GtuCoupling, base_mva: f64) -> f64 {
    gtu_power_to_flow(injected_power(x_e, adm, gtu.bus) * base_mva, gtu.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_buses: usize,
    pub n_nodes: usize,
    pub n_pipes: usize,
    pub n_meas_electric: usize,
    pub n_meas_gas: usize,
}

impl StateLayout {
    pub fn n_electric(&self) -> usize {
        2 * self.n_buses
    }

    pub fn n_gas(&self) -> usize {
        self.n_nodes + 2 * self.n_pipes
    }

    pub fn dim(&self) -> usize {
        self.n_electric() + self.n_gas()
    }

    pub fn n_meas(&self) -> usize {
        self.n_meas_electric + self.n_meas_gas
    }

    /// Joint index of node density ρ_id.
    pub fn density(&self, node: usize) -> usize {
        self.n_electric() + node - 1
    }
}

#[derive(Debug, Clone)]
pub struct JointModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub layout: StateLayout,
    pub alpha: f64,
    pub beta: f64,
    pub gas: GasTransition,
    pub adm: Admittance,
    pub base_mva: f64,
    pub source_ids: Vec<usize>,
    pub source_densities: Vec<f64>,
    pub sink_ids: Vec<usize>,
    /// (sink position, coupling) for every GTU.
    pub gtus: Vec<(usize, GtuCoupling)>,
    /// Rows of H′ at the sinks, over the gas block.
    pub sink_flow_rows: DMatrix<f64>,
    /// Steady-state map x_G = x₀ + G·outflows.
    pub steady_x0: DVector<f64>,
    pub steady_g: DMatrix<f64>,
}

pub fn build_joint(model: &IgesModel, tr: &GasTransition, h_e: &DMatrix<f64>, h_g: &DMatrix<f64>) -> Result<JointModel> {
    let net = &model.gas;
    let nb = model.grid.n_buses();
    let ng = net.state_dim();
    check_len("H_E columns", h_e.ncols(), 2 * nb)?;
    check_len("H_G columns", h_g.ncols(), ng)?;
    check_len("F_G size", tr.dim(), ng)?;
    let layout = StateLayout {
        n_buses: nb,
        n_nodes: net.n_nodes(),
        n_pipes: net.n_pipes(),
        n_meas_electric: h_e.nrows(),
        n_meas_gas: h_g.nrows(),
    };
    let alpha = model.scenario.smoothing.alpha;
    let n = layout.dim();
    let mut f = DMatrix::zeros(n, n);
    f.view_mut((0, 0), (2 * nb, 2 * nb)).fill_diagonal(alpha);
    f.view_mut((2 * nb, 2 * nb), (ng, ng)).copy_from(&tr.f);
    let mut h = DMatrix::zeros(layout.n_meas(), n);
    h.view_mut((0, 0), (h_e.nrows(), 2 * nb)).copy_from(h_e);
    h.view_mut((h_e.nrows(), 2 * nb), (h_g.nrows(), ng)).copy_from(h_g);

    let sink_ids = net.sink_ids();
    let hp = gas::net_flow_matrix(net);
    let mut sink_flow_rows = DMatrix::zeros(sink_ids.len(), ng);
    for (k, s) in sink_ids.iter().enumerate() {
        sink_flow_rows.view_mut((k, net.n_nodes()), (1, 2 * net.n_pipes())).copy_from(&hp.row(s - 1));
    }
    let mut gtus = Vec::new();
    for g in &model.gtus {
        let pos = net
            .sink_position(g.gas_sink)
            .ok_or_else(|| Error::Validation(format!("GTU gas node {} is not a sink", g.gas_sink)))?;
        gtus.push((pos, g.clone()));
    }
    let source_densities = net.source_densities();
    let (steady_x0, steady_g) = gas::steady_map(net, &source_densities)?;
    Ok(JointModel {
        f,
        h,
        layout,
        alpha,
        beta: model.scenario.smoothing.beta,
        gas: tr.clone(),
        adm: crate::power::build_admittance(&model.grid),
        base_mva: model.grid.base_mva,
        source_ids: net.source_ids(),
        source_densities,
        sink_ids,
        gtus,
        sink_flow_rows,
        steady_x0,
        steady_g,
    })
}

impl JointModel {
    pub fn electric<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(0, self.layout.n_electric())
    }

    pub fn gas_part<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(self.layout.n_electric(), self.layout.n_gas())
    }

    /// Net outflow at each sink implied by a joint state.
    pub fn sink_outflows(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.sink_flow_rows * self.gas_part(x)
    }

    /// u_I for the step after `x_prev`: electric part from a voltage
    /// prediction, gas part from constant source densities, GTU offtakes from
    /// the predicted voltages, and `predicted_loads` at the other sinks.
    pub fn input(
        &self,
        x_prev: &DVector<f64>,
        predicted_voltages: &DVector<f64>,
        predicted_loads: &[f64],
    ) -> Result<DVector<f64>> {
        check_len("joint state", x_prev.len(), self.layout.dim())?;
        check_len("predicted voltages", predicted_voltages.len(), self.layout.n_electric())?;
        check_len("predicted loads", predicted_loads.len(), self.sink_ids.len())?;
        let mut outflows = predicted_loads.to_vec();
        for (pos, g) in &self.gtus {
            outflows[*pos] = gtu_predicted_offtake(predicted_voltages, &self.adm, g, self.base_mva);
        }
        let mut big_u = DVector::zeros(self.layout.n_gas());
        let off = 2 * self.layout.n_pipes;
        for (k, v) in self.source_densities.iter().chain(outflows.iter()).enumerate() {
            big_u[off + k] = *v;
        }
        let u_g = self.gas.apply_inverse(&big_u);
        let mut u = DVector::zeros(self.layout.dim());
        let ne = self.layout.n_electric();
        u.rows_mut(0, ne).copy_from(&(predicted_voltages - self.electric(x_prev) * self.alpha));
        u.rows_mut(ne, self.layout.n_gas()).copy_from(&u_g);
        Ok(u)
    }
}

/// Per-run control-input generator: Holt predictors for the voltages and
/// for every sink's offtake.
#[derive(Debug, Clone)]
pub struct InputBuilder {
    pub voltages: HoltState,
    pub loads: HoltState,
    primed: bool,
}

impl InputBuilder {
    /// Seed from the first two voltage estimates and the first two observed
    /// sink offtakes.
    pub fn new(
        jm: &JointModel,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
        loads0: &DVector<f64>,
        loads1: &DVector<f64>,
    ) -> Result<Self> {
        let ne = jm.layout.n_electric();
        Ok(InputBuilder {
            voltages: holt_init(&x0.rows(0, ne).into_owned(), &x1.rows(0, ne).into_owned(), jm.alpha, jm.beta)?,
            loads: holt_init(loads0, loads1, jm.alpha, jm.beta)?,
            primed: false,
        })
    }

    /// u_I for the step after the filtered estimate `x_prev`.
    pub fn next_input(&mut self, jm: &JointModel, x_prev: &DVector<f64>) -> Result<DVector<f64>> {
        if self.primed {
            // The seed already holds the latest estimate as its level.
            let ve = jm.electric(x_prev).into_owned();
            self.voltages = holt_step(&self.voltages, &ve)?.0;
            self.loads = holt_step(&self.loads, &jm.sink_outflows(x_prev))?.0;
        }
        self.primed = true;
        let loads: Vec<f64> = self.loads.forecast().iter().copied().collect();
        jm.input(x_prev, &self.voltages.forecast(), &loads)
    }
}
