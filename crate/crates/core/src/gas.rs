//! Discretized gas pipeline network: matrix assembly for the two-point
//! implicit scheme, boundary rows, the transition F_G = 𝒜⁻¹ℬ and the gas
//! measurement model.
//!
//! State layout: `[ρ_1 … ρ_nN, ṁ_1,i, ṁ_1,j, … ]`. For pipeline `l` (0-based
//! here) slot `2l` holds the flow at its lower-numbered end and `2l + 1` the
//! flow at its higher-numbered end.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{check_len, Error, Result};
use crate::model::{GasNetwork, NodeKind, Pipeline};

/// Smallest reciprocal 1-norm condition accepted for 𝒜.
pub const MIN_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeCoefficients {
    /// Δt / (L a)
    pub xi: f64,
    /// a Δt c² / L
    pub beta: f64,
    /// γ |v̄| Δt / (4 d a)
    pub gamma: f64,
}

pub fn pipe_coefficients(net: &GasNetwork, p: &Pipeline) -> PipeCoefficients {
    let a = p.cross_section();
    let c2 = net.sound_speed * net.sound_speed;
    PipeCoefficients {
        xi: net.dt / (p.length * a),
        beta: a * net.dt * c2 / p.length,
        gamma: net.friction * p.avg_velocity * net.dt / (4.0 * p.diameter * a),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeBlocks {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryBlocks {
    pub b11: DMatrix<f64>,
    pub b22: DMatrix<f64>,
}

/// Continuity (A11, A12) and momentum (A21, A22) blocks, one row per pipeline.
pub fn assemble_pde_blocks(net: &GasNetwork) -> PdeBlocks {
    let (nn, np) = (net.n_nodes(), net.n_pipes());
    let mut a11 = DMatrix::zeros(np, nn);
    let mut a12 = DMatrix::zeros(np, 2 * np);
    let mut a21 = DMatrix::zeros(np, nn);
    let mut a22 = DMatrix::zeros(np, 2 * np);
    for (l, p) in net.pipelines.iter().enumerate() {
        let c = pipe_coefficients(net, p);
        let (i, j) = (p.from - 1, p.to - 1);
        a11[(l, i)] = 1.0;
        a11[(l, j)] = 1.0;
        a12[(l, 2 * l)] = -c.xi;
        a12[(l, 2 * l + 1)] = c.xi;
        a21[(l, i)] = -c.beta;
        a21[(l, j)] = c.beta;
        a22[(l, 2 * l)] = c.gamma - 1.0;
        a22[(l, 2 * l + 1)] = c.gamma + 1.0;
    }
    PdeBlocks { a11, a12, a21, a22 }
}

/// Per-node net metered outflow over the pipe-end flows (n_N × 2n_P):
/// +1 on the arrival slot of pipes ending at the node, −1 on the departure
/// slot of pipes starting there.
pub fn net_flow_matrix(net: &GasNetwork) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(net.n_nodes(), 2 * net.n_pipes());
    for (l, p) in net.pipelines.iter().enumerate() {
        h[(p.to - 1, 2 * l + 1)] += 1.0;
        h[(p.from - 1, 2 * l)] -= 1.0;
    }
    h
}

/// Source-density selector B11 and sink mass-balance rows B22.
pub fn assemble_boundary_blocks(net: &GasNetwork) -> BoundaryBlocks {
    let sources = net.source_ids();
    let sinks = net.sink_ids();
    let mut b11 = DMatrix::zeros(sources.len(), net.n_nodes());
    for (k, s) in sources.iter().enumerate() {
        b11[(k, s - 1)] = 1.0;
    }
    let h = net_flow_matrix(net);
    let mut b22 = DMatrix::zeros(sinks.len(), 2 * net.n_pipes());
    for (k, s) in sinks.iter().enumerate() {
        b22.set_row(k, &h.row(s - 1));
    }
    BoundaryBlocks { b11, b22 }
}

/// 𝒜 and ℬ stacked as [A11 A12; A21 A22; B11 0; 0 B22] and
/// [A11 −A12; −A21 −A22; 0 0; 0 0].
pub fn stack_system(net: &GasNetwork, pde: &PdeBlocks, bnd: &BoundaryBlocks) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nn, np) = (net.n_nodes(), net.n_pipes());
    let ns = bnd.b11.nrows();
    let n = nn + 2 * np;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (np, nn)).copy_from(&pde.a11);
    a.view_mut((0, nn), (np, 2 * np)).copy_from(&pde.a12);
    a.view_mut((np, 0), (np, nn)).copy_from(&pde.a21);
    a.view_mut((np, nn), (np, 2 * np)).copy_from(&pde.a22);
    a.view_mut((2 * np, 0), (ns, nn)).copy_from(&bnd.b11);
    a.view_mut((2 * np + ns, nn), (nn - ns, 2 * np)).copy_from(&bnd.b22);
    b.view_mut((0, 0), (np, nn)).copy_from(&pde.a11);
    b.view_mut((0, nn), (np, 2 * np)).copy_from(&(-&pde.a12));
    b.view_mut((np, 0), (np, nn)).copy_from(&(-&pde.a21));
    b.view_mut((np, nn), (np, 2 * np)).copy_from(&(-&pde.a22));
    (a, b)
}

/// Reciprocal 1-norm condition number, or `None` when singular.
pub fn rcond(m: &DMatrix<f64>) -> Option<f64> {
    let inv = m.clone().try_inverse()?;
    let norm1 = |x: &DMatrix<f64>| x.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    let r = 1.0 / (norm1(m) * norm1(&inv));
    r.is_finite().then_some(r)
}

/// Factorized gas transition model.
#[derive(Debug, Clone)]
pub struct GasTransition {
    /// F_G = 𝒜⁻¹ℬ
    pub f: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub pde: PdeBlocks,
    pub boundary: BoundaryBlocks,
    pub rcond: f64,
    lu: LU<f64, Dyn, Dyn>,
    n_sources: usize,
    n_pipes: usize,
}

impl GasTransition {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// u_G = 𝒜⁻¹𝒰
    pub fn apply_inverse(&self, u: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(u).expect("𝒜 was checked nonsingular at build")
    }

    /// Columns of 𝒜⁻¹ for the sink-balance rows: the response of x_G to a
    /// unit change in each sink's outflow.
    pub fn sink_response(&self) -> DMatrix<f64> {
        let n = self.dim();
        let first = 2 * self.n_pipes + self.n_sources;
        let n_sinks = n - first;
        let mut e = DMatrix::zeros(n, n_sinks);
        for k in 0..n_sinks {
            e[(first + k, k)] = 1.0;
        }
        self.lu.solve(&e).expect("𝒜 was checked nonsingular at build")
    }
}

pub fn build_transition(net: &GasNetwork) -> Result<GasTransition> {
    let pde = assemble_pde_blocks(net);
    let boundary = assemble_boundary_blocks(net);
    let (a, b) = stack_system(net, &pde, &boundary);
    let rc = rcond(&a).unwrap_or(0.0);
    log::debug!("gas transition: {}x{} system, rcond(𝒜) = {rc:.3e}", a.nrows(), a.ncols());
    if rc < MIN_RCOND {
        return Err(Error::SingularModel(format!("𝒜 reciprocal condition {rc:.3e} below {MIN_RCOND:e}")));
    }
    let lu = a.clone().lu();
    let f = lu.solve(&b).ok_or_else(|| Error::SingularModel("𝒜 factorization failed".into()))?;
    Ok(GasTransition {
        f,
        a,
        b,
        pde,
        n_sources: boundary.b11.nrows(),
        boundary,
        rcond: rc,
        lu,
        n_pipes: net.n_pipes(),
    })
}

/// 𝒰 = [0; 0; u_r; u_m].
pub fn boundary_vector(net: &GasNetwork, source_densities: &[f64], sink_outflows: &[f64]) -> Result<DVector<f64>> {
    let ns = net.nodes.iter().filter(|n| n.kind == NodeKind::Source).count();
    check_len("source densities", source_densities.len(), ns)?;
    check_len("sink outflows", sink_outflows.len(), net.n_nodes() - ns)?;
    let off = 2 * net.n_pipes();
    let mut u = DVector::zeros(net.state_dim());
    for (k, v) in source_densities.iter().chain(sink_outflows).enumerate() {
        u[off + k] = *v;
    }
    Ok(u)
}

/// x_{t+1} = F_G x_t + 𝒜⁻¹𝒰_{t+1}
pub fn step_gas(tr: &GasTransition, x: &DVector<f64>, u_vec: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("gas state", x.len(), tr.dim())?;
    check_len("boundary vector", u_vec.len(), tr.dim())?;
    let mut next = &tr.f * x + tr.apply_inverse(u_vec);
    pin_sources(&tr.boundary.b11, 2 * tr.n_pipes, u_vec, &mut next);
    Ok(next)
}

/// Source rows of 𝒜 are the identities ρ_s = ρ_Cs; write them back exactly
/// rather than carrying the solver's roundoff.
fn pin_sources(b11: &DMatrix<f64>, offset: usize, u_vec: &DVector<f64>, x: &mut DVector<f64>) {
    for k in 0..b11.nrows() {
        if let Some(col) = (0..b11.ncols()).find(|&c| b11[(k, c)] == 1.0) {
            x[col] = u_vec[offset + k];
        }
    }
}

/// Fixed point of `step_gas` for constant boundaries: (𝒜 − ℬ) x = 𝒰.
pub fn solve_steady(net: &GasNetwork, source_densities: &[f64], sink_outflows: &[f64]) -> Result<DVector<f64>> {
    let u = boundary_vector(net, source_densities, sink_outflows)?;
    let (a, b) = stack_system(net, &assemble_pde_blocks(net), &assemble_boundary_blocks(net));
    let m = a - b;
    let rc = rcond(&m).unwrap_or(0.0);
    if rc < MIN_RCOND {
        return Err(Error::SingularModel(format!("steady-state system reciprocal condition {rc:.3e}")));
    }
    let mut x = m.lu().solve(&u).ok_or_else(|| Error::SingularModel("steady-state factorization failed".into()))?;
    pin_sources(&assemble_boundary_blocks(net).b11, 2 * net.n_pipes(), &u, &mut x);
    Ok(x)
}

/// Affine steady-state map x = x₀ + G·outflows for fixed source densities.
pub fn steady_map(net: &GasNetwork, source_densities: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n_sinks = net.sink_ids().len();
    let x0 = solve_steady(net, source_densities, &vec![0.0; n_sinks])?;
    let (a, b) = stack_system(net, &assemble_pde_blocks(net), &assemble_boundary_blocks(net));
    let lu = (a - b).lu();
    let first = net.state_dim() - n_sinks;
    let mut e = DMatrix::zeros(net.state_dim(), n_sinks);
    for k in 0..n_sinks {
        e[(first + k, k)] = 1.0;
    }
    let g = lu.solve(&e).ok_or_else(|| Error::SingularModel("steady-state factorization failed".into()))?;
    Ok((x0, g))
}

/// H_G = [c²·I 0; 0 H′]: node pressures (Pa) then node net outflows (kg/s).
pub fn gas_measurement_matrix(net: &GasNetwork) -> DMatrix<f64> {
    let (nn, np) = (net.n_nodes(), net.n_pipes());
    let c2 = net.sound_speed * net.sound_speed;
    let mut h = DMatrix::zeros(2 * nn, nn + 2 * np);
    for i in 0..nn {
        h[(i, i)] = c2;
    }
    h.view_mut((nn, nn), (nn, 2 * np)).copy_from(&net_flow_matrix(net));
    h
}

/// Structured view of a stacked gas state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GasState {
    pub densities: DVector<f64>,
    pub pipe_flows: DVector<f64>,
}

impl GasState {
    pub fn from_vector(net: &GasNetwork, x: &DVector<f64>) -> Result<Self> {
        check_len("gas state", x.len(), net.state_dim())?;
        let nn = net.n_nodes();
        Ok(GasState {
            densities: x.rows(0, nn).into_owned(),
            pipe_flows: x.rows(nn, 2 * net.n_pipes()).into_owned(),
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.densities.len() + self.pipe_flows.len());
        v.rows_mut(0, self.densities.len()).copy_from(&self.densities);
        v.rows_mut(self.densities.len(), self.pipe_flows.len()).copy_from(&self.pipe_flows);
        v
    }
}
