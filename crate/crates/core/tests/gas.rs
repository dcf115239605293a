mod common;

use approx::assert_relative_eq;
use common::{fixture, network, path3, single_pipe};
use iges_dse::gas::*;
use iges_dse::model::load_model;
use nalgebra::{DMatrix, DVector};

#[test]
fn coefficients_of_one_pipeline() {
    let net = single_pipe();
    let p = &net.pipelines[0];
    assert_relative_eq!(p.cross_section(), 0.19634954084936207, max_relative = 1e-12);
    let c = pipe_coefficients(&net, p);
    assert_relative_eq!(c.xi, 0.30558, max_relative = 1e-4);
    assert_relative_eq!(c.beta, 1361.9, max_relative = 1e-4);
    assert_relative_eq!(c.gamma, 114.59, max_relative = 1e-4);
}

#[test]
fn zero_time_step_leaves_only_the_unit_terms() {
    let mut net = single_pipe();
    net.dt = 0.0;
    let b = assemble_pde_blocks(&net);
    assert!(b.a12.iter().all(|v| *v == 0.0));
    assert!(b.a21.iter().all(|v| *v == 0.0));
    assert_eq!(b.a22, DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
}

#[test]
fn incidence_columns_count_pipe_ends() {
    let b = assemble_pde_blocks(&path3());
    assert_eq!(b.a11.shape(), (2, 3));
    for r in 0..2 {
        assert_eq!(b.a11.row(r).sum(), 2.0);
    }
    assert_eq!(b.a11.column(1).sum(), 2.0);
}

#[test]
fn boundary_blocks_on_a_path() {
    let b = assemble_boundary_blocks(&path3());
    assert_eq!(b.b11, DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
    assert_eq!(b.b22, DMatrix::from_row_slice(2, 4, &[0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
}

#[test]
fn boundary_block_of_a_lone_pipe() {
    let b = assemble_boundary_blocks(&single_pipe());
    assert_eq!(b.b22, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
}

#[test]
fn transition_matches_a_dense_solve() {
    let net = path3();
    let tr = build_transition(&net).unwrap();
    let (a, b) = stack_system(&net, &tr.pde, &tr.boundary);
    assert_eq!(a.nrows(), net.n_nodes() + 2 * net.n_pipes());
    let f = a.clone().full_piv_lu().solve(&b).unwrap();
    assert!((&tr.f - f).amax() < 1e-10);
    assert!(tr.rcond > MIN_RCOND);
}

#[test]
fn fixture_dimensions() {
    for name in ["threenode.json", "iges30_39.json"] {
        let m = load_model(fixture(name)).unwrap();
        let tr = build_transition(&m.gas).unwrap();
        assert_eq!(tr.a.nrows(), m.gas.n_nodes() + 2 * m.gas.n_pipes());
        assert_eq!(tr.dim(), tr.a.ncols());
    }
}

#[test]
fn boundary_vector_layout() {
    let u = boundary_vector(&path3(), &[34.0], &[0.0, 10.0]).unwrap();
    assert_eq!(u.as_slice(), &[0.0, 0.0, 0.0, 0.0, 34.0, 0.0, 10.0]);
    let z = boundary_vector(&path3(), &[34.0], &[0.0, 0.0]).unwrap();
    assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 1);
    assert!(boundary_vector(&path3(), &[34.0], &[1.0]).is_err());
}

#[test]
fn bundled_source_densities_come_from_bar() {
    let m = load_model(fixture("iges30_39.json")).unwrap();
    let c2 = 340.0f64 * 340.0;
    let rho = m.gas.source_densities();
    assert_relative_eq!(rho[0], 41.48e5 / c2, max_relative = 1e-14);
    assert_relative_eq!(rho[1], 41.63e5 / c2, max_relative = 1e-14);
}

#[test]
fn steady_state_is_a_fixed_point() {
    let net = path3();
    let tr = build_transition(&net).unwrap();
    let x = solve_steady(&net, &[34.0], &[3.0, 7.0]).unwrap();
    let u = boundary_vector(&net, &[34.0], &[3.0, 7.0]).unwrap();
    let next = step_gas(&tr, &x, &u).unwrap();
    assert!((&next - &x).amax() < 1e-9);
}

#[test]
fn zero_in_zero_out() {
    let net = path3();
    let tr = build_transition(&net).unwrap();
    let z = DVector::zeros(tr.dim());
    assert_eq!(step_gas(&tr, &z, &z).unwrap(), z);
}

#[test]
fn a_step_meets_the_commanded_outflows() {
    let net = path3();
    let tr = build_transition(&net).unwrap();
    let x = solve_steady(&net, &[34.0], &[3.0, 7.0]).unwrap();
    let u = boundary_vector(&net, &[34.0], &[4.5, 6.0]).unwrap();
    let next = step_gas(&tr, &x, &u).unwrap();
    let flows = &tr.boundary.b22 * next.rows(3, 4);
    assert!((flows[0] - 4.5).abs() < 1e-9 && (flows[1] - 6.0).abs() < 1e-9);
    assert_eq!(next[0], 34.0);
}

#[test]
fn steady_single_pipe() {
    let net = single_pipe();
    let x = solve_steady(&net, &[34.0], &[10.0]).unwrap();
    assert!((x[2] - 10.0).abs() < 1e-9 && (x[3] - 10.0).abs() < 1e-9);
    assert!(x[0] - x[1] > 0.0);
    let h = gas_measurement_matrix(&net);
    assert!(((&h * &x)[3] - 10.0).abs() < 1e-9);
}

#[test]
fn steady_state_without_offtake_is_flat() {
    let net = path3();
    let x = solve_steady(&net, &[34.0], &[0.0, 0.0]).unwrap();
    for i in 0..3 {
        assert!((x[i] - 34.0).abs() < 1e-9);
    }
    assert!(x.rows(3, 4).amax() < 1e-9);
}

#[test]
fn doubling_offtake_doubles_flows() {
    let net = path3();
    let x1 = solve_steady(&net, &[34.0], &[2.0, 5.0]).unwrap();
    let x2 = solve_steady(&net, &[34.0], &[4.0, 10.0]).unwrap();
    assert!((x2.rows(3, 4) - x1.rows(3, 4) * 2.0).amax() < 1e-9);
}

#[test]
fn steady_map_matches_direct_solves() {
    let net = path3();
    let (x0, g) = steady_map(&net, &[34.0]).unwrap();
    let direct = solve_steady(&net, &[34.0], &[1.5, 2.5]).unwrap();
    let mapped = x0 + g * DVector::from_row_slice(&[1.5, 2.5]);
    assert!((mapped - direct).amax() < 1e-9);
}

#[test]
fn measurement_matrix_on_a_path() {
    let net = path3();
    let h = gas_measurement_matrix(&net);
    assert_eq!(h.shape(), (6, 7));
    assert_eq!(h.view((0, 0), (3, 3)), DMatrix::from_diagonal_element(3, 3, 340.0 * 340.0));
    assert_eq!(h.row(4).columns(3, 4).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, -1.0, 0.0]);
    // Source row: the departure slot of pipe 1–2.
    assert_eq!(h.row(3).columns(3, 4).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn unit_sound_speed_gives_identity_pressure_block() {
    let mut net = path3();
    net.sound_speed = 1.0;
    let h = gas_measurement_matrix(&net);
    assert_eq!(h.view((0, 0), (3, 3)), DMatrix::identity(3, 3));
}

#[test]
fn sink_response_is_the_outflow_derivative() {
    let net = network(4, 30.0, &[(1, 2, 20e3, 0.6), (2, 3, 15e3, 0.5), (2, 4, 25e3, 0.4)]);
    let tr = build_transition(&net).unwrap();
    let xi = tr.sink_response();
    let base = boundary_vector(&net, &[30.0], &[1.0, 2.0, 3.0]).unwrap();
    let bumped = boundary_vector(&net, &[30.0], &[1.0, 2.5, 3.0]).unwrap();
    let d = (tr.apply_inverse(&bumped) - tr.apply_inverse(&base)) / 0.5;
    assert!((d - xi.column(1)).amax() < 1e-9);
}

#[test]
fn gas_state_round_trip() {
    let net = path3();
    let x = DVector::from_fn(7, |k, _| k as f64 + 0.5);
    let s = GasState::from_vector(&net, &x).unwrap();
    assert_eq!(s.densities.len(), 3);
    assert_eq!(s.to_vector(), x);
    assert!(GasState::from_vector(&net, &DVector::zeros(6)).is_err());
}
