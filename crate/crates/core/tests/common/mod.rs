#![allow(dead_code)]

use potflow::boundary::{tag_boundary, BoundaryConditions, BoundaryKind, Region};
use potflow::mesh::{Mesh, Side};
use potflow::newton::{solve_state, CoupledProblem, NewtonConfig};
use potflow::physics::{beta_for_grashof, MaterialSet, ReducedModel, TauMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small heat-sink-like box: cold left and top walls, heater on the right part
/// of the bottom wall, pressure gauge in the top-left corner.
pub fn small_bcs(mesh: &Mesh, gauge: f64) -> BoundaryConditions {
    let w = mesh.width;
    let sets = vec![
        tag_boundary(mesh, "left", Region::Side { side: Side::Left }, BoundaryKind::DirichletT, 0.0)
            .unwrap(),
        tag_boundary(mesh, "top", Region::Side { side: Side::Top }, BoundaryKind::DirichletT, 0.0)
            .unwrap(),
        tag_boundary(
            mesh,
            "heater",
            Region::Segment {
                side: Side::Bottom,
                from: 0.6 * w,
                to: w,
            },
            BoundaryKind::FluxT,
            10.0,
        )
        .unwrap(),
        tag_boundary(
            mesh,
            "gauge",
            Region::Point {
                x: 0.0,
                y: mesh.height,
            },
            BoundaryKind::DirichletP,
            gauge,
        )
        .unwrap(),
    ];
    BoundaryConditions::new(mesh, sets).unwrap()
}

pub fn small_model(n: usize, gr: f64, p_k: f64, p_mubar: f64) -> ReducedModel {
    let mesh = Mesh::structured(n, n, 1.0, 1.0).unwrap();
    let bcs = small_bcs(&mesh, 0.0);
    let mats = MaterialSet {
        beta: beta_for_grashof(gr, 1.0),
        p_k,
        p_mubar,
        ..MaterialSet::default()
    };
    let ne = mesh.n_elems();
    ReducedModel::new(mesh, bcs, mats, vec![0.0; ne]).unwrap()
}

pub fn random_design(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_elements(n_elems: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let e = rng.gen_range(0..n_elems);
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out
}

/// Iterates until the cap; the best state is then accurate to rounding.
pub fn tight_newton() -> NewtonConfig {
    NewtonConfig {
        rel_tol: 1e-16,
        max_iter: 25,
        ..NewtonConfig::default()
    }
}

/// Solves the frozen-stabilization residual from the cold state.
pub fn solve_frozen(model: &ReducedModel, design: &[f64], taus: &[f64]) -> Vec<f64> {
    let problem = CoupledProblem {
        model,
        design,
        tau: TauMode::Frozen(taus),
    };
    match solve_state(&problem, &model.initial_state().values, &tight_newton()) {
        Ok((s, _)) => s,
        Err(potflow::Error::NotConverged { best_state, .. }) => best_state,
        Err(e) => panic!("{e}"),
    }
}

/// Relative difference with the floor used by the gradient checks.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1e-12)
}

/// Bilinear rectangle stiffness for unit conductivity, nodes counter-clockwise
/// from the bottom-left corner.
pub fn rect_stiffness(a: f64, b: f64) -> [[f64; 4]; 4] {
    let kx = [[2.0, -2.0, -1.0, 1.0], [-2.0, 2.0, 1.0, -1.0], [-1.0, 1.0, 2.0, -2.0], [1.0, -1.0, -2.0, 2.0]];
    let ky = [[2.0, 1.0, -1.0, -2.0], [1.0, 2.0, -2.0, -1.0], [-1.0, -2.0, 2.0, 1.0], [-2.0, -1.0, 1.0, 2.0]];
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = (b / a * kx[i][j] + a / b * ky[i][j]) / 6.0;
        }
    }
    k
}

pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Conduction with design-dependent `k`, element sources, the bottom heater flux
/// and `T = 0` on the left and top walls.
pub fn conduction_oracle(mesh: &Mesh, k_of: impl Fn(f64) -> f64, design: &[f64], source: &[f64], flux: f64, heater_from: f64) -> Vec<f64> {
    let nn = mesh.n_nodes();
    let ke = rect_stiffness(mesh.hx, mesh.hy);
    let mut k = vec![vec![0.0; nn]; nn];
    let mut f = vec![0.0; nn];
    for (e, nodes) in mesh.elem_nodes.iter().enumerate() {
        let ce = k_of(design[e]);
        for i in 0..4 {
            for j in 0..4 {
                k[nodes[i]][nodes[j]] += ce * ke[i][j];
            }
            f[nodes[i]] += source[e] * mesh.hx * mesh.hy / 4.0;
        }
    }
    for i in 0..mesh.nx {
        let mid = (i as f64 + 0.5) * mesh.hx;
        if mid >= heater_from {
            f[i] += flux * mesh.hx / 2.0;
            f[i + 1] += flux * mesh.hx / 2.0;
        }
    }
    let fixed: Vec<bool> = mesh
        .node_coords
        .iter()
        .map(|p| p[0] == 0.0 || (p[1] - mesh.height).abs() < 1e-12)
        .collect();
    let free: Vec<usize> = (0..nn).filter(|&n| !fixed[n]).collect();
    let a: Vec<Vec<f64>> = free.iter().map(|&r| free.iter().map(|&c| k[r][c]).collect()).collect();
    let b: Vec<f64> = free.iter().map(|&r| f[r]).collect();
    let x = dense_solve(a, b);
    let mut t = vec![0.0; nn];
    for (v, &n) in x.iter().zip(&free) {
        t[n] = *v;
    }
    t
}
