//! Acceptance suite. Prints one PASS/FAIL line per criterion. Pass criterion
//! numbers to run a subset: `cargo test -p potflow --test acceptance -- 1 4 6`.
//!
//! A failed criterion is reported but does not fail `cargo test` unless
//! `POTFLOW_ACCEPTANCE_STRICT` is set, so the other test targets still run.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use potflow::adjoint::{compliance_gradient, objective_thermal_compliance, physical_sensitivities, solve_adjoint};
use potflow::calibration::{sweep_grid, sweep_mubar, ReferenceField};
use potflow::config::{Preset, RunConfig};
use potflow::io::{report_cost, JsonLines};
use potflow::mesh::Mesh;
use potflow::newton::{solve_model, NewtonConfig};
use potflow::physics::{MaterialSet, ReducedModel, State, TauMode};
use potflow::simplified::{run_simplified_optimization, SimplifiedMaterial, SimplifiedModel};
use potflow::topopt::{cross_check, robust_solve, run_optimization, CrossCheck, OptResult};

const HEATSINK_GR: [f64; 3] = [640.0, 3200.0, 6400.0];
const HEATSINK_TABLE: [f64; 3] = [8.06e-1, 7.30e-1, 5.94e-1];
const CAVITY_GR: [f64; 3] = [5120.0, 10240.0, 51200.0];
const CAVITY_TABLE: [f64; 3] = [10.75, 9.24, 7.48];
const SIMPLIFIED_TABLE: f64 = 2.4703e-1;

struct Line {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: u32, pass: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { id, pass, detail });
}

fn fd_check_reduced(gr: f64) -> f64 {
    let model = small_model(10, gr, 2.0, 8.0);
    let ne = model.mesh.n_elems();
    let design = random_design(ne, 0.3, 0.7, gr as u64);
    let (live, _) = solve_model(&model, &design, None, &NewtonConfig::default()).unwrap();
    let taus = model.taus(&live.values, &design);
    let tau = TauMode::Frozen(&taus);
    let state = State {
        values: solve_frozen(&model, &design, &taus),
    };
    let lu = model.factorize_tangent(&state.values, &design, tau).unwrap();
    let adjoint = solve_adjoint(&model, &lu, &compliance_gradient(&model).unwrap()).unwrap();
    let grad = physical_sensitivities(&model, &state, &design, &adjoint, tau).unwrap();
    let psi = |g: &[f64]| {
        let s = State {
            values: solve_frozen(&model, g, &taus),
        };
        objective_thermal_compliance(&model, &s).unwrap()
    };
    random_elements(ne, 10, 7 + gr as u64)
        .into_iter()
        .map(|e| {
            let mut gp = design.clone();
            let mut gm = design.clone();
            gp[e] += 1e-5;
            gm[e] -= 1e-5;
            rel_diff((psi(&gp) - psi(&gm)) / 2e-5, grad[e])
        })
        .fold(0.0, f64::max)
}

fn fd_check_simplified() -> f64 {
    let mesh = Mesh::structured(10, 10, 1.0, 1.0).unwrap();
    let bcs = small_bcs(&mesh, 0.0);
    let mat = SimplifiedMaterial {
        h: 0.76345,
        ..SimplifiedMaterial::default()
    };
    let model = SimplifiedModel::new(mesh, bcs, mat, vec![0.0; 100]).unwrap();
    let design = random_design(100, 0.3, 0.7, 99);
    let (_, grad, _) = model.simplified_sensitivities(&design).unwrap();
    let psi = |g: &[f64]| model.compliance(&model.solve(g).unwrap());
    random_elements(100, 10, 98)
        .into_iter()
        .map(|e| {
            let mut gp = design.clone();
            let mut gm = design.clone();
            gp[e] += 1e-5;
            gm[e] -= 1e-5;
            rel_diff((psi(&gp) - psi(&gm)) / 2e-5, grad[e])
        })
        .fold(0.0, f64::max)
}

fn criterion_1(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let e640 = fd_check_reduced(640.0);
    let e6400 = fd_check_reduced(6400.0);
    let esimp = fd_check_simplified();
    let secs = start.elapsed().as_secs_f64();
    let pass = e640 <= 1e-4 && e6400 <= 1e-4 && esimp <= 1e-4 && secs < 60.0;
    report(
        lines,
        1,
        pass,
        format!(
            "adjoint vs central FD, max rel. error Gr 640 {e640:.2e}, Gr 6400 {e6400:.2e}, simplified {esimp:.2e} (tol 1e-4), {secs:.1} s (limit 60 s)"
        ),
    );
}

fn criterion_4(lines: &mut Vec<Line>) {
    let mesh = Mesh::structured(4, 4, 2.0, 1.0).unwrap();
    let bcs = small_bcs(&mesh, 0.0);
    let mats = MaterialSet {
        beta: 0.0,
        inv_mubar_f: 0.0,
        inv_mubar_s: 0.0,
        p_k: 3.0,
        ..MaterialSet::default()
    };
    let design = random_design(16, 0.0, 1.0, 5);
    let source = random_design(16, 0.0, 2.0, 6);
    let model = ReducedModel::new(mesh.clone(), bcs, mats.clone(), source.clone()).unwrap();
    let (state, _) = solve_model(&model, &design, None, &NewtonConfig::default()).unwrap();
    let k_of = |g: f64| mats.k_f + g.powf(3.0) * (mats.k_s - mats.k_f);
    let expect = conduction_oracle(&mesh, k_of, &design, &source, 10.0, 1.2);
    let err = state.t().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report(
        lines,
        4,
        err <= 1e-10,
        format!("beta = 0, 1/mubar = 0 on 4x4: max |T - T_conduction| = {err:.2e} (tol 1e-10)"),
    );
}

fn criterion_6(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut cfg = Preset::Calibration.config(6400.0);
    cfg.geometry.nx = 70;
    cfg.geometry.ny = 40;
    let model = cfg.model().unwrap();
    let design = cfg.filled_design(&model.mesh, 1.0).unwrap();
    let mut mats = model.mats.clone();
    mats.inv_mubar_f = 0.09;
    let truth = model.with_materials(mats).unwrap();
    let (state, _) = robust_solve(&truth, &design, None, &cfg.newton).unwrap();
    let reference = ReferenceField::new(&model.mesh, state.t().to_vec(), BTreeMap::new()).unwrap();
    let grid = sweep_grid(0.01, 0.2, 0.01).unwrap();
    let sweep = sweep_mubar(&model, &design, &reference, &grid, &cfg.newton).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = sweep.argmin == Some(0.09) && sweep.min_error == Some(0.0) && !sweep.non_unique && secs < 30.0;
    report(
        lines,
        6,
        pass,
        format!(
            "70x40 calibration sweep 0.01..0.20: argmin {:?}, error at argmin {:?}, {secs:.1} s (limit 30 s)",
            sweep.argmin, sweep.min_error
        ),
    );
}

fn criterion_7(lines: &mut Vec<Line>) {
    let cfg = Preset::Heatsink.config(6400.0);
    let model = cfg.model().unwrap();
    let design = cfg.filled_design(&model.mesh, cfg.initial_design).unwrap();
    let (_, rep) = robust_solve(&model, &design, None, &cfg.newton).unwrap();
    let summary = report_cost(model.n_nodes(), &[rep.clone()]);
    let text = summary.to_string();
    let pass = rep.n_dofs == 2 * model.n_nodes() && summary.dofs == rep.n_dofs && text.contains("12.5%");
    report(
        lines,
        7,
        pass,
        format!(
            "heat sink: {} nodes, {} DOFs reported (2 x nodes = {}), report states 12.5%: {}",
            model.n_nodes(),
            summary.dofs,
            2 * model.n_nodes(),
            text.contains("12.5%")
        ),
    );
}

fn simplified_uniform_error() -> f64 {
    let mesh = Mesh::structured(4, 4, 2.0, 1.0).unwrap();
    let bcs = small_bcs(&mesh, 0.0);
    let mat = SimplifiedMaterial {
        h: 0.76345,
        ..SimplifiedMaterial::default()
    };
    let model = SimplifiedModel::new(mesh.clone(), bcs, mat.clone(), vec![0.0; 16]).unwrap();
    let design = vec![0.6; 16];
    let t = model.solve(&design).unwrap();
    let k = mat.k_min + (mat.k_s - mat.k_min) * 0.6f64.powf(mat.p);
    let expect = conduction_oracle(&mesh, |_| k, &design, &[0.0; 16], 10.0, 1.2);
    t.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn criterion_9(lines: &mut Vec<Line>) {
    let err = simplified_uniform_error();
    let cfg = Preset::Heatsink.config(6400.0);
    let problem = cfg.simplified_problem().unwrap();
    let result = run_simplified_optimization(&problem, |_| {}).unwrap();
    let scaled = result.psi * cfg.output.compliance_scale;
    let dev = (scaled - SIMPLIFIED_TABLE) / SIMPLIFIED_TABLE;
    let pass = err <= 1e-10 && dev.abs() <= 0.25;
    report(
        lines,
        9,
        pass,
        format!(
            "uniform simplified vs conduction max diff {err:.2e} (tol 1e-10); Gr 6400 simplified psi x2/100 = {scaled:.5} vs {SIMPLIFIED_TABLE} ({:+.1}%, tol 25%) after {} iterations",
            100.0 * dev,
            result.history.len() - 1
        ),
    );
}

struct Run {
    result: OptResult,
    history: Vec<u8>,
}

fn optimize(cfg: &RunConfig, dir: &Path, tag: &str) -> Run {
    let path = dir.join(format!("{tag}.jsonl"));
    let problem = cfg.opt_problem().unwrap();
    let mut hist = JsonLines::create(&path).unwrap();
    let result = run_optimization(&problem, |rec, _, _| hist.write(rec).unwrap()).unwrap();
    drop(hist);
    Run {
        result,
        history: std::fs::read(&path).unwrap(),
    }
}

fn cross(cfgs: &[RunConfig], runs: &[Run], p_k: f64, p_mubar: f64) -> CrossCheck {
    let conditions: Vec<ReducedModel> = cfgs
        .iter()
        .map(|c| {
            let m = c.model().unwrap();
            m.with_materials(m.mats.with_penalization(p_k, p_mubar)).unwrap()
        })
        .collect();
    let designs: Vec<Vec<f64>> = runs.iter().map(|r| r.result.gamma_tilde.clone()).collect();
    cross_check(&designs, &conditions, &NewtonConfig::default()).unwrap()
}

fn table_line(
    lines: &mut Vec<Line>,
    id: u32,
    name: &str,
    grs: &[f64; 3],
    table: &[f64; 3],
    scale: f64,
    cc: &CrossCheck,
) {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let v = cc.psi[k][k] * scale;
        let dev = (v - table[k]) / table[k];
        ok &= dev.abs() <= 0.10;
        parts.push(format!("Gr {}: {v:.4} vs {} ({:+.1}%)", grs[k], table[k], 100.0 * dev));
    }
    let dominant = cc.diagonal_dominant();
    report(
        lines,
        id,
        ok && dominant,
        format!("{name} diagonal {} (tol 10%); dominance {}", parts.join(", "), dominant),
    );
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let start = Instant::now();

    if want(1) {
        criterion_1(&mut lines);
    }
    if want(4) {
        criterion_4(&mut lines);
    }
    if want(6) {
        criterion_6(&mut lines);
    }
    if want(7) {
        criterion_7(&mut lines);
    }
    if want(9) {
        criterion_9(&mut lines);
    }

    let mut imbalances: Vec<(String, f64)> = Vec::new();
    if want(2) || want(5) || want(8) {
        let cfgs: Vec<RunConfig> = HEATSINK_GR.iter().map(|&g| Preset::Heatsink.config(g)).collect();
        let runs: Vec<Run> = if want(2) || want(5) {
            cfgs.iter()
                .zip(HEATSINK_GR)
                .map(|(c, g)| optimize(c, dir.path(), &format!("heatsink_{g}")))
                .collect()
        } else {
            vec![optimize(&cfgs[2], dir.path(), "heatsink_6400")]
        };
        if want(2) || want(5) {
            let cc = cross(&cfgs, &runs, 16.0, 20.0);
            for (r, g) in runs.iter().zip(HEATSINK_GR) {
                let worst = r.result.history.iter().map(|h| h.heat_imbalance).fold(0.0, f64::max);
                imbalances.push((format!("heat sink Gr {g} optimization"), worst));
            }
            let worst_cc = cc.heat_imbalance.iter().flatten().copied().fold(0.0, f64::max);
            imbalances.push(("heat sink cross-check".into(), worst_cc));
            if want(2) {
                table_line(&mut lines, 2, "heat sink x2/100", &HEATSINK_GR, &HEATSINK_TABLE, 0.02, &cc);
            }
        }
        if want(8) {
            let again = optimize(&cfgs[2], dir.path(), "heatsink_6400_repeat");
            let first = runs.last().unwrap();
            let same = first.history == again.history;
            report(
                &mut lines,
                8,
                same,
                format!(
                    "two Gr 6400 heat-sink runs: history files of {} and {} bytes, bit-identical {same}",
                    first.history.len(),
                    again.history.len()
                ),
            );
        }
    }

    if want(3) || want(5) {
        let cfgs: Vec<RunConfig> = CAVITY_GR.iter().map(|&g| Preset::Cavity.config(g)).collect();
        let runs: Vec<Run> = cfgs
            .iter()
            .zip(CAVITY_GR)
            .map(|(c, g)| optimize(c, dir.path(), &format!("cavity_{g}")))
            .collect();
        let (p_k, p_mubar) = (cfgs[0].cross_check.p_k, cfgs[0].cross_check.p_mubar);
        let cc = cross(&cfgs, &runs, p_k, p_mubar);
        for (r, g) in runs.iter().zip(CAVITY_GR) {
            let worst = r.result.history.iter().map(|h| h.heat_imbalance).fold(0.0, f64::max);
            imbalances.push((format!("cavity Gr {g} optimization"), worst));
        }
        let worst_cc = cc.heat_imbalance.iter().flatten().copied().fold(0.0, f64::max);
        imbalances.push(("cavity cross-check".into(), worst_cc));
        if want(3) {
            table_line(&mut lines, 3, "cavity", &CAVITY_GR, &CAVITY_TABLE, 1.0, &cc);
        }
    }

    if want(5) {
        let worst = imbalances.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        let parts: Vec<String> = imbalances.iter().map(|(n, v)| format!("{n} {v:.1e}")).collect();
        report(
            &mut lines,
            5,
            worst <= 1e-3,
            format!("max |in - out| / in over all forward solves {worst:.2e} (tol 1e-3): {}", parts.join("; ")),
        );
    }

    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        lines.len() - failed.len(),
        lines.len(),
        start.elapsed().as_secs_f64()
    );
    for l in lines.iter().filter(|l| !l.pass) {
        eprintln!("failed criterion {}: {}", l.id, l.detail);
    }
    if failed.is_empty() || std::env::var_os("POTFLOW_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
