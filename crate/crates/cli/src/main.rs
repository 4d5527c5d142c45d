//! `potflow`: optimize, evaluate and calibrate natural-convection heat sinks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use potflow::adjoint::objective_thermal_compliance;
use potflow::calibration::{sweep_grid, sweep_mubar, ReferenceField};
use potflow::config::{parse_config_str, Mode, RunConfig};
use potflow::io::{
    read_design, report_cost, threshold_design, write_csv, write_json, write_vtk, FieldSnapshot,
    JsonLines,
};
use potflow::physics::{ReducedModel, State};
use potflow::simplified::run_simplified_optimization;
use potflow::topopt::{cross_check, max_temperature_rise, robust_solve, run_optimization};
use potflow::{Error, Result};

#[derive(Parser)]
#[command(name = "potflow", version, about = "Reduced-order natural convection topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the topology optimization.
    Optimize(Common),
    /// Solve one design and write its fields.
    Forward(Common),
    /// Evaluate several designs under several Grashof numbers.
    CrossCheck(Common),
    /// Sweep 1/mubar_f against a reference temperature field.
    Calibrate(CalibrateArgs),
    /// Optimize with the conduction plus interface-cooling model.
    Simplified(Common),
    /// Print DOF and solve-cost accounting for one forward solve.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Preset (heatsink, cavity, calibration); overrides the file's preset.
    #[arg(long)]
    preset: Option<String>,
    /// Grashof number.
    #[arg(long)]
    gr: Option<f64>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Design files (element CSV with a gamma_tilde column).
    #[arg(long = "design")]
    designs: Vec<PathBuf>,
    /// Extra overrides as dotted `key=value` pairs, e.g. `schedule.max_outer_iter=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Clone)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Reference temperature file (CSV `node,x,y,t` with `# nx=`, `# ny=` headers).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Instead of sweeping, write a reference generated at this 1/mubar_f.
    #[arg(long, value_name = "INV_MUBAR")]
    generate_reference: Option<f64>,
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("table on override path");
    }
    cur.insert(last.to_string(), value);
}

fn load(common: &Common, mode: Mode) -> Result<RunConfig> {
    let mut table: toml::Table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    if let Some(p) = &common.preset {
        table.insert("preset".into(), toml::Value::String(p.clone()));
    }
    if let Some(gr) = common.gr {
        table.insert("gr".into(), toml::Value::Float(gr));
    }
    if let Some(o) = &common.output {
        table.insert("output_dir".into(), toml::Value::String(o.display().to_string()));
    }
    table.insert("mode".into(), toml::Value::try_from(mode).expect("mode serializes"));
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{s}' is not KEY=VALUE")))?;
        if k.trim().is_empty() {
            return Err(Error::Config(format!("override '{s}' has an empty key")));
        }
        set_path(&mut table, k.trim(), parse_value(v.trim()));
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    parse_config_str(&text)
}

#[derive(Serialize)]
struct Provenance<'a> {
    program: &'a str,
    version: &'a str,
    mode: Mode,
    grashof: f64,
    assumptions: &'a [String],
    config: String,
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;
    let prov = Provenance {
        program: "potflow",
        version: env!("CARGO_PKG_VERSION"),
        mode: cfg.mode,
        grashof: cfg.grashof(),
        assumptions: &cfg.assumptions,
        config: cfg.to_toml()?,
    };
    write_json(&cfg.output_dir.join("provenance.json"), &prov)?;
    for a in &cfg.assumptions {
        log::info!("ASSUMED: {a}");
    }
    Ok(())
}

fn snapshot(
    model: &ReducedModel,
    iter: usize,
    gamma: &[f64],
    gamma_tilde: &[f64],
    state: &State,
    psi: f64,
    constraint: f64,
) -> FieldSnapshot {
    FieldSnapshot {
        iter,
        gamma: gamma.to_vec(),
        gamma_tilde: gamma_tilde.to_vec(),
        p: state.p().to_vec(),
        t: state.t().to_vec(),
        velocity: model.velocities(&state.values, gamma_tilde),
        psi,
        constraint,
        dt_max: max_temperature_rise(model, state),
    }
}

fn write_fields(cfg: &RunConfig, model: &ReducedModel, name: &str, snap: &FieldSnapshot) -> Result<()> {
    if cfg.output.vtk {
        write_vtk(&cfg.output_dir.join(format!("{name}.vtk")), &model.mesh, snap)?;
    }
    if cfg.output.csv {
        write_csv(&cfg.output_dir.join(name), &model.mesh, snap)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptSummary {
    grashof: f64,
    psi: f64,
    psi_reported: f64,
    compliance_scale: f64,
    volume_fraction: f64,
    dt_max: f64,
    heat_imbalance: f64,
    iterations: usize,
    threshold_fraction_0_5: f64,
    cost: potflow::io::CostSummary,
}

fn optimize(cfg: &RunConfig) -> Result<()> {
    prepare_output(cfg)?;
    let problem = cfg.opt_problem()?;
    let mut history = JsonLines::create(&cfg.output_dir.join("history.jsonl"))?;
    let every = cfg.output.snapshot_every;
    let mut write_err = None;
    let result = run_optimization(&problem, |rec, phys, state| {
        if let Err(e) = history.write(rec) {
            write_err.get_or_insert(e);
        }
        if every > 0 && rec.iter % every == 0 {
            let snap = snapshot(&problem.model, rec.iter, phys, phys, state, rec.psi, rec.constraint);
            if let Err(e) = write_fields(cfg, &problem.model, &format!("iter_{:04}", rec.iter), &snap) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let mut gamma = problem.domain.base.clone();
    for (k, &e) in problem.domain.elems.iter().enumerate() {
        gamma[e] = result.gamma[k];
    }
    let last = result.history.last().expect("at least one record");
    let model = problem.model.with_materials(
        problem.model.mats.with_penalization(last.p_k, last.p_mubar),
    )?;
    let snap = snapshot(&model, last.iter, &gamma, &result.gamma_tilde, &result.state, result.psi, last.constraint);
    write_fields(cfg, &model, "final", &snap)?;
    let design_tilde = problem.domain.restrict(&result.gamma_tilde);
    let summary = OptSummary {
        grashof: cfg.grashof(),
        psi: result.psi,
        psi_reported: result.psi * cfg.output.compliance_scale,
        compliance_scale: cfg.output.compliance_scale,
        volume_fraction: result.gamma.iter().sum::<f64>() / result.gamma.len() as f64,
        dt_max: snap.dt_max,
        heat_imbalance: last.heat_imbalance,
        iterations: result.history.len() - 1,
        threshold_fraction_0_5: threshold_design(&design_tilde, 0.5).1,
        cost: report_cost(model.n_nodes(), &result.reports),
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    println!(
        "Gr {:.0}: psi = {:.6e} (reported {:.4e}), volume {:.4}, dT_max {:.4}, {} iterations",
        summary.grashof, summary.psi, summary.psi_reported, summary.volume_fraction, summary.dt_max,
        summary.iterations
    );
    Ok(())
}

fn forward_design(cfg: &RunConfig, common: &Common, model: &ReducedModel) -> Result<Vec<f64>> {
    let file = common.designs.first().cloned().or_else(|| cfg.design.clone());
    match file {
        Some(p) => read_design(&p, model.mesh.n_elems()),
        None => cfg.filled_design(&model.mesh, cfg.geometry.fill.unwrap_or(cfg.initial_design)),
    }
}

fn forward(cfg: &RunConfig, common: &Common) -> Result<()> {
    prepare_output(cfg)?;
    let model = cfg.model()?;
    let design = forward_design(cfg, common, &model)?;
    let (state, report) = robust_solve(&model, &design, None, &cfg.newton)?;
    let psi = objective_thermal_compliance(&model, &state)?;
    let balance = model.heat_balance(&state.values, &design)?;
    let snap = snapshot(&model, 0, &design, &design, &state, psi, 0.0);
    write_fields(cfg, &model, "forward", &snap)?;
    #[derive(Serialize)]
    struct Out {
        psi: f64,
        psi_reported: f64,
        dt_max: f64,
        heat_in: f64,
        heat_out: f64,
        heat_imbalance: f64,
        report: potflow::newton::SolveReport,
    }
    let out = Out {
        psi,
        psi_reported: psi * cfg.output.compliance_scale,
        dt_max: snap.dt_max,
        heat_in: balance.input,
        heat_out: balance.output,
        heat_imbalance: balance.relative_imbalance(),
        report,
    };
    write_json(&cfg.output_dir.join("forward.json"), &out)?;
    println!(
        "psi = {:.6e} (reported {:.4e}), dT_max = {:.4}, heat in {:.6e} out {:.6e}, Newton iterations {}",
        out.psi, out.psi_reported, out.dt_max, out.heat_in, out.heat_out, out.report.iterations
    );
    Ok(())
}

fn cross(cfg: &RunConfig, common: &Common) -> Result<()> {
    prepare_output(cfg)?;
    let files: Vec<PathBuf> = if common.designs.is_empty() {
        cfg.cross_check.designs.clone()
    } else {
        common.designs.clone()
    };
    if files.is_empty() || cfg.cross_check.gr.is_empty() {
        return Err(Error::Config("cross-check needs designs and cross_check.gr".into()));
    }
    let eval = |gr: f64| -> Result<ReducedModel> {
        let c = cfg.with_gr(gr);
        let m = c.model()?;
        m.with_materials(m.mats.with_penalization(cfg.cross_check.p_k, cfg.cross_check.p_mubar))
    };
    let conditions: Vec<ReducedModel> = cfg.cross_check.gr.iter().map(|&g| eval(g)).collect::<Result<_>>()?;
    let n = conditions[0].mesh.n_elems();
    let designs: Vec<Vec<f64>> = files.iter().map(|p| read_design(p, n)).collect::<Result<_>>()?;
    let table = cross_check(&designs, &conditions, &cfg.newton)?;
    write_json(&cfg.output_dir.join("cross_check.json"), &table)?;
    print!("{:>28}", "design \\ Gr");
    for g in &cfg.cross_check.gr {
        print!("{g:>12.0}");
    }
    println!();
    for (f, row) in files.iter().zip(&table.psi) {
        print!("{:>28}", f.file_name().map(|s| s.to_string_lossy()).unwrap_or_default());
        for v in row {
            print!("{:>12.4}", v * cfg.output.compliance_scale);
        }
        println!();
    }
    println!("diagonal dominant: {}", table.diagonal_dominant());
    Ok(())
}

fn calibrate(cfg: &RunConfig, args: &CalibrateArgs) -> Result<()> {
    prepare_output(cfg)?;
    let model = cfg.model()?;
    let design = cfg.filled_design(&model.mesh, cfg.geometry.fill.unwrap_or(1.0))?;
    if let Some(v) = args.generate_reference {
        let mut mats = model.mats.clone();
        mats.inv_mubar_f = v;
        let m = model.with_materials(mats)?;
        let (state, _) = robust_solve(&m, &design, None, &cfg.newton)?;
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("source".into(), "potflow".into());
        meta.insert("inv_mubar_f".into(), v.to_string());
        meta.insert("gr".into(), cfg.grashof().to_string());
        let field = ReferenceField::new(&model.mesh, state.t().to_vec(), meta)?;
        let path = cfg.output_dir.join("reference.csv");
        field.write(&path, &model.mesh)?;
        println!("reference written to {}", path.display());
        return Ok(());
    }
    let path = args
        .reference
        .clone()
        .or_else(|| cfg.calibration.reference.clone())
        .ok_or_else(|| Error::Config("calibrate needs --reference or calibration.reference".into()))?;
    let reference = ReferenceField::read(&path)?;
    let c = &cfg.calibration;
    let grid = sweep_grid(c.lo, c.hi, c.step)?;
    let result = sweep_mubar(&model, &design, &reference, &grid, &cfg.newton)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("sweep.csv")).map_err(|e| Error::Parse {
        path: cfg.output_dir.join("sweep.csv"),
        message: e.to_string(),
    })?;
    for p in &result.points {
        w.serialize(p).map_err(|e| Error::Parse {
            path: cfg.output_dir.join("sweep.csv"),
            message: e.to_string(),
        })?;
    }
    drop(w);
    write_json(&cfg.output_dir.join("sweep.json"), &result)?;
    for p in &result.points {
        match p.error {
            Some(e) => println!("{:8.4} {:.6e}", p.inv_mubar_f, e),
            None => println!("{:8.4} (not converged)", p.inv_mubar_f),
        }
    }
    match result.argmin {
        Some(v) => println!(
            "argmin 1/mubar_f = {v}{}{}",
            if result.at_boundary { " (at range boundary)" } else { "" },
            if result.non_unique { " (flat curve, not unique)" } else { "" }
        ),
        None => println!("no converged sweep point"),
    }
    Ok(())
}

fn simplified(cfg: &RunConfig) -> Result<()> {
    prepare_output(cfg)?;
    let problem = cfg.simplified_problem()?;
    let mut history = JsonLines::create(&cfg.output_dir.join("history.jsonl"))?;
    let mut write_err = None;
    let result = run_simplified_optimization(&problem, |rec| {
        if let Err(e) = history.write(rec) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let nn = problem.model.mesh.n_nodes();
    let snap = FieldSnapshot {
        iter: result.history.len() - 1,
        gamma: result.gamma_tilde.clone(),
        gamma_tilde: result.gamma_tilde.clone(),
        p: vec![0.0; nn],
        t: result.temperature.clone(),
        velocity: vec![[0.0; 2]; problem.model.mesh.n_elems()],
        psi: result.psi,
        constraint: result.history.last().map_or(0.0, |r| r.constraint),
        dt_max: result.temperature.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    if cfg.output.vtk {
        write_vtk(&cfg.output_dir.join("final.vtk"), &problem.model.mesh, &snap)?;
    }
    if cfg.output.csv {
        write_csv(&cfg.output_dir.join("final"), &problem.model.mesh, &snap)?;
    }
    println!(
        "simplified model, h = {}: psi = {:.6e} (reported {:.4e})",
        problem.model.mat.h,
        result.psi,
        result.psi * cfg.output.compliance_scale
    );
    Ok(())
}

fn report(cfg: &RunConfig, common: &Common) -> Result<()> {
    let model = cfg.model()?;
    let design = forward_design(cfg, common, &model)?;
    let (_, rep) = robust_solve(&model, &design, None, &cfg.newton)?;
    let summary = report_cost(model.n_nodes(), &[rep]);
    println!("{summary}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Optimize(c) => optimize(&load(c, Mode::Optimize)?),
        Command::Forward(c) => forward(&load(c, Mode::Forward)?, c),
        Command::CrossCheck(c) => cross(&load(c, Mode::CrossCheck)?, c),
        Command::Calibrate(a) => calibrate(&load(&a.common, Mode::Calibrate)?, a),
        Command::Simplified(c) => simplified(&load(c, Mode::Simplified)?),
        Command::Report(c) => report(&load(c, Mode::Report)?, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

