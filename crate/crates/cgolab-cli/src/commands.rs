//! Dispatch of each command to its module, with CSV and JSON outputs.

use crate::acceptance;
use crate::config::ExperimentConfig;
use crate::recipe::Recipe;
use crate::report::{Check, RunReport, Table};
use crate::row;
use cgolab::averaging::{avg_energy_functional, avg_kernel_power, shell_select, AvgOptions, Estimator};
use cgolab::cgo::{born_solve_field, vanishing_scan, BornOptions, PotentialSplit};
use cgolab::dtn::{assemble_dtn_with, boundary_probe, Coefficient, DomainMesh, FluxRule};
use cgolab::estimates::{
    lemma_scan, loglog_slope, ratio_scan, spread, EstimateCase, QuadratureOptions,
};
use cgolab::fieldgrid::{GridField, SpectralField};
use cgolab::kernel::{forward_operator, make_xi1, make_xi2, ComplexFrequency, KernelMultiplier, XiVariant};
use cgolab::pipeline::{rotated_design_26, run_uniqueness, Theorem, UniquenessOptions};
use cgolab::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Config(Vec<crate::config::ConfigError>),
    #[error("{context}: {source}")]
    Module {
        context: String,
        source: cgolab::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for cgolab::Result<T> {
    fn ctx(self, context: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Module {
            context: context.to_string(),
            source,
        })
    }
}

/// Tables, summary values and checks produced by one command.
#[derive(Default)]
struct Outcome {
    tables: Vec<(String, Table)>,
    binaries: Vec<(String, Vec<u8>)>,
    summary: BTreeMap<String, Value>,
    checks: Vec<Check>,
}

impl Outcome {
    fn table(&mut self, name: &str, t: Table) {
        self.tables.push((name.to_string(), t));
    }

    fn put(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }
}

/// Numeric tolerances in effect for a config.
pub fn tolerances(cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
    let mut t = BTreeMap::new();
    t.insert("born.tol".into(), cfg.born_tol);
    t.insert("kernel.delta_rel".into(), cfg.delta_rel);
    t.insert("averaging.cap".into(), cgolab::averaging::CAP);
    t.insert("averaging.cap_fraction".into(), cgolab::averaging::CAP_FRACTION);
    t.insert("dtn.solver_tol".into(), cgolab::dtn::SOLVER_TOL);
    t.insert("dtn.singular_tol".into(), cgolab::dtn::SINGULAR_TOL);
    t.insert("pipeline.moment_radius".into(), cgolab::pipeline::MOMENT_RADIUS);
    t.insert("grid.L".into(), cfg.half_length);
    t
}

/// Human-readable execution plan, printed by `--dry-run`.
pub fn plan(cfg: &ExperimentConfig) -> String {
    let mut lines = vec![format!("command: {}", cfg.command), format!("seed: {}", cfg.seed)];
    let grid = format!("grid: d={} n={} L={}", cfg.dim, cfg.n, cfg.half_length);
    let s = format!("xi.s: {:?}", cfg.s_list);
    match cfg.command.as_str() {
        "multiplier-check" | "decay-scan" | "born-solve" | "ratio-scan" => {
            lines.push(grid);
            lines.push(s);
            lines.push(format!("frame: {:?}, variant: {}", cfg.frame, cfg.variant));
            if cfg.command == "ratio-scan" {
                lines.push(format!("case: {}", cfg.case));
            }
        }
        "avg-estimate" => {
            lines.push(format!("R: {:?}, |k|: {:?}, p: {}", cfg.avg_r, cfg.avg_k, cfg.avg_p));
            lines.push(format!("samples: {}, estimator: {}", cfg.mc_samples, cfg.estimator));
        }
        "shell-select" => lines.push(grid),
        "energy" => {
            lines.push(grid);
            lines.push(format!("R: {:?}, frames: {}", cfg.avg_r, energy_samples(cfg)));
        }
        "dtn-assemble" | "boundary-probe" => {
            lines.push(format!("mesh: d={} m={}", cfg.dim, cfg.dtn_m));
            if cfg.command == "boundary-probe" {
                lines.push(format!("z: {:?}, steps: {}", cfg.probe_z, cfg.probe_steps));
            } else {
                lines.push(format!("kind: {}, rule: {}", cfg.dtn_kind, cfg.dtn_rule));
            }
        }
        "uniqueness-run" => {
            lines.push(grid);
            lines.push(s);
            lines.push(format!("theorem: {}, directions: {}", cfg.theorem, cfg.directions));
        }
        "accept" => lines.push(format!("criteria: {:?}", cfg.criteria)),
        _ => {}
    }
    lines.push(format!("outputs: {}", output_names(&cfg.command).join(", ")));
    lines.join("\n")
}

fn output_names(command: &str) -> Vec<String> {
    let stem = command.replace('-', "_");
    let mut v = vec![format!("{stem}.csv")];
    match command {
        "multiplier-check" => v.push("multiplier_line.csv".into()),
        "born-solve" => v.push("born_w.bin".into()),
        "dtn-assemble" => v.push("dtn.bin".into()),
        "uniqueness-run" => v.push("uniqueness_limits.csv".into()),
        _ => {}
    }
    v.push("report.json".into());
    v
}

fn energy_samples(cfg: &ExperimentConfig) -> usize {
    if cfg.entries.iter().any(|(k, _)| k == "mc.samples") {
        cfg.mc_samples
    } else {
        64
    }
}

fn default_recipe(r: &Option<Recipe>, fallback: &str) -> Recipe {
    r.clone()
        .unwrap_or_else(|| Recipe::parse(fallback).expect("valid default recipe"))
}

fn potential(cfg: &ExperimentConfig) -> Result<GridField, CliError> {
    default_recipe(&cfg.potential, "gaussian(0, 0.3, 0.5)")
        .to_field(cfg.grid().ctx("grid")?)
        .ctx("potential")
}

fn xi_for(cfg: &ExperimentConfig, s: f64) -> Result<ComplexFrequency, CliError> {
    let f = cfg.frame.frame();
    if cfg.variant == "xi2" {
        make_xi2(s, f.sigma1, f.sigma2, f.sigma3).ctx("xi")
    } else {
        make_xi1(s, f.sigma1, f.sigma2).ctx("xi")
    }
}

fn born_options(cfg: &ExperimentConfig) -> BornOptions {
    BornOptions {
        tol: cfg.born_tol,
        max_iter: cfg.born_max_iter,
        ..Default::default()
    }
}

fn multiplier_check(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let spec = cfg.grid().ctx("grid")?;
    let mut t = Table::new(&[
        "s",
        "xi_norm",
        "delta_floor",
        "count_regularized",
        "min_abs_denominator",
        "max_residual",
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let band = spec.freq_step() * (spec.n() / 4) as f64;
    let mut worst: f64 = 0.0;
    let mut min_count = usize::MAX;
    let mut first = None;
    for &s in &cfg.s_list {
        let xi = xi_for(cfg, s)?;
        let k = KernelMultiplier::new(&xi, &spec, Some(cfg.delta_rel * xi.norm_sqr()));
        let mut c = SpectralField::zeros(spec);
        for i in 0..spec.len() {
            let f = spec.freq(i);
            let kn = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
            let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if kn <= band && k.values[i] != Complex64::new(0.0, 0.0) {
                c.coeffs[i] = v;
            }
        }
        let f = c.to_field();
        let back = forward_operator(&xi, &k.apply(&f, None));
        let num: f64 = back.values.iter().zip(&f.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = f.values.iter().map(|v| v.norm_sqr()).sum();
        let res = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        worst = worst.max(res);
        min_count = min_count.min(k.report.count_regularized);
        t.push(row![
            s,
            xi.norm(),
            k.report.delta_floor,
            k.report.count_regularized,
            k.report.min_abs_denominator,
            res
        ]);
        if first.is_none() {
            first = Some((xi, k));
        }
    }
    if let Some((xi, k)) = first {
        let mut line = Table::new(&["k", "abs_multiplier"]);
        let n = spec.n() as i64;
        for j in -n / 2..n / 2 {
            if let Some(i) = spec.index_of_freq_int([j, 0, 0]) {
                line.push(row![spec.freq(i)[0], k.values[i].norm()]);
            }
        }
        o.table("multiplier_line.csv", line);
        o.put("xi_re", json!(xi.re));
        o.put("xi_im", json!(xi.im));
    }
    o.put("max_residual", json!(worst));
    o.put("count_regularized_min", json!(min_count));
    o.checks.push(Check::new(
        "residual",
        worst <= 1e-10,
        format!("max residual {worst:.2e} (limit 1e-10)"),
    ));
    o.checks.push(Check::new(
        "origin regularised",
        min_count >= 1,
        format!("min count_regularized {min_count}"),
    ));
    o.table("multiplier_check.csv", t);
    Ok(())
}

fn decay_scan(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let q = PotentialSplit::plain(potential(cfg)?);
    let rows = vanishing_scan(&q, &cfg.s_list, &cfg.frame.frame(), &born_options(cfg)).ctx("decay-scan")?;
    let mut t = Table::new(&["s", "xi_norm", "converged", "iterations", "max_ratio", "l2", "h1", "l_crit"]);
    for r in &rows {
        t.push(row![r.s, r.xi_norm, r.converged, r.iterations, r.max_ratio, r.l2, r.h1, r.l_crit]);
    }
    if rows.len() >= 2 && rows.iter().all(|r| r.h1 > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.xi_norm).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.h1).collect();
        o.put("h1_slope", json!(loglog_slope(&x, &y)));
    }
    let conv = rows.iter().filter(|r| r.converged).count();
    o.checks.push(Check::new(
        "converged",
        conv == rows.len(),
        format!("{conv}/{} rows converged", rows.len()),
    ));
    o.table("decay_scan.csv", t);
    Ok(())
}

fn born_solve(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let q = potential(cfg)?;
    let s = cfg.s_list[0];
    let xi = xi_for(cfg, s)?;
    let sol = born_solve_field(&q, &xi, &born_options(cfg)).ctx("born-solve")?;
    let mut t = Table::new(&["step", "increment", "ratio", "residual"]);
    for r in &sol.trace.records {
        t.push(row![r.step, r.increment, r.ratio, r.residual]);
    }
    let mut bin = Vec::new();
    sol.w.write_binary(&mut bin).ctx("born-solve output")?;
    o.binaries.push(("born_w.bin".into(), bin));
    o.put("s", json!(s));
    o.put("iterations", json!(sol.iterations));
    o.put("h1_b2", json!(cgolab::cgo::h1_b2(&sol.w)));
    o.put("max_ratio", json!(sol.trace.max_ratio(0)));
    o.checks.push(Check::new(
        "converged",
        sol.converged,
        format!("{} iterations", sol.iterations),
    ));
    o.table("born_solve.csv", t);
    Ok(())
}

fn ratio_scan_cmd(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    if cfg.case == "lem" {
        let rows = lemma_scan(&cfg.s_list, &cfg.frame.frame(), 0.9, cfg.ball_r).ctx("ratio-scan")?;
        let mut t = Table::new(&["s", "xi_norm", "n", "lem1_max", "lem1_arg", "lem2_max", "lem2_arg"]);
        for r in &rows {
            t.push(row![r.s, r.xi_norm, r.n, r.lem1_max, r.lem1_arg.clone(), r.lem2_max, r.lem2_arg.clone()]);
        }
        if rows.len() >= 2 {
            let x: Vec<f64> = rows.iter().map(|r| r.xi_norm).collect();
            let l1: Vec<f64> = rows.iter().map(|r| r.lem1_max).collect();
            let l2: Vec<f64> = rows.iter().map(|r| r.lem2_max).collect();
            o.put("lem1_slope", json!(loglog_slope(&x, &l1)));
            o.put("lem2_slope", json!(loglog_slope(&x, &l2)));
        }
        o.table("ratio_scan.csv", t);
        return Ok(());
    }
    let case = EstimateCase::parse(&cfg.case).ctx("case")?;
    let f = potential(cfg)?;
    let xis: Vec<ComplexFrequency> = cfg.s_list.iter().map(|&s| xi_for(cfg, s)).collect::<Result<_, _>>()?;
    let rows = ratio_scan(case, &f, &xis, cfg.sobolev_k, cfg.ball_r).ctx("ratio-scan")?;
    let mut t = Table::new(&["s", "xi_norm", "lhs", "rhs", "ratio"]);
    for r in &rows {
        t.push(row![r.s, r.xi_norm, r.lhs, r.rhs, r.ratio]);
    }
    if rows.len() >= 2 && rows.iter().all(|r| r.lhs > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.xi_norm).collect();
        let raw: Vec<f64> = rows.iter().map(|r| r.raw_ratio()).collect();
        let ratio: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        o.put("raw_ratio_slope", json!(loglog_slope(&x, &raw)));
        o.put("ratio_spread", json!(spread(&ratio)));
    }
    o.table("ratio_scan.csv", t);
    Ok(())
}

fn variant(cfg: &ExperimentConfig) -> XiVariant {
    if cfg.variant == "xi2" {
        XiVariant::Xi2
    } else {
        XiVariant::Xi1
    }
}

fn avg_estimate(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let u = [0.48, -0.6, 0.64];
    let opts = AvgOptions {
        mc_samples: cfg.mc_samples,
        seed: cfg.seed,
        variant: variant(cfg),
        estimator: if cfg.estimator == "plain" {
            Estimator::Plain
        } else {
            Estimator::Conditional
        },
    };
    let mut t = Table::new(&[
        "R", "k_norm", "p", "samples", "value", "std_error", "bound", "ratio", "cap_hits", "flagged",
    ]);
    let mut ratios = Vec::new();
    let mut flagged = 0;
    for &r in &cfg.avg_r {
        for &k in &cfg.avg_k {
            let e = avg_kernel_power(r, [u[0] * k, u[1] * k, u[2] * k], cfg.avg_p, &opts).ctx("avg-estimate")?;
            t.push(row![e.r, e.k_norm, e.p, e.mc_samples, e.value, e.std_error, e.bound_value, e.ratio, e.cap_hits, e.flagged]);
            ratios.push(e.ratio);
            flagged += e.flagged as usize;
        }
    }
    o.put("ratio_spread", json!(spread(&ratios)));
    o.checks.push(Check::new("cap hits", flagged == 0, format!("{flagged} flagged rows")));
    o.table("avg_estimate.csv", t);
    Ok(())
}

fn shell_select_cmd(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let q = potential(cfg)?.to_spectral();
    let p = shell_select(&q).ctx("shell-select")?;
    let mut t = Table::new(&["n", "a", "b", "nb", "selected"]);
    for (i, nb) in p.nb().iter().enumerate() {
        let n = p.index(i);
        t.push(row![n, p.a[i], p.b[i], *nb, p.selected.contains(&n)]);
    }
    o.put("selected", json!(p.selected));
    o.put("min_nb", json!(p.min_nb()));
    o.table("shell_select.csv", t);
    Ok(())
}

fn energy(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let q = potential(cfg)?.to_spectral();
    let frames = energy_samples(cfg);
    let mut t = Table::new(&[
        "R", "frames", "value", "std_error", "bound", "ratio", "mean_mid", "mean_near", "base", "mean_total",
    ]);
    let mut values = Vec::new();
    for &r in &cfg.avg_r {
        let e = avg_energy_functional(r, &q, frames, cfg.seed, variant(cfg), &QuadratureOptions::default())
            .ctx("energy")?;
        t.push(row![
            r,
            frames,
            e.estimate.value,
            e.estimate.std_error,
            e.estimate.bound_value,
            e.estimate.ratio,
            e.mean_mid,
            e.mean_near,
            e.base,
            e.mean_total
        ]);
        values.push(e.estimate.value);
    }
    if values.len() >= 2 && values.iter().all(|v| *v > 0.0) {
        o.put("slope", json!(loglog_slope(&cfg.avg_r, &values)));
    }
    o.table("energy.csv", t);
    Ok(())
}

fn mesh_values(mesh: &DomainMesh, r: &Recipe) -> Result<Vec<f64>, CliError> {
    r.sample((0..mesh.node_count()).map(|i| mesh.point(i)), mesh.h())
        .map_err(CliError::Usage)
}

fn dtn_assemble(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let mesh = DomainMesh::new(cfg.dim, cfg.dtn_m).ctx("mesh")?;
    let conductivity = cfg.dtn_kind == "conductivity";
    let recipe = default_recipe(&cfg.potential, if conductivity { "const(1)" } else { "const(0)" });
    let values = mesh_values(&mesh, &recipe)?;
    let coeff = if conductivity {
        Coefficient::Conductivity(values)
    } else {
        Coefficient::Schrodinger(values)
    };
    let rule = if cfg.dtn_rule == "one-sided" {
        FluxRule::OneSided
    } else {
        FluxRule::Variational
    };
    let m = assemble_dtn_with(&mesh, &coeff, rule).ctx("dtn-assemble")?;
    let mut bin = Vec::new();
    m.write_binary(&mut bin).ctx("dtn output")?;
    o.binaries.push(("dtn.bin".into(), bin));
    let defect = m.symmetry_defect();
    let mut t = Table::new(&["m", "h", "boundary_nodes", "symmetry_defect"]);
    t.push(row![cfg.dtn_m, mesh.h(), m.size, defect]);
    o.put("size", json!(m.size));
    o.put("symmetry_defect", json!(defect));
    if rule == FluxRule::Variational {
        o.checks.push(Check::new(
            "symmetric form",
            defect <= 1e-8,
            format!("defect {defect:.2e} (limit 1e-8)"),
        ));
    }
    o.table("dtn_assemble.csv", t);
    Ok(())
}

fn probe_cmd(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let mesh = DomainMesh::new(3, cfg.dtn_m).ctx("mesh")?;
    let g1 = mesh_values(&mesh, &default_recipe(&cfg.gamma1, "const(1)"))?;
    let g2 = mesh_values(&mesh, &default_recipe(&cfg.gamma2, "const(1)"))?;
    let r = boundary_probe(&mesh, &g1, &g2, cfg.probe_z, cfg.probe_steps).ctx("boundary-probe")?;
    let mut t = Table::new(&["step", "distance", "value", "calibration"]);
    for (i, d) in r.distances.iter().enumerate() {
        t.push(row![i + 1, *d, r.values[i], r.calibration[i]]);
    }
    o.put("normal", json!(r.normal));
    o.put("limit", json!(r.limit));
    o.put("calibration_limit", json!(r.calibration_limit));
    o.put("estimate", json!(r.estimate));
    o.table("boundary_probe.csv", t);
    Ok(())
}

fn uniqueness(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let spec = cfg.grid().ctx("grid")?;
    let (d1, d2) = acceptance::pipeline_pair(spec).ctx("default pair")?;
    let q1 = match &cfg.potential {
        Some(r) => r.to_field(spec).ctx("potential")?,
        None => d1,
    };
    let q2 = match &cfg.potential2 {
        Some(r) => r.to_field(spec).ctx("potential2")?,
        None => d2,
    };
    let theorem = Theorem::parse(&cfg.theorem).ctx("theorem")?;
    let dirs = rotated_design_26(cfg.seed);
    let opts = UniquenessOptions {
        born: born_options(cfg),
        ..Default::default()
    };
    let run = run_uniqueness(
        theorem,
        &PotentialSplit::plain(q1),
        &PotentialSplit::plain(q2),
        &cfg.s_list,
        &dirs[..cfg.directions],
        cfg.seed,
        &opts,
    )
    .ctx("uniqueness-run")?;
    let mut t = Table::new(&[
        "direction", "s", "sigma_s_x", "sigma_s_y", "sigma_s_z", "i_re", "i_im", "moment", "gap", "converged",
        "iterations_1", "iterations_2",
    ]);
    for r in &run.rows {
        t.push(row![
            r.direction,
            r.s,
            r.sigma_s[0],
            r.sigma_s[1],
            r.sigma_s[2],
            r.i_re,
            r.i_im,
            r.moment,
            r.gap,
            r.converged(),
            r.iterations_1,
            r.iterations_2
        ]);
    }
    let mut l = Table::new(&["direction", "rows_used", "limit", "moment", "final_gap", "rate"]);
    let mut worst: f64 = 0.0;
    for d in &run.limits {
        l.push(row![d.direction, d.rows_used, d.limit, d.moment, d.final_gap, d.rate]);
        if d.moment != 0.0 {
            worst = worst.max(d.final_gap / d.moment.abs());
        }
    }
    o.put("excluded", json!(run.excluded));
    o.put("s_list", json!(run.s_list));
    o.put("max_abs_moment", json!(run.moments.max_abs));
    o.put("worst_relative_gap", json!(worst));
    o.checks.push(Check::new(
        "limit",
        worst <= 0.1,
        format!("worst |I-M|/|M| at the last s {worst:.2e} (limit 0.1)"),
    ));
    o.table("uniqueness_run.csv", t);
    o.table("uniqueness_limits.csv", l);
    Ok(())
}

fn accept(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<(), CliError> {
    let mut t = Table::new(&["id", "name", "pass", "detail"]);
    for c in acceptance::criteria() {
        if !cfg.criteria.contains(&c.id) {
            continue;
        }
        let r = c.run();
        println!("{}", r.line());
        o.put(&format!("seconds_{:02}", r.id), json!(r.seconds));
        t.push(row![r.id, r.name, r.pass, r.detail.clone()]);
        o.checks.push(Check::new(format!("{:02} {}", r.id, r.name), r.pass, r.detail));
    }
    o.table("accept.csv", t);
    Ok(())
}

/// Run a validated config and write its outputs under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    let mut o = Outcome::default();
    match cfg.command.as_str() {
        "multiplier-check" => multiplier_check(cfg, &mut o)?,
        "decay-scan" => decay_scan(cfg, &mut o)?,
        "born-solve" => born_solve(cfg, &mut o)?,
        "ratio-scan" => ratio_scan_cmd(cfg, &mut o)?,
        "avg-estimate" => avg_estimate(cfg, &mut o)?,
        "shell-select" => shell_select_cmd(cfg, &mut o)?,
        "energy" => energy(cfg, &mut o)?,
        "dtn-assemble" => dtn_assemble(cfg, &mut o)?,
        "boundary-probe" => probe_cmd(cfg, &mut o)?,
        "uniqueness-run" => uniqueness(cfg, &mut o)?,
        "accept" => accept(cfg, &mut o)?,
        other => return Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for (name, t) in &o.tables {
        t.write(&out.join(name))?;
        outputs.push(name.clone());
    }
    for (name, bytes) in &o.binaries {
        std::fs::write(out.join(name), bytes)?;
        outputs.push(name.clone());
    }
    outputs.push("report.json".into());
    let report = RunReport {
        command: cfg.command.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.to_text(),
        tolerances: tolerances(cfg),
        summary: o.summary,
        outputs,
        checks: o.checks,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    std::fs::write(out.join("report.json"), report.to_json())?;
    Ok(report)
}

/// Output directory: `--out`, then the `out` key, then `./out/<command>`.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.command))
}
