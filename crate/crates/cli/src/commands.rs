use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use zigzag_core::control::{
    apply_control, build_reach_control, check_admissible, ControlError, ControlSequence, FlipHistory,
};
use zigzag_core::diagnostics::{drift_scan, growth_probe, radial_grid, DiagnosticsError, LyapunovParams};
use zigzag_core::estimate::{replicate_batch_means, EstimateError, Replicate};
use zigzag_core::format::{control_from_json, control_to_json, write_skeleton_csv};
use zigzag_core::{
    simulate_skeleton, ConstantExcess, ModelError, Potential, SimConfig, SimError, State, Target, TargetConfig,
    Velocity,
};

use crate::expr::Expr;
use crate::manifest::{sibling, RunManifest};
use crate::{DriftArgs, EstimateArgs, Failure, GrowthArgs, ReachArgs, SampleArgs, SimArgs};

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::BoundViolation { .. }
        | SimError::NonFinite { .. }
        | SimError::Model(ModelError::NonFiniteGradient { .. } | ModelError::NonFinitePosition { .. }) => {
            Failure::Numerical(e.to_string())
        }
        _ => Failure::Validation(e.to_string()),
    }
}

fn control_failure(e: ControlError) -> Failure {
    match e {
        ControlError::AdmissibilityNotReached { .. }
        | ControlError::EscalationStalled { .. }
        | ControlError::EndpointMismatch { .. } => Failure::Numerical(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn diag_failure(e: DiagnosticsError) -> Failure {
    match e {
        DiagnosticsError::NonFinite(_) | DiagnosticsError::Overflow { .. } => Failure::Numerical(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn estimate_failure(e: EstimateError) -> Failure {
    match e {
        EstimateError::Sim(s) => sim_failure(s),
        EstimateError::NonFinite { .. } => Failure::Numerical(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("argument structs serialise")
}

/// Inline JSON when the argument starts with `{`, a file path otherwise.
fn load_target(spec: &str) -> Result<Target, Failure> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        fs::read_to_string(spec).map_err(|e| invalid(format!("cannot read target file {spec}: {e}")))?
    };
    let cfg: TargetConfig = serde_json::from_str(&text).map_err(|e| {
        if e.line() > 0 {
            invalid(format!("target config: {e}"))
        } else {
            invalid(format!("target config: {e}{}", locate_key(&text, &e.to_string())))
        }
    })?;
    cfg.build().map_err(|e| invalid(format!("target config: {e}")))
}

/// Tagged-enum errors from serde carry no position; point at the first
/// occurrence of the key named in the message instead.
fn locate_key(text: &str, msg: &str) -> String {
    let Some(key) = msg.split('`').nth(1) else {
        return String::new();
    };
    let Some(offset) = text.find(&format!("\"{key}\"")) else {
        return String::new();
    };
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    format!(" at line {line} column {column}")
}

fn parse_vec(flag: &str, text: &str, dim: usize) -> Result<Vec<f64>, Failure> {
    let vals = text
        .split(',')
        .enumerate()
        .map(|(k, s)| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("--{flag}: entry {} `{}` is not a number", k + 1, s.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != dim {
        return Err(invalid(format!("--{flag}: expected {dim} entries, got {}", vals.len())));
    }
    Ok(vals)
}

fn parse_theta(flag: &str, text: &str, dim: usize) -> Result<Velocity, Failure> {
    let vals = parse_vec(flag, text, dim)?;
    Velocity::new(&vals).map_err(|e| invalid(format!("--{flag}: {e}")))
}

fn parse_state(flag_x: &str, x: Option<&str>, flag_th: &str, th: Option<&str>, dim: usize) -> Result<State, Failure> {
    let x = match x {
        Some(s) => parse_vec(flag_x, s, dim)?,
        None => vec![0.0; dim],
    };
    let theta = match th {
        Some(s) => parse_theta(flag_th, s, dim)?,
        None => Velocity::uniform(dim, 1.0).map_err(|e| invalid(e.to_string()))?,
    };
    State::new(x, theta).map_err(|e| invalid(e.to_string()))
}

struct Run {
    target: Target,
    excess: ConstantExcess,
    init: State,
    cfg: SimConfig,
}

fn prepare(a: &SimArgs) -> Result<Run, Failure> {
    let target = load_target(&a.target)?;
    let excess = ConstantExcess::new(a.gamma).map_err(|e| invalid(format!("--gamma: {e}")))?;
    let init = parse_state(
        "init",
        a.init.as_deref(),
        "init-theta",
        a.init_theta.as_deref(),
        target.dim(),
    )?;
    let cfg = SimConfig::new(a.horizon, a.seed)
        .and_then(|c| c.with_window(a.window))
        .and_then(|c| c.with_max_events(a.max_events))
        .map_err(|e| invalid(e.to_string()))?
        .with_method(a.method);
    Ok(Run {
        target,
        excess,
        init,
        cfg,
    })
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>, Failure> {
    Ok(csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?)))
}

fn csv_io(e: csv::Error) -> Failure {
    Failure::Io(e.to_string())
}

pub fn sample(a: &SampleArgs) -> Result<(), Failure> {
    let clock = Instant::now();
    let run = prepare(&a.sim)?;
    let skel = simulate_skeleton(&run.target, &run.excess, &run.init, &run.cfg).map_err(sim_failure)?;
    if skel.is_truncated() {
        eprintln!(
            "warning: stopped after {} events at t = {}",
            skel.events().len(),
            skel.horizon()
        );
    }
    create_parent(&a.out)?;
    let file = BufWriter::new(fs::File::create(&a.out)?);
    write_skeleton_csv(&skel, file).map_err(|e| Failure::Io(e.to_string()))?;
    RunManifest::new("sample", config_json(a), Some(a.sim.seed)).finish(
        &a.out,
        std::slice::from_ref(&a.out),
        clock.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ReachReport {
    admissible: bool,
    min_rate: f64,
    switch_rates: Vec<f64>,
    num_switches: usize,
    total_time: f64,
    endpoint: State,
    endpoint_error: Option<f64>,
    forward: Option<FlipHistory>,
    backward: Option<FlipHistory>,
}

pub fn reach(a: &ReachArgs) -> Result<(), Failure> {
    let clock = Instant::now();
    let target = load_target(&a.target)?;
    let gauss = target
        .as_gaussian()
        .ok_or_else(|| invalid(format!("reach needs a gaussian target, got {}", target.family())))?;
    let d = gauss.dim();
    if !(a.t_init > 0.0 && a.t_init.is_finite()) {
        return Err(invalid(format!("--t-init must be positive, got {}", a.t_init)));
    }
    let from = parse_state("from-x", Some(&a.from_x), "from-theta", Some(&a.from_theta), d)?;
    let to = match (&a.to_x, &a.to_theta) {
        (Some(x), Some(th)) => Some(parse_state("to-x", Some(x), "to-theta", Some(th), d)?),
        (None, None) => None,
        _ => return Err(invalid("--to-x and --to-theta go together")),
    };

    let (control, forward, backward) = match (&a.control, &to) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
            let u: ControlSequence =
                control_from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            (u, None, None)
        }
        (None, Some(to)) => {
            let plan = build_reach_control(gauss, &from, to, a.t_init).map_err(control_failure)?;
            (plan.control, Some(plan.forward), Some(plan.backward))
        }
        (None, None) => {
            return Err(invalid(
                "give --to-x/--to-theta, or --control to check an existing control",
            ))
        }
    };

    let adm = check_admissible(gauss, &ConstantExcess::CANONICAL, &from, &control).map_err(control_failure)?;
    let endpoint = apply_control(&from, &control).map_err(control_failure)?;
    let endpoint_error = to.as_ref().map(|t| {
        if t.theta != endpoint.theta {
            f64::INFINITY
        } else {
            t.x.iter()
                .zip(&endpoint.x)
                .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        }
    });
    let report = ReachReport {
        admissible: adm.admissible,
        min_rate: adm.min_rate,
        switch_rates: adm.switch_rates,
        num_switches: control.num_switches(),
        total_time: control.total_time(),
        endpoint,
        endpoint_error,
        forward,
        backward,
    };

    create_parent(&a.out)?;
    let mut text = control_to_json(&control).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&a.out, text)?;
    let report_path = sibling(&a.out, "report.json");
    write_json(&report_path, &report)?;
    RunManifest::new("reach", config_json(a), None).finish(
        &a.out,
        &[a.out.clone(), report_path],
        clock.elapsed().as_secs_f64(),
    )?;
    if !report.admissible {
        eprintln!("warning: control is not admissible (min rate {})", report.min_rate);
    }
    Ok(())
}

#[derive(Serialize)]
struct DriftSummary {
    target: &'static str,
    params: LyapunovParams,
    radii: Vec<f64>,
    probes: usize,
    epsilon: Option<f64>,
    k_radius: Option<f64>,
    log_c: Option<f64>,
    missing_hessian: usize,
    bound_violations: usize,
    bound_holds: bool,
}

pub fn drift(a: &DriftArgs) -> Result<(), Failure> {
    let clock = Instant::now();
    let target = load_target(&a.target)?;
    let excess = ConstantExcess::new(a.gamma).map_err(|e| invalid(format!("--gamma: {e}")))?;
    let params = LyapunovParams::new(a.alpha, a.delta, a.gamma).map_err(diag_failure)?;
    let rep = drift_scan(&target, &excess, &params, a.r_min, a.r_max, a.n_radial, a.n_angular).map_err(diag_failure)?;
    let d = target.dim();

    create_parent(&a.out)?;
    let summary = DriftSummary {
        target: target.family(),
        params,
        radii: rep.radii.clone(),
        probes: rep.grid.len(),
        epsilon: rep.epsilon,
        k_radius: rep.k_radius,
        log_c: rep.log_c,
        missing_hessian: rep.missing_hessian,
        bound_violations: rep.bound_violations,
        bound_holds: rep.bound_holds(),
    };
    write_json(&a.out, &summary)?;

    let grid_path = sibling(&a.out, "grid.csv");
    let mut w = csv_writer(&grid_path)?;
    let mut header = vec!["radius".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    header.extend((1..=d).map(|j| format!("th{j}")));
    header.extend(["ratio", "bound", "log_v"].map(String::from));
    w.write_record(&header).map_err(csv_io)?;
    for q in &rep.grid {
        let mut row = vec![q.radius.to_string()];
        row.extend(q.x.iter().map(|v| v.to_string()));
        row.extend(q.theta.to_i8().iter().map(|s| s.to_string()));
        row.push(q.ratio.to_string());
        row.push(q.bound.map_or_else(String::new, |b| b.to_string()));
        row.push(q.log_v.to_string());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    drop(w);

    RunManifest::new("drift", config_json(a), None).finish(
        &a.out,
        &[a.out.clone(), grid_path],
        clock.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

pub fn growth(a: &GrowthArgs) -> Result<(), Failure> {
    let clock = Instant::now();
    let target = load_target(&a.target)?;
    let radii = match &a.radii {
        Some(text) => {
            let n = text.split(',').count();
            parse_vec("radii", text, n)?
        }
        None => radial_grid(a.r_min, a.r_max, a.n_radial).map_err(diag_failure)?,
    };
    let rep = growth_probe(&target, &radii, a.n_angular).map_err(diag_failure)?;

    create_parent(&a.out)?;
    write_json(&a.out, &rep)?;
    let csv_path = sibling(&a.out, "csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["radius", "ratio1", "ratio2"]).map_err(csv_io)?;
    for k in 0..rep.radii.len() {
        w.write_record([
            rep.radii[k].to_string(),
            rep.ratio1[k].to_string(),
            rep.ratio2[k].to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    drop(w);

    RunManifest::new("growth", config_json(a), None).finish(
        &a.out,
        &[a.out.clone(), csv_path],
        clock.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    g: &'a str,
    n_batches: usize,
    pooled_mean: f64,
    replicates: Vec<Replicate>,
}

pub fn estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let clock = Instant::now();
    let run = prepare(&a.sim)?;
    let expr = Expr::parse(&a.g, run.target.dim()).map_err(|e| invalid(format!("--g: {e}")))?;
    if a.replicates == 0 {
        return Err(invalid("--replicates must be at least 1"));
    }
    let reps = replicate_batch_means(
        &run.target,
        &run.excess,
        &run.init,
        &run.cfg,
        |x, th| expr.eval(x, th),
        a.batches,
        a.replicates,
    )
    .map_err(estimate_failure)?;
    for r in reps.iter().filter(|r| r.result.nonstationary) {
        eprintln!(
            "warning: replicate {} (seed {}) has strictly monotone window means; the average may not settle",
            r.replicate, r.seed
        );
    }

    create_parent(&a.out)?;
    let pooled_mean = reps.iter().map(|r| r.result.mean).sum::<f64>() / reps.len() as f64;
    let table_path: PathBuf = sibling(&a.out, "replicates.csv");
    let mut w = csv_writer(&table_path)?;
    w.write_record([
        "replicate",
        "seed",
        "events",
        "mean",
        "sigma_hat",
        "ci_low",
        "ci_high",
        "nonstationary",
    ])
    .map_err(csv_io)?;
    for r in &reps {
        let b = &r.result;
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.events.to_string(),
            b.mean.to_string(),
            b.sigma_hat.to_string(),
            b.ci_low.to_string(),
            b.ci_high.to_string(),
            b.nonstationary.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    drop(w);
    write_json(
        &a.out,
        &EstimateOutput {
            g: &a.g,
            n_batches: a.batches,
            pooled_mean,
            replicates: reps,
        },
    )?;

    RunManifest::new("estimate", config_json(a), Some(a.sim.seed)).finish(
        &a.out,
        &[a.out.clone(), table_path],
        clock.elapsed().as_secs_f64(),
    )?;
    Ok(())
}
