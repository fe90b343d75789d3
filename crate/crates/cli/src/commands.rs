use std::path::Path;

use alphafair::cone::{build_geometry, completely_s_check, product_form_integrable, skew_symmetry_report};
use alphafair::ctmc::{
    linear_law_of, simulate_many, simulate_with, ssc_statistic, stationary_approx, stationary_estimate_with,
    PathSample, SimOptions, StationaryEstimate,
};
use alphafair::fluid::{default_step, integrate_fluid_with, lift_delta_pf, lift_delta_with_dual};
use alphafair::linalg::to_rows;
use alphafair::model::{build_ht_sequence, extend_mixture, MixtureComponent};
use alphafair::multipath::{format_rational, local_traffic_check, project, MultipathSpec};
use alphafair::srbm::{simulate_srbm_many, validate_product_form, Scheme, SrbmOptions};
use alphafair::{allocate, NetworkSpec};
use serde_json::{json, Value};

use crate::output::{emit, flatten, num, render_json, render_table, Table};
use crate::{core, ChainRun, Cli, CliError, Command, Format, SchemeArg};

/// What a command produces: a JSON report and, for tabular commands, the
/// CSV body.
struct Artifact {
    report: Value,
    table: Option<Table>,
}

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))
}

fn spec_text(cli: &Cli) -> Result<String, CliError> {
    let path = cli.global.spec.as_deref().ok_or_else(|| CliError::Config("--spec is required".into()))?;
    read(path, "spec")
}

fn load_spec(cli: &Cli) -> Result<NetworkSpec, CliError> {
    NetworkSpec::from_json(&spec_text(cli)?).map_err(core)
}

fn positive(name: &str, value: f64) -> Result<(), CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {value}")))
    }
}

fn seed_list(first: u64, count: u64) -> Result<Vec<u64>, CliError> {
    if count == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    Ok((0..count).map(|k| first.wrapping_add(k)).collect())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (name, tabular, artifact) = match &cli.command {
        Command::Allocate { n } => ("allocate", false, cmd_allocate(cli, n)?),
        Command::FluidRun { n0, t, h, record_every } => ("fluid-run", true, cmd_fluid(cli, n0, *t, *h, *record_every)?),
        Command::Lift { w } => ("lift", false, cmd_lift(cli, w)?),
        Command::ConeReport { theta } => ("cone-report", false, cmd_cone(cli, theta)?),
        Command::Simulate { run } => ("simulate", true, cmd_simulate(cli, run)?),
        Command::SscSweep { theta, r_list, seeds, t, dt, max_events } => {
            ("ssc-sweep", true, cmd_ssc(cli, theta, r_list, *seeds, *t, *dt, *max_events)?)
        }
        Command::SrbmRun { theta, h, t, seeds, w0, record_every, scheme } => {
            ("srbm-run", true, cmd_srbm(cli, theta, *h, *t, *seeds, w0.as_deref(), *record_every, *scheme)?)
        }
        Command::StationaryCompare { exact, run, .. } => ("stationary-compare", true, cmd_compare(cli, *exact, run)?),
        Command::ProjectMultipath => ("project-multipath", false, cmd_project(cli)?),
        Command::ExtendMixture { mixture } => ("extend-mixture", false, cmd_extend(cli, mixture)?),
    };
    let format = cli.global.format.unwrap_or(if tabular { Format::Csv } else { Format::Json });
    let text = match format {
        Format::Json => render_json(name, artifact.report.clone()),
        Format::Csv => match &artifact.table {
            Some(table) => render_table(name, table),
            None => render_table(name, &flatten(&artifact.report)),
        },
    };
    emit(cli.global.out.as_deref(), &text)?;
    if let Some(summary) = cli.global.summary.as_deref() {
        emit(Some(summary), &render_json(name, artifact.report))?;
    }
    Ok(())
}

fn cmd_allocate(cli: &Cli, n: &[f64]) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    let res = allocate(&spec, n).map_err(core)?;
    Ok(Artifact {
        report: json!({
            "n": n,
            "lambda": res.lambda,
            "p": res.p,
            "kkt_residual": res.kkt_residual,
            "iterations": res.iterations,
        }),
        table: None,
    })
}

fn cmd_fluid(cli: &Cli, n0: &[f64], t: f64, h: Option<f64>, record_every: usize) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    positive("--T", t)?;
    let h = h.unwrap_or_else(|| default_step(&spec));
    positive("--h", h)?;
    if record_every == 0 {
        return Err(CliError::Config("--record-every must be at least 1".into()));
    }
    let traj = integrate_fluid_with(&spec, n0, t, h, record_every).map_err(core)?;
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=spec.routes()).map(|i| format!("n_{i}")));
    columns.extend(["F".to_string(), "proxy".to_string()]);
    let mut table = Table::new(columns);
    for k in 0..traj.times.len() {
        let mut row = vec![num(traj.times[k])];
        row.extend(traj.states[k].iter().map(|&v| num(v)));
        row.push(num(traj.f_values[k]));
        row.push(num(traj.manifold_proxy[k]));
        table.push(row);
    }
    Ok(Artifact {
        report: json!({
            "h": h,
            "horizon": t,
            "final_state": traj.final_state(),
            "final_F": traj.f_values.last(),
            "final_proxy": traj.manifold_proxy.last(),
            "points": traj.times.len(),
        }),
        table: Some(table),
    })
}

fn cmd_lift(cli: &Cli, w: &[f64]) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    let lift = lift_delta_with_dual(&spec, w).map_err(core)?;
    let closed_form = if spec.alpha() == 1.0 { Some(lift_delta_pf(&spec, w).map_err(core)?) } else { None };
    Ok(Artifact { report: json!({ "w": w, "n": lift.n, "q": lift.q, "closed_form": closed_form }), table: None })
}

fn cmd_cone(cli: &Cli, theta: &[f64]) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    let geom = build_geometry(&spec, theta).map_err(core)?;
    let skew = skew_symmetry_report(&geom).map_err(core)?;
    let verdict = completely_s_check(&geom.g_inv).map_err(core)?;
    Ok(Artifact {
        report: json!({
            "B": geom.b,
            "G": to_rows(&geom.g),
            "G_inv": to_rows(&geom.g_inv),
            "normals": geom.normals,
            "Gamma": to_rows(&geom.gamma),
            "theta": geom.theta,
            "v": geom.v,
            "product_form_integrable": product_form_integrable(&geom),
            "skew_symmetry_residual": skew.norm,
            "completely_s": { "holds": verdict.holds, "witness": verdict.witness },
        }),
        table: None,
    })
}

fn initial_counts(spec: &NetworkSpec, n0: Option<&[u32]>) -> Vec<u32> {
    n0.map_or_else(|| vec![0; spec.routes()], <[u32]>::to_vec)
}

fn check_chain_run(run: &ChainRun) -> Result<(), CliError> {
    positive("--T", run.t)?;
    if !(0.0..1.0).contains(&run.burn_in) {
        return Err(CliError::Config(format!("--burn-in must lie in [0, 1), got {}", run.burn_in)));
    }
    if run.max_events == 0 {
        return Err(CliError::Config("--max-events must be at least 1".into()));
    }
    Ok(())
}

fn estimate_json(est: &StationaryEstimate) -> Value {
    json!({
        "mean": est.mean,
        "variance": est.variance,
        "half_width": est.half_width,
        "correlation": est.correlation,
        "burn_in": est.burn_in,
        "batches": est.batches,
    })
}

fn path_json(path: &PathSample) -> Value {
    json!({
        "seed": path.seed,
        "events": path.len() - 1,
        "horizon": path.horizon,
        "simulated_until": path.simulated_until,
        "coverage": path.coverage(),
    })
}

fn cmd_simulate(cli: &Cli, run: &ChainRun) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    check_chain_run(run)?;
    let n0 = initial_counts(&spec, run.n0.as_deref());
    let options = SimOptions { max_events: run.max_events, ..Default::default() };
    let path = simulate_with(&spec, &n0, run.t, cli.global.seed, options).map_err(core)?;
    let inn = spec.routes();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=inn).map(|i| format!("n_{i}")));
    columns.extend((1..=inn).map(|i| format!("lambda_{i}")));
    let mut table = Table::new(columns);
    for k in 0..path.len() {
        let mut row = vec![num(path.event_times[k])];
        row.extend(path.states[k].iter().map(u32::to_string));
        row.extend(path.allocation(k).iter().map(|&v| num(v)));
        table.push(row);
    }
    let mut report = path_json(&path);
    match stationary_estimate_with(&path, run.burn_in, run.batches) {
        Ok(est) => report["estimate"] = estimate_json(&est),
        Err(e) => {
            let e = alphafair::Error::from(e);
            report["estimate"] = Value::Null;
            report["estimate_error"] = json!({ "module": e.module(), "code": e.code(), "message": e.to_string() });
        }
    }
    Ok(Artifact { report, table: Some(table) })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

fn cmd_ssc(
    cli: &Cli,
    theta: &[f64],
    r_list: &[f64],
    seeds: u64,
    t: f64,
    dt: f64,
    max_events: usize,
) -> Result<Artifact, CliError> {
    let base = load_spec(cli)?;
    positive("--T", t)?;
    positive("--dt", dt)?;
    let seeds = seed_list(cli.global.seed, seeds)?;
    let seq = build_ht_sequence(&base, theta, r_list).map_err(core)?;
    let n0 = vec![0; base.routes()];
    let mut table = Table::new(vec!["r".into(), "seed".into(), "statistic".into(), "coverage".into()]);
    let mut per_r = Vec::new();
    for member in &seq.members {
        let r = member.r;
        let options = SimOptions { max_events, r };
        let paths = simulate_many(&member.spec, &n0, r * r * t, &seeds, options);
        let mut stats = Vec::with_capacity(seeds.len());
        for (path, &seed) in paths.into_iter().zip(&seeds) {
            let path = path.map_err(core)?;
            let horizon = t.min(path.simulated_until / (r * r));
            let value = ssc_statistic(&base, &path, r, horizon, dt).map_err(core)?;
            table.push(vec![num(r), seed.to_string(), num(value), num(path.coverage())]);
            stats.push(value);
        }
        per_r.push(json!({ "r": r, "nu": member.spec.nu(), "median": median(stats.clone()), "statistics": stats }));
    }
    Ok(Artifact {
        report: json!({ "theta": theta, "horizon": t, "dt": dt, "seeds": seeds, "scales": per_r }),
        table: Some(table),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_srbm(
    cli: &Cli,
    theta: &[f64],
    h: f64,
    t: f64,
    seeds: u64,
    w0: Option<&[f64]>,
    record_every: usize,
    scheme: SchemeArg,
) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    positive("--h", h)?;
    positive("--T", t)?;
    if record_every == 0 {
        return Err(CliError::Config("--record-every must be at least 1".into()));
    }
    let seeds = seed_list(cli.global.seed, seeds)?;
    let geom = build_geometry(&spec, theta).map_err(core)?;
    let jn = geom.dim();
    let w0 = w0.map_or_else(|| vec![0.0; jn], <[f64]>::to_vec);
    let scheme = match scheme {
        SchemeArg::Bridge => Scheme::BridgeCorrected,
        SchemeArg::Euler => Scheme::Euler,
    };
    let runs = simulate_srbm_many(&geom, &w0, t, h, &seeds, SrbmOptions { record_every, scheme });
    let mut columns = vec!["seed".to_string(), "t".to_string()];
    for prefix in ["W", "Q", "U"] {
        columns.extend((1..=jn).map(|j| format!("{prefix}_{j}")));
    }
    let mut table = Table::new(columns);
    let mut per_seed = Vec::new();
    for run in runs {
        let path = run.map_err(core)?;
        for k in 0..path.times.len() {
            let mut row = vec![path.seed.to_string(), num(path.times[k])];
            for block in [&path.w[k], &path.q[k], &path.u[k]] {
                row.extend(block.iter().map(|&v| num(v)));
            }
            table.push(row);
        }
        let validation = match validate_product_form(&geom, &path) {
            Ok(rep) => json!({
                "mean": rep.mean,
                "target_mean": rep.target_mean,
                "mean_half_width": rep.mean_half_width,
                "ks_distance": rep.ks_distance,
                "correlation": rep.correlation,
                "correlation_half_width": rep.correlation_half_width,
                "log_density_slope": rep.log_density_slope,
                "v": rep.v,
                "slope_relative_error": rep.slope_relative_error(),
                "samples": rep.samples,
            }),
            Err(e) => {
                let e = alphafair::Error::from(e);
                json!({ "error": { "module": e.module(), "code": e.code(), "message": e.to_string() } })
            }
        };
        per_seed.push(json!({
            "seed": path.seed,
            "max_sweeps": path.max_sweeps,
            "complementarity": {
                "post_step_ratio": path.complementarity.post_step_ratio(),
                "pre_step_scaled_ratio": path.complementarity.pre_step_scaled_ratio(),
                "pre_step_fixed_ratio": path.complementarity.pre_step_fixed_ratio(),
            },
            "validation": validation,
        }));
    }
    Ok(Artifact {
        report: json!({ "theta": theta, "h": h, "horizon": t, "runs": per_seed }),
        table: Some(table),
    })
}

fn cmd_compare(cli: &Cli, exact: bool, run: &ChainRun) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    check_chain_run(run)?;
    let n0 = initial_counts(&spec, run.n0.as_deref());
    let options = SimOptions { max_events: run.max_events, ..Default::default() };
    let path = simulate_with(&spec, &n0, run.t, cli.global.seed, options).map_err(core)?;
    let est = stationary_estimate_with(&path, run.burn_in, run.batches).map_err(core)?;
    let inn = spec.routes();
    let mut reference = vec![f64::NAN; inn];
    let mut tv: Vec<Option<f64>> = vec![None; inn];
    if exact {
        let (law, order) = linear_law_of(&spec).map_err(core)?;
        for (k, &route) in order.iter().enumerate().skip(1) {
            reference[route] = law.marginal_mean(k);
            let hist = &est.histogram[route];
            let tail: f64 = 1.0 - (0..hist.len() as u32).map(|m| law.marginal_pmf(k, m)).sum::<f64>();
            let body: f64 = hist.iter().enumerate().map(|(m, p)| (p - law.marginal_pmf(k, m as u32)).abs()).sum();
            tv[route] = Some(0.5 * (body + tail.max(0.0)));
        }
        reference[order[0]] = law.long_route_mean();
    } else {
        reference = stationary_approx(&spec).map_err(core)?.mean;
    }
    let mut table = Table::new(vec![
        "route".into(),
        "simulated_mean".into(),
        "half_width".into(),
        "reference_mean".into(),
        "marginal_tv".into(),
    ]);
    for i in 0..inn {
        table.push(vec![
            (i + 1).to_string(),
            num(est.mean[i]),
            num(est.half_width[i]),
            num(reference[i]),
            tv[i].map_or_else(String::new, num),
        ]);
    }
    let mut report = path_json(&path);
    report["reference"] = json!(if exact { "exact" } else { "approx" });
    report["estimate"] = estimate_json(&est);
    report["reference_mean"] = json!(reference);
    report["marginal_tv"] = json!(tv);
    Ok(Artifact { report, table: Some(table) })
}

fn cmd_project(cli: &Cli) -> Result<Artifact, CliError> {
    let mspec = MultipathSpec::from_json(&spec_text(cli)?).map_err(core)?;
    let rep = project(&mspec).map_err(core)?;
    let lt = local_traffic_check(&rep.a);
    let a_exact: Vec<Vec<String>> = rep.a_exact.iter().map(|row| row.iter().map(format_rational).collect()).collect();
    let c_exact: Vec<String> = rep.c_exact.iter().map(format_rational).collect();
    Ok(Artifact {
        report: json!({
            "A": rep.a,
            "C": rep.c,
            "A_exact": a_exact,
            "C_exact": c_exact,
            "certificates": rep.certificates,
            "warnings": rep.warnings,
            "local_traffic": { "holds": lt.holds, "witnesses": lt.witnesses },
        }),
        table: None,
    })
}

fn cmd_extend(cli: &Cli, mixture: &Path) -> Result<Artifact, CliError> {
    let spec = load_spec(cli)?;
    let text = read(mixture, "mixture")?;
    let mixtures: Vec<Vec<MixtureComponent>> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("cannot parse mixture document: {e}")))?;
    let ext = extend_mixture(&spec, &mixtures).map_err(core)?;
    let (nu, mean) = ext.collapse();
    let mut report = serde_json::to_value(ext.spec.to_raw()).expect("network serializes");
    report["origin"] = json!(ext.origin);
    report["collapsed"] = json!({ "nu": nu, "mean_size": mean });
    Ok(Artifact { report, table: None })
}
