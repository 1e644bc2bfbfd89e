//! One function per subcommand. Each returns the summary lines printed to
//! stdout; data files and the manifest go to `config.out_dir`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::{json, Value};
use subrad::closedform::{boundary_recursion, finite_n_ratio, gaussian_limit, ratio_table, small_w_populations};
use subrad::evolve::write_g2_csv;
use subrad::kmc::{burst_stats, default_initial, simulate};
use subrad::{currents, entropy_rates, g2, observables, steady_state, Generator, ModelParams};

use crate::config::{AnalyticKind, RunConfig};
use crate::{CliError, FORMAT_VERSION};

pub fn execute(config: &RunConfig) -> Result<Vec<String>, CliError> {
    match config.command.as_str() {
        "steady" => cmd_steady(config),
        "sweep" => cmd_sweep(config),
        "currents" => cmd_currents(config),
        "g2" => cmd_g2(config),
        "traj" => cmd_traj(config),
        "analytic" => cmd_analytic(config),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn io_err(context: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        context: context.display().to_string(),
        source,
    }
}

/// Creates `out_dir/name`, hands a buffered writer to `body`, and flushes.
fn write_file<F>(config: &RunConfig, name: &str, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let path = config.out_dir.join(name);
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    body(&mut out)?;
    out.flush().map_err(io_err(&path))
}

fn write_json(config: &RunConfig, name: &str, value: &Value) -> Result<(), CliError> {
    write_file(config, name, |out| {
        serde_json::to_writer_pretty(&mut *out, value).map_err(subrad::Error::from)?;
        writeln!(out).map_err(|e| CliError::Io {
            context: name.to_string(),
            source: e,
        })
    })
}

/// Writes `<command>.manifest.json` listing the data files and echoing the
/// resolved configuration.
fn write_manifest(config: &RunConfig, outputs: &[&str], extra: Value) -> Result<String, CliError> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let name = format!("{}.manifest.json", config.command);
    let manifest = json!({
        "format_version": FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": config.command,
        "config": config,
        "outputs": outputs,
        "details": extra,
        "created_unix": created,
    });
    write_json(config, &name, &manifest)?;
    Ok(config.out_dir.join(name).display().to_string())
}

fn params_json(p: &ModelParams) -> Value {
    json!({ "N": p.n(), "w": p.w(), "gamma": p.gamma() })
}

fn cmd_steady(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let params = config.params()?;
    let gen = Generator::build(&params);
    let (dist, report) = subrad::steady_state_with(&gen, &Default::default())?;
    let obs = observables(&dist);
    write_file(config, "steady.csv", |out| Ok(dist.write_csv(out)?))?;
    let mut obs_json = serde_json::to_value(obs).map_err(subrad::Error::from)?;
    obs_json["params"] = params_json(&params);
    write_json(config, "observables.json", &obs_json)?;
    let manifest = write_manifest(
        config,
        &["steady.csv", "observables.json"],
        json!({ "solver": format!("{:?}", report.method), "residual": report.residual }),
    )?;
    Ok(vec![
        format!("N={} w={} gamma={}", params.n(), params.w(), params.gamma()),
        format!("intensity {:e}", obs.intensity),
        format!("boundary mass {:.6}", obs.boundary_mass),
        format!("mean J {:.4}", obs.mean_j),
        format!("manifest {manifest}"),
    ])
}

struct SweepRow {
    n: u32,
    w: f64,
    result: Result<[f64; 4], String>,
}

fn sweep_point(n: u32, w: f64, gamma: f64) -> Result<[f64; 4], String> {
    let params = ModelParams::new(n, w, gamma).map_err(|e| e.to_string())?;
    let gen = Generator::build(&params);
    let dist = steady_state(&gen).map_err(|e| e.to_string())?;
    let entropy = entropy_rates(&gen, &dist).map_err(|e| e.to_string())?;
    let obs = observables(&dist);
    Ok([
        entropy.s_i_per_atom(&params),
        obs.intensity,
        obs.inversion,
        obs.boundary_mass,
    ])
}

fn cmd_sweep(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let points = config.grid_points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", config.workers)))?;
    // `collect` on an indexed parallel iterator keeps grid order.
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&(n, w)| SweepRow {
                n,
                w,
                result: sweep_point(n, w, config.gamma),
            })
            .collect()
    });
    let failures = rows.iter().filter(|r| r.result.is_err()).count();
    write_file(config, "sweep.csv", |out| {
        let ctx = |e| CliError::Io {
            context: "sweep.csv".into(),
            source: e,
        };
        writeln!(out, "N,w,s_i_per_atom,intensity,inversion,boundary_mass,error").map_err(ctx)?;
        for row in &rows {
            match &row.result {
                Ok([s, i, inv, b]) => writeln!(out, "{},{},{s:e},{i:e},{inv:e},{b:e},", row.n, row.w),
                Err(msg) => writeln!(out, "{},{},,,,,\"{}\"", row.n, row.w, msg.replace('"', "'")),
            }
            .map_err(ctx)?;
        }
        Ok(())
    })?;
    let manifest = write_manifest(
        config,
        &["sweep.csv"],
        json!({ "points": rows.len(), "failures": failures }),
    )?;
    Ok(vec![
        format!("{} grid points, {failures} failed", rows.len()),
        format!("manifest {manifest}"),
    ])
}

fn cmd_currents(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let params = config.params()?;
    let gen = Generator::build(&params);
    let dist = steady_state(&gen)?;
    let field = currents(&gen, &dist)?;
    let entropy = entropy_rates(&gen, &dist)?;
    write_file(config, "currents.csv", |out| Ok(field.write_csv(out)?))?;
    let mut entropy_json = entropy.to_json(&params);
    entropy_json["max_abs_current"] = json!(field.max_abs());
    entropy_json["max_circulation"] = json!(field.max_circulation());
    write_json(config, "entropy.json", &entropy_json)?;
    let manifest = write_manifest(config, &["currents.csv", "entropy.json"], Value::Null)?;
    Ok(vec![
        format!("{} edges, max |W| {:e}", field.edges().len(), field.max_abs()),
        format!("s_i/N {:e}", entropy.s_i_per_atom(&params)),
        format!("manifest {manifest}"),
    ])
}

fn cmd_g2(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let params = config.params()?;
    let gen = Generator::build(&params);
    let dist = steady_state(&gen)?;
    let taus = config.taus();
    let values = g2(&gen, &dist, &taus)?;
    write_file(config, "g2.csv", |out| Ok(write_g2_csv(&taus, &values, out)?))?;
    let mut obs_json = serde_json::to_value(observables(&dist)).map_err(subrad::Error::from)?;
    obs_json["params"] = params_json(&params);
    write_json(config, "observables.json", &obs_json)?;
    let manifest = write_manifest(config, &["g2.csv", "observables.json"], Value::Null)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![
        format!("g2(0) = {:.6}", values[0]),
        format!("min g2 = {min:.6}"),
        format!("manifest {manifest}"),
    ])
}

fn cmd_traj(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let params = config.params()?;
    let initial = default_initial(&params);
    let record = simulate(&params, initial, config.t_max, config.seed)?;
    write_file(config, "events.csv", |out| Ok(record.write_csv(config.filter, out)?))?;
    let stats = match burst_stats(&record, config.filter, config.window, config.burn_in) {
        Ok(s) => serde_json::to_value(s).map_err(subrad::Error::from)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    let summary = json!({
        "params": params_json(&params),
        "initial": { "J": initial.j, "M": initial.m },
        "seed": record.seed,
        "rng": record.rng,
        "t_end": record.t_end,
        "absorbed": record.absorbed,
        "n_events": record.events.len(),
        "filter": config.filter.map(|c| c.name()),
        "burn_in": config.burn_in,
        "burst": stats,
    });
    write_json(config, "traj_stats.json", &summary)?;
    let manifest = write_manifest(config, &["events.csv", "traj_stats.json"], Value::Null)?;
    let mut lines = vec![format!("{} events up to t = {}", record.events.len(), record.t_end)];
    if let Some(fano) = summary["burst"]["fano"].as_f64() {
        lines.push(format!("Fano factor {fano:.4}"));
    }
    lines.push(format!("manifest {manifest}"));
    Ok(lines)
}

fn cmd_analytic(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let kind = config
        .analytic
        .ok_or_else(|| CliError::Usage("missing analytic kind".into()))?;
    let (value, lines) = match kind {
        AnalyticKind::Ratios => {
            let js: Vec<u32> = match config.j {
                Some(j) => vec![j],
                None => (1..=4).collect(),
            };
            let n = config.n.first().copied();
            let mut entries = Vec::new();
            let mut lines = Vec::new();
            for j in js {
                let ratio = ratio_table(j)?;
                let mut entry = json!({ "J": j, "ratio": ratio.to_string(), "value": to_f64(&ratio) });
                if let Some(n) = n {
                    let finite = finite_n_ratio(n, j)?;
                    entry["finite_N"] = json!({ "N": n, "ratio": finite.to_string(), "value": to_f64(&finite) });
                }
                lines.push(ratio.to_string());
                entries.push(entry);
            }
            (json!({ "ratios": entries }), lines)
        }
        AnalyticKind::SmallW => {
            let pops = small_w_populations();
            let text: Vec<String> = pops.iter().map(|p| p.to_string()).collect();
            let value = json!({
                "P": text,
                "values": pops.iter().map(to_f64).collect::<Vec<_>>(),
                "truncation": "J <= 2",
            });
            (value, vec![text.join(" ")])
        }
        AnalyticKind::Boundary => {
            let params = config.params()?;
            let b = boundary_recursion(&params)?;
            let value = json!({
                "params": params_json(&params),
                "P_J": b.p,
                "mean_J": b.mean_j(),
                "variance_J": b.variance_j(),
            });
            (
                value,
                vec![
                    format!("mean J {:.6}", b.mean_j()),
                    format!("variance J {:.6}", b.variance_j()),
                ],
            )
        }
        AnalyticKind::Gaussian => {
            let params = config.params()?;
            let g = gaussian_limit(&params)?;
            let value = json!({
                "params": params_json(&params),
                "mu": g.mu,
                "sigma2": g.sigma2,
                "validity": g.validity,
            });
            (
                value,
                vec![format!("mu {:.6}", g.mu), format!("sigma2 {:.6}", g.sigma2)],
            )
        }
    };
    write_json(config, "analytic.json", &value)?;
    write_manifest(config, &["analytic.json"], Value::Null)?;
    Ok(lines)
}

fn to_f64(r: &num_rational::BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}
