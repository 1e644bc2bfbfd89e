//! Command-line flags, the key-value config file, and their resolution into
//! one [`RunConfig`].
//!
//! A config file holds `key = value` lines; blank lines and lines starting
//! with `#` are ignored. Keys are the long flag names with `-` or `_`
//! (`N`, `w`, `gamma`, `out-dir`, `tau_max`, ...). Flags given on the command
//! line override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use subrad::{Channel, ModelParams, DEFAULT_GAMMA};

use crate::CliError;

/// Environment variable consulted when `--workers` is absent.
pub const WORKERS_ENV: &str = "SUBRAD_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "subrad",
    version,
    about = "Steady states, currents, correlations and trajectories of the collective-spin laser chain"
)]
pub struct Cli {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary distribution and observables.
    Steady(Flags),
    /// Steady state and entropy production over an (N, w) grid.
    Sweep(Flags),
    /// Probability currents and entropy production rates.
    Currents(Flags),
    /// Intensity correlation g2(tau) in steady state.
    G2(Flags),
    /// Kinetic Monte Carlo trajectory.
    Traj(Flags),
    /// Closed-form boundary results.
    Analytic {
        #[arg(value_enum)]
        what: AnalyticKind,
        #[command(flatten)]
        flags: Flags,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Steady(_) => "steady",
            Command::Sweep(_) => "sweep",
            Command::Currents(_) => "currents",
            Command::G2(_) => "g2",
            Command::Traj(_) => "traj",
            Command::Analytic { .. } => "analytic",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Steady(f) | Command::Sweep(f) | Command::Currents(f) | Command::G2(f) | Command::Traj(f) => f,
            Command::Analytic { flags, .. } => flags,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticKind {
    /// Large-N ratio table, or a single entry with --J.
    Ratios,
    /// Boundary recursion populations.
    Boundary,
    /// Gaussian mean and variance of J.
    Gaussian,
    /// Weak-pump populations of the three lowest dark states.
    SmallW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TauGrid {
    Linear,
    Log,
}

impl FromStr for TauGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

/// Flags shared by every subcommand. Each one may also come from the config
/// file; unset values fall back to defaults during resolution.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Atom number; `sweep` accepts a comma-separated list.
    #[arg(long = "N")]
    pub n: Option<String>,
    /// Repump rate; `sweep` also accepts `min:max:step`.
    #[arg(long)]
    pub w: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for sweeps (falls back to SUBRAD_WORKERS).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Counting window for burst statistics.
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_enum)]
    pub grid: Option<TauGrid>,
    /// Keep only events of this channel (`collective`, `repump_same_j`, ...).
    #[arg(long)]
    pub filter: Option<String>,
    /// Total angular momentum for `analytic ratios`.
    #[arg(long = "J")]
    pub j: Option<u32>,
}

const KEYS: [&str; 14] = [
    "N", "w", "gamma", "out_dir", "workers", "seed", "t_max", "burn_in", "window", "tau_max", "points", "grid",
    "filter", "J",
];

/// Parsed `key = value` config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected `key = value`",
                    lineno + 1
                )));
            };
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config `{key}`: {e}")))
            })
            .transpose()
    }
}

/// Fully resolved settings of one run, echoed into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(rename = "N")]
    pub n: Vec<u32>,
    pub w: Vec<f64>,
    pub gamma: f64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub t_max: f64,
    pub burn_in: f64,
    pub window: f64,
    pub tau_max: f64,
    pub points: usize,
    pub grid: TauGrid,
    #[serde(serialize_with = "channel_name")]
    pub filter: Option<Channel>,
    #[serde(rename = "J")]
    pub j: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticKind>,
}

fn channel_name<S: serde::Serializer>(c: &Option<Channel>, s: S) -> Result<S::Ok, S::Error> {
    match c {
        Some(c) => s.serialize_str(c.name()),
        None => s.serialize_none(),
    }
}

impl RunConfig {
    /// The single parameter set of a non-sweep run.
    pub fn params(&self) -> Result<ModelParams, CliError> {
        match (self.n.as_slice(), self.w.as_slice()) {
            ([n], [w]) => ModelParams::new(*n, *w, self.gamma).map_err(|e| CliError::Usage(e.to_string())),
            _ => Err(CliError::Usage(format!(
                "`{}` takes a single N and w; use `sweep` for grids",
                self.command
            ))),
        }
    }

    /// Every `(N, w)` grid point, sorted by `N` then `w`.
    pub fn grid_points(&self) -> Vec<(u32, f64)> {
        let mut points: Vec<(u32, f64)> = self
            .n
            .iter()
            .flat_map(|&n| self.w.iter().map(move |&w| (n, w)))
            .collect();
        points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        points.dedup();
        points
    }

    pub fn taus(&self) -> Vec<f64> {
        let n = self.points;
        match self.grid {
            TauGrid::Linear => (0..n).map(|k| self.tau_max * k as f64 / (n - 1) as f64).collect(),
            // Zero plus log-spaced points over four decades below tau_max.
            TauGrid::Log => std::iter::once(0.0)
                .chain((0..n - 1).map(|k| self.tau_max * 10f64.powf(-4.0 + 4.0 * k as f64 / (n - 2).max(1) as f64)))
                .collect(),
        }
    }
}

fn parse_n_list(text: &str) -> Result<Vec<u32>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| CliError::Usage(format!("invalid N `{s}`: {e}")))
        })
        .collect()
}

fn parse_f64(text: &str, what: &str) -> Result<f64, CliError> {
    text.trim()
        .parse::<f64>()
        .map_err(|e| CliError::Usage(format!("invalid {what} `{text}`: {e}")))
}

/// `w` as a single value, a comma list, or `min:max:step` (inclusive).
pub fn parse_w_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [min, max, step] => {
            let (min, max, step) = (parse_f64(min, "w")?, parse_f64(max, "w")?, parse_f64(step, "w step")?);
            if !(step > 0.0) || max < min {
                return Err(CliError::Usage(format!("invalid w range `{text}`")));
            }
            let count = ((max - min) / step + 1e-9).floor() as usize;
            // Round away accumulated binary noise so grid values print cleanly.
            Ok((0..=count)
                .map(|k| ((min + k as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        [_] => text.split(',').map(|s| parse_f64(s, "w")).collect(),
        _ => Err(CliError::Usage(format!(
            "invalid w `{text}`; expected a value or min:max:step"
        ))),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Merges flags over the config file over built-in defaults and validates
/// everything that can be checked without running a computation.
pub fn resolve(command: &Command, file: &ConfigFile, env_workers: Option<String>) -> Result<RunConfig, CliError> {
    let flags = command.flags();
    let name = command.name();
    let pick_str = |flag: &Option<String>, key: &str| -> Result<Option<String>, CliError> {
        Ok(flag.clone().or(file.get::<String>(key)?))
    };

    let n_text = pick_str(&flags.n, "N")?;
    let w_text = pick_str(&flags.w, "w")?;
    let needs_params = !matches!(
        command,
        Command::Analytic {
            what: AnalyticKind::Ratios | AnalyticKind::SmallW,
            ..
        }
    );
    let n = match n_text {
        Some(t) => parse_n_list(&t)?,
        None if needs_params => return Err(CliError::Usage("missing --N".into())),
        None => Vec::new(),
    };
    let w = match w_text {
        Some(t) => parse_w_grid(&t)?,
        None if needs_params => return Err(CliError::Usage("missing --w".into())),
        None => Vec::new(),
    };
    let gamma = flags.gamma.or(file.get("gamma")?).unwrap_or(DEFAULT_GAMMA);
    for &n in &n {
        for &w in &w {
            ModelParams::new(n, w, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    if name != "sweep" && (n.len() > 1 || w.len() > 1) {
        return Err(CliError::Usage(format!(
            "`{name}` takes a single N and w; use `sweep` for grids"
        )));
    }

    let env_workers = env_workers
        .map(|v| {
            v.parse::<usize>()
                .map_err(|e| CliError::Usage(format!("{WORKERS_ENV}: {e}")))
        })
        .transpose()?;
    let workers = flags
        .workers
        .or(file.get("workers")?)
        .or(env_workers)
        .unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(CliError::Usage("workers must be at least 1".into()));
    }

    let filter = match pick_str(&flags.filter, "filter")? {
        Some(text) if text != "all" => Some(text.parse::<Channel>().map_err(|e| CliError::Usage(e.to_string()))?),
        _ => None,
    };
    let config = RunConfig {
        command: name.to_string(),
        n,
        w,
        gamma,
        out_dir: flags
            .out_dir
            .clone()
            .or(file.get("out_dir")?)
            .unwrap_or_else(|| PathBuf::from("out")),
        workers,
        seed: flags.seed.or(file.get("seed")?).unwrap_or(0),
        t_max: flags.t_max.or(file.get("t_max")?).unwrap_or(100.0),
        burn_in: flags
            .burn_in
            .or(file.get("burn_in")?)
            .unwrap_or(subrad::kmc::DEFAULT_BURN_IN),
        window: flags.window.or(file.get("window")?).unwrap_or(1.0),
        tau_max: flags.tau_max.or(file.get("tau_max")?).unwrap_or(50.0),
        points: flags.points.or(file.get("points")?).unwrap_or(200),
        grid: flags.grid.or(file.get("grid")?).unwrap_or(TauGrid::Linear),
        filter,
        j: flags.j.or(file.get("J")?),
        analytic: match command {
            Command::Analytic { what, .. } => Some(*what),
            _ => None,
        },
    };
    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<(), CliError> {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(c.t_max) {
        return Err(CliError::Usage(format!("t-max must be positive, got {}", c.t_max)));
    }
    if !(c.burn_in >= 0.0 && c.burn_in < c.t_max) {
        return Err(CliError::Usage(format!(
            "burn-in must lie in [0, t-max), got {}",
            c.burn_in
        )));
    }
    if !positive(c.window) {
        return Err(CliError::Usage(format!("window must be positive, got {}", c.window)));
    }
    if !positive(c.tau_max) {
        return Err(CliError::Usage(format!("tau-max must be positive, got {}", c.tau_max)));
    }
    if c.points < 2 {
        return Err(CliError::Usage(format!("points must be at least 2, got {}", c.points)));
    }
    if c.j == Some(0) {
        return Err(CliError::Usage("J must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steady_flags() -> Flags {
        Flags {
            n: Some("10".into()),
            w: Some("0.2".into()),
            ..Default::default()
        }
    }

    #[test]
    fn config_file_parsing() {
        let file = ConfigFile::parse("# comment\nN = 40\n\nout-dir = runs/a\ntau_max=12.5\n").unwrap();
        assert_eq!(file.get::<u32>("N").unwrap(), Some(40));
        assert_eq!(file.get::<PathBuf>("out_dir").unwrap(), Some(PathBuf::from("runs/a")));
        assert_eq!(file.get::<f64>("tau_max").unwrap(), Some(12.5));
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("N 40").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigFile::parse("N = 40\nw = 0.05\ngamma = 0.3\nseed = 9").unwrap();
        let cfg = resolve(&Command::Steady(steady_flags()), &file, None).unwrap();
        assert_eq!(cfg.n, vec![10]);
        assert_eq!(cfg.w, vec![0.2]);
        assert_eq!(cfg.gamma, 0.3);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn workers_precedence() {
        let file = ConfigFile::default();
        let cmd = Command::Steady(steady_flags());
        assert_eq!(resolve(&cmd, &file, Some("3".into())).unwrap().workers, 3);
        let mut flags = steady_flags();
        flags.workers = Some(2);
        assert_eq!(
            resolve(&Command::Steady(flags), &file, Some("3".into()))
                .unwrap()
                .workers,
            2
        );
        assert!(resolve(&cmd, &file, Some("x".into())).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        let mut flags = steady_flags();
        flags.n = Some("11".into());
        assert!(resolve(&Command::Steady(flags), &ConfigFile::default(), None).is_err());
        let mut flags = steady_flags();
        flags.w = Some("0.1:0.3:0.1".into());
        assert!(resolve(&Command::Steady(flags.clone()), &ConfigFile::default(), None).is_err());
        assert!(resolve(&Command::Sweep(flags), &ConfigFile::default(), None).is_ok());
    }

    #[test]
    fn w_grids() {
        assert_eq!(parse_w_grid("0.02:0.05:0.01").unwrap(), vec![0.02, 0.03, 0.04, 0.05]);
        assert_eq!(parse_w_grid("0.1,0.2").unwrap(), vec![0.1, 0.2]);
        assert_eq!(parse_w_grid("0.3:0.3:0.1").unwrap(), vec![0.3]);
        assert!(parse_w_grid("0.3:0.1:0.1").is_err());
        assert!(parse_w_grid("0.1:0.2").is_err());
        assert_eq!(parse_w_grid("0.02:0.3:0.01").unwrap().len(), 29);
    }

    #[test]
    fn tau_grids() {
        let mut cfg = resolve(&Command::G2(steady_flags()), &ConfigFile::default(), None).unwrap();
        cfg.points = 5;
        cfg.tau_max = 8.0;
        assert_eq!(cfg.taus(), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        cfg.grid = TauGrid::Log;
        let taus = cfg.taus();
        assert_eq!(taus.len(), 5);
        assert_eq!(taus[0], 0.0);
        assert!((taus[1] - 8e-4).abs() < 1e-15);
        assert!((taus[4] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_points_sorted() {
        let flags = Flags {
            n: Some("40,20".into()),
            w: Some("0.3,0.1".into()),
            ..Default::default()
        };
        let cfg = resolve(&Command::Sweep(flags), &ConfigFile::default(), None).unwrap();
        assert_eq!(cfg.grid_points(), vec![(20, 0.1), (20, 0.3), (40, 0.1), (40, 0.3)]);
    }
}
