use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use oppraim_core::eval::{roc_to_csv, run_baseline, uniform_grid, TraceMetrics};
use oppraim_core::trace::{load_anchor_db, load_trace, save_anchor_db, save_trace};
use oppraim_core::{
    compute_metrics, label_epochs, roc_sweep, run_detector, simulate, AnchorDatabase, BaselineKind,
    Decision, RunConfig, TraceFrame,
};

#[derive(Debug, Parser)]
#[command(
    name = "oppraim",
    version,
    about = "Location spoofing detection from opportunistic ranging signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a trace and its anchor database from a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Anchor database output; defaults to `<out>.anchors.csv`.
        #[arg(long)]
        anchors: Option<PathBuf>,
    },
    /// Run the detector and write `t,f_t,attack` verdicts.
    Detect {
        #[command(flatten)]
        input: TraceInput,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score verdicts against the trace's ground truth.
    Eval {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Threshold grid for the report's ROC.
        #[arg(long, default_value = "19")]
        grid: String,
    },
    /// Sweep the detector threshold and write `lambda,ptp,pfp` CSV.
    Roc {
        #[command(flatten)]
        input: TraceInput,
        #[arg(long)]
        config: PathBuf,
        /// `N` (N points inside (0, 1)), `LO:HI:N`, or a comma-separated list.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a comparison detector and write `t,score,attack` records.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
        #[command(flatten)]
        input: TraceInput,
        #[arg(long)]
        config: PathBuf,
        /// Score threshold in meters; without it the attack column is empty.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TraceInput {
    #[arg(long)]
    trace: PathBuf,
    /// Anchor database; defaults to `<trace>.anchors.csv`.
    #[arg(long)]
    anchors: Option<PathBuf>,
}

impl TraceInput {
    fn load(&self) -> anyhow::Result<(Vec<TraceFrame>, AnchorDatabase)> {
        let frames =
            load_trace(&self.trace).with_context(|| format!("reading {}", self.trace.display()))?;
        let path = self.anchors.clone().unwrap_or_else(|| sidecar(&self.trace));
        let db = load_anchor_db(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok((frames, db))
    }
}

fn sidecar(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".anchors.csv");
    PathBuf::from(s)
}

/// A failure that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_grid(spec: &str) -> Result<Vec<f64>, UsageError> {
    let bad = || {
        UsageError(format!(
            "invalid grid '{spec}': expected N, LO:HI:N or a comma-separated list"
        ))
    };
    let spec = spec.trim();
    if let Ok(n) = spec.parse::<usize>() {
        return Ok(uniform_grid(0.0, 1.0, n));
    }
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo < hi) || n == 0 {
            return Err(bad());
        }
        // Inclusive of both ends, unlike the N form.
        if n == 1 {
            return Ok(vec![lo]);
        }
        return Ok((0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect());
    }
    spec.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct VerdictFile {
    rows: Vec<(f64, Option<f64>, Option<bool>)>,
    runtime_per_epoch_s: Option<f64>,
}

const RUNTIME_KEY: &str = "# runtime_per_epoch_s:";

fn read_verdicts(path: &Path) -> anyhow::Result<VerdictFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = VerdictFile {
        rows: Vec::new(),
        runtime_per_epoch_s: None,
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix(RUNTIME_KEY) {
            out.runtime_per_epoch_s = v.trim().parse().ok();
            continue;
        }
        if line.is_empty() || line.starts_with('#') || line == "t,f_t,attack" {
            continue;
        }
        let bad = || anyhow!("{}:{}: expected t,f_t,attack", path.display(), i + 1);
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let t: f64 = cols[0].parse().map_err(|_| bad())?;
        let f = match cols[1] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad())?),
        };
        let attack = match cols[2] {
            "" => None,
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            _ => return Err(bad()),
        };
        out.rows.push((t, f, attack));
    }
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            anchors,
        } => {
            let cfg = load_config(&config)?;
            let sim = simulate(&cfg.scenario, &cfg.attacks, &cfg.ranging)?;
            save_trace(&out, &sim.frames).with_context(|| format!("writing {}", out.display()))?;
            let db_path = anchors.unwrap_or_else(|| sidecar(&out));
            save_anchor_db(&db_path, &sim.db)
                .with_context(|| format!("writing {}", db_path.display()))?;
            log::info!("{} frames written to {}", sim.frames.len(), out.display());
        }
        Command::Detect { input, config, out } => {
            let cfg = load_config(&config)?;
            let (frames, db) = input.load()?;
            let t0 = Instant::now();
            let verdicts = run_detector(&frames, &db, &cfg.detector, &cfg.sampling, &cfg.ranging)?;
            let per_epoch = t0.elapsed().as_secs_f64() / verdicts.len().max(1) as f64;
            let mut s = format!("{RUNTIME_KEY} {per_epoch}\nt,f_t,attack\n");
            for v in &verdicts {
                let attack = match v.decision {
                    Decision::Attack => "true",
                    Decision::Benign => "false",
                    Decision::Indeterminate => "",
                };
                let _ = writeln!(s, "{},{},{}", v.timestamp, fmt_opt(v.likelihood), attack);
            }
            write_file(&out, &s)?;
        }
        Command::Eval {
            verdicts,
            trace,
            out,
            grid,
        } => {
            let grid = parse_grid(&grid)?;
            let file = read_verdicts(&verdicts)?;
            let frames =
                load_trace(&trace).with_context(|| format!("reading {}", trace.display()))?;
            if file.rows.len() != frames.len() {
                bail!("{} verdicts for {} frames", file.rows.len(), frames.len());
            }
            if let Some((i, _)) = file
                .rows
                .iter()
                .zip(&frames)
                .enumerate()
                .find(|(_, (r, f))| (r.0 - f.timestamp).abs() > 1e-6)
            {
                bail!(
                    "verdict {} is not aligned with frame timestamp {}",
                    i + 1,
                    frames[i].timestamp
                );
            }
            let labels = label_epochs(&frames)?;
            let flags: Vec<Option<bool>> = file.rows.iter().map(|r| r.2).collect();
            let scores: Vec<Option<f64>> = file.rows.iter().map(|r| r.1).collect();
            let timestamps: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
            let mut report = compute_metrics(&flags, &labels, &timestamps)?;
            report.roc = roc_sweep(&scores, &labels, &grid)?;
            report.runtime_per_epoch_s = file.runtime_per_epoch_s;
            report.per_trace.push(TraceMetrics {
                name: trace
                    .file_stem()
                    .map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned()),
                ptp: report.ptp,
                pfp: report.pfp,
                latency_s: report.latency_s,
            });
            write_file(&out, &report.to_key_value())?;
        }
        Command::Roc {
            input,
            config,
            grid,
            out,
        } => {
            let grid = parse_grid(&grid)?;
            let cfg = load_config(&config)?;
            let (frames, db) = input.load()?;
            let verdicts = run_detector(&frames, &db, &cfg.detector, &cfg.sampling, &cfg.ranging)?;
            let scores: Vec<Option<f64>> = verdicts.iter().map(|v| v.likelihood).collect();
            let labels = label_epochs(&frames)?;
            write_file(&out, &roc_to_csv(&roc_sweep(&scores, &labels, &grid)?))?;
        }
        Command::Baseline {
            kind,
            input,
            config,
            threshold,
            out,
        } => {
            let cfg = load_config(&config)?;
            let (frames, db) = input.load()?;
            let verdicts = run_baseline(
                kind,
                &frames,
                &db,
                &cfg.ranging,
                &cfg.baseline,
                threshold.unwrap_or(f64::INFINITY),
            )?;
            let mut s = String::from("t,score,attack\n");
            for v in &verdicts {
                let attack = match (threshold, v.attack) {
                    (Some(_), Some(a)) => a.to_string(),
                    _ => String::new(),
                };
                let _ = writeln!(s, "{},{},{}", v.timestamp, fmt_opt(v.score), attack);
            }
            write_file(&out, &s)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
