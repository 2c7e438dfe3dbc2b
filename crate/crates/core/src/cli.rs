//! Command-line driver: `run`, `synth` and `eval`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::client::Ablation;
use crate::data::{apply_missing, load_views, read_labels, synth_blobs, write_labels, write_views, MissingSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::federation::{run_session_with, RoundRecord, SessionConfig};
use crate::metrics::{evaluate, Scores};

#[derive(Debug, Parser)]
#[command(name = "fedmvc", version, about = "Federated incomplete multi-view clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset directory and report per-round records.
    Run(RunArgs),
    /// Write a synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Score a label file against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML file with session keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with view_0.csv .. view_{M-1}.csv, optional labels.csv and mask.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory for records.jsonl, summary.csv and label files.
    /// Records go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Missing rates to sweep, comma separated. Requires complete data.
    #[arg(long, value_delimiter = ',')]
    pub missing_rate: Vec<f64>,
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// no-migration | no-fusion-module | no-global-guidance | no-global-head
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Reruns per missing rate with seeds seed, seed+1, ...
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    /// Feature width per view, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20,30,25")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Knock out views and write mask.csv.
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels, one per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels; defaults to labels.csv inside --data-dir.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// Keys a config file may hold besides the session fields.
const RUN_KEYS: [&str; 5] = ["data_dir", "out", "missing_rate", "dirichlet_alpha", "repeats"];

/// A fully resolved `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub session: SessionConfig,
    /// Whether `clusters` came from the file or a flag rather than the labels.
    pub clusters_given: bool,
    pub data_dir: PathBuf,
    pub out: Option<PathBuf>,
    /// Empty means the data is used as loaded.
    pub missing_rates: Vec<f64>,
    pub dirichlet_alpha: Option<f64>,
    pub repeats: usize,
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {msg}", path.display()))
}

impl RunPlan {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut session = SessionConfig::default();
        let mut clusters_given = false;
        let mut data_dir = None;
        let mut out = None;
        let mut missing_rates = Vec::new();
        let mut dirichlet_alpha = None;
        let mut repeats = 1;

        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
            let mut table: toml::Table = text.parse().map_err(|e| config_err(path, e))?;
            let mut extra = toml::Table::new();
            for key in RUN_KEYS {
                if let Some(v) = table.remove(key) {
                    extra.insert(key.to_string(), v);
                }
            }
            clusters_given = table.contains_key("clusters");
            session = table.try_into().map_err(|e| config_err(path, e))?;
            let get = |key: &str| extra.get(key);
            if let Some(v) = get("data_dir") {
                data_dir = Some(PathBuf::from(v.as_str().ok_or_else(|| config_err(path, "data_dir must be a string"))?));
            }
            if let Some(v) = get("out") {
                out = Some(PathBuf::from(v.as_str().ok_or_else(|| config_err(path, "out must be a string"))?));
            }
            if let Some(v) = get("missing_rate") {
                missing_rates = match v {
                    toml::Value::Array(a) => a.iter().map(toml_f64).collect::<Option<Vec<_>>>(),
                    other => toml_f64(other).map(|r| vec![r]),
                }
                .ok_or_else(|| config_err(path, "missing_rate must be a number or list of numbers"))?;
            }
            if let Some(v) = get("dirichlet_alpha") {
                dirichlet_alpha = Some(toml_f64(v).ok_or_else(|| config_err(path, "dirichlet_alpha must be a number"))?);
            }
            if let Some(v) = get("repeats") {
                repeats = v
                    .as_integer()
                    .and_then(|r| usize::try_from(r).ok())
                    .ok_or_else(|| config_err(path, "repeats must be a non-negative integer"))?;
            }
        }

        if let Some(d) = &args.data_dir {
            data_dir = Some(d.clone());
        }
        if let Some(o) = &args.out {
            out = Some(o.clone());
        }
        if !args.missing_rate.is_empty() {
            missing_rates = args.missing_rate.clone();
        }
        dirichlet_alpha = args.dirichlet_alpha.or(dirichlet_alpha);
        repeats = args.repeats.unwrap_or(repeats);
        if let Some(c) = args.clusters {
            session.clusters = c;
            clusters_given = true;
        }
        session.seed = args.seed.unwrap_or(session.seed);
        session.rounds = args.rounds.unwrap_or(session.rounds);
        session.epochs = args.epochs.unwrap_or(session.epochs);
        session.k_neighbors = args.k_neighbors.unwrap_or(session.k_neighbors);
        session.gamma1 = args.gamma1.unwrap_or(session.gamma1);
        session.gamma2 = args.gamma2.unwrap_or(session.gamma2);
        session.ablation = args.ablation.unwrap_or(session.ablation);

        let data_dir = data_dir.ok_or_else(|| Error::Config("no data directory: pass --data-dir or set data_dir".into()))?;
        if repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let Some(r) = missing_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("missing rate {r} must lie in [0, 1)")));
        }
        Ok(Self {
            session,
            clusters_given,
            data_dir,
            out,
            missing_rates,
            dirichlet_alpha,
            repeats,
        })
    }
}

fn toml_f64(v: &toml::Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

/// One line of records.jsonl.
#[derive(Debug, Serialize)]
struct RecordLine<'a> {
    missing_rate: Option<f64>,
    repeat: usize,
    seed: u64,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

/// Aggregate over repeats at one missing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub missing_rate: Option<f64>,
    pub runs: usize,
    pub mean: Option<Scores>,
    pub std: Option<Scores>,
}

/// Mean and population standard deviation of each score.
pub fn mean_std(scores: &[Scores]) -> Option<(Scores, Scores)> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let stat = |f: fn(&Scores) -> f64| {
        let mean = scores.iter().map(f).sum::<f64>() / n;
        let var = scores.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (am, asd) = stat(|s| s.acc);
    let (nm, nsd) = stat(|s| s.nmi);
    let (rm, rsd) = stat(|s| s.ari);
    Some((
        Scores { acc: am, nmi: nm, ari: rm },
        Scores { acc: asd, nmi: nsd, ari: rsd },
    ))
}

fn rate_tag(rate: Option<f64>) -> String {
    rate.map_or_else(|| "asis".to_string(), |r| format!("{r}"))
}

/// Execute a resolved plan, streaming records to `records` as they finish.
pub fn run_plan(plan: &RunPlan, records: &mut dyn Write) -> Result<Vec<SummaryRow>> {
    let base = load_views(&plan.data_dir)?;
    let mut session = plan.session.clone();
    if !plan.clusters_given {
        let labels = base.labels.as_ref().ok_or_else(|| {
            Error::Config("cluster count unknown: pass --clusters or provide labels.csv".into())
        })?;
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        session.clusters = distinct.len();
    }
    if !plan.missing_rates.is_empty() && base.complete_count() < base.n() {
        return Err(Error::Config(
            "--missing-rate needs complete data, but the dataset already has a mask".into(),
        ));
    }
    if let Some(out) = &plan.out {
        fs::create_dir_all(out)?;
    }

    let rates: Vec<Option<f64>> = if plan.missing_rates.is_empty() {
        vec![None]
    } else {
        plan.missing_rates.iter().copied().map(Some).collect()
    };
    let mut summary = Vec::with_capacity(rates.len());
    for rate in rates {
        let mut finals = Vec::new();
        for repeat in 0..plan.repeats {
            let seed = plan.session.seed.wrapping_add(repeat as u64);
            let data = match rate {
                Some(r) => apply_missing(
                    &base,
                    &MissingSpec {
                        rate: r,
                        seed,
                        alpha: plan.dirichlet_alpha,
                    },
                )?,
                None => base.clone(),
            };
            let cfg = SessionConfig { seed, ..session.clone() };
            let outcome = run_session_with(&cfg, &data, |record| {
                let line = RecordLine {
                    missing_rate: rate,
                    repeat,
                    seed,
                    record,
                };
                serde_json::to_writer(&mut *records, &line).map_err(io::Error::from)?;
                records.write_all(b"\n")?;
                Ok(())
            })?;
            records.flush()?;
            if let Some(out) = &plan.out {
                write_labels(&outcome.labels, &out.join(format!("labels_{}_{repeat}.csv", rate_tag(rate))))?;
            }
            if let Some(s) = outcome.final_metrics() {
                finals.push(s);
            }
        }
        let stats = mean_std(&finals);
        summary.push(SummaryRow {
            missing_rate: rate,
            runs: plan.repeats,
            mean: stats.map(|s| s.0),
            std: stats.map(|s| s.1),
        });
    }
    Ok(summary)
}

pub fn write_summary_csv(rows: &[SummaryRow], ablation: Ablation, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "missing_rate,ablation,runs,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std")?;
    for r in rows {
        let rate = r.missing_rate.map_or(String::new(), |v| v.to_string());
        let cells = match (r.mean, r.std) {
            (Some(m), Some(s)) => format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.acc, s.acc, m.nmi, s.nmi, m.ari, s.ari
            ),
            _ => ",,,,,".to_string(),
        };
        writeln!(w, "{rate},{},{},{cells}", ablation.as_str(), r.runs)?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let plan = RunPlan::resolve(args)?;
    let rows = match &plan.out {
        Some(out) => {
            fs::create_dir_all(out)?;
            let mut w = BufWriter::new(File::create(out.join("records.jsonl"))?);
            let rows = run_plan(&plan, &mut w)?;
            w.flush()?;
            let mut s = BufWriter::new(File::create(out.join("summary.csv"))?);
            write_summary_csv(&rows, plan.session.ablation, &mut s)?;
            s.flush()?;
            rows
        }
        None => run_plan(&plan, &mut io::stdout().lock())?,
    };
    for r in &rows {
        let tag = r.missing_rate.map_or("as loaded".to_string(), |v| format!("missing rate {v}"));
        match (r.mean, r.std) {
            (Some(m), Some(s)) => eprintln!(
                "{tag}: ACC {:.4} ± {:.4}  NMI {:.4} ± {:.4}  ARI {:.4} ± {:.4}  ({} runs)",
                m.acc, s.acc, m.nmi, s.nmi, m.ari, s.ari, r.runs
            ),
            _ => eprintln!("{tag}: {} runs, no labels to score", r.runs),
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut data = synth_blobs(&SynthSpec {
        samples: args.samples,
        clusters: args.clusters,
        dims: args.dims.clone(),
        separation: args.separation,
        seed: args.seed,
    })?;
    if let Some(rate) = args.missing_rate {
        data = apply_missing(
            &data,
            &MissingSpec {
                rate,
                seed: args.seed,
                alpha: args.dirichlet_alpha,
            },
        )?;
    }
    write_views(&data, &args.out)?;
    eprintln!(
        "wrote {} samples, {} views ({} complete) to {}",
        data.n(),
        data.num_views(),
        data.complete_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<Scores> {
    let truth_path = match (&args.truth, &args.data_dir) {
        (Some(t), _) => t.clone(),
        (None, Some(d)) => d.join("labels.csv"),
        (None, None) => return Err(Error::Config("pass --truth or --data-dir".into())),
    };
    let pred = read_labels(&args.pred)?;
    let truth = read_labels(&truth_path)?;
    evaluate(&pred, &truth)
}

/// Dispatch a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => {
            let s = cmd_eval(a)?;
            println!("{}", serde_json::to_string(&s).map_err(io::Error::from)?);
            Ok(())
        }
    }
}
