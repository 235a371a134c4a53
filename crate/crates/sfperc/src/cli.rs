//! Command-line front end: flag parsing, config-file merging, deterministic
//! parallel execution, and emission of plot-ready tables plus verdict
//! reports.
//!
//! Exit status: 0 when every gating verdict passes, 1 on any failure, 2 when
//! the only blemishes are inconclusive verdicts, 64 for usage errors, 74 for
//! filesystem errors. Reruns with the same configuration produce
//! byte-identical outputs regardless of worker count, because trials are
//! collected in index order and neither the worker count nor the output path
//! is echoed into the files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::experiment::{
    birth_scaling_run, c0_shares, gen1_scaled_column, percolation_rung, spacing_inputs, top_ranks,
    yule_weight_trials, ExperimentError, TrialSummary, GEN1_SUMMARY_LEN,
};
use crate::percolation::{decompose, p_of_n, percolate};
use crate::rng::trial_rng;
use crate::stats::{
    age_vs_size_fraction_from_ranks, ks_test, limit_constants, mean_se, poisson_spacing_check,
    size_marginal_check_scaled, KsReference, LimitLaw, StatReport, Verdict, DEFAULT_LEVEL,
};
use crate::tree::{grow_timed_tree, grow_tree, GrowthParams};

const DEFAULT_BETA: f64 = 0.0;
const DEFAULT_C: f64 = std::f64::consts::LN_2;
const DEFAULT_N: usize = 10_000;
const DEFAULT_TRIALS: usize = 100;
const DEFAULT_K: usize = 10;
const DEFAULT_RETENTION: [f64; 3] = [0.9, 0.99, 0.999];

/// Mean growth-curve error accepted by `yule-check`.
const YULE_REL_TOL: f64 = 0.05;
/// Mutation indices checked by `bp-limits`.
const BP_I_MAX: usize = 3;
/// `spacings` asks whether the `AGE_TOP` largest non-root clusters are among
/// the `AGE_OLDEST` oldest in at least `AGE_MIN_FRACTION` of trials.
const AGE_TOP: usize = 2;
const AGE_OLDEST: u32 = 10;
const AGE_MIN_FRACTION: f64 = 0.95;
/// Generation-1 size marginals checked by `spacings`.
const MARGINAL_MAX_INDEX: usize = 3;

/// In-flight trial memory the parallel fan-out may claim.
const MEM_BUDGET_BYTES: u64 = 2 << 30;
const BYTES_PER_VERTEX: u64 = 12;

const EX_USAGE: u8 = 64;
const EX_IOERR: u8 = 74;
const EX_SOFTWARE: u8 = 70;

/// Formats a real with 17 significant digits, enough to round-trip f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] ExperimentError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EX_USAGE,
            CliError::Io { .. } => EX_IOERR,
            CliError::Run(_) => EX_SOFTWARE,
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutFormat {
    Csv,
    Json,
}

impl OutFormat {
    fn extension(self) -> &'static str {
        match self {
            OutFormat::Csv => "csv",
            OutFormat::Json => "jsonl",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sfperc",
    version,
    about = "Monte Carlo laboratory for bond percolation on preferential-attachment trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow trees and write one parent per line.
    Grow {
        #[command(flatten)]
        common: CommonArgs,
        /// Also record continuous birth times ("parent time" per line).
        #[arg(long)]
        timed: bool,
    },
    /// Grow, percolate, and write one row per cluster.
    Percolate {
        #[command(flatten)]
        common: CommonArgs,
        /// Fixed retention probability instead of 1 - c / ln n.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Giant-cluster share and oldest-cluster spacing laws across a size ladder.
    ClusterLimits {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Mutation birth-time limit laws across a retention ladder.
    BpLimits {
        #[command(flatten)]
        common: CommonArgs,
        /// Retention probability (repeatable, strictly increasing ladder).
        #[arg(long = "p")]
        p: Vec<f64>,
    },
    /// Mean tree weight against the exponential growth curve.
    YuleCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Spacing, age-ordering, and size-marginal checks for the oldest clusters.
    Spacings {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Default, clap::Args)]
struct CommonArgs {
    /// Attachment strength offset; must exceed -1.
    #[arg(long)]
    beta: Option<f64>,
    /// Percolation constant in p(n) = 1 - c / ln n.
    #[arg(long)]
    c: Option<f64>,
    /// Tree size; repeat for a strictly increasing ladder.
    #[arg(long = "n")]
    n: Vec<usize>,
    /// Independent trials per ladder rung.
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial t draws from stream (seed, t).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of largest non-root clusters tracked per trial.
    #[arg(long)]
    k: Option<usize>,
    /// Significance level for statistical verdicts.
    #[arg(long)]
    level: Option<f64>,
    /// Output stem; tables land in <out>_trials.*, <out>_aggregate.*,
    /// <out>_reports.jsonl (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format; reports are always JSON lines.
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// Worker threads; env SFPERC_JOBS is the default, and a memory guard
    /// caps the effective count.
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON file supplying defaults for any flag; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Optional-field mirror of the flag set, read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<String>,
    beta: Option<f64>,
    c: Option<f64>,
    n: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    k: Option<usize>,
    level: Option<f64>,
    out: Option<PathBuf>,
    format: Option<OutFormat>,
    jobs: Option<usize>,
    retention: Option<Vec<f64>>,
    p: Option<f64>,
    timed: Option<bool>,
}

/// Fully resolved configuration. The serialized form is echoed into every
/// table header; `out` and `jobs` are deliberately excluded so the echo (and
/// hence the file bytes) depend only on what was computed.
#[derive(Debug, Clone, Serialize)]
struct Effective {
    command: &'static str,
    beta: f64,
    c: f64,
    n: Vec<usize>,
    trials: usize,
    seed: u64,
    k: usize,
    level: f64,
    format: OutFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    retention: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timed: Option<bool>,
    #[serde(skip)]
    out: Option<PathBuf>,
    #[serde(skip)]
    jobs: usize,
}

fn jobs_from_env() -> Result<Option<usize>, CliError> {
    let Ok(raw) = std::env::var("SFPERC_JOBS") else {
        return Ok(None);
    };
    match raw.trim().parse::<usize>() {
        Ok(j) if j >= 1 => Ok(Some(j)),
        _ => Err(CliError::Usage(format!(
            "SFPERC_JOBS must be a positive integer, got {raw:?}"
        ))),
    }
}

fn load_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid config file: {e}", path.display())))
}

fn merge(
    command: &'static str,
    args: CommonArgs,
    timed_flag: bool,
    p_flag: Option<f64>,
    retention_flags: &[f64],
) -> Result<Effective, CliError> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?,
        None => ConfigFile::default(),
    };
    if let Some(cmd) = &file.command {
        if cmd != command {
            return Err(CliError::Usage(format!(
                "config file is for command {cmd:?}, but {command:?} was invoked"
            )));
        }
    }
    let n = if !args.n.is_empty() {
        args.n
    } else {
        file.n.unwrap_or_else(|| vec![DEFAULT_N])
    };
    let jobs = match args.jobs.or(jobs_from_env()?).or(file.jobs) {
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |v| v.get()),
    };
    Ok(Effective {
        command,
        beta: args.beta.or(file.beta).unwrap_or(DEFAULT_BETA),
        c: args.c.or(file.c).unwrap_or(DEFAULT_C),
        n,
        trials: args.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS),
        seed: args.seed.or(file.seed).unwrap_or(0),
        k: args.k.or(file.k).unwrap_or(DEFAULT_K),
        level: args.level.or(file.level).unwrap_or(DEFAULT_LEVEL),
        format: args.format.or(file.format).unwrap_or(OutFormat::Json),
        retention: (command == "bp-limits").then(|| {
            if retention_flags.is_empty() {
                file.retention
                    .clone()
                    .unwrap_or_else(|| DEFAULT_RETENTION.to_vec())
            } else {
                retention_flags.to_vec()
            }
        }),
        p: (command == "percolate")
            .then(|| p_flag.or(file.p))
            .flatten(),
        timed: (command == "grow").then(|| timed_flag || file.timed.unwrap_or(false)),
        out: args.out.or(file.out),
        jobs: jobs.max(1),
    })
}

fn validate_base(eff: &Effective) -> Result<(), CliError> {
    if eff.trials < 1 {
        return Err(CliError::Usage("at least one trial is required".into()));
    }
    if eff.k < 1 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    if !(eff.level > 0.0 && eff.level < 1.0) {
        return Err(CliError::Usage(format!(
            "level must lie strictly between 0 and 1, got {}",
            eff.level
        )));
    }
    if eff.n.is_empty() {
        return Err(CliError::Usage("at least one --n is required".into()));
    }
    if !eff.n.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::Usage(format!(
            "the size ladder must be strictly increasing, got {:?}",
            eff.n
        )));
    }
    Ok(())
}

/// Percolation commands additionally need every rung to admit a retention
/// probability in (0, 1], which the smallest rung decides.
fn validate_percolation(eff: &Effective) -> Result<(), CliError> {
    GrowthParams::new(eff.beta, eff.n[0]).map_err(usage)?;
    p_of_n(eff.c, eff.n[0]).map_err(usage)?;
    Ok(())
}

fn single_n(eff: &Effective) -> Result<usize, CliError> {
    match eff.n.as_slice() {
        [n] => Ok(*n),
        _ => Err(CliError::Usage(format!(
            "{} takes a single --n, got {:?}",
            eff.command, eff.n
        ))),
    }
}

/// Caps the worker count so in-flight trials stay within the memory budget.
fn effective_jobs(requested: usize, n_max: usize) -> usize {
    let per_trial = (n_max as u64)
        .saturating_add(1)
        .saturating_mul(BYTES_PER_VERTEX)
        .max(1);
    let cap = (MEM_BUDGET_BYTES / per_trial).clamp(1, 4096) as usize;
    requested.clamp(1, cap)
}

fn build_pool(eff: &Effective, n_max: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(effective_jobs(eff.jobs, n_max))
        .build()
        .expect("building a private thread pool cannot fail")
}

pub fn main_entry() -> ExitCode {
    run_from(std::env::args_os())
}

/// Parses and runs one invocation; the process exit code implements the
/// verdict contract.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let benign = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if benign {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EX_USAGE)
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("sfperc: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Grow { common, timed } => {
            let eff = merge("grow", common, timed, None, &[])?;
            validate_base(&eff)?;
            let n = single_n(&eff)?;
            let params = GrowthParams::new(eff.beta, n).map_err(usage)?;
            let pool = build_pool(&eff, n);
            let artifacts = pool.install(|| render_trees(&eff, &params));
            write_grow(&eff, &artifacts)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Percolate { common, p } => {
            let eff = merge("percolate", common, false, p, &[])?;
            validate_base(&eff)?;
            let n = single_n(&eff)?;
            let params = GrowthParams::new(eff.beta, n).map_err(usage)?;
            let p = match eff.p {
                Some(v) if v > 0.0 && v <= 1.0 => v,
                Some(v) => {
                    return Err(CliError::Usage(format!(
                        "retention probability must lie in (0, 1], got {v}"
                    )))
                }
                None => p_of_n(eff.c, n).map_err(usage)?,
            };
            let pool = build_pool(&eff, n);
            let records = pool.install(|| render_clusters(&eff, &params, p))?;
            write_outputs(
                &eff,
                &Tables {
                    records_suffix: "clusters",
                    records,
                    aggregate: None,
                    reports: None,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ClusterLimits { common } => {
            let eff = merge("cluster-limits", common, false, None, &[])?;
            validate_base(&eff)?;
            validate_percolation(&eff)?;
            let pool = build_pool(&eff, *eff.n.last().unwrap());
            let (tables, gating) = pool.install(|| run_cluster_limits(&eff))?;
            write_outputs(&eff, &tables)?;
            Ok(exit_for(&gating))
        }
        Command::Spacings { common } => {
            let eff = merge("spacings", common, false, None, &[])?;
            validate_base(&eff)?;
            validate_percolation(&eff)?;
            let pool = build_pool(&eff, *eff.n.last().unwrap());
            let (tables, gating) = pool.install(|| run_spacings(&eff))?;
            write_outputs(&eff, &tables)?;
            Ok(exit_for(&gating))
        }
        Command::YuleCheck { common } => {
            let eff = merge("yule-check", common, false, None, &[])?;
            validate_base(&eff)?;
            GrowthParams::new(eff.beta, eff.n[0]).map_err(usage)?;
            let pool = build_pool(&eff, *eff.n.last().unwrap());
            let (tables, gating) = pool.install(|| run_yule_check(&eff))?;
            write_outputs(&eff, &tables)?;
            Ok(exit_for(&gating))
        }
        Command::BpLimits { common, p } => {
            let eff = merge("bp-limits", common, false, None, &p)?;
            validate_base(&eff)?;
            let ps = eff.retention.clone().expect("set for bp-limits");
            if !ps.windows(2).all(|w| w[0] < w[1]) {
                return Err(CliError::Usage(format!(
                    "the retention ladder must be strictly increasing, got {ps:?}"
                )));
            }
            for &pv in &ps {
                if !(pv > 0.0 && pv < 1.0) {
                    return Err(CliError::Usage(format!(
                        "retention probabilities must lie strictly between 0 and 1, got {pv}"
                    )));
                }
            }
            let pool = build_pool(&eff, 0);
            let (tables, gating) = pool.install(|| run_bp_limits(&eff, &ps))?;
            write_outputs(&eff, &tables)?;
            Ok(exit_for(&gating))
        }
    }
}

fn exit_for(gating: &[Verdict]) -> ExitCode {
    if gating.contains(&Verdict::Fail) {
        ExitCode::from(1)
    } else if gating.contains(&Verdict::Inconclusive) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

// ---------------------------------------------------------------------------
// Command bodies
// ---------------------------------------------------------------------------

fn render_trees(eff: &Effective, params: &GrowthParams) -> Vec<String> {
    use rayon::prelude::*;
    (0..eff.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(eff.seed, t);
            let mut buf = Vec::new();
            if eff.timed == Some(true) {
                grow_timed_tree(params, &mut rng)
                    .write_parents_and_times(&mut buf)
                    .expect("writing to memory cannot fail");
            } else {
                grow_tree(params, &mut rng)
                    .write_parents(&mut buf)
                    .expect("writing to memory cannot fail");
            }
            String::from_utf8(buf).expect("parent arrays are ascii")
        })
        .collect()
}

fn write_grow(eff: &Effective, artifacts: &[String]) -> Result<(), CliError> {
    match &eff.out {
        Some(path) if artifacts.len() == 1 => write_text(path, &artifacts[0]),
        Some(path) => {
            for (t, content) in artifacts.iter().enumerate() {
                write_text(&suffixed(path, &format!(".{t}")), content)?;
            }
            Ok(())
        }
        None => {
            let mut out = String::new();
            for (t, content) in artifacts.iter().enumerate() {
                let _ = writeln!(out, "# trial {t}");
                out.push_str(content);
            }
            print!("{out}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct ClusterRow {
    trial: u64,
    n: usize,
    cluster_index: u32,
    birth_rank: u32,
    generation: u32,
    size: u64,
    half_edges: u32,
    y_value: f64,
    root_vertex: u32,
}

fn render_clusters(eff: &Effective, params: &GrowthParams, p: f64) -> Result<String, CliError> {
    use rayon::prelude::*;
    let per_trial: Vec<Vec<ClusterRow>> = (0..eff.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(eff.seed, t);
            let tree = grow_tree(params, &mut rng);
            let marks = percolate(&tree, p, &mut rng).map_err(ExperimentError::from)?;
            let decomp = decompose(&tree, &marks, eff.beta).map_err(ExperimentError::from)?;
            Ok(decomp
                .clusters()
                .iter()
                .enumerate()
                .map(|(i, c)| ClusterRow {
                    trial: t,
                    n: params.n(),
                    cluster_index: i as u32,
                    birth_rank: c.birth_rank,
                    generation: c.generation,
                    size: c.size,
                    half_edges: c.half_edges,
                    y_value: c.y_value,
                    root_vertex: c.root_vertex,
                })
                .collect())
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut out = config_line(eff);
    match eff.format {
        OutFormat::Json => {
            for row in per_trial.iter().flatten() {
                out.push_str(&to_json_line(row));
            }
        }
        OutFormat::Csv => {
            out.push_str(
                "trial,n,cluster_index,birth_rank,generation,size,half_edges,y_value,root_vertex\n",
            );
            for row in per_trial.iter().flatten() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    row.trial,
                    row.n,
                    row.cluster_index,
                    row.birth_rank,
                    row.generation,
                    row.size,
                    row.half_edges,
                    fmt_f64(row.y_value),
                    row.root_vertex
                );
            }
        }
    }
    Ok(out)
}

fn run_cluster_limits(eff: &Effective) -> Result<(Tables, Vec<Verdict>), CliError> {
    let law = limit_constants(eff.beta, eff.c);
    let mut summaries = Vec::new();
    let mut agg = Vec::new();
    let mut reports = Vec::new();
    let mut gating = Vec::new();
    let mut rel_errors = Vec::new();

    for &n in &eff.n {
        let sums = percolation_rung(eff.beta, eff.c, n, eff.trials, eff.seed, eff.k)?;

        let (mean, se) = mean_se(&c0_shares(&sums));
        let c0_row = AggregateRow::sized("c0_over_n", n, sums.len(), mean, se, law.giant_fraction);
        rel_errors.push(c0_row.rel_error);
        agg.push(c0_row);

        let inverses: Vec<f64> = sums
            .iter()
            .filter_map(|s| s.top.first().map(|&(x, _)| 1.0 / x))
            .collect();
        if !inverses.is_empty() {
            let (m, s) = mean_se(&inverses);
            agg.push(AggregateRow::sized(
                "inv_top1",
                n,
                inverses.len(),
                m,
                s,
                1.0 / law.intensity_const,
            ));
        }

        let rep = spacing_report(&sums, &law, eff.k, eff.level, n);
        gating.push(rep.verdict);
        reports.push(rep);
        summaries.extend(sums);
    }

    if eff.n.len() >= 2 {
        let trend = trend_report(
            "c0_rel_error_trend",
            &rel_errors,
            serde_json::json!({ "n": eff.n }),
        );
        gating.push(trend.verdict);
        reports.push(trend);
    }

    Ok((
        Tables {
            records_suffix: "trials",
            records: summaries_table(eff, &summaries),
            aggregate: Some(aggregate_table(eff, &agg)),
            reports: Some(reports_doc(eff, &reports)),
        },
        gating,
    ))
}

fn run_spacings(eff: &Effective) -> Result<(Tables, Vec<Verdict>), CliError> {
    let law = limit_constants(eff.beta, eff.c);
    let mut summaries = Vec::new();
    let mut agg = Vec::new();
    let mut reports = Vec::new();
    let mut gating = Vec::new();

    for &n in &eff.n {
        let sums = percolation_rung(eff.beta, eff.c, n, eff.trials, eff.seed, eff.k)?;

        let (mean, se) = mean_se(&c0_shares(&sums));
        agg.push(AggregateRow::sized(
            "c0_over_n",
            n,
            sums.len(),
            mean,
            se,
            law.giant_fraction,
        ));

        let rep = spacing_report(&sums, &law, eff.k, eff.level, n);
        gating.push(rep.verdict);
        reports.push(rep);

        let age = age_report(&sums, eff.k, n);
        gating.push(age.verdict);
        reports.push(age);

        for i in 1..=MARGINAL_MAX_INDEX {
            let column = gen1_scaled_column(&sums, i);
            let mut rep = match size_marginal_check_scaled(&column, &law, i, eff.level) {
                Ok(r) => r,
                Err(e) => {
                    StatReport::inconclusive("gen1_size_marginal", column.len(), e.to_string())
                }
            };
            add_param(&mut rep, "n", serde_json::json!(n));
            gating.push(rep.verdict);
            reports.push(rep);
        }
        summaries.extend(sums);
    }

    Ok((
        Tables {
            records_suffix: "trials",
            records: summaries_table(eff, &summaries),
            aggregate: Some(aggregate_table(eff, &agg)),
            reports: Some(reports_doc(eff, &reports)),
        },
        gating,
    ))
}

#[derive(Debug, Serialize)]
struct YuleTrialRow {
    trial: u64,
    n: usize,
    time: f64,
    weight: f64,
}

fn run_yule_check(eff: &Effective) -> Result<(Tables, Vec<Verdict>), CliError> {
    let mut rows = Vec::new();
    let mut agg = Vec::new();
    let mut reports = Vec::new();
    let mut gating = Vec::new();

    for &n in &eff.n {
        let t = (n as f64).ln() / (2.0 + eff.beta);
        let samples = yule_weight_trials(eff.beta, t, eff.trials, eff.seed)?;
        let (mean, se) = mean_se(&samples);
        let theory = 2.0 * (1.0 + eff.beta) * ((2.0 + eff.beta) * t).exp();
        let rel = (mean - theory).abs() / theory;

        let verdict = if rel <= YULE_REL_TOL {
            Verdict::Pass
        } else if !se.is_finite() || (mean - theory).abs() - 3.0 * se <= YULE_REL_TOL * theory {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        reports.push(StatReport {
            test: "growth_curve_mean".to_string(),
            statistic: rel,
            p_value: f64::NAN,
            n_samples: samples.len(),
            verdict,
            params: serde_json::json!({
                "n": n, "time": t, "theory": theory, "tolerance": YULE_REL_TOL,
            }),
            details: format!("mean tree weight {mean} vs {theory} at time {t}"),
        });
        gating.push(verdict);

        agg.push(AggregateRow::sized("yule_weight", n, samples.len(), mean, se, theory).at(t));
        rows.extend(samples.iter().enumerate().map(|(i, &w)| YuleTrialRow {
            trial: i as u64,
            n,
            time: t,
            weight: w,
        }));
    }

    let records = simple_table(
        eff,
        "trial,n,time,weight",
        &rows,
        |row| format!("{},{},{},{}", row.trial, row.n, fmt_f64(row.time), fmt_f64(row.weight)),
    );
    Ok((
        Tables {
            records_suffix: "trials",
            records,
            aggregate: Some(aggregate_table(eff, &agg)),
            reports: Some(reports_doc(eff, &reports)),
        },
        gating,
    ))
}

#[derive(Debug, Serialize)]
struct BpTrialRow {
    trial: u64,
    retention_p: f64,
    rescaled: Vec<f64>,
}

fn run_bp_limits(eff: &Effective, ps: &[f64]) -> Result<(Tables, Vec<Verdict>), CliError> {
    let mut rows = Vec::new();
    let mut agg = Vec::new();
    let mut reports = Vec::new();
    let mut gating = Vec::new();
    let mut distances = Vec::new();

    for (idx, &p) in ps.iter().enumerate() {
        let run = birth_scaling_run(eff.beta, p, BP_I_MAX, eff.trials, eff.seed)?;
        rows.extend(run.per_trial.iter().enumerate().map(|(t, r)| BpTrialRow {
            trial: t as u64,
            retention_p: p,
            rescaled: r.clone(),
        }));

        for i in 1..=BP_I_MAX {
            let column = run.column(i);
            let reference = KsReference::Gamma {
                shape: i as f64,
                scale: 1.0,
            };
            let mut rep = match ks_test(&column, &reference, eff.level) {
                Ok(r) => r,
                Err(e) => {
                    StatReport::inconclusive("rescaled_birth_ks", column.len(), e.to_string())
                }
            };
            add_param(&mut rep, "retention_p", serde_json::json!(p));
            add_param(&mut rep, "mutation_index", serde_json::json!(i));
            add_param(&mut rep, "horizon", serde_json::json!(run.horizon));
            if i == 1 {
                distances.push(rep.statistic);
                // Only the limit point of the ladder is expected to pass at
                // the nominal level; earlier rungs feed the trend check.
                if idx == ps.len() - 1 {
                    gating.push(rep.verdict);
                }
                let (m, s) = mean_se(&column);
                agg.push(AggregateRow::retention(
                    "rescaled_birth_1",
                    p,
                    column.len(),
                    m,
                    s,
                    1.0,
                ));
            }
            reports.push(rep);
        }
    }

    if ps.len() >= 2 {
        let trend = trend_report(
            "rescaled_birth_ks_trend",
            &distances,
            serde_json::json!({ "retention": ps, "mutation_index": 1 }),
        );
        gating.push(trend.verdict);
        reports.push(trend);
    }

    let records = simple_table(
        eff,
        &bp_csv_header(),
        &rows,
        |row| {
            let mut line = format!("{},{}", row.trial, fmt_f64(row.retention_p));
            for i in 0..BP_I_MAX {
                match row.rescaled.get(i) {
                    Some(&x) => {
                        let _ = write!(line, ",{}", fmt_f64(x));
                    }
                    None => line.push(','),
                }
            }
            line
        },
    );
    Ok((
        Tables {
            records_suffix: "trials",
            records,
            aggregate: Some(aggregate_table(eff, &agg)),
            reports: Some(reports_doc(eff, &reports)),
        },
        gating,
    ))
}

fn bp_csv_header() -> String {
    let mut header = "trial,retention_p".to_string();
    for i in 1..=BP_I_MAX {
        let _ = write!(header, ",rescaled_{i}");
    }
    header
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

fn spacing_report(
    sums: &[TrialSummary],
    law: &LimitLaw,
    k: usize,
    level: f64,
    n: usize,
) -> StatReport {
    let mut rep = match poisson_spacing_check(&spacing_inputs(sums), law, k, level) {
        Ok(r) => r,
        Err(e) => StatReport::inconclusive("top_cluster_spacings", sums.len(), e.to_string()),
    };
    add_param(&mut rep, "n", serde_json::json!(n));
    rep
}

fn age_report(sums: &[TrialSummary], k: usize, n: usize) -> StatReport {
    let top = AGE_TOP.min(k);
    let fraction = age_vs_size_fraction_from_ranks(&top_ranks(sums), top, AGE_OLDEST);
    // Old age manifests only asymptotically, so a shortfall is evidence of
    // being far from the limit rather than of a wrong law: never Fail.
    let verdict = if fraction >= AGE_MIN_FRACTION {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    StatReport {
        test: "oldest_among_largest".to_string(),
        statistic: fraction,
        p_value: f64::NAN,
        n_samples: sums.len(),
        verdict,
        params: serde_json::json!({
            "n": n, "top": top, "oldest": AGE_OLDEST, "min_fraction": AGE_MIN_FRACTION,
        }),
        details: format!(
            "fraction of trials whose {top} largest non-root clusters all rank \
             among the {AGE_OLDEST} oldest"
        ),
    }
}

/// Pass when `values` never increases along the ladder; a single point is
/// inconclusive.
fn trend_report(test: &str, values: &[f64], params: serde_json::Value) -> StatReport {
    let finite = values.iter().all(|v| v.is_finite());
    let worst = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let verdict = if values.len() < 2 || !finite {
        Verdict::Inconclusive
    } else if worst <= 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    StatReport {
        test: test.to_string(),
        statistic: if verdict == Verdict::Inconclusive {
            f64::NAN
        } else {
            worst
        },
        p_value: f64::NAN,
        n_samples: values.len(),
        verdict,
        params,
        details: format!("sequence {values:?}; pass requires a nonincreasing sequence"),
    }
}

fn add_param(rep: &mut StatReport, key: &str, value: serde_json::Value) {
    match &mut rep.params {
        serde_json::Value::Object(map) => {
            map.insert(key.to_string(), value);
        }
        other => *other = serde_json::json!({ key: value }),
    }
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct AggregateRow {
    quantity: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retention_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
    trials: usize,
    mean: f64,
    /// Absent (JSON null, empty CSV cell) when fewer than two trials exist.
    stderr: Option<f64>,
    theory: f64,
    rel_error: f64,
}

impl AggregateRow {
    fn new(quantity: &'static str, trials: usize, mean: f64, se: f64, theory: f64) -> Self {
        AggregateRow {
            quantity,
            n: None,
            retention_p: None,
            time: None,
            trials,
            mean,
            stderr: se.is_finite().then_some(se),
            theory,
            rel_error: (mean - theory).abs() / theory.abs(),
        }
    }

    fn sized(quantity: &'static str, n: usize, trials: usize, mean: f64, se: f64, theory: f64) -> Self {
        AggregateRow {
            n: Some(n),
            ..AggregateRow::new(quantity, trials, mean, se, theory)
        }
    }

    fn retention(quantity: &'static str, p: f64, trials: usize, mean: f64, se: f64, theory: f64) -> Self {
        AggregateRow {
            retention_p: Some(p),
            ..AggregateRow::new(quantity, trials, mean, se, theory)
        }
    }

    fn at(mut self, time: f64) -> Self {
        self.time = Some(time);
        self
    }
}

struct Tables {
    records_suffix: &'static str,
    records: String,
    aggregate: Option<String>,
    reports: Option<String>,
}

fn config_line(eff: &Effective) -> String {
    let json = serde_json::to_string(eff).expect("config serialization cannot fail");
    match eff.format {
        OutFormat::Json => format!("{{\"config\":{json}}}\n"),
        OutFormat::Csv => format!("# config {json}\n"),
    }
}

fn to_json_line(value: &impl Serialize) -> String {
    let mut line = serde_json::to_string(value).expect("row serialization cannot fail");
    line.push('\n');
    line
}

/// Builds a table whose rows already know their CSV rendering.
fn simple_table<R: Serialize>(
    eff: &Effective,
    csv_header: &str,
    rows: &[R],
    csv_row: impl Fn(&R) -> String,
) -> String {
    let mut out = config_line(eff);
    match eff.format {
        OutFormat::Json => {
            for row in rows {
                out.push_str(&to_json_line(row));
            }
        }
        OutFormat::Csv => {
            out.push_str(csv_header);
            out.push('\n');
            for row in rows {
                out.push_str(&csv_row(row));
                out.push('\n');
            }
        }
    }
    out
}

fn summaries_table(eff: &Effective, sums: &[TrialSummary]) -> String {
    let mut out = config_line(eff);
    match eff.format {
        OutFormat::Json => {
            for s in sums {
                out.push_str(&to_json_line(s));
            }
        }
        OutFormat::Csv => {
            out.push_str("trial,n,c0_over_n,delta,n_clusters_nonroot,n_generation1");
            for i in 1..=eff.k {
                let _ = write!(out, ",top{i}_scaled,top{i}_rank");
            }
            for i in 1..=GEN1_SUMMARY_LEN {
                let _ = write!(out, ",gen1_{i}");
            }
            out.push('\n');
            for s in sums {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{}",
                    s.trial,
                    s.n,
                    fmt_f64(s.c0_over_n),
                    s.delta,
                    s.n_clusters_nonroot,
                    s.n_generation1
                );
                for i in 0..eff.k {
                    match s.top.get(i) {
                        Some(&(x, rank)) => {
                            let _ = write!(out, ",{},{rank}", fmt_f64(x));
                        }
                        None => out.push_str(",,"),
                    }
                }
                for i in 0..GEN1_SUMMARY_LEN {
                    match s.gen1_scaled.get(i) {
                        Some(&x) => {
                            let _ = write!(out, ",{}", fmt_f64(x));
                        }
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

fn aggregate_table(eff: &Effective, rows: &[AggregateRow]) -> String {
    simple_table(
        eff,
        "quantity,n,retention_p,time,trials,mean,stderr,theory,rel_error",
        rows,
        |r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.quantity,
                r.n.map(|v| v.to_string()).unwrap_or_default(),
                r.retention_p.map(fmt_f64).unwrap_or_default(),
                r.time.map(fmt_f64).unwrap_or_default(),
                r.trials,
                fmt_f64(r.mean),
                r.stderr.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.theory),
                fmt_f64(r.rel_error)
            )
        },
    )
}

/// Reports are always JSON lines regardless of the table format.
fn reports_doc(eff: &Effective, reports: &[StatReport]) -> String {
    let json = serde_json::to_string(eff).expect("config serialization cannot fail");
    let mut out = format!("{{\"config\":{json}}}\n");
    for rep in reports {
        out.push_str(&rep.to_json());
        out.push('\n');
    }
    out
}

fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_outputs(eff: &Effective, tables: &Tables) -> Result<(), CliError> {
    let ext = eff.format.extension();
    match &eff.out {
        Some(stem) => {
            write_text(
                &suffixed(stem, &format!("_{}.{ext}", tables.records_suffix)),
                &tables.records,
            )?;
            if let Some(agg) = &tables.aggregate {
                write_text(&suffixed(stem, &format!("_aggregate.{ext}")), agg)?;
            }
            if let Some(rep) = &tables.reports {
                write_text(&suffixed(stem, "_reports.jsonl"), rep)?;
            }
            Ok(())
        }
        None => {
            print!("{}", tables.records);
            if let Some(agg) = &tables.aggregate {
                print!("{agg}");
            }
            if let Some(rep) = &tables.reports {
                print!("{rep}");
            }
            Ok(())
        }
    }
}
