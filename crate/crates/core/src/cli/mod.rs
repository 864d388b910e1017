//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 resource cap, 3 I/O error.
//! CSV output uses shortest round-trip decimals; tables on stdout round to
//! five decimals.

pub mod config;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnose::{self, ConditionOptions, IndependenceOptions, Verdict};
use crate::error::Error;
use crate::exact::{self, ExactOptions};
use crate::ingest::{self, SyntheticModel};
use crate::metrics::{self, MetricsReport};
use crate::model::{AdvantageSequence, LabelSpace};
use crate::simulate;
use crate::vote::{Rule, TiePolicy};

pub use config::RunConfig;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CONDORCET_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::StateCap { .. } => 2,
            Error::Io { .. } => 3,
            Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "condorcet", version, about = "Majority-vote ensemble accuracy and independence diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact accuracy of an independent ensemble
    Exact(ExactArgs),
    /// Monte Carlo accuracy over n and rho grids
    Simulate(SimulateArgs),
    /// Monte Carlo accuracy as the ensemble grows (advantage schedules)
    Convergence(ConvergenceArgs),
    /// Per-model and bagged metrics of a predictions file
    Metrics(MetricsArgs),
    /// Condition checks and independence verdict for a predictions file
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic predictions file
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    /// `<value>`, `log`, `power:<alpha>` or `list:<a1,a2,...>`
    #[arg(long)]
    pub advantage: String,
    #[arg(long, default_value = "uniform-random")]
    pub tie_policy: String,
    #[arg(long, default_value = "plurality")]
    pub rule: String,
    #[arg(long)]
    pub state_cap: Option<u128>,
    /// Also write `n,k,rule,tie_policy,accuracy,single,difference` CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EnsembleFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub advantage: Option<String>,
    #[arg(long)]
    pub tie_policy: Option<String>,
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated ensemble sizes
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: EnsembleFlags,
    /// Comma-separated dependence weights
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: EnsembleFlags,
}

#[derive(Debug, Args, Default)]
pub struct DataFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated class names (default Negative,Neutral,Positive)
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Models to bag (default: every model column)
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long)]
    pub tie_policy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub min_records: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub rows: usize,
    /// Comma-separated `[name:]a=<advantage>` or `[name:]acc=<accuracy>`
    #[arg(long)]
    pub models: String,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, value_delimiter = ',')]
    pub class_probs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one invocation, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let text = match cli.command {
        Command::Exact(args) => cmd_exact(&args)?,
        Command::Simulate(args) => cmd_simulate(&args)?,
        Command::Convergence(args) => cmd_convergence(&args)?,
        Command::Metrics(args) => cmd_metrics(&args)?,
        Command::Diagnose(args) => cmd_diagnose(&args)?,
        Command::Generate(args) => cmd_generate(&args)?,
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write to stdout: {e}")))
}

fn field<T: std::str::FromStr<Err = Error>>(path: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|e: Error| CliError::validation(format!("{path}: {e}")))
}

fn load_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(contents.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn require_out(flag: &Option<PathBuf>, config: &RunConfig) -> CliResult<PathBuf> {
    flag.clone()
        .or(config.io().output)
        .ok_or_else(|| CliError::validation("io.output: an output path is required (--out)"))
}

fn cmd_exact(args: &ExactArgs) -> CliResult<String> {
    let k = args.k;
    if args.n == 0 {
        return Err(CliError::validation("--n: must be >= 1"));
    }
    let seq: AdvantageSequence = field("--advantage", &args.advantage)?;
    let policy: TiePolicy = field("--tie-policy", &args.tie_policy)?;
    let rule: Rule = field("--rule", &args.rule)?;
    let advantages = seq.take(args.n, k)?;
    let options = ExactOptions {
        state_cap: args.state_cap.unwrap_or(exact::DEFAULT_STATE_CAP),
    };
    let accuracy = match rule {
        Rule::Plurality => exact::exact_plurality(k, &advantages, policy, &options)?.accuracy,
        Rule::ScoreThreshold => exact::exact_score_threshold_accuracy(k, &advantages)?,
    };
    // baseline: the best individual classifier
    let best_advantage = advantages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let single = exact::single_classifier_accuracy(k, best_advantage)?;

    if let Some(out) = &args.out {
        let csv = format!(
            "n,k,rule,tie_policy,accuracy,single,difference\n{},{},{},{},{},{},{}\n",
            args.n,
            k,
            rule,
            policy,
            accuracy,
            single,
            accuracy - single
        );
        write_file(out, &csv)?;
    }
    let mut s = String::new();
    writeln!(s, "rule        {rule} (ties: {policy})").unwrap();
    writeln!(s, "k, n        {k}, {}", args.n).unwrap();
    writeln!(s, "ensemble    {accuracy:.5}").unwrap();
    writeln!(s, "single      {single:.5}").unwrap();
    writeln!(s, "difference  {:+.5}", accuracy - single).unwrap();
    Ok(s)
}

/// Ensemble settings merged from flags (winning) and config.
struct EnsembleSettings {
    k: usize,
    advantages: AdvantageSequence,
    tie_policy: TiePolicy,
    rule: Rule,
    trials: u64,
    seed: u64,
    n_grid: Vec<usize>,
    out: PathBuf,
}

fn resolve_ensemble(flags: &EnsembleFlags, config: &RunConfig, default_rule: Rule) -> CliResult<EnsembleSettings> {
    let ens = config.ensemble();
    let mc = config.mc();
    let k = flags
        .k
        .or(ens.k)
        .ok_or_else(|| CliError::validation("ensemble.k: required (--k)"))?;
    if k < 2 {
        return Err(CliError::validation(format!("ensemble.k: must be >= 2, got {k}")));
    }
    let advantage = flags
        .advantage
        .clone()
        .or(ens.advantage.map(|a| a.as_spec()))
        .ok_or_else(|| CliError::validation("ensemble.advantage: required (--advantage)"))?;
    let advantages: AdvantageSequence = field("ensemble.advantage", &advantage)?;
    let tie_policy = match flags.tie_policy.clone().or(ens.tie_policy) {
        Some(p) => field("ensemble.tie_policy", &p)?,
        None => TiePolicy::default(),
    };
    let rule = match flags.rule.clone().or(ens.rule) {
        Some(r) => field("ensemble.rule", &r)?,
        None => default_rule,
    };
    let trials = flags.trials.or(mc.trials).unwrap_or(100_000);
    if trials == 0 {
        return Err(CliError::validation("mc.trials: must be >= 1"));
    }
    let seed = flags.seed.or(mc.seed).unwrap_or(0);
    let n_grid = flags
        .n_grid
        .clone()
        .or(config.grids().n_grid)
        .or(ens.n.map(|n| vec![n]))
        .ok_or_else(|| CliError::validation("grids.n_grid: required (--n-grid or ensemble.n)"))?;
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::validation("grids.n_grid: must be strictly increasing sizes >= 1"));
    }
    for &n in &n_grid {
        advantages
            .take(n, k)
            .map_err(|e| CliError::validation(format!("ensemble.advantage: {e}")))?;
    }
    Ok(EnsembleSettings {
        k,
        advantages,
        tie_policy,
        rule,
        trials,
        seed,
        n_grid,
        out: require_out(&flags.out, config)?,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<String> {
    let config = load_config(&args.common.config)?;
    let s = resolve_ensemble(&args.common, &config, Rule::Plurality)?;
    let rho_grid = args
        .rho_grid
        .clone()
        .or(config.grids().rho_grid)
        .or(config.ensemble().rho.map(|r| vec![r]))
        .unwrap_or_else(|| vec![0.0]);
    if rho_grid.is_empty() {
        return Err(CliError::validation("grids.rho_grid: must not be empty"));
    }
    if let Some(r) = rho_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CliError::validation(format!("grids.rho_grid: {r} is outside [0, 1]")));
    }
    if rho_grid.iter().any(|&r| r > 0.0) && s.advantages.as_constant().is_none() {
        return Err(CliError::validation("ensemble.advantage: rho > 0 requires a constant advantage"));
    }
    let rows = simulate::accuracy_grid(
        s.k,
        &s.advantages,
        &s.n_grid,
        &rho_grid,
        s.rule,
        s.tie_policy,
        s.trials,
        s.seed,
    )?;
    let mut csv = String::from("n,rho,estimate,stderr\n");
    let mut table = format!("{:>6} {:>6} {:>9} {:>9}\n", "n", "rho", "estimate", "stderr");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.n, r.rho, r.estimate, r.stderr).unwrap();
        writeln!(table, "{:>6} {:>6} {:>9.5} {:>9.5}", r.n, r.rho, r.estimate, r.stderr).unwrap();
    }
    write_file(&s.out, &csv)?;
    Ok(table)
}

fn cmd_convergence(args: &ConvergenceArgs) -> CliResult<String> {
    let config = load_config(&args.common.config)?;
    let s = resolve_ensemble(&args.common, &config, Rule::ScoreThreshold)?;
    let curve = simulate::convergence_experiment(s.k, &s.advantages, &s.n_grid, s.rule, s.tie_policy, s.trials, s.seed)?;
    let mut csv = String::from("n,estimate,stderr,drift\n");
    let mut table = format!("{:>7} {:>9} {:>9} {:>9}\n", "n", "estimate", "stderr", "drift");
    for r in &curve.rows {
        writeln!(csv, "{},{},{},{}", r.n, r.estimate, r.stderr, r.drift).unwrap();
        writeln!(table, "{:>7} {:>9.5} {:>9.5} {:>9.5}", r.n, r.estimate, r.stderr, r.drift).unwrap();
    }
    write_file(&s.out, &csv)?;
    Ok(table)
}

fn label_space(flag: &Option<Vec<String>>, config: &RunConfig) -> CliResult<LabelSpace> {
    match flag.clone().or(config.labels.clone().map(|l| l.names)) {
        Some(names) => LabelSpace::new(names).map_err(|e| CliError::validation(format!("labels.names: {e}"))),
        None => Ok(LabelSpace::sentiment()),
    }
}

struct DataSettings {
    dataset: ingest::Dataset,
    models: Vec<String>,
    tie_policy: TiePolicy,
    seed: u64,
    out: PathBuf,
}

fn resolve_data(flags: &DataFlags, config: &RunConfig) -> CliResult<DataSettings> {
    let labels = label_space(&flags.labels, config)?;
    let input = flags
        .input
        .clone()
        .or(config.io().input)
        .ok_or_else(|| CliError::validation("io.input: a predictions file is required (--input)"))?;
    let dataset = ingest::read_predictions(&input, &labels)?;
    let models = flags
        .models
        .clone()
        .or(config.diagnose().models)
        .unwrap_or_else(|| dataset.models().to_vec());
    for m in &models {
        dataset.model_index(m)?;
    }
    let tie_policy = match flags.tie_policy.clone().or(config.ensemble().tie_policy) {
        Some(p) => field("ensemble.tie_policy", &p)?,
        None => TiePolicy::default(),
    };
    Ok(DataSettings {
        dataset,
        models,
        tie_policy,
        seed: flags.seed.or(config.mc().seed).unwrap_or(0),
        out: require_out(&flags.out, config)?,
    })
}

fn metrics_row(csv: &mut String, kind: &str, model: &str, r: &MetricsReport) {
    writeln!(
        csv,
        "{kind},{model},{},{},{},{},{}",
        r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.abstention_rate
    )
    .unwrap();
}

fn cmd_metrics(args: &MetricsArgs) -> CliResult<String> {
    let config = load_config(&args.data.config)?;
    let d = resolve_data(&args.data, &config)?;
    if d.dataset.is_empty() {
        return Err(CliError::validation("io.input: the predictions file has no records"));
    }
    let mut csv = String::from("kind,model,accuracy,macro_precision,macro_recall,macro_f1,abstention_rate\n");
    let mut table = format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9}\n",
        "model (macro averages)", "accuracy", "precision", "recall", "f1"
    );
    let mut solos = Vec::new();
    for m in &d.models {
        let r = metrics::metrics_report(&metrics::model_confusion(&d.dataset, m)?)?;
        metrics_row(&mut csv, "solo", m, &r);
        solos.push((m.clone(), r));
    }
    for (m, r) in &solos {
        writeln!(
            table,
            "{:<24} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            m, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1
        )
        .unwrap();
    }
    if d.models.len() >= 2 {
        let names: Vec<&str> = d.models.iter().map(String::as_str).collect();
        let preds = metrics::ensemble_predictions(&d.dataset, &names, d.tie_policy, d.seed)?;
        let bag = metrics::metrics_report(&metrics::dataset_confusion(&d.dataset, &preds)?)?;
        metrics_row(&mut csv, "bagging", "bagging", &bag);
        let (best_name, best) = solos
            .iter()
            .max_by(|a, b| a.1.macro_f1.total_cmp(&b.1.macro_f1))
            .expect("at least one model");
        let delta = metrics::bagging_delta(&bag, best);
        writeln!(
            csv,
            "delta,bagging-vs-{best_name},{},{},{},{},{}",
            bag.accuracy - best.accuracy,
            delta.precision,
            delta.recall,
            delta.f1,
            bag.abstention_rate - best.abstention_rate
        )
        .unwrap();
        writeln!(
            table,
            "{:<24} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            "bagging", bag.accuracy, bag.macro_precision, bag.macro_recall, bag.macro_f1
        )
        .unwrap();
        let shown = delta.rounded();
        writeln!(
            table,
            "bagging vs {best_name}: dF1 {:+.2}  dPrecision {:+.2}  dRecall {:+.2}  (abstention rate {:.5})",
            shown.f1, shown.precision, shown.recall, bag.abstention_rate
        )
        .unwrap();
    }
    write_file(&d.out, &csv)?;
    Ok(table)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<String> {
    let config = load_config(&args.data.config)?;
    let d = resolve_data(&args.data, &config)?;
    let sec = config.diagnose();
    let conditions = ConditionOptions {
        tolerance: args.tolerance.or(sec.tolerance).unwrap_or(diagnose::DEFAULT_TOLERANCE),
        alpha: args.alpha.or(sec.alpha).unwrap_or(diagnose::DEFAULT_ALPHA),
        min_records: args.min_records.or(sec.min_records).unwrap_or(diagnose::DEFAULT_MIN_RECORDS),
    };
    if !(conditions.alpha > 0.0 && conditions.alpha < 1.0) {
        return Err(CliError::validation("diagnose.alpha: must lie in (0, 1)"));
    }
    if conditions.tolerance < 0.0 {
        return Err(CliError::validation("diagnose.tolerance: must be >= 0"));
    }
    let independence = IndependenceOptions {
        tie_policy: d.tie_policy,
        bootstrap: args.bootstrap.or(sec.bootstrap).unwrap_or(diagnose::DEFAULT_BOOTSTRAP),
        permutations: args.permutations.or(sec.permutations).unwrap_or(diagnose::DEFAULT_PERMUTATIONS),
        seed: d.seed,
        margin: args.margin.or(sec.margin).unwrap_or(diagnose::DEFAULT_MARGIN),
        alpha: conditions.alpha,
    };
    let names: Vec<&str> = d.models.iter().map(String::as_str).collect();
    let report = diagnose::diagnose(&d.dataset, &names, &conditions, &independence)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&d.out, &json)?;

    let c = &report.conditions;
    let i = &report.independence;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    let mut s = String::new();
    writeln!(s, "records: {}   models: {}", report.records, report.models.join(", ")).unwrap();
    writeln!(s, "1 identical distribution   {}  (max TV {:.5})", verdict(c.identical), c.max_pairwise_tv).unwrap();
    writeln!(s, "2 better than random       {}", verdict(c.better_than_random)).unwrap();
    writeln!(s, "3 uniform errors           {}", verdict(c.uniform_errors)).unwrap();
    for m in &c.per_model {
        writeln!(
            s,
            "    {:<16} acc {:.5}  binom p {:.5}  chi2 {:.5} (df {}, p {:.5})",
            m.model, m.accuracy, m.binomial_p_value, m.chi_square, m.chi_square_df, m.chi_square_p_value
        )
        .unwrap();
    }
    writeln!(s, "4 independence").unwrap();
    writeln!(s, "    predicted (parametric)   {:.5}", i.predicted_accuracy_parametric).unwrap();
    writeln!(
        s,
        "    predicted (permutation)  {:.5}  [{:.5}, {:.5}]",
        i.predicted_accuracy_permutation_mean, i.predicted_accuracy_permutation_ci.0, i.predicted_accuracy_permutation_ci.1
    )
    .unwrap();
    writeln!(s, "    observed ensemble        {:.5}", i.observed_ensemble_accuracy).unwrap();
    writeln!(s, "    best solo                {:.5}", i.best_solo_accuracy).unwrap();
    writeln!(s, "    gap                      {:+.5}", i.gap).unwrap();
    let v = match i.verdict {
        Verdict::Consistent => "consistent with independence",
        Verdict::Rejected => "independence rejected",
    };
    writeln!(s, "verdict: {v}").unwrap();
    Ok(s)
}

/// Parses `[name:]a=<advantage>` / `[name:]acc=<accuracy>` items.
pub fn parse_models(spec: &str, k: usize) -> CliResult<Vec<SyntheticModel>> {
    let mut models = Vec::new();
    for (i, item) in spec.split(',').map(str::trim).enumerate() {
        let (name, body) = match item.split_once(':') {
            Some((n, b)) => (n.to_string(), b),
            None => (format!("m{}", i + 1), item),
        };
        let bad = || CliError::validation(format!("--models: cannot parse {item:?} (expected [name:]a=<x> or [name:]acc=<x>)"));
        let (key, value) = body.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let advantage = match key.trim() {
            "a" => value,
            "acc" => value - 1.0 / k as f64,
            _ => return Err(bad()),
        };
        models.push(SyntheticModel::new(name, advantage));
    }
    Ok(models)
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<String> {
    let labels = label_space(&args.labels, &RunConfig::default())?;
    let k = labels.k();
    let models = parse_models(&args.models, k)?;
    let class_probs = match &args.class_probs {
        Some(p) => p.clone(),
        None if k == 3 => ingest::SENTIMENT_CLASS_PROBS.to_vec(),
        None => vec![1.0 / k as f64; k],
    };
    let dataset = ingest::generate_synthetic(&labels, &class_probs, &models, args.rho, args.rows, args.seed)?;
    ingest::write_predictions(&args.out, &dataset)?;
    Ok(format!(
        "wrote {} rows x {} models to {}\n",
        dataset.len(),
        models.len(),
        args.out.display()
    ))
}
