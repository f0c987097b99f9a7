//! Command-line front end: argument and config-file handling, and the
//! `train`, `compare`, `reference` and `inspect` commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use parsgd_core::data::{partition, read_libsvm, Dataset, PartitionStrategy};
use parsgd_core::driver::{run, write_trace, Method, Observer, RunConfig, RunResult};
use parsgd_core::loss::{norm2, LossKind, Objective};
use parsgd_core::metrics::{model_auprc, solve_reference, ReferenceSolution};
use parsgd_core::svrg::{Sampling, StepSize};

const SUMMARY_HELP: &str = "\
Each run prints a summary of key=value lines (also written to summary.txt).
For `compare`, every key is prefixed with the method name, e.g. `fs.passes`.

  method       fs, sqm or hybrid
  loss         loss function
  lambda       regularization constant
  nodes        number of simulated nodes
  iterations   outer iterations taken
  stop         stopping rule that ended the run
  f            final objective value
  grad_norm    final gradient 2-norm
  gap          final relative gap (f - f*)/f*, or none without a reference
  passes       communication passes (feature-dimension vectors sent)
  scalar_msgs  scalar-only exchanges
  safeguards   node directions replaced by the negative gradient
  epochs       SGD epochs per node, summed over iterations
  auprc        final AUPRC
  auprc_data   data the AUPRC was measured on (train or eval)";

#[derive(Debug, Parser)]
#[command(
    name = "parsgd",
    version,
    about = "Parallel SGD batch descent for linear classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write its trace, model and summary.
    #[command(after_help = SUMMARY_HELP)]
    Train(RunArgs),
    /// Run fs, sqm and hybrid on the same problem against a reference.
    #[command(after_help = SUMMARY_HELP)]
    Compare(RunArgs),
    /// Compute (or reuse) a high-precision reference solution.
    Reference(RunArgs),
    /// Print dataset statistics.
    Inspect(RunArgs),
}

/// Options shared by all commands. Values given here override the config
/// file.
#[derive(Debug, Default, Clone, Args)]
pub struct RunArgs {
    /// Flat key=value config file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data in libsvm format (optionally gzipped).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out data for AUPRC.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reference solution file, reused if present and computed otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// fs, sqm or hybrid.
    #[arg(long)]
    pub method: Option<String>,
    /// logistic, squared-hinge or least-squares.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// round-robin, contiguous or shuffled.
    #[arg(long)]
    pub partition: Option<String>,
    /// SVRG epochs per outer iteration.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD step size, or `auto`.
    #[arg(long)]
    pub step_size: Option<String>,
    /// Safeguard threshold on cos(-g, d_p).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Sufficient-decrease constant.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Curvature constant.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_outer_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Worker threads for the simulated nodes.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Record elapsed milliseconds in traces.
    #[arg(long)]
    pub wall_clock: bool,
    /// Fail when the line search cannot meet both conditions.
    #[arg(long)]
    pub strict: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |key: &'static str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key, v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("train", path(&self.train));
        put("eval", path(&self.eval));
        put("out", path(&self.out));
        put("reference", path(&self.reference));
        put("method", self.method.clone());
        put("loss", self.loss.clone());
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("nodes", self.nodes.map(|v| v.to_string()));
        put("partition", self.partition.clone());
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("step-size", self.step_size.clone());
        put("tau", self.tau.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put(
            "max-outer-iters",
            self.max_outer_iters.map(|v| v.to_string()),
        );
        put("grad-tol", self.grad_tol.map(|v| v.to_string()));
        put("gap-tol", self.gap_tol.map(|v| v.to_string()));
        put("workers", self.workers.map(|v| v.to_string()));
        put("wall-clock", self.wall_clock.then(|| "true".to_string()));
        put("strict", self.strict.then(|| "true".to_string()));
        out
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub train: PathBuf,
    pub eval: Option<PathBuf>,
    pub out: PathBuf,
    pub reference: Option<PathBuf>,
    pub loss: LossKind,
    pub lambda: f64,
    pub nodes: usize,
    pub partition: PartitionStrategy,
    pub methods: Vec<Method>,
    pub run: RunConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            train: PathBuf::new(),
            eval: None,
            out: PathBuf::from("parsgd-out"),
            reference: None,
            loss: LossKind::SquaredHinge,
            lambda: f64::NAN,
            nodes: 4,
            partition: PartitionStrategy::RoundRobin,
            methods: vec![Method::Fs],
            run: RunConfig {
                max_outer_iters: 100,
                ..RunConfig::default()
            },
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("expected true or false, got {v:?}"),
    }
}

fn parse_partition(v: &str, seed: u64) -> Result<PartitionStrategy> {
    match v {
        "round-robin" => Ok(PartitionStrategy::RoundRobin),
        "contiguous" => Ok(PartitionStrategy::Contiguous),
        "shuffled" => Ok(PartitionStrategy::Shuffled(seed)),
        _ => bail!("unknown partition {v:?} (round-robin, contiguous, shuffled)"),
    }
}

impl ExperimentSpec {
    /// Defaults, then the config file, then command-line values.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut settings: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            for (k, v) in parse_config(&text)? {
                settings.insert(k, v);
            }
        }
        for (k, v) in args.overrides() {
            settings.insert(k.to_string(), v);
        }
        let mut spec = Self::default();
        let mut partition = "round-robin".to_string();
        for (key, value) in &settings {
            if key == "partition" {
                partition = value.clone();
            } else {
                spec.set(key, value)
                    .with_context(|| format!("invalid value for {key}: {value:?}"))?;
            }
        }
        spec.partition = parse_partition(&partition, spec.run.seed)?;
        ensure!(
            !spec.train.as_os_str().is_empty(),
            "no training data given (--train or `train =` in the config file)"
        );
        ensure!(
            spec.lambda > 0.0 && spec.lambda.is_finite(),
            "lambda must be a positive number (--lambda)"
        );
        ensure!(spec.nodes > 0, "nodes must be positive");
        spec.run.method = spec.methods[0];
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let run = &mut self.run;
        match key {
            "train" => self.train = PathBuf::from(value),
            "eval" => self.eval = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "reference" => self.reference = Some(PathBuf::from(value)),
            "method" | "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| m.trim().parse::<Method>())
                    .collect::<parsgd_core::Result<_>>()?;
                ensure!(!self.methods.is_empty(), "no methods given");
            }
            "loss" => self.loss = value.parse()?,
            "lambda" => self.lambda = value.parse()?,
            "nodes" => self.nodes = value.parse()?,
            "epochs" => run.svrg.epochs = value.parse()?,
            "step-size" => {
                run.svrg.step_size = if value == "auto" {
                    StepSize::Auto
                } else {
                    StepSize::Fixed(value.parse()?)
                }
            }
            "updates-per-epoch" => run.svrg.updates_per_epoch = Some(value.parse()?),
            "sampling" => {
                run.svrg.sampling = match value {
                    "with-replacement" => Sampling::WithReplacement,
                    "shuffled" => Sampling::Shuffled,
                    _ => bail!("unknown sampling (with-replacement, shuffled)"),
                }
            }
            "tau" => run.safeguard.tau = value.parse()?,
            "alpha" => run.line_search.alpha = value.parse()?,
            "beta" => run.line_search.beta = value.parse()?,
            "seed" => run.seed = value.parse()?,
            "max-outer-iters" => run.max_outer_iters = value.parse()?,
            "grad-tol" => run.grad_tol = value.parse()?,
            "gap-tol" => run.gap_tol = Some(value.parse()?),
            "workers" => run.workers = Some(value.parse()?),
            "lbfgs-memory" => run.lbfgs_memory = value.parse()?,
            "wall-clock" => run.wall_clock = parse_bool(value)?,
            "strict" => run.strict = parse_bool(value)?,
            _ => bail!("unknown setting"),
        }
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment. Underscores in keys are read
/// as dashes.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected key = value", n + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn load_data(path: &Path, what: &str) -> Result<Dataset> {
    read_libsvm(path).with_context(|| format!("cannot read {what} data {}", path.display()))
}

/// Loads the evaluation set, widened to the training dimension.
fn load_eval(spec: &ExperimentSpec, train: &Dataset) -> Result<Option<Dataset>> {
    let Some(path) = &spec.eval else {
        return Ok(None);
    };
    let ds = load_data(path, "evaluation")?;
    ensure!(
        ds.dim() <= train.dim(),
        "evaluation data uses feature {} beyond the training dimension {}",
        ds.dim(),
        train.dim()
    );
    Ok(Some(ds.with_dim(train.dim())?))
}

pub fn write_model(path: &Path, obj: Objective, w: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "dim {}", w.len())?;
    writeln!(out, "loss {}", obj.loss())?;
    writeln!(out, "lambda {}", obj.lambda())?;
    for x in w {
        writeln!(out, "{x}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<(Objective, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut header = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .with_context(|| format!("model file ends before {key}"))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => bail!("expected {key}, found {line:?}"),
        }
    };
    let dim: usize = header("dim")?.parse()?;
    let loss: LossKind = header("loss")?.parse()?;
    let lambda: f64 = header("lambda")?.parse()?;
    let w = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ensure!(
        w.len() == dim,
        "model declares dim {dim} but has {} weights",
        w.len()
    );
    Ok((Objective::new(loss, lambda)?, w))
}

/// Loads a reference from `path` when it exists (it must belong to the
/// same problem), otherwise solves and saves it. Returns whether the file
/// was reused.
pub fn load_or_solve_reference(
    path: &Path,
    obj: Objective,
    data: &Dataset,
) -> Result<(ReferenceSolution, bool)> {
    if path.exists() {
        let r = ReferenceSolution::load(path)
            .with_context(|| format!("cannot read reference {}", path.display()))?;
        ensure!(
            r.matches(obj, data),
            "reference {} was computed for a different problem; remove it to recompute",
            path.display()
        );
        return Ok((r, true));
    }
    info!(
        "solving reference for {} with lambda {}",
        obj.loss(),
        obj.lambda()
    );
    let r = solve_reference(obj, data)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    r.save(path)?;
    Ok((r, false))
}

/// Records the AUPRC of every evaluated point.
struct AuprcTracker<'a> {
    data: &'a Dataset,
    values: Vec<(usize, f64)>,
    error: Option<parsgd_core::Error>,
}

impl Observer for AuprcTracker<'_> {
    fn on_evaluate(&mut self, r: usize, w: &[f64], _g: &[f64], _f: f64) {
        if self.error.is_some() {
            return;
        }
        match model_auprc(w, self.data) {
            Ok(v) => self.values.push((r, v)),
            Err(e) => self.error = Some(e),
        }
    }
}

/// Outcome of one method on one problem.
#[derive(Debug)]
pub struct MethodReport {
    pub result: RunResult,
    /// `(r, passes, auprc)` per trace row.
    pub auprc: Vec<(usize, u64, f64)>,
    pub auprc_data: &'static str,
    pub summary: Vec<(&'static str, String)>,
}

fn run_method(
    spec: &ExperimentSpec,
    method: Method,
    train: &Dataset,
    eval: Option<&Dataset>,
    reference: Option<&ReferenceSolution>,
) -> Result<MethodReport> {
    let obj = Objective::new(spec.loss, spec.lambda)?;
    let plan = partition(train, spec.nodes, spec.partition)?;
    let cfg = RunConfig {
        method,
        ..spec.run.clone()
    };
    let (scoring, auprc_data) = match eval {
        Some(ds) => (ds, "eval"),
        None => (train, "train"),
    };
    let mut tracker = AuprcTracker {
        data: scoring,
        values: Vec::new(),
        error: None,
    };
    let result = run(train, &plan, obj, &cfg, reference, &mut tracker)?;
    if let Some(e) = tracker.error {
        return Err(e).context("cannot compute AUPRC");
    }
    let auprc: Vec<(usize, u64, f64)> = tracker
        .values
        .iter()
        .zip(&result.trace)
        .map(|(&(r, v), rec)| (r, rec.passes, v))
        .collect();

    let last = result.trace.last();
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".to_string());
    let final_f = last
        .map(|r| r.f)
        .or_else(|| obj.value(train, &result.w).ok());
    let final_auprc = match auprc.last() {
        Some(&(_, _, v)) => Some(v),
        None => Some(model_auprc(&result.w, scoring)?),
    };
    let summary = vec![
        ("method", method.to_string()),
        ("loss", spec.loss.to_string()),
        ("lambda", spec.lambda.to_string()),
        ("nodes", spec.nodes.to_string()),
        (
            "iterations",
            result.trace.len().saturating_sub(1).to_string(),
        ),
        ("stop", result.stop.to_string()),
        ("f", opt(final_f.map(|f| f.to_string()))),
        (
            "grad_norm",
            opt(last.map(|r| r.grad_norm.to_string()).or_else(|| {
                obj.gradient(train, &result.w)
                    .ok()
                    .map(|g| norm2(&g).to_string())
            })),
        ),
        ("gap", opt(last.and_then(|r| r.gap).map(|g| g.to_string()))),
        ("passes", result.ledger.passes().to_string()),
        ("scalar_msgs", result.ledger.scalar_msgs().to_string()),
        (
            "safeguards",
            result
                .trace
                .iter()
                .map(|r| r.safeguards)
                .sum::<usize>()
                .to_string(),
        ),
        ("epochs", last.map_or(0, |r| r.epochs).to_string()),
        ("auprc", opt(final_auprc.map(|v| v.to_string()))),
        ("auprc_data", auprc_data.to_string()),
    ];
    Ok(MethodReport {
        result,
        auprc,
        auprc_data,
        summary,
    })
}

fn write_auprc(path: &Path, rows: &[(usize, u64, f64)]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "r,passes,auprc")?;
    for (r, passes, v) in rows {
        writeln!(out, "{r},{passes},{v}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_csv_trace(path: &Path, result: &RunResult) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_trace(&result.trace, &mut out)?;
    out.flush()?;
    Ok(())
}

fn render_summary(prefix: Option<&str>, summary: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in summary {
        match prefix {
            Some(p) => {
                let _ = writeln!(s, "{p}.{k}={v}");
            }
            None => {
                let _ = writeln!(s, "{k}={v}");
            }
        }
    }
    s
}

fn prepare_out(spec: &ExperimentSpec) -> Result<()> {
    fs::create_dir_all(&spec.out)
        .with_context(|| format!("cannot create output directory {}", spec.out.display()))
}

/// Writes `trace.csv`, `auprc.csv`, `model.txt` and `summary.txt`.
pub fn cmd_train(spec: &ExperimentSpec, stdout: &mut dyn Write) -> Result<MethodReport> {
    let train = load_data(&spec.train, "training")?;
    let eval = load_eval(spec, &train)?;
    let obj = Objective::new(spec.loss, spec.lambda)?;
    let reference = match &spec.reference {
        Some(path) => Some(load_or_solve_reference(path, obj, &train)?.0),
        None => None,
    };
    prepare_out(spec)?;
    let method = spec.methods[0];
    let report = run_method(spec, method, &train, eval.as_ref(), reference.as_ref())?;
    write_csv_trace(&spec.out.join("trace.csv"), &report.result)?;
    write_auprc(&spec.out.join("auprc.csv"), &report.auprc)?;
    write_model(&spec.out.join("model.txt"), obj, &report.result.w)?;
    let text = render_summary(None, &report.summary);
    fs::write(spec.out.join("summary.txt"), &text)?;
    stdout.write_all(text.as_bytes())?;
    Ok(report)
}

/// Runs every method against a shared reference and writes
/// `<method>.csv`, `<method>.auprc.csv` and `summary.txt`.
pub fn cmd_compare(spec: &ExperimentSpec, stdout: &mut dyn Write) -> Result<Vec<MethodReport>> {
    let train = load_data(&spec.train, "training")?;
    let eval = load_eval(spec, &train)?;
    let obj = Objective::new(spec.loss, spec.lambda)?;
    prepare_out(spec)?;
    let ref_path = spec
        .reference
        .clone()
        .unwrap_or_else(|| spec.out.join("reference.txt"));
    let (reference, _) = load_or_solve_reference(&ref_path, obj, &train)?;
    let methods = if spec.methods.len() > 1 {
        spec.methods.clone()
    } else {
        Method::ALL.to_vec()
    };
    let mut text = format!("f_star={}\n", reference.f_star);
    let mut reports = Vec::new();
    for method in methods {
        let report = run_method(spec, method, &train, eval.as_ref(), Some(&reference))?;
        write_csv_trace(&spec.out.join(format!("{method}.csv")), &report.result)?;
        write_auprc(&spec.out.join(format!("{method}.auprc.csv")), &report.auprc)?;
        text.push_str(&render_summary(Some(method.name()), &report.summary));
        reports.push(report);
    }
    fs::write(spec.out.join("summary.txt"), &text)?;
    stdout.write_all(text.as_bytes())?;
    Ok(reports)
}

/// Computes the reference, or reports the cached one. The file defaults to
/// `<out>/reference.txt`.
pub fn cmd_reference(
    spec: &ExperimentSpec,
    stdout: &mut dyn Write,
) -> Result<(ReferenceSolution, bool)> {
    let train = load_data(&spec.train, "training")?;
    let obj = Objective::new(spec.loss, spec.lambda)?;
    let path = spec
        .reference
        .clone()
        .unwrap_or_else(|| spec.out.join("reference.txt"));
    let (r, cached) = load_or_solve_reference(&path, obj, &train)?;
    writeln!(
        stdout,
        "reference={}\ncached={cached}\nf_star={}\ngrad_norm={}",
        path.display(),
        r.f_star,
        r.achieved_grad_norm
    )?;
    Ok((r, cached))
}

pub fn cmd_inspect(spec: &ExperimentSpec, stdout: &mut dyn Write) -> Result<()> {
    let train = load_data(&spec.train, "training")?;
    let obj = Objective::new(spec.loss, spec.lambda)?;
    let plan = partition(&train, spec.nodes, spec.partition)?;
    let sizes: Vec<String> = (0..spec.nodes)
        .map(|p| plan.members(p).map(|m| m.len().to_string()))
        .collect::<parsgd_core::Result<_>>()?;
    let n = train.len();
    writeln!(stdout, "examples={n}")?;
    writeln!(stdout, "dim={}", train.dim())?;
    writeln!(stdout, "nnz={}", train.nnz())?;
    writeln!(
        stdout,
        "density={}",
        train.nnz() as f64 / (n as f64 * train.dim() as f64)
    )?;
    writeln!(stdout, "positives={}", train.positives())?;
    writeln!(stdout, "fingerprint={:016x}", train.fingerprint())?;
    writeln!(stdout, "lipschitz_bound={}", obj.lipschitz_bound(&train))?;
    writeln!(stdout, "node_sizes={}", sizes.join(","))?;
    Ok(())
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            cmd_train(&ExperimentSpec::resolve(&args)?, stdout)?;
        }
        Command::Compare(args) => {
            cmd_compare(&ExperimentSpec::resolve(&args)?, stdout)?;
        }
        Command::Reference(args) => {
            cmd_reference(&ExperimentSpec::resolve(&args)?, stdout)?;
        }
        Command::Inspect(args) => {
            let mut args = args;
            if args.lambda.is_none() {
                args.lambda = Some(1.0);
            }
            cmd_inspect(&ExperimentSpec::resolve(&args)?, stdout)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let parsed =
            parse_config("# c\nloss = logistic\n\nmax_outer_iters=5 # trailing\n").unwrap();
        assert_eq!(
            parsed,
            vec![
                ("loss".to_string(), "logistic".to_string()),
                ("max-outer-iters".to_string(), "5".to_string())
            ]
        );
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            "train = a.svm\nlambda = 0.5\nnodes = 3\nstep_size = 0.01\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(cfg),
            nodes: Some(6),
            ..RunArgs::default()
        };
        let spec = ExperimentSpec::resolve(&args).unwrap();
        assert_eq!(spec.nodes, 6);
        assert_eq!(spec.lambda, 0.5);
        assert_eq!(spec.train, PathBuf::from("a.svm"));
        assert_eq!(spec.run.svrg.step_size, StepSize::Fixed(0.01));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let base = RunArgs {
            train: Some("x.svm".into()),
            lambda: Some(1.0),
            ..RunArgs::default()
        };
        assert!(ExperimentSpec::resolve(&base).is_ok());
        for bad in [
            RunArgs {
                lambda: Some(0.0),
                ..base.clone()
            },
            RunArgs {
                lambda: None,
                ..base.clone()
            },
            RunArgs {
                train: None,
                ..base.clone()
            },
            RunArgs {
                method: Some("tron".into()),
                ..base.clone()
            },
            RunArgs {
                loss: Some("hinge".into()),
                ..base.clone()
            },
            RunArgs {
                partition: Some("random".into()),
                ..base.clone()
            },
        ] {
            assert!(ExperimentSpec::resolve(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let obj = Objective::new(LossKind::Logistic, 0.125).unwrap();
        let w = vec![0.1, -2.5e-17, 3.0];
        write_model(&path, obj, &w).unwrap();
        assert_eq!(read_model(&path).unwrap(), (obj, w));
    }
}
