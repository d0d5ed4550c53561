//! `sitn` command-line interface.
//!
//! Commands compose through files: `generate` or external tools produce data,
//! `invert` maps data to latents, `score` computes goodness-of-fit statistics,
//! `calibrate` fits the split calibration and `classify` applies it.
//! `evaluate` runs a whole synthetic experiment from a TOML config and
//! `report` summarises labelled score tables.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use sitn::calibration::{calibrate, CalibrationConfig, CalibrationModel};
use sitn::eval::{
    bootstrap_ci, run_experiment_with, score_latents, ExperimentSink, Label, Method, ScoreRecord,
    DEFAULT_BOOTSTRAP_ITERATIONS,
};
use sitn::flow::{
    held_out_loss, integrate_batch, log_likelihood_batch, train_with, BlockwiseField, DataSampler, DatasetSampler,
    Direction, FlowArchitecture, FlowModel, SolverConfig, TrainConfig,
};
use sitn::io::{
    read_calibration, read_flow, read_latents, read_scores, records_from_csv, records_to_csv, write_atomic,
    write_calibration, write_flow, write_latents, write_scores, RunConfig,
};
use sitn::synthetic::{MixtureSampler, Scenario};
use sitn::{Error, Result, Statistic};

#[derive(Parser)]
#[command(name = "sitn", version, about = "OOD detection by goodness-of-fit tests in flow noise space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow by flow matching on the 2-D mixture or on a latent file.
    TrainFlow(TrainFlowArgs),
    /// Draw ID or OOD samples from a built-in scenario.
    Generate(GenerateArgs),
    /// Map data to latents with the inverse flow.
    Invert(InvertArgs),
    /// Compute per-sample statistics (and quantiles, given a calibration).
    Score(ScoreArgs),
    /// Fit a split calibration on ID latents.
    Calibrate(CalibrateArgs),
    /// Flag samples as ID or OOD.
    Classify(ClassifyArgs),
    /// Run a synthetic experiment from a TOML config.
    Evaluate(EvaluateArgs),
    /// AUROC table with bootstrap intervals from labelled score tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Absolute and relative ODE tolerance.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let c = SolverConfig::dopri(self.tolerance, self.tolerance);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainFlowArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training rows; the built-in 2-D mixture when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128,128,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Draw OOD samples; needs `--model`.
    #[arg(long)]
    ood: bool,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-sample log-likelihood terms to this CSV.
    #[arg(long)]
    likelihood: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Statistics to compute when no calibration is given.
    #[arg(long, value_delimiter = ',', default_value = "ad,cv")]
    statistics: Vec<Statistic>,
    /// Label written on every row.
    #[arg(long)]
    label: Option<Label>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "ad,cv")]
    statistics: Vec<Statistic>,
    /// Fraction of the calibration set used for the inner ECDFs.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    latents: Option<PathBuf>,
    /// Score table carrying the raw statistics.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Overrides the calibrated rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output CSV (`id,m_hat,quantile,decision`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `outputs.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `calibration.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides the solver tolerances.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Reuse a trained flow instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Labelled score tables, concatenated.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Methods to report; every method present when absent.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainFlow(a) => train_flow(a),
        Command::Generate(a) => generate(a),
        Command::Invert(a) => invert(a),
        Command::Score(a) => score(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = e.category();
            eprintln!("error[{}]: {e}", c.as_str());
            ExitCode::from(c.exit_code())
        }
    }
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

/// The model tiled over `dim`.
fn field_for(model: FlowModel<f64>, dim: usize) -> Result<BlockwiseField<FlowModel<f64>>> {
    let d = model.architecture().dim;
    if dim == 0 || !dim.is_multiple_of(d) {
        return Err(Error::InvalidInput(format!(
            "data dimension {dim} is not a multiple of the flow dimension {d}"
        )));
    }
    BlockwiseField::new::<f64>(model, dim / d)
}

fn train_flow(a: TrainFlowArgs) -> Result<()> {
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut sampler: Box<dyn DataSampler<f64>> = match &a.data {
        Some(p) => Box::new(DatasetSampler::new(read_latents::<f64>(p)?)?),
        None => Box::new(MixtureSampler::default()),
    };
    let arch = FlowArchitecture {
        hidden: a.hidden.clone(),
        ..FlowArchitecture::new(sampler.dim())
    };
    let model = FlowModel::new(arch, a.seed)?;
    let every = (a.steps / 10).max(1);
    let model = train_with(model, sampler.as_mut(), &cfg, |step, loss| {
        if step % every == 0 {
            eprintln!("step {step:>6}  loss {loss:.5}");
        }
    })?;
    let loss = held_out_loss(&model, sampler.as_mut(), 4096, a.seed.wrapping_add(1))?;
    write_flow(&a.out, &model)?;
    println!("held-out loss {loss:.6}");
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let scenario = Scenario::builtin(&a.scenario, a.dim, a.seed)?;
    let data: Array2<f64> = if a.ood {
        let path = a
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("--ood needs --model to push latents through the flow".into()))?;
        let field = field_for(read_flow(path)?, a.dim)?;
        scenario.sample_ood(&field, a.n, &a.solver.config()?)?
    } else {
        scenario.sample_id(a.n)?
    };
    write_latents(&a.out, data.view())
}

fn invert(a: InvertArgs) -> Result<()> {
    let x: Array2<f64> = read_latents(&a.data)?;
    let field = field_for(read_flow(&a.model)?, x.ncols())?;
    let solver = a.solver.config()?;
    let z = match &a.likelihood {
        Some(path) => {
            let b = log_likelihood_batch(&field, x.view(), &solver)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let fail = |e: csv::Error| Error::Format(e.to_string());
            w.write_record(["id", "log_likelihood", "latent_log_prob", "divergence_integral"])
                .map_err(fail)?;
            for (i, s) in b.stats.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    s.log_likelihood.to_string(),
                    s.latent_log_prob.to_string(),
                    s.divergence_integral.to_string(),
                ])
                .map_err(fail)?;
            }
            write_atomic(path, &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
            b.latents
        }
        None => integrate_batch(&field, x.view(), Direction::Inverse, &solver)?,
    };
    write_latents(&a.out, z.view())
}

fn score(a: ScoreArgs) -> Result<()> {
    let z: Array2<f64> = read_latents(&a.latents)?;
    let cal: Option<CalibrationModel<f64>> = a.calibration.as_deref().map(read_calibration).transpose()?;
    let statistics = cal.as_ref().map(|c| c.statistics().to_vec()).unwrap_or(a.statistics);
    let mut records = score_latents(z.view(), &statistics, cal.as_ref())?;
    for r in &mut records {
        r.label = a.label;
    }
    emit(a.out.as_deref(), &records_to_csv(&records)?)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let z: Array2<f64> = read_latents(&a.latents)?;
    let cfg = CalibrationConfig {
        statistics: a.statistics,
        alpha: a.alpha,
        split_fraction: a.split,
        seed: a.seed,
    };
    let model = calibrate(z.view(), &cfg)?;
    write_calibration(&a.out, &model)?;
    let (n1, n2) = model.split_sizes();
    println!("calibrated on {n1} + {n2} samples, gamma = {}", model.gamma());
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let mut cal: CalibrationModel<f64> = read_calibration(&a.calibration)?;
    if let Some(alpha) = a.alpha {
        cal = cal.with_alpha(alpha)?;
    }
    let records: Vec<ScoreRecord> = match (&a.latents, &a.scores) {
        (Some(p), _) => {
            let z: Array2<f64> = read_latents(p)?;
            score_latents(z.view(), cal.statistics(), None)?
        }
        (None, Some(p)) => read_scores(p)?,
        (None, None) => return Err(Error::Config("give --latents or --scores".into())),
    };
    let mut out = String::from("id,m_hat,quantile,decision\n");
    let mut flagged = 0usize;
    for r in &records {
        let raw = cal
            .statistics()
            .iter()
            .map(|s| {
                r.stats
                    .iter()
                    .find(|p| p.0 == *s)
                    .map(|p| p.1)
                    .ok_or_else(|| Error::InvalidInput(format!("record {} lacks statistic '{s}'", r.id)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let c = cal.combine(&raw)?;
        let d = cal.classify(&c);
        flagged += usize::from(d.is_ood());
        let name = if d.is_ood() { "ood" } else { "id" };
        out.push_str(&format!("{},{},{},{name}\n", r.id, c.m_hat, cal.calibrated_quantile(c.m_hat)));
    }
    emit(a.out.as_deref(), &out)?;
    let n = records.len();
    eprintln!(
        "flagged {flagged} of {n} ({:.4}) at alpha = {}",
        flagged as f64 / n.max(1) as f64,
        cal.alpha()
    );
    Ok(())
}

/// Flushes the model and score table as soon as they exist.
struct FileSink<'a> {
    cfg: &'a RunConfig,
}

impl ExperimentSink for FileSink<'_> {
    fn model(&mut self, model: &FlowModel<f64>) -> Result<()> {
        write_flow(&self.cfg.outputs.resolve(&self.cfg.outputs.model), model)
    }

    fn records(&mut self, records: &[ScoreRecord]) -> Result<()> {
        write_scores(&self.cfg.outputs.resolve(&self.cfg.outputs.scores), records)
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = a.out_dir {
        cfg.outputs.dir = dir;
    }
    if let Some(alpha) = a.alpha {
        cfg.calibration.alpha = alpha;
    }
    if let Some(tol) = a.tolerance {
        cfg.solver.atol = tol;
        cfg.solver.rtol = tol;
    }
    let scenario = cfg.scenario()?;
    let exp = cfg.experiment()?;
    let model = a.model.as_deref().map(read_flow).transpose()?;
    std::fs::create_dir_all(&cfg.outputs.dir).map_err(|e| Error::Io {
        path: cfg.outputs.dir.clone(),
        source: e,
    })?;
    let out = run_experiment_with(&scenario, &cfg.methods, &exp, model, &mut FileSink { cfg: &cfg })?;
    let o = &cfg.outputs;
    write_atomic(&o.resolve(&o.report), out.report.to_json()?.as_bytes())?;
    let summary = out.report.summary();
    write_atomic(&o.resolve(&o.summary), summary.as_bytes())?;
    write_atomic(&o.resolve(&o.fpr_curve), out.report.fpr_csv().as_bytes())?;
    write_atomic(&o.resolve(&o.auroc), out.report.auroc_csv().as_bytes())?;
    write_calibration(&o.resolve(&o.calibration), &out.calibration)?;
    print!("{summary}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.scores {
        let text = sitn::io::read_text(p)?;
        let mut part = records_from_csv(&text)?;
        // Keep ids unique across files.
        let offset = records.len();
        for r in &mut part {
            r.id += offset;
        }
        records.extend(part);
    }
    let mut methods = a.methods;
    if methods.is_empty() {
        methods = records
            .iter()
            .flat_map(|r| r.scores.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
    }
    if methods.is_empty() {
        return Err(Error::InvalidInput("score tables carry no method scores".into()));
    }
    let mut out = String::from("method,auroc,ci_low,ci_high,iterations,seed\n");
    for m in methods {
        let r = bootstrap_ci(&records, m, a.iterations, a.seed)?;
        out.push_str(&format!(
            "{m},{},{},{},{},{}\n",
            r.point, r.ci_low, r.ci_high, r.iterations, r.seed
        ));
    }
    emit(a.out.as_deref(), &out)
}
