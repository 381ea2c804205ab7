//! Subcommand definitions and their implementations.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use spdnorm::matfun::SqrtScheme;
use spdnorm::train::{evaluate, exponent_sweep, generate_benchmark, train};

use crate::ablation::{mean_sweep, mean_test_accuracy, run_ablation, run_sweep, AblationSettings};
use crate::bench::{
    run_gradcheck, sqrt_bench, write_gradcheck_csv, write_sqrt_bench_csv, SpectrumProfile,
    SqrtBenchSpec,
};
use crate::config::{
    parse_grad, parse_matfun, parse_scale, parse_sqrt_scheme, read_pipeline, read_spec, read_train,
    write_pipeline, write_spec, write_train, KvConfig, Reader,
};
use crate::container::{load_dataset, load_model, save_dataset, save_model};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "spdnorm",
    version,
    about = "Matrix-normalized second-order pooling: benchmarks, gradient checks and training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Residuals of iterative square roots against the spectral one.
    SqrtBench(SqrtBenchArgs),
    /// Compare an analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic train/test pair.
    Generate(GenerateArgs),
    /// Train a model on a dataset file.
    Train(TrainArgs),
    /// Accuracy of a saved model on a dataset file.
    Eval(EvalArgs),
    /// Classifier-only accuracy for a list of matrix-power exponents.
    Sweep(SweepArgs),
    /// Run the synthetic ablation benchmark over a list of seeds.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct SqrtBenchArgs {
    /// key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated matrix sizes.
    #[arg(long = "dim", alias = "dims")]
    pub dims: Option<String>,
    /// Comma-separated condition numbers.
    #[arg(long)]
    pub conds: Option<String>,
    /// Comma-separated iteration counts.
    #[arg(long)]
    pub iterations: Option<String>,
    /// db, ns or both.
    #[arg(long)]
    pub scheme: Option<String>,
    /// frobenius, spectral or none (default depends on the scheme).
    #[arg(long)]
    pub scale: Option<String>,
    /// Largest eigenvalue of the generated inputs.
    #[arg(long)]
    pub input_scale: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Leave the wall_time_ms column empty so output is reproducible.
    #[arg(long)]
    pub omit_timing: bool,
    /// CSV destination (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sqrt, log or power:P.
    #[arg(long)]
    pub kind: Option<String>,
    /// lyapunov, svd or pass.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    /// wellsep, clustered or degenerate.
    #[arg(long)]
    pub profile: Option<String>,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    #[arg(long)]
    pub epsilon: Option<String>,
    /// none, sqrt, log or power:P.
    #[arg(long)]
    pub matfun: Option<String>,
    /// spectral, db or ns.
    #[arg(long)]
    pub forward: Option<String>,
    /// Iterations of the iterative forward pass.
    #[arg(long)]
    pub iterations: Option<String>,
    /// frobenius, spectral or none.
    #[arg(long)]
    pub scale: Option<String>,
    /// lyapunov, svd or pass.
    #[arg(long)]
    pub grad: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub signed_sqrt: Option<String>,
    #[arg(long)]
    pub l2: Option<String>,
    /// double or single.
    #[arg(long)]
    pub precision: Option<String>,
}

impl PipelineFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("epsilon", self.epsilon.clone()),
            ("matfun", self.matfun.clone()),
            ("forward", self.forward.clone()),
            ("iterations", self.iterations.clone()),
            ("scale", self.scale.clone()),
            ("grad", self.grad.clone()),
            ("tau", self.tau.clone()),
            ("signed_sqrt", self.signed_sqrt.clone()),
            ("l2", self.l2.clone()),
            ("precision", self.precision.clone()),
        ]
    }
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub svm_c: Option<String>,
    #[arg(long)]
    pub init_epochs: Option<String>,
    /// true to update the projection as well as the classifier.
    #[arg(long)]
    pub fine_tune: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("lr", self.lr.clone()),
            ("momentum", self.momentum.clone()),
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("seed", self.seed.clone()),
            ("svm_c", self.svm_c.clone()),
            ("init_epochs", self.init_epochs.clone()),
            ("fine_tune", self.fine_tune.clone()),
        ]
    }
}

#[derive(Debug, Args, Default)]
pub struct DataFlags {
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub locations: Option<String>,
    #[arg(long)]
    pub samples_per_class: Option<String>,
    #[arg(long)]
    pub burst_factor: Option<String>,
    #[arg(long)]
    pub noise_sigma: Option<String>,
}

impl DataFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("classes", self.classes.clone()),
            ("channels", self.channels.clone()),
            ("locations", self.locations.clone()),
            ("samples_per_class", self.samples_per_class.clone()),
            ("burst_factor", self.burst_factor.clone()),
            ("noise_sigma", self.noise_sigma.clone()),
        ]
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional held-out dataset file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model destination.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of per-epoch losses.
    #[arg(long)]
    pub losses: Option<PathBuf>,
    /// CSV of final accuracies.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV of the accuracy.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated exponents in (0, 1].
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated benchmark seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also run the exponent sweep and write it here.
    #[arg(long)]
    pub sweep_out: Option<PathBuf>,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Runs `write` against `path`, or stdout when no path is given.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut f = create(p)?;
            write(&mut f)?;
            f.flush().map_err(|e| CliError::io(p, e))
        }
        None => write(&mut io::stdout().lock()),
    }
}

fn manifest(command: &str, cfg: &KvConfig, seed: Option<u64>, outputs: &[&Path]) -> CliResult<()> {
    if !outputs.is_empty() {
        RunManifest::new(command, cfg, seed, outputs).write()?;
    }
    Ok(())
}

fn settings(config: Option<&Path>, flags: &[(&str, Option<String>)]) -> CliResult<KvConfig> {
    let mut kv = KvConfig::load_optional(config)?;
    kv.overlay(flags);
    Ok(kv)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::from(e)
}

pub fn cmd_sqrt_bench(a: &SqrtBenchArgs) -> CliResult<()> {
    let mut kv = settings(
        a.config.as_deref(),
        &[
            ("dims", a.dims.clone()),
            ("conds", a.conds.clone()),
            ("iterations", a.iterations.clone()),
            ("scheme", a.scheme.clone()),
            ("scale", a.scale.clone()),
            ("input_scale", a.input_scale.clone()),
            ("seed", a.seed.clone()),
        ],
    )?;
    if a.omit_timing {
        kv.set("timing", "false");
    }
    let mut r = Reader::new(&kv);
    let schemes = match r.raw("scheme").as_deref() {
        None | Some("both") => vec![SqrtScheme::DenmanBeavers, SqrtScheme::ModifiedNewtonSchulz],
        Some(v) => vec![parse_sqrt_scheme(v)?],
    };
    let spec = SqrtBenchSpec {
        dims: r.list("dims")?.unwrap_or_else(|| vec![16, 64]),
        conds: r.list("conds")?.unwrap_or_else(|| vec![10.0, 1e3]),
        iterations: r
            .list("iterations")?
            .unwrap_or_else(|| vec![0, 1, 5, 10, 20]),
        schemes,
        scale: r.raw("scale").map(|v| parse_scale(&v)).transpose()?,
        input_scale: r.or("input_scale", 100.0)?,
        seed: r.or("seed", 0u64)?,
        timing: r.flag("timing", true)?,
    };
    r.finish()?;
    let rows = sqrt_bench(&spec)?;
    emit(a.out.as_deref(), |w| write_sqrt_bench_csv(&rows, w))?;
    let outs: Vec<&Path> = a.out.as_deref().into_iter().collect();
    manifest("sqrt-bench", &kv, Some(spec.seed), &outs)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let kv = settings(
        a.config.as_deref(),
        &[
            ("kind", a.kind.clone()),
            ("scheme", a.scheme.clone()),
            ("tau", a.tau.clone()),
            ("dim", a.dim.clone()),
            ("profile", a.profile.clone()),
            ("h", a.h.clone()),
            ("seed", a.seed.clone()),
        ],
    )?;
    let mut r = Reader::new(&kv);
    let kind = parse_matfun(&r.raw("kind").unwrap_or_else(|| "sqrt".into()))?
        .ok_or_else(|| CliError::Usage("gradcheck needs a matrix function".into()))?;
    let tau = r.or("tau", spdnorm::grad::DEFAULT_TAU)?;
    let scheme = parse_grad(&r.raw("scheme").unwrap_or_else(|| "lyapunov".into()), tau)?;
    let profile = SpectrumProfile::parse(&r.raw("profile").unwrap_or_else(|| "wellsep".into()))?;
    let dim = r.or("dim", 16usize)?;
    let h = r.or("h", 1e-5)?;
    let seed = r.or("seed", 0u64)?;
    r.finish()?;
    if scheme.validate_for(kind).is_err() {
        return Err(CliError::Usage(format!(
            "scheme {} is not available for {kind}",
            crate::config::grad_name(scheme)
        )));
    }
    let outcome = run_gradcheck(kind, scheme, profile, dim, h, seed)?;
    let rep = &outcome.report;
    println!("kind = {kind}");
    println!("scheme = {}", crate::config::grad_name(scheme));
    println!("profile = {}", profile.name());
    println!("dim = {dim}");
    println!("max_abs_diff = {:e}", rep.max_abs_diff);
    println!("max_rel_diff = {:e}", rep.max_rel_diff);
    println!("analytic_norm = {:e}", rep.analytic_norm);
    println!("fd_norm = {:e}", rep.fd_norm);
    println!(
        "worst_entry = ({}, {})",
        rep.worst_entry.0, rep.worst_entry.1
    );
    println!("status = {}", outcome.status());
    if let Some(out) = &a.out {
        emit(Some(out), |w| {
            write_gradcheck_csv(std::slice::from_ref(&outcome), w)
        })?;
        manifest("gradcheck", &kv, Some(seed), &[out])?;
    }
    match outcome.status() {
        "fail" => Err(CliError::CheckFailed(format!(
            "max_rel_diff {:e} exceeds threshold {}",
            rep.max_rel_diff,
            outcome
                .threshold
                .map_or("(non-finite report)".to_string(), |t| format!("{t:e}"))
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let mut flags = a.data.pairs();
    flags.push(("seed", a.seed.clone()));
    let kv = settings(a.config.as_deref(), &flags)?;
    let mut r = Reader::new(&kv);
    let spec = read_spec(&mut r)?;
    let seed = r.or("seed", 0u64)?;
    r.finish()?;
    let (train_set, test_set) = generate_benchmark(&spec, seed)?;
    save_dataset(&a.train_out, &train_set)?;
    save_dataset(&a.test_out, &test_set)?;
    let mut snapshot = write_spec(&spec);
    snapshot.set("seed", seed.to_string());
    manifest(
        "generate",
        &snapshot,
        Some(seed),
        &[&a.train_out, &a.test_out],
    )
}

fn write_accuracy_csv(w: &mut dyn Write, rows: &[(&str, f64)]) -> CliResult<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["split", "accuracy"]).map_err(csv_err)?;
    for (split, acc) in rows {
        c.write_record([split.to_string(), acc.to_string()])
            .map_err(csv_err)?;
    }
    c.flush().map_err(|e| CliError::Io {
        path: "csv".into(),
        source: e,
    })
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut flags = a.pipeline.pairs();
    flags.extend(a.train.pairs());
    let kv = settings(a.config.as_deref(), &flags)?;
    let mut r = Reader::new(&kv);
    let pipeline = read_pipeline(&mut r)?;
    let tcfg = read_train(&mut r)?;
    r.finish()?;

    let train_set = load_dataset(&a.data)?;
    let test_set = a.test.as_deref().map(load_dataset).transpose()?;
    let outcome = train(&train_set, &pipeline, &tcfg)?;
    save_model(&a.out, &outcome.model)?;

    let mut accuracies = vec![("train", evaluate(&outcome.model, &train_set)?)];
    if let Some(t) = &test_set {
        accuracies.push(("test", evaluate(&outcome.model, t)?));
    }
    for (split, acc) in &accuracies {
        println!("{split}_accuracy = {acc}");
    }
    if let Some(path) = &a.losses {
        emit(Some(path), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["phase", "epoch", "loss"])
                .map_err(csv_err)?;
            let phases = [("init", &outcome.init_losses), ("train", &outcome.losses)];
            for (phase, losses) in phases {
                for (e, l) in losses.iter().enumerate() {
                    c.write_record([phase.to_string(), e.to_string(), l.to_string()])
                        .map_err(csv_err)?;
                }
            }
            c.flush().map_err(|e| CliError::io(path, e))
        })?;
    }
    if let Some(path) = &a.metrics {
        emit(Some(path), |w| write_accuracy_csv(w, &accuracies))?;
    }
    let mut snapshot = write_pipeline(&pipeline);
    snapshot.extend(&write_train(&tcfg));
    let mut outs: Vec<&Path> = vec![&a.out];
    outs.extend(a.losses.as_deref());
    outs.extend(a.metrics.as_deref());
    manifest("train", &snapshot, Some(tcfg.seed), &outs)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let acc = evaluate(&model, &data)?;
    println!("accuracy = {acc}");
    if let Some(out) = &a.out {
        emit(Some(out), |w| write_accuracy_csv(w, &[("eval", acc)]))?;
        let mut snapshot = write_pipeline(&model.pipeline);
        snapshot.set("model", a.model.display().to_string());
        snapshot.set("data", a.data.display().to_string());
        manifest("eval", &snapshot, None, &[out])?;
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let mut flags = a.pipeline.pairs();
    flags.extend(a.train.pairs());
    flags.push(("p", a.p.clone()));
    let kv = settings(a.config.as_deref(), &flags)?;
    let mut r = Reader::new(&kv);
    let p_values: Vec<f64> = r.list("p")?.unwrap_or_else(|| vec![1.0, 0.75, 0.5, 0.25]);
    let pipeline = read_pipeline(&mut r)?;
    let tcfg = read_train(&mut r)?;
    r.finish()?;
    let train_set = load_dataset(&a.data)?;
    let test_set = load_dataset(&a.test)?;
    let rows = exponent_sweep(&train_set, &test_set, &pipeline, &tcfg, &p_values)?;
    emit(a.out.as_deref(), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["p", "accuracy"]).map_err(csv_err)?;
        for (p, acc) in &rows {
            c.write_record([p.to_string(), acc.to_string()])
                .map_err(csv_err)?;
        }
        c.flush().map_err(|e| CliError::Io {
            path: "csv".into(),
            source: e,
        })
    })?;
    let outs: Vec<&Path> = a.out.as_deref().into_iter().collect();
    manifest("sweep", &kv, Some(tcfg.seed), &outs)
}

pub fn cmd_ablation(a: &AblationArgs) -> CliResult<()> {
    let mut flags = a.data.pairs();
    flags.push(("seeds", a.seeds.clone()));
    let kv = settings(a.config.as_deref(), &flags)?;
    let mut r = Reader::new(&kv);
    let mut s = AblationSettings::benchmark();
    s.spec = read_spec(&mut r)?;
    if let Some(seeds) = r.list("seeds")? {
        s.seeds = seeds;
    }
    r.finish()?;

    let rows = run_ablation(&s, None)?;
    emit(a.out.as_deref(), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["variant", "seed", "train_accuracy", "test_accuracy"])
            .map_err(csv_err)?;
        for row in &rows {
            c.write_record([
                row.variant.to_string(),
                row.seed.to_string(),
                row.train_accuracy.to_string(),
                row.test_accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for (name, mean) in mean_test_accuracy(&rows) {
            c.write_record([
                name.to_string(),
                "mean".into(),
                String::new(),
                mean.to_string(),
            ])
            .map_err(csv_err)?;
        }
        c.flush().map_err(|e| CliError::Io {
            path: "csv".into(),
            source: e,
        })
    })?;
    if let Some(path) = &a.sweep_out {
        let sweep = run_sweep(&s)?;
        emit(Some(path), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["seed", "p", "test_accuracy"])
                .map_err(csv_err)?;
            for row in &sweep {
                c.write_record([
                    row.seed.to_string(),
                    row.p.to_string(),
                    row.test_accuracy.to_string(),
                ])
                .map_err(csv_err)?;
            }
            for (p, mean) in mean_sweep(&sweep, &s.p_values) {
                c.write_record(["mean".to_string(), p.to_string(), mean.to_string()])
                    .map_err(csv_err)?;
            }
            c.flush().map_err(|e| CliError::io(path, e))
        })?;
    }
    let mut snapshot = write_spec(&s.spec);
    snapshot.set(
        "seeds",
        s.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    snapshot.extend(&write_train(&s.train));
    let mut outs: Vec<&Path> = a.out.as_deref().into_iter().collect();
    outs.extend(a.sweep_out.as_deref());
    manifest("ablation", &snapshot, None, &outs)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::SqrtBench(a) => cmd_sqrt_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablation(a) => cmd_ablation(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success (including `--help`), 1 for usage errors, 2 for numerical
/// failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
