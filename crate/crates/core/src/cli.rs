//! The `partial-steer` command line.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or input error,
//! 3 training divergence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::groups::Group;
use crate::kernelproj::{planar_basis, project_kernel, random_samples, kernel_grid, KernelLayout, Mode};
use crate::likelihood::{export_csv, DENSE_CURVE_POINTS};
use crate::nn::train::history_csv;
use crate::nn::{evaluate_mse, train, Model, ModelConfig, Nonlinearity, TrainOptions};
use crate::reps::IrrepId;
use crate::tasks::{self, generate_vectors, Task};
use crate::verify::{self, Mutation, VerifyOptions};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

/// Residual allowed for `basis` output.
pub const BASIS_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "partial-steer", version, about = "Steerable MLPs with a learnable degree of equivariance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Train one model on the Vectors task.
    Train(TrainArgs),
    /// Run a named multi-seed experiment preset.
    Experiment(ExperimentArgs),
    /// Export the learnt densities of a checkpoint.
    Likelihood(LikelihoodArgs),
    /// Per-layer equivariance error over the group grid.
    EquivError(EquivErrorArgs),
    /// Sample the equivariant kernel basis for one irrep pair on a grid.
    Basis(BasisArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only checks whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Corrupt an internal result to confirm the checks can fail.
    #[arg(long, value_enum)]
    pub inject: Option<MutationArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// List the check names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MutationArg {
    CgSignFlip,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        match m {
            MutationArg::CgSignFlip => Mutation::CgSignFlip,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub group: Option<Group>,
    /// equivariant, probabilistic or preliminary.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// gated or fourier_elu.
    #[arg(long)]
    pub nonlinearity: Option<Nonlinearity>,
    #[arg(long)]
    pub bandlimit: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub alpha_align: Option<f64>,
    #[arg(long)]
    pub alpha_kl: Option<f64>,
    /// One density shared by every layer.
    #[arg(long)]
    pub shared_equivariance: bool,
    /// Add noise to the preliminary-mode initialisation.
    #[arg(long)]
    pub preliminary_noise: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of generated vectors before the train/test split.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the flag names (snake_case) as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Settings read from `--config`; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub task: Option<Task>,
    pub group: Option<Group>,
    pub mode: Option<Mode>,
    pub nonlinearity: Option<Nonlinearity>,
    pub bandlimit: Option<u32>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub alpha_align: Option<f64>,
    pub alpha_kl: Option<f64>,
    pub shared_equivariance: Option<bool>,
    pub preliminary_noise: Option<bool>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub data_seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved training settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSettings {
    pub task: Task,
    pub group: Group,
    pub mode: Mode,
    pub nonlinearity: Nonlinearity,
    pub bandlimit: u32,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub alpha_align: f64,
    pub alpha_kl: f64,
    pub shared_equivariance: bool,
    pub preliminary_noise: bool,
    pub seed: u64,
    pub samples: usize,
    pub data_seed: u64,
    pub out: PathBuf,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let opts = TrainOptions::default();
        let model = ModelConfig::vectors(Group::o2(), Mode::Probabilistic, Nonlinearity::Gated, 1);
        Self {
            task: Task::Angle,
            group: model.group,
            mode: Mode::Probabilistic,
            nonlinearity: model.nonlinearity,
            bandlimit: model.bandlimit,
            epochs: opts.epochs,
            lr: opts.lr,
            batch: opts.batch,
            alpha_align: model.alpha_align,
            alpha_kl: model.alpha_kl,
            shared_equivariance: false,
            preliminary_noise: false,
            seed: opts.seed,
            samples: 1000,
            data_seed: 0,
            out: PathBuf::from("runs/train"),
        }
    }
}

impl TrainSettings {
    /// Flags over config file over defaults.
    pub fn resolve(args: &TrainArgs, file: &TrainFile) -> Self {
        let d = Self::default();
        Self {
            task: args.task.or(file.task).unwrap_or(d.task),
            group: args.group.or(file.group).unwrap_or(d.group),
            mode: args.mode.or(file.mode).unwrap_or(d.mode),
            nonlinearity: args.nonlinearity.or(file.nonlinearity).unwrap_or(d.nonlinearity),
            bandlimit: args.bandlimit.or(file.bandlimit).unwrap_or(d.bandlimit),
            epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
            lr: args.lr.or(file.lr).unwrap_or(d.lr),
            batch: args.batch.or(file.batch).unwrap_or(d.batch),
            alpha_align: args.alpha_align.or(file.alpha_align).unwrap_or(d.alpha_align),
            alpha_kl: args.alpha_kl.or(file.alpha_kl).unwrap_or(d.alpha_kl),
            shared_equivariance: args.shared_equivariance
                || file.shared_equivariance.unwrap_or(d.shared_equivariance),
            preliminary_noise: args.preliminary_noise || file.preliminary_noise.unwrap_or(d.preliminary_noise),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            samples: args.samples.or(file.samples).unwrap_or(d.samples),
            data_seed: args.data_seed.or(file.data_seed).unwrap_or(d.data_seed),
            out: args.out.clone().or_else(|| file.out.clone()).unwrap_or(d.out),
        }
    }

    /// Settings that are accepted but have no effect.
    pub fn warnings(&self, bandlimit_given: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.mode == Mode::Equivariant && bandlimit_given {
            out.push("--bandlimit has no effect in equivariant mode; ignored".to_owned());
        }
        if self.mode == Mode::Equivariant && self.shared_equivariance {
            out.push("--shared-equivariance has no effect in equivariant mode; ignored".to_owned());
        }
        if self.mode != Mode::Preliminary && self.preliminary_noise {
            out.push("--preliminary-noise only applies to preliminary mode; ignored".to_owned());
        }
        out
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::vectors(self.group, self.mode, self.nonlinearity, self.task.outputs());
        c.bandlimit = self.bandlimit;
        c.alpha_align = self.alpha_align;
        c.alpha_kl = self.alpha_kl;
        c.preliminary_noise = self.preliminary_noise;
        if self.shared_equivariance {
            c = c.shared("shared");
        }
        c
    }

    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Preset name; `--list` prints them.
    #[arg(long, required_unless_present = "list")]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the preset's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub list: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    /// Checkpoint JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dense points per coset for continuous groups.
    #[arg(long, default_value_t = DENSE_CURVE_POINTS)]
    pub samples: usize,
    /// Layer id or index; all densities when absent.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquivErrorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grid points per coset for continuous groups.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Number of generated input vectors.
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Seed of the generated inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report the difference to a freshly built fully equivariant twin.
    #[arg(long)]
    pub relative: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(long)]
    pub group: Group,
    /// Input irrep as `flip,freq`.
    #[arg(long)]
    pub in_irrep: IrrepId,
    /// Output irrep as `flip,freq`.
    #[arg(long)]
    pub out_irrep: IrrepId,
    /// Grid side length in pixels.
    #[arg(long, default_value_t = 9)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub rings: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}

pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Likelihood(a) => cmd_likelihood(&a),
        Command::EquivError(a) => cmd_equiv_error(&a),
        Command::Basis(a) => cmd_basis(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::CgVerification { .. } => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    if args.list {
        for n in verify::check_names() {
            println!("{n}");
        }
        return Ok(EXIT_OK);
    }
    let opts = VerifyOptions {
        filter: args.filter.clone(),
        mutation: args.inject.map(Into::into),
        seed: args.seed,
    };
    let checks = verify::run(&opts);
    if checks.is_empty() {
        return Err(Error::Config(format!(
            "no check matches `{}`",
            args.filter.as_deref().unwrap_or_default()
        )));
    }
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        Ok(EXIT_OK)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(EXIT_VERIFY)
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<u8> {
    let file = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainFile::default(),
    };
    let s = TrainSettings::resolve(args, &file);
    let bandlimit_given = args.bandlimit.is_some() || file.bandlimit.is_some();
    for w in s.warnings(bandlimit_given) {
        eprintln!("warning: {w}");
    }
    let config = s.model_config();
    let data = generate_vectors(s.samples, s.data_seed);
    let start = Instant::now();
    let outcome = train(&config, &data.train_set(s.task), &s.options())?;
    let seconds = start.elapsed().as_secs_f64();
    let train_mse = evaluate_mse(&outcome.model, &data.train_set(s.task))?;
    let test_mse = evaluate_mse(&outcome.model, &data.test_set(s.task))?;

    std::fs::create_dir_all(&s.out)?;
    outcome.model.save(&s.out.join("checkpoint.json"))?;
    std::fs::write(s.out.join("metrics.csv"), history_csv(&outcome.history))?;
    let norms = outcome
        .model
        .likelihoods
        .iter()
        .map(|p| outcome.model.normalized(&p.layer_id))
        .collect::<Result<Vec<_>>>()?;
    std::fs::write(s.out.join("likelihood.csv"), export_csv(&norms, Some(DENSE_CURVE_POINTS)))?;
    let summary = json!({
        "settings": s,
        "train_mse": train_mse,
        "test_mse": test_mse,
        "seconds": seconds,
    });
    std::fs::write(s.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} {} {} on {}: train mse {train_mse:.6}, test mse {test_mse:.6} ({seconds:.1}s) -> {}",
        s.mode,
        s.nonlinearity,
        s.task,
        s.group,
        s.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<u8> {
    if args.list {
        for n in tasks::PRESET_NAMES {
            println!("{n}");
        }
        return Ok(EXIT_OK);
    }
    let name = args.preset.as_deref().unwrap_or_default();
    let mut p = tasks::preset(name)?;
    if let Some(e) = args.epochs {
        p.train.epochs = e;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let (report, _) = tasks::run_preset(&p, Some(&out))?;
    for r in &report.per_seed {
        match (&r.mse, &r.error) {
            (Some(m), _) => println!("seed {:>3}: test mse {m:.6}", r.seed),
            (None, Some(e)) => println!("seed {:>3}: failed: {e}", r.seed),
            _ => {}
        }
    }
    match (report.mean, report.std) {
        (Some(m), Some(sd)) => println!("{name}: {m:.6} ({sd:.6}) -> {}", out.display()),
        _ => {
            eprintln!("error: every seed failed");
            return Ok(EXIT_DIVERGED);
        }
    }
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint `{}` not found", path.display())));
    }
    Model::load(path)
}

/// Indices of the layers selected by `--layer`, an id or an index.
fn select_layers(model: &Model, layer: Option<&str>) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..model.layers.len()).collect();
    let Some(sel) = layer else { return Ok(all) };
    if let Ok(i) = sel.parse::<usize>() {
        return if i < all.len() {
            Ok(vec![i])
        } else {
            Err(Error::UnknownLayer(sel.to_owned()))
        };
    }
    let hits: Vec<usize> = all.into_iter().filter(|&i| model.layers[i].layer_id == sel).collect();
    if hits.is_empty() {
        Err(Error::UnknownLayer(sel.to_owned()))
    } else {
        Ok(hits)
    }
}

pub fn cmd_likelihood(args: &LikelihoodArgs) -> Result<u8> {
    let model = load_model(&args.model)?;
    let mut norms = Vec::new();
    for i in select_layers(&model, args.layer.as_deref())? {
        let n = model.layer_likelihood(i)?;
        if !norms.iter().any(|m: &crate::likelihood::NormalizedLikelihood| m.layer_id == n.layer_id) {
            norms.push(n);
        }
    }
    let text = match args.format {
        Format::Csv => export_csv(&norms, Some(args.samples)),
        Format::Json => {
            let group = model.group();
            let layers: Vec<_> = norms
                .iter()
                .map(|n| {
                    let plan: Vec<_> = n
                        .plan
                        .elements
                        .iter()
                        .zip(&n.sampled_values)
                        .map(|(g, v)| json!({"reflect": g.reflect, "theta_radians": g.theta, "lambda": v.max(0.0)}))
                        .collect();
                    let dense: Vec<_> = if group.is_finite() {
                        Vec::new()
                    } else {
                        group
                            .sample_grid(args.samples)
                            .iter()
                            .map(|g| json!({"reflect": g.reflect, "theta_radians": g.theta, "lambda": n.evaluate(g).max(0.0)}))
                            .collect()
                    };
                    json!({"layer_id": n.layer_id, "bandlimit": n.coeffs.bandlimit, "plan": plan, "dense": dense})
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&json!({"group": group, "layers": layers}))?;
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_equiv_error(args: &EquivErrorArgs) -> Result<u8> {
    let model = load_model(&args.model)?;
    if args.batch == 0 {
        return Err(Error::Config("--batch must be positive".into()));
    }
    let group = model.group();
    let elements = group.sample_grid(args.samples);
    let data = generate_vectors(args.batch, args.seed);
    let x = data.dataset(Task::Angle, &(0..args.batch).collect::<Vec<_>>()).x;
    let eps = model.equivariance_errors(&x, &elements)?;
    let baseline = if args.relative {
        let mut cfg = model.config.clone();
        cfg.modes = vec![Mode::Equivariant; cfg.n_layers()];
        Some(Model::new(cfg, model.seed)?.equivariance_errors(&x, &elements)?)
    } else {
        None
    };
    let mut out = String::from("layer,layer_id,reflect,theta_radians,lambda,epsilon\n");
    for (i, layer) in model.layers.iter().enumerate() {
        let norm = model.layer_likelihood(i)?;
        for (k, g) in elements.iter().enumerate() {
            let e = eps[i][k] - baseline.as_ref().map_or(0.0, |b| b[i][k]);
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{e}",
                layer.layer_id,
                u8::from(g.reflect),
                g.theta,
                norm.evaluate(g).max(0.0)
            );
        }
    }
    emit(args.out.as_deref(), &out)?;
    Ok(EXIT_OK)
}

/// One `d_out × d_in` kernel per equivariant basis element, sampled on a
/// `size × size` grid; entries are flattened row-major.
pub fn basis_grids(
    group: Group,
    in_irrep: IrrepId,
    out_irrep: IrrepId,
    size: usize,
    rings: usize,
    seed: u64,
) -> Result<(serde_json::Value, f64)> {
    if size == 0 || rings == 0 {
        return Err(Error::Config("--size and --rings must be positive".into()));
    }
    let basis = planar_basis(group, in_irrep.freq + out_irrep.freq, rings, 1.0)?;
    let layout = KernelLayout::new(&basis, in_irrep, out_irrep, Mode::Equivariant)?;
    let extent = (rings - 1).max(1) as f64;
    let points = kernel_grid(size, extent);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = random_samples(&group, 100, extent, &mut rng);
    let mut residual: f64 = 0.0;
    let mut grid = Vec::with_capacity(layout.n_weights);
    for k in 0..layout.n_weights {
        let mut w = vec![0.0; layout.n_weights];
        w[k] = 1.0;
        let kernel = project_kernel(&w, &basis, None, None, in_irrep, out_irrep, Mode::Equivariant)?;
        residual = residual.max(kernel.steerability_residual(&samples));
        let pixels: Vec<Vec<f64>> = points
            .iter()
            .map(|x| kernel.evaluate(*x).transpose().as_slice().to_vec())
            .collect();
        grid.push(pixels);
    }
    let doc = json!({
        "group": group,
        "in_irrep": in_irrep.to_string(),
        "out_irrep": out_irrep.to_string(),
        "size": size,
        "grid": grid,
    });
    Ok((doc, residual))
}

pub fn cmd_basis(args: &BasisArgs) -> Result<u8> {
    let (doc, residual) = basis_grids(args.group, args.in_irrep, args.out_irrep, args.size, args.rings, args.seed)?;
    let n = doc["grid"].as_array().map_or(0, Vec::len);
    let mut text = serde_json::to_string(&doc)?;
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    let ok = residual <= BASIS_RESIDUAL_TOL;
    eprintln!(
        "{} -> {} on {}: {n} basis kernels, steerability residual {residual:.3e} ({})",
        args.in_irrep,
        args.out_irrep,
        args.group,
        if ok { "ok" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}
