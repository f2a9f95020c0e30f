//! Experiment front end: `generate`, `complete`, `sweep` and `nsi`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generators::{gapped_spectrum, generate_instance, load_instance, save_instance, symmetric_with_spectrum, InstanceSpec};
use crate::least_squares::default_median_copies;
use crate::initialize::default_power_iters;
use crate::linalg::OrthonormalBasis;
use crate::nsi::{nsi_run, perturbed_start, NoiseModel, SpectralTruth};
use crate::rng::{derive_seed, stream};
use crate::saltls::{default_parameters, reconstruct_and_score, salt_ls, SaltlsConfig, Schedule};
use crate::sampling::bernoulli_sample;
use crate::textio::{fmt_f64, save_matrix, KeyValues};
use crate::truth::GroundTruth;

#[derive(Debug, Parser)]
#[command(name = "saltls", version, about = "Matrix completion by smoothed alternating least squares")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an instance from a key = value spec and write it to a directory.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample an instance, run the algorithm and score the factors.
    Complete {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of (p, seed) cells and write one table row per cell.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run noisy subspace iteration and write its trace.
    Nsi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 0 success, 1 usage or input error, 2 numerical failure, 3 infeasible spec.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::RankDeficient { .. }
        | Error::RankFailure { .. }
        | Error::GapUndefined { .. }
        | Error::NotSymmetric { .. }
        | Error::NotOrthonormal { .. }
        | Error::ZeroInput => 2,
        Error::CoherenceUnachievable { .. } | Error::NoiseInfeasible(_) => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, out } => cmd_generate(spec, out),
        Command::Complete {
            instance,
            p,
            seed,
            config,
            out,
        } => {
            let algo = match config {
                Some(path) => KeyValues::load(path)?,
                None => KeyValues::default(),
            };
            cmd_complete(instance, *p, *seed, &algo, out)
        }
        Command::Sweep { spec, out } => cmd_sweep(spec, out),
        Command::Nsi { config, seed, out } => cmd_nsi(config, *seed, out),
    }
}

pub fn cmd_generate(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = InstanceSpec::load(spec_path)?;
    let truth = generate_instance(&spec)?;
    save_instance(&truth, out)?;
    fs::write(out.join("spec.cfg"), spec.to_key_values().render())?;
    Ok(())
}

const ALGO_KEYS: &[&str] = &[
    "eps",
    "iterations",
    "mu",
    "mu_init",
    "t_median",
    "c_mu",
    "c_l",
    "power_iters",
    "schedule",
    "gamma",
    "mu_star",
];

/// Algorithm settings for `truth`. Unset keys follow the default parameter
/// rules, with `gamma` and `mu_star` taken from the instance and `mu_init`
/// from its basis coherence.
pub fn algo_config(kv: &KeyValues, truth: &GroundTruth, seed: u64) -> Result<SaltlsConfig> {
    kv.ensure_known(ALGO_KEYS)?;
    let n = truth.n();
    let k = truth.k();
    let eps: f64 = kv.get_or("eps", 1e-3)?;
    let gamma: f64 = kv.get_or("gamma", truth.gamma_k())?;
    let mu_star: f64 = kv.get_or("mu_star", truth.mu_star())?;
    let c_mu: f64 = kv.get_or("c_mu", 1.0)?;
    let c_l: f64 = kv.get_or("c_l", 4.0)?;
    let (mu, iterations) = default_parameters(n as f64, k, eps, gamma, mu_star, c_mu, c_l)?;
    let cfg = SaltlsConfig {
        k,
        eps,
        iterations: kv.get_or("iterations", iterations)?,
        mu: kv.get_or("mu", mu)?,
        mu_init: kv.get_or("mu_init", truth.mu_u().max(1.0))?,
        t_median: kv.get_or("t_median", default_median_copies(n))?,
        c_mu,
        c_l,
        power_iters: kv.get_or("power_iters", default_power_iters(n, gamma))?,
        schedule: kv.get_or("schedule", Schedule::Fresh)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One scored run of the algorithm, shared by `complete` and `sweep`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub p: f64,
    pub seed: u64,
    pub subspace_err: f64,
    /// Subspace error of `X_L`, the iterate after the output basis.
    pub subspace_err_last: f64,
    pub frob_rel_err: f64,
    pub success: bool,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "p,seed,subspace_err,subspace_err_last,frob_rel_err,success";

impl CellResult {
    pub fn csv_row(&self, with_time: bool) -> String {
        let mut row = format!(
            "{},{},{},{},{},{}",
            fmt_f64(self.p),
            self.seed,
            fmt_f64(self.subspace_err),
            fmt_f64(self.subspace_err_last),
            fmt_f64(self.frob_rel_err),
            u8::from(self.success)
        );
        if with_time {
            row.push(',');
            row.push_str(&fmt_f64(self.wall_time));
        }
        row
    }
}

pub struct CellOutput {
    pub result: CellResult,
    pub run: crate::saltls::SaltlsOutput,
}

/// Samples `truth` at rate `p` and runs the algorithm. The sample draws from
/// `derive(seed, "sample")` and the algorithm from `derive(seed, "saltls")`.
pub fn run_cell(truth: &GroundTruth, p: f64, seed: u64, algo: &KeyValues) -> Result<CellOutput> {
    let cfg = algo_config(algo, truth, derive_seed(seed, "saltls", 0))?;
    let start = Instant::now();
    let sample = bernoulli_sample(truth.a(), p, &mut stream(seed, "sample", 0))?;
    let run = salt_ls(&sample, &cfg, Some(truth))?;
    let wall_time = start.elapsed().as_secs_f64();
    let metrics = reconstruct_and_score(&run.x, &run.y, truth)?;
    let last = reconstruct_and_score(&run.x_final, &run.y, truth)?;
    Ok(CellOutput {
        result: CellResult {
            p,
            seed,
            subspace_err: metrics.subspace_err,
            subspace_err_last: last.subspace_err,
            frob_rel_err: metrics.frob_rel_err,
            success: metrics.frob_rel_err <= cfg.eps,
            wall_time,
        },
        run,
    })
}

pub fn cmd_complete(instance: &Path, p: f64, seed: u64, algo: &KeyValues, out: &Path) -> Result<()> {
    let truth = load_instance(instance)?;
    let cell = run_cell(&truth, p, seed, algo)?;
    fs::create_dir_all(out)?;
    save_matrix(cell.run.x.matrix(), &out.join("x.txt"))?;
    save_matrix(&cell.run.y, &out.join("y.txt"))?;
    fs::write(
        out.join("metrics.csv"),
        format!("{METRICS_HEADER}\n{}\n", cell.result.csv_row(false)),
    )?;
    if let Some(trace) = &cell.run.trace {
        fs::write(out.join("trace.csv"), trace.to_csv())?;
    }
    for w in &cell.run.warnings {
        eprintln!("warning: {w:?}");
    }
    Ok(())
}

/// Experiment file: `instance.*` keys form the instance spec, `algo.*` keys
/// the algorithm settings, plus `p_grid`, `seeds` and `record_wall_time`.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub instance: InstanceSpec,
    pub p_grid: Vec<f64>,
    pub seeds: u64,
    pub algo: KeyValues,
    pub record_wall_time: bool,
}

impl ExperimentSpec {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let top = kv.unprefixed();
        top.ensure_known(&["p_grid", "seeds", "record_wall_time"])?;
        let p_grid: Vec<f64> = top
            .list("p_grid")?
            .ok_or_else(|| Error::Parse("missing key p_grid".into()))?;
        if let Some(&bad) = p_grid.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidProbability(bad));
        }
        let seeds: u64 = top.require("seeds")?;
        if seeds == 0 {
            return Err(Error::InvalidArgument("seeds must be at least 1".into()));
        }
        Ok(Self {
            instance: InstanceSpec::from_key_values(&kv.with_prefix("instance."))?,
            p_grid,
            seeds,
            algo: kv.with_prefix("algo."),
            record_wall_time: top.get_or("record_wall_time", false)?,
        })
    }
}

/// Runs every `(p, seed)` cell in parallel and returns the rows in grid order.
pub fn sweep(exp: &ExperimentSpec) -> Result<Vec<CellResult>> {
    let truth = generate_instance(&exp.instance)?;
    let cells: Vec<(f64, u64)> = exp
        .p_grid
        .iter()
        .flat_map(|&p| (0..exp.seeds).map(move |s| (p, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(p, s)| run_cell(&truth, p, s, &exp.algo).map(|c| c.result))
        .collect()
}

pub fn cmd_sweep(spec: &Path, out: &Path) -> Result<()> {
    let exp = ExperimentSpec::from_key_values(&KeyValues::load(spec)?)?;
    let rows = sweep(&exp)?;
    fs::create_dir_all(out)?;
    let mut text = String::from(METRICS_HEADER);
    if exp.record_wall_time {
        text.push_str(",wall_time");
    }
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv_row(exp.record_wall_time));
        text.push('\n');
    }
    fs::write(out.join("sweep.csv"), text)?;
    Ok(())
}

const NSI_KEYS: &[&str] = &[
    "n",
    "k",
    "gamma",
    "steps",
    "noise",
    "noise_scale",
    "eps",
    "factor",
    "start_sin",
    "seed",
];

pub fn cmd_nsi(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let kv = KeyValues::load(config)?;
    kv.ensure_known(NSI_KEYS)?;
    let n: usize = kv.require("n")?;
    let k: usize = kv.require("k")?;
    let gamma: f64 = kv.require("gamma")?;
    let steps: usize = kv.require("steps")?;
    let seed = match seed {
        Some(s) => s,
        None => kv.get_or("seed", 0)?,
    };
    let mut noise = match kv.str("noise").unwrap_or("zero") {
        "zero" => NoiseModel::Zero,
        "gaussian" => NoiseModel::Gaussian {
            scale: kv.require("noise_scale")?,
        },
        "admissible" => NoiseModel::AdmissibleGaussian {
            eps: kv.require("eps")?,
            factor: kv.get_or("factor", 1.0)?,
        },
        other => return Err(Error::Parse(format!("unknown noise kind {other:?}"))),
    };
    let a = symmetric_with_spectrum(&gapped_spectrum(n, k, gamma)?, &mut stream(seed, "matrix", 0))?;
    let truth = SpectralTruth::from_matrix(&a, k)?;
    let x0: OrthonormalBasis = perturbed_start(&truth.u, kv.get_or("start_sin", 0.2)?, &mut stream(seed, "start", 0))?;
    let (x, trace) = nsi_run(&a, k, steps, &mut noise, &x0, &mut stream(seed, "noise", 0))?;
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("trace.csv"))?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    save_matrix(x.matrix(), &out.join("x.txt"))?;
    Ok(())
}
