//! `tidiff`: simulate, estimate, classify and run limit-law experiments.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure,
//! 4 a failed `experiment --assert` check.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tidiff::coeffs::file::{build_model, ModelFile};
use tidiff::coeffs::{validate_model, CheckStatus, ModelSpec};
use tidiff::estimate::{fisher_linear, fisher_perturbed_mc, mle_linear, mle_perturbed, FISHER_STREAM_OFFSET};
use tidiff::io::{fisher_csv, mle_csv, path_csv, read_path_csv, write_atomic};
use tidiff::limitlaws::ZetaOracle;
use tidiff::mc::{run_experiment, RunOptions, DEFAULT_FISHER_PATHS};
use tidiff::regime::{classify, tail_grid, RegimeConfig};
use tidiff::rng::SeedSpec;
use tidiff::simulate::{
    make_grid, simulate_perturbed_em, GridSpec, LinearTransitions, Path, PathKind, TimeGrid, DEFAULT_PANELS,
};

use config::{needs_oracle, preset, preset_spec, ExperimentFile, PRESETS};

const CONFIG: u8 = 2;
const NUMERIC: u8 = 3;
const ASSERT: u8 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> CliError {
        CliError {
            code: CONFIG,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> CliError {
        CliError {
            code: NUMERIC,
            message: message.into(),
        }
    }
}

impl From<tidiff::Error> for CliError {
    fn from(e: tidiff::Error) -> CliError {
        CliError {
            code: if e.is_numeric() { NUMERIC } else { CONFIG },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "tidiff",
    version,
    about = "Drift estimation for time-inhomogeneous diffusions"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TIDIFF_THREADS")]
    threads: Option<usize>,
    /// Progress lines on standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write it as CSV.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Simpson panels per interval for the exact transitions.
        #[arg(long, default_value_t = DEFAULT_PANELS)]
        panels: usize,
        /// CSV output; a JSON sidecar with the same stem is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the MLE series (and optionally the Fisher information) of a path.
    Estimate {
        #[command(flatten)]
        model: ModelArgs,
        /// Path CSV with columns t,value[,dB].
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the Fisher information series here.
        #[arg(long)]
        fisher_out: Option<PathBuf>,
        /// Monte Carlo paths for the Fisher information of perturbed models.
        #[arg(long, default_value_t = DEFAULT_FISHER_PATHS)]
        fisher_paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify the limit regime of a model.
    Classify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate or verify a ζ reference sample.
    ZetaOracle {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 16_384)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, required_unless_present = "verify", conflicts_with = "verify")]
        out: Option<PathBuf>,
        /// Check an existing oracle file instead of generating one.
        #[arg(long)]
        verify: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment from a config file or a preset.
    Experiment {
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// One of the built-in experiments; `list` prints their names.
        #[arg(long)]
        preset: Option<String>,
        /// Print the preset's config and exit.
        #[arg(long, requires = "preset")]
        print: bool,
        /// ζ oracle file, needed for ζ targets.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// JSON summary output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV of the per-replicate statistics.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Exit with code 4 unless every KS check passes.
        #[arg(long)]
        assert: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Check a model's hypotheses on probe points.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 16)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Registry model name.
    #[arg(long, required_unless_present = "model_file", conflicts_with = "model_file")]
    model: Option<String>,
    /// TOML model file.
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Horizon T, a positive number or `inf`.
    #[arg(long = "T", value_name = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    sigma: Option<String>,
    /// ∫ₜᵀ σ² as an expression in t, for remark27-finiteT with non-constant σ.
    #[arg(long)]
    sigma_tail: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    /// Uniform step.
    #[arg(long, requires = "t_max", conflicts_with = "rho")]
    h: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Ratio of a geometric grid T(1 − ρᵏ).
    #[arg(long, required_unless_present = "h")]
    rho: Option<f64>,
    #[arg(long, requires = "rho")]
    count: Option<usize>,
    #[arg(long, requires = "rho")]
    delta: Option<f64>,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        match (self.h, self.t_max, self.rho) {
            (Some(h), Some(t_max), _) => GridSpec::Uniform { h, t_max },
            (_, _, rho) => GridSpec::GeometricToT {
                rho: rho.expect("clap requires h or rho"),
                count: self.count,
                delta: self.delta,
            },
        }
    }
}

fn read(path: &FsPath) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

impl ModelArgs {
    fn build(&self) -> CliResult<ModelSpec> {
        let mut file = match &self.model_file {
            Some(p) => toml::from_str::<ModelFile>(&read(p)?)
                .map_err(|e| CliError::config(format!("model file {}: {e}", p.display())))?,
            None => {
                let mut f = ModelFile::default();
                f.model.family = self.model.clone();
                f
            }
        };
        if self.alpha.is_some() {
            file.model.alpha = self.alpha;
        }
        if self.horizon.is_some() {
            file.model.horizon = self.horizon;
        }
        if self.sigma.is_some() {
            file.coefficients.sigma = self.sigma.clone();
        }
        if self.sigma_tail.is_some() {
            file.coefficients.sigma_tail = self.sigma_tail.clone();
        }
        Ok(build_model(&file.model, &file.coefficients, &file.constants)?)
    }
}

/// Fails unless every output directory exists, so that no work is wasted.
fn check_outputs<'a>(paths: impl IntoIterator<Item = &'a Option<PathBuf>>) -> CliResult<()> {
    for p in paths.into_iter().flatten() {
        let dir = p
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(FsPath::new("."));
        if !dir.is_dir() {
            return Err(CliError::config(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn emit(out: Option<&FsPath>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::config(format!("writing to stdout: {e}"))),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// σ must be positive wherever a path is simulated or estimated.
fn require_positive_sigma(model: &ModelSpec) -> CliResult<()> {
    let report = validate_model(model, 16, 0)?;
    match report.check("sigma-positive") {
        Some(c) if c.status == CheckStatus::Fail => Err(CliError::numeric(format!(
            "sigma is not positive at t = {:?} ({})",
            c.witnesses, c.detail
        ))),
        _ => Ok(()),
    }
}

fn require_valid(model: &ModelSpec, seed: u64) -> CliResult<()> {
    let report = validate_model(model, 16, seed)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| format!("{} at {:?}: {}", c.id, c.witnesses, c.detail))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "model '{}' failed validation: {}",
            model.name,
            failed.join("; ")
        )))
    }
}

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    model: &'a ModelSpec,
    grid: GridSpec,
    nodes: usize,
    seed: SeedSpec,
    sampler: PathKind,
    panels: usize,
    truncated_at: Option<f64>,
}

fn sidecar_path(out: &FsPath) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".json");
    out.with_file_name(name)
}

fn cmd_simulate(
    model: &ModelArgs,
    grid: &GridArgs,
    seed: SeedSpec,
    panels: usize,
    out: Option<PathBuf>,
) -> CliResult<()> {
    check_outputs([&out])?;
    let model = model.build()?;
    let spec = grid.spec();
    let g = Arc::new(make_grid(&spec, model.horizon)?);
    require_positive_sigma(&model)?;
    let path = if model.is_linear() {
        LinearTransitions::new(&model, &g, panels)?.sample(seed)
    } else {
        simulate_perturbed_em(&model, &g, seed)?
    };
    emit(out.as_deref(), &path_csv(&path))?;
    if let Some(out) = &out {
        let sidecar = SimulateSidecar {
            model: &model,
            grid: spec,
            nodes: g.len(),
            seed,
            sampler: path.kind,
            panels,
            truncated_at: path.truncation.as_ref().map(|t| t.t),
        };
        write_atomic(&sidecar_path(out), json(&sidecar).as_bytes())?;
    }
    if let Some(tr) = &path.truncation {
        return Err(CliError::numeric(format!("path truncated: {}", tr.reason)));
    }
    Ok(())
}

fn cmd_estimate(
    model: &ModelArgs,
    input: &FsPath,
    out: Option<PathBuf>,
    fisher_out: Option<PathBuf>,
    fisher_paths: usize,
    seed: u64,
) -> CliResult<()> {
    check_outputs([&out, &fisher_out])?;
    let model = model.build()?;
    let (ts, vs, dbs) = read_path_csv(&read(input)?)?;
    let grid = Arc::new(TimeGrid::from_nodes(ts, model.horizon)?);
    require_positive_sigma(&model)?;
    let increments = if dbs.len() == grid.intervals() {
        dbs
    } else {
        vec![0.0; grid.intervals()]
    };
    let path = Path {
        grid: Arc::clone(&grid),
        values: vs,
        increments,
        kind: if model.is_linear() {
            PathKind::LinearExact
        } else {
            PathKind::PerturbedEm
        },
        truncation: None,
    };
    let series = if model.is_linear() {
        mle_linear(&path, &model)?
    } else {
        mle_perturbed(&path, &model)?
    };
    if let Some(f_out) = &fisher_out {
        let fisher = if model.is_linear() {
            fisher_linear(&model, &grid)?
        } else {
            fisher_perturbed_mc(&model, &grid, fisher_paths, SeedSpec::new(seed, FISHER_STREAM_OFFSET))?
        };
        write_atomic(f_out, fisher_csv(&fisher).as_bytes())?;
    }
    emit(out.as_deref(), &mle_csv(&series))
}

fn cmd_classify(model: &ModelArgs, out: Option<PathBuf>) -> CliResult<()> {
    check_outputs([&out])?;
    let model = model.build()?;
    let verdict = classify(&model, model.alpha, &tail_grid(model.horizon), &RegimeConfig::default())?;
    emit(out.as_deref(), &json(&verdict))
}

#[derive(Serialize)]
struct OracleSummary {
    n: usize,
    steps: usize,
    base_seed: u64,
    sha256: String,
}

fn oracle_summary(o: &ZetaOracle) -> OracleSummary {
    OracleSummary {
        n: o.n,
        steps: o.steps,
        base_seed: o.base_seed,
        sha256: o.checksum(),
    }
}

fn cmd_zeta_oracle(n: usize, steps: usize, seed: u64, out: Option<PathBuf>, verify: Option<PathBuf>) -> CliResult<()> {
    if let Some(p) = verify {
        let o = ZetaOracle::load(&p)?;
        return emit(None, &json(&oracle_summary(&o)));
    }
    check_outputs([&out])?;
    if n < 10_000 {
        eprintln!("warning: n = {n} is below 10000; KS comparisons against this oracle will be coarse");
    }
    let o = ZetaOracle::generate(n, steps, seed)?;
    o.write(out.as_deref().expect("clap requires --out"))?;
    emit(None, &json(&oracle_summary(&o)))
}

struct ExperimentArgs {
    config: Option<PathBuf>,
    preset: Option<String>,
    print: bool,
    oracle: Option<PathBuf>,
    out: Option<PathBuf>,
    samples: Option<PathBuf>,
    assert: bool,
    seed: Option<u64>,
    replicates: Option<usize>,
}

fn cmd_experiment(a: ExperimentArgs, threads: Option<usize>, verbose: bool) -> CliResult<()> {
    if a.preset.as_deref() == Some("list") {
        return emit(None, &(PRESETS.join("\n") + "\n"));
    }
    if a.print {
        let name = a.preset.as_deref().expect("clap requires --preset");
        let text = preset(name).ok_or_else(|| CliError::config(format!("unknown preset '{name}'")))?;
        return emit(None, &text);
    }
    check_outputs([&a.out, &a.samples])?;
    let mut spec = match (&a.config, &a.preset) {
        (Some(p), _) => ExperimentFile::parse(&read(p)?)?.into_spec()?,
        (None, Some(name)) => preset_spec(name)?,
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.replicates {
        spec.n_replicates = n;
    }
    let oracle = match (&a.oracle, needs_oracle(&spec)) {
        (Some(p), _) => {
            if !p.is_file() {
                return Err(CliError::config(format!(
                    "oracle file {} not found; create it with `tidiff zeta-oracle --out {}`",
                    p.display(),
                    p.display()
                )));
            }
            Some(Arc::new(ZetaOracle::load(p)?))
        }
        (None, true) => {
            return Err(CliError::config(
                "this experiment compares against the zeta law and needs --oracle <file>; \
                 create one with `tidiff zeta-oracle --out <file>`",
            ))
        }
        (None, false) => None,
    };
    require_valid(&spec.model, spec.seed)?;
    let opts = RunOptions {
        threads,
        oracle,
        progress: verbose,
    };
    let (result, runtime) = run_experiment(&spec, &opts)?;
    if verbose {
        eprintln!("[tidiff] finished in {:.2} s", runtime.as_secs_f64());
    }
    emit(a.out.as_deref(), &result.to_json())?;
    if let Some(p) = &a.samples {
        write_atomic(p, result.samples_csv().as_bytes())?;
    }
    if a.assert && !result.passed() {
        let failed: Vec<String> = result
            .horizons
            .iter()
            .filter(|h| h.pass == Some(false))
            .map(|h| {
                format!(
                    "t = {}: D = {:.4} >= {}",
                    h.t,
                    h.ks.map_or(f64::NAN, |k| k.d),
                    h.tolerance.unwrap_or(f64::NAN)
                )
            })
            .collect();
        return Err(CliError {
            code: ASSERT,
            message: format!("KS check failed: {}", failed.join("; ")),
        });
    }
    Ok(())
}

fn cmd_validate(model: &ModelArgs, probes: usize, seed: u64, out: Option<PathBuf>) -> CliResult<()> {
    check_outputs([&out])?;
    let model = model.build()?;
    let report = validate_model(&model, probes, seed)?;
    emit(out.as_deref(), &json(&report))?;
    if !report.passed() {
        return Err(CliError::numeric(format!("model '{}' failed validation", model.name)));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            model,
            grid,
            seed,
            stream,
            panels,
            out,
        } => cmd_simulate(&model, &grid, SeedSpec::new(seed, stream), panels, out),
        Command::Estimate {
            model,
            path,
            out,
            fisher_out,
            fisher_paths,
            seed,
        } => cmd_estimate(&model, &path, out, fisher_out, fisher_paths, seed),
        Command::Classify { model, out } => cmd_classify(&model, out),
        Command::ZetaOracle {
            n,
            steps,
            seed,
            out,
            verify,
        } => cmd_zeta_oracle(n, steps, seed, out, verify),
        Command::Experiment {
            config,
            preset,
            print,
            oracle,
            out,
            samples,
            assert,
            seed,
            replicates,
        } => cmd_experiment(
            ExperimentArgs {
                config,
                preset,
                print,
                oracle,
                out,
                samples,
                assert,
                seed,
                replicates,
            },
            cli.threads,
            cli.verbose,
        ),
        Command::Validate {
            model,
            probes,
            seed,
            out,
        } => cmd_validate(&model, probes, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
