//! `kms`: seeded, reproducible runs of the one-step k-means algorithms and
//! their experiment harness. Every subcommand takes an explicit `--seed`;
//! outputs are plain CSV/JSON and byte-identical across reruns.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kms_core::dataset::{
    generate_gaussian_mixture, load_csv, write_csv_path, DataSet, MixtureSpec,
};
use kms_core::error::{Error, Result};
use kms_core::experiments::{
    batch_sweep, bound_check, invariance_demo, multistep_run, parse_algorithms, presets,
    BoundCheckKind,
};
use kms_core::kmeans::{assign, cost, diagnostics, lloyd_step, Centers};
use kms_core::quantum::{
    predicted_query_bound, quantum_kmeans_step, DeltaPrimePolicy, EmulationConfig, GarbagePolicy,
    OracleConstants,
};
use kms_core::samplers::{
    damped_minibatch_step_with_batch, dlt_step, median_trick_index, minibatch_step,
    minibatch_step_with_batch, sample_indices, DampedSpec, EmptyClusterFallback, MedianMetric,
    SamplingScheme, StepReport,
};
use kms_core::seeding::derive_seed;

#[derive(Parser)]
#[command(
    name = "kms",
    version,
    about = "One-step k-means laboratory",
    max_term_width = 100
)]
struct Cli {
    /// Cap on worker threads used by experiment subcommands.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Data CSV (one point per row).
    #[arg(long)]
    data: PathBuf,
    /// Centers CSV (k rows, same column count as the data).
    #[arg(long)]
    centers: PathBuf,
    /// Skip one header row when reading CSV inputs.
    #[arg(long, default_value_t = false)]
    has_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(DataSet, Centers)> {
        let data = load_csv(&self.data, self.has_header)?;
        let centers_data = load_csv(&self.centers, self.has_header)?;
        let centers = Centers::new(centers_data.points().clone())?;
        Ok((data, centers))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture dataset and its true means.
    Generate {
        /// Preset instance: `fig2` (k=4, d=2, 4e4 points, off-origin means) or
        /// `corpus` (k=10, 7e4 points JL-projected to d=30).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        points_per_cluster: usize,
        #[arg(long, default_value_t = 0.05)]
        std: f64,
        /// Means are drawn uniformly from [-spread, spread]^d.
        #[arg(long, default_value_t = 5.0)]
        spread: f64,
        #[arg(long)]
        seed: u64,
        /// Output CSV for the points.
        #[arg(long)]
        out: PathBuf,
        /// Output CSV for the true means.
        #[arg(long)]
        centers_out: Option<PathBuf>,
    },
    /// Partition diagnostics (phi, k_C, eta family, costs) as JSON.
    Diagnostics {
        #[command(flatten)]
        io: DataArgs,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One exact Lloyd iteration.
    Lloyd {
        #[command(flatten)]
        io: DataArgs,
        /// Output CSV for the updated centers.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One uniform mini-batch iteration.
    Minibatch {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        b: usize,
        #[arg(long)]
        seed: u64,
        /// Recompute missed clusters exactly (full pass) instead of keeping
        /// their initial centers.
        #[arg(long, default_value_t = false)]
        exact_fallback: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Step report (empty clusters, lambda statistics, batch) as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// One damped mini-batch iteration.
    Damped {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        b: usize,
        /// Damping coefficients: a single value or a comma list of length k.
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        seed: u64,
        /// Recompute missed clusters exactly (full pass) instead of keeping
        /// their initial centers.
        #[arg(long, default_value_t = false)]
        exact_fallback: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// One two-batch norm-sampled iteration.
    Dlt {
        #[command(flatten)]
        io: DataArgs,
        /// Uniform (cluster-size) batch size.
        #[arg(long)]
        a: usize,
        /// Weighted batch size.
        #[arg(long)]
        b: usize,
        /// row-norm or row-norm-squared.
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// One emulated quantum uniform k-means iteration with query accounting.
    QuantumSim {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        seed: u64,
        /// worst-case or uniform-random.
        #[arg(long, default_value = "worst-case")]
        dp_policy: String,
        /// off-cluster-uniform or global-uniform.
        #[arg(long, default_value = "off-cluster-uniform")]
        garbage_policy: String,
        /// Query-formula multipliers, e.g. `mean_est=1,boost=1`.
        #[arg(long)]
        constants: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        failure_blowup: f64,
        /// Disable perturbation and noise (the step becomes exact).
        #[arg(long, default_value_t = false)]
        noiseless: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ledger JSON.
        #[arg(long)]
        ledger_out: Option<PathBuf>,
    },
    /// Error-vs-batch-size sweep over one-step algorithms.
    Sweep {
        #[command(flatten)]
        io: DataArgs,
        /// Comma list of batch sizes.
        #[arg(long)]
        b: String,
        /// Comma list of algorithm tags (uniform, dlt_row_norm_squared,
        /// dlt_row_norm, full_batch).
        #[arg(long, default_value = "uniform,dlt_row_norm_squared,dlt_row_norm")]
        algorithms: String,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        /// Records CSV; a JSON summary lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-iteration tracking error against the exact Lloyd trajectory.
    Multistep {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        b: usize,
        #[arg(long, default_value = "uniform")]
        algorithms: String,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hard-instance recovery rates for uniform vs norm-sampled batches,
    /// on the instance and a shifted copy.
    Invariance {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        shift: f64,
        /// Comma list of batch sizes.
        #[arg(long)]
        b: String,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical check of a one-step guarantee at its prescribed batch size.
    BoundCheck {
        #[command(flatten)]
        io: DataArgs,
        /// thm_main, cor_monotone, cor_damped, or quantum_main.
        #[arg(long)]
        which: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        trials: usize,
        /// Damping coefficients for cor_damped.
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        seed: u64,
        /// Report JSON; per-trial CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Median-of-means boosting over independent mini-batch candidates.
    MedianBoost {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        b: usize,
        /// Number of independent candidates.
        #[arg(long)]
        trials: usize,
        /// euclidean or weighted (cluster-size weighted).
        #[arg(long, default_value = "euclidean")]
        metric: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("'{t}' is not a positive integer")))
        })
        .collect()
}

fn parse_alphas(s: &str, k: usize) -> Result<DampedSpec> {
    let values: Vec<f64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("'{t}' is not a number")))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        1 => DampedSpec::constant(values[0], k),
        len if len == k => DampedSpec::new(values),
        len => Err(Error::InvalidParameter(format!(
            "expected 1 or {k} damping coefficients, found {len}"
        ))),
    }
}

fn parse_constants(s: &str) -> Result<OracleConstants> {
    let mut constants = OracleConstants::default();
    for pair in s.split(',').filter(|t| !t.trim().is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("expected key=value, found '{pair}'"))
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("'{value}' is not a number")))?;
        match key.trim() {
            "mean_est" => constants.mean_est = v,
            "boost" => constants.boost = v,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown constant '{other}'"
                )))
            }
        }
    }
    Ok(constants)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, format!("{value:#}\n"))?;
    Ok(())
}

fn write_centers(path: Option<&PathBuf>, centers: &Centers) -> Result<()> {
    if let Some(p) = path {
        write_csv_path(p, centers.coords())?;
    }
    Ok(())
}

fn write_report(path: Option<&PathBuf>, report: &StepReport) -> Result<()> {
    if let Some(p) = path {
        write_json(p, &report.to_json())?;
    }
    Ok(())
}

fn json_sidecar(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn csv_sidecar(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match cli.command {
        Command::Generate {
            preset,
            k,
            d,
            points_per_cluster,
            std,
            spread,
            seed,
            out,
            centers_out,
        } => {
            let (data, centers) = match preset.as_deref() {
                Some("fig2") => presets::small_phi_mixture(10_000, std, seed)?,
                Some("corpus") => presets::jl_corpus(10, 60, 30, 7_000, 1.0, seed)?,
                Some(other) => {
                    return Err(Error::InvalidParameter(format!("unknown preset '{other}'")))
                }
                None => {
                    let spec = MixtureSpec::with_random_means(
                        k,
                        d,
                        std,
                        points_per_cluster,
                        spread,
                        derive_seed(seed, &[0]),
                    )?;
                    generate_gaussian_mixture(&spec, derive_seed(seed, &[1]))?
                }
            };
            write_csv_path(&out, data.points())?;
            if let Some(path) = &centers_out {
                write_csv_path(path, centers.coords())?;
            }
            println!(
                "generate: wrote {} points (d={}, k={}) to {}",
                data.n(),
                data.d(),
                centers.k(),
                out.display()
            );
        }
        Command::Diagnostics { io, out } => {
            let (data, centers) = io.load()?;
            let diag = diagnostics(&data, &centers)?;
            let value = serde_json::to_value(&diag)?;
            match &out {
                Some(path) => {
                    write_json(path, &value)?;
                    println!(
                        "diagnostics: phi={} k_C={} cost={} -> {}",
                        diag.phi,
                        diag.k_c,
                        diag.cost,
                        path.display()
                    );
                }
                None => println!("{value:#}"),
            }
        }
        Command::Lloyd { io, out } => {
            let (data, centers0) = io.load()?;
            let before = cost(&data, &centers0)?;
            let (centers, assignment) = lloyd_step(&data, &centers0)?;
            let after = cost(&data, &centers)?;
            write_centers(out.as_ref(), &centers)?;
            println!(
                "lloyd: cost {before} -> {after}, empty_clusters={:?}",
                assignment.empty_clusters()
            );
        }
        Command::Minibatch {
            io,
            b,
            seed,
            exact_fallback,
            out,
            report_out,
        } => {
            let (data, centers0) = io.load()?;
            let fallback = if exact_fallback {
                EmptyClusterFallback::ExactMean
            } else {
                EmptyClusterFallback::KeepInitial
            };
            let batch = sample_indices(data.n(), b, SamplingScheme::Uniform, &data, seed)?;
            let (centers, report) =
                minibatch_step_with_batch(&data, &centers0, batch, None, fallback)?;
            write_centers(out.as_ref(), &centers)?;
            write_report(report_out.as_ref(), &report)?;
            println!(
                "minibatch: b={b} cost={} empty_clusters={:?}",
                cost(&data, &centers)?,
                report.empty_clusters
            );
        }
        Command::Damped {
            io,
            b,
            alpha,
            seed,
            exact_fallback,
            out,
            report_out,
        } => {
            let (data, centers0) = io.load()?;
            let damping = parse_alphas(&alpha, centers0.k())?;
            let fallback = if exact_fallback {
                EmptyClusterFallback::ExactMean
            } else {
                EmptyClusterFallback::KeepInitial
            };
            let batch = sample_indices(data.n(), b, SamplingScheme::Uniform, &data, seed)?;
            let (centers, report) = damped_minibatch_step_with_batch(
                &data, &centers0, batch, &damping, None, fallback,
            )?;
            write_centers(out.as_ref(), &centers)?;
            write_report(report_out.as_ref(), &report)?;
            println!(
                "damped: b={b} alpha=[{}] cost={} empty_clusters={:?}",
                damping
                    .alphas()
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                cost(&data, &centers)?,
                report.empty_clusters
            );
        }
        Command::Dlt {
            io,
            a,
            b,
            scheme,
            seed,
            out,
            report_out,
        } => {
            let (data, centers0) = io.load()?;
            let scheme: SamplingScheme = scheme.parse()?;
            let (centers, report) = dlt_step(&data, &centers0, a, b, scheme, seed)?;
            write_centers(out.as_ref(), &centers)?;
            write_report(report_out.as_ref(), &report)?;
            println!(
                "dlt: a={a} b={b} scheme={scheme} cost={} empty_clusters={:?}",
                cost(&data, &centers)?,
                report.empty_clusters
            );
        }
        Command::QuantumSim {
            io,
            eps,
            delta,
            seed,
            dp_policy,
            garbage_policy,
            constants,
            failure_blowup,
            noiseless,
            out,
            ledger_out,
        } => {
            let (data, centers0) = io.load()?;
            let config = EmulationConfig {
                delta_prime_policy: dp_policy.parse::<DeltaPrimePolicy>()?,
                garbage_policy: garbage_policy.parse::<GarbagePolicy>()?,
                failure_blowup,
                constants: constants
                    .as_deref()
                    .map(parse_constants)
                    .transpose()?
                    .unwrap_or_default(),
                noiseless,
            };
            let output = quantum_kmeans_step(&data, &centers0, eps, delta, &config, seed)?;
            let diag = diagnostics(&data, &centers0)?;
            let bound = predicted_query_bound(&diag, eps, data.d(), centers0.k());
            write_centers(out.as_ref(), &output.centers)?;
            if let Some(path) = &ledger_out {
                write_json(path, &serde_json::to_value(output.ledger)?)?;
            }
            println!(
                "quantum-sim: eps={eps} delta={delta} queries={} predicted_bound={} ratio={} degenerate={:?}",
                output.ledger.total(),
                bound,
                output.ledger.total() as f64 / bound,
                output.degenerate
            );
        }
        Command::Sweep {
            io,
            b,
            algorithms,
            trials,
            seed,
            out,
        } => {
            let (data, centers0) = io.load()?;
            let b_grid = parse_usize_list(&b)?;
            let algs = parse_algorithms(&algorithms)?;
            let result = batch_sweep(&data, &centers0, &b_grid, &algs, trials, seed)?;
            let file = std::fs::File::create(&out)?;
            result.to_csv(file)?;
            let summary = result.summary();
            write_json(&json_sidecar(&out), &serde_json::to_value(&summary)?)?;
            println!(
                "sweep: {} records -> {}, summary -> {}",
                result.records.len(),
                out.display(),
                json_sidecar(&out).display()
            );
        }
        Command::Multistep {
            io,
            steps,
            b,
            algorithms,
            trials,
            seed,
            out,
        } => {
            let (data, centers0) = io.load()?;
            let algs = parse_algorithms(&algorithms)?;
            let result = multistep_run(&data, &centers0, steps, b, &algs, trials, seed)?;
            let file = std::fs::File::create(&out)?;
            result.to_csv(file)?;
            let medians: Vec<serde_json::Value> = algs
                .iter()
                .map(|alg| {
                    json!({
                        "algorithm": alg.tag(),
                        "median_max_err": result.median_curve(alg.tag()),
                    })
                })
                .collect();
            write_json(
                &json_sidecar(&out),
                &json!({ "steps": steps, "b": b, "curves": medians }),
            )?;
            println!(
                "multistep: {} records -> {}, summary -> {}",
                result.records.len(),
                out.display(),
                json_sidecar(&out).display()
            );
        }
        Command::Invariance {
            alpha,
            n,
            shift,
            b,
            trials,
            seed,
            out,
        } => {
            let b_grid = parse_usize_list(&b)?;
            let result = invariance_demo(alpha, n, shift, &b_grid, trials, seed)?;
            let file = std::fs::File::create(&out)?;
            result.to_csv(file)?;
            write_json(&json_sidecar(&out), &serde_json::to_value(&result)?)?;
            println!(
                "invariance: alpha={alpha} n={n} shift={shift} -> {}",
                out.display()
            );
        }
        Command::BoundCheck {
            io,
            which,
            eps,
            delta,
            trials,
            alpha,
            seed,
            out,
        } => {
            let (data, centers0) = io.load()?;
            let kind: BoundCheckKind = which.parse()?;
            let damping = alpha
                .as_deref()
                .map(|s| parse_alphas(s, centers0.k()))
                .transpose()?;
            let report = bound_check(
                &data,
                &centers0,
                eps,
                delta,
                trials,
                seed,
                kind,
                damping.as_ref(),
                None,
            )?;
            write_json(&out, &serde_json::to_value(&report)?)?;
            let csv_path = csv_sidecar(&out);
            let file = std::fs::File::create(&csv_path)?;
            report.to_csv(file)?;
            println!(
                "bound-check {kind}: b={:?} failure_rate={} band={} pass={}",
                report.b, report.failure_rate, report.band, report.pass
            );
        }
        Command::MedianBoost {
            io,
            b,
            trials,
            metric,
            seed,
            out,
        } => {
            let (data, centers0) = io.load()?;
            if trials == 0 {
                return Err(Error::InvalidParameter(
                    "need at least one candidate".into(),
                ));
            }
            let metric = match metric.trim().to_lowercase().as_str() {
                "euclidean" => MedianMetric::Euclidean,
                "weighted" => {
                    let sizes = assign(&data, &centers0)?.sizes().to_vec();
                    MedianMetric::ClusterWeighted { sizes, n: data.n() }
                }
                other => return Err(Error::InvalidParameter(format!("unknown metric '{other}'"))),
            };
            let candidates: Vec<Vec<f64>> = (0..trials)
                .map(|i| {
                    minibatch_step(&data, &centers0, b, derive_seed(seed, &[i as u64]))
                        .map(|(c, _)| c.flatten())
                })
                .collect::<Result<_>>()?;
            let winner = median_trick_index(&candidates, &metric)?;
            let boosted =
                Centers::from_flat(centers0.k(), centers0.d(), candidates[winner].clone())?;
            write_centers(out.as_ref(), &boosted)?;
            println!(
                "median-boost: t={trials} b={b} winner={winner} cost={}",
                cost(&data, &boosted)?
            );
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // file-level problems
        Error::Io(_) | Error::CsvParse { .. } => 1,
        // everything else is an invalid parameter or input combination
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KMS_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(), // usage errors exit 2, help/version exit 0
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
