use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use n2nskip_core::checkpoint;
use n2nskip_core::config::{
    default_t_grid, parse_override_args, AnalysisConfig, ExperimentConfig, Method,
};
use n2nskip_core::connectivity::{
    analyze_network, eig_sym, graph_laplacian, percent_to_count, scree_curve, signature_distance,
    to_adjacency, write_edge_list, AnalysisParams,
};
use n2nskip_core::data::gen_blobs;
use n2nskip_core::experiment::{
    compare, output_root, run_experiment, run_sweep, write_outputs, ExperimentReport,
};
use n2nskip_core::{Error, Result};

/// Pruning at initialization with sparse skip connections.
#[derive(Parser)]
#[command(name = "n2nskip", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Gaussian-blob dataset as CSV.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 250)]
        per_class: usize,
        #[arg(long, default_value_t = 0.35)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one experiment config over its seeds.
    Train(RunArgs),
    /// Run the config's methods × densities × seeds grid.
    Sweep(RunArgs),
    /// Connectivity report for a checkpoint.
    Analyze {
        checkpoint: PathBuf,
        /// Dense reference checkpoint for the signature distance.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Scree curve `t,alpha` of a checkpoint's graph.
    Scree {
        checkpoint: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Paired per-seed comparison of two manifests.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        a_method: Option<Method>,
        #[arg(long)]
        a_density: Option<f64>,
        #[arg(long)]
        b_method: Option<Method>,
        #[arg(long)]
        b_density: Option<f64>,
    },
    /// Write a checkpoint's graph as an edge list.
    ExportAdjacency {
        checkpoint: PathBuf,
        #[arg(long)]
        unweighted: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Key overrides such as `--analysis.t 2.0` or `--density=0.05`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, default_value_t = AnalysisConfig::default().t)]
    t: f64,
    #[arg(long, default_value_t = AnalysisConfig::default().k_fraction)]
    k_fraction: f64,
    #[arg(long, default_value_t = AnalysisConfig::default().threshold)]
    threshold: f64,
    #[arg(long)]
    unweighted: bool,
}

impl AnalysisArgs {
    fn params(&self) -> AnalysisParams {
        AnalysisParams {
            t: self.t,
            k_fraction: self.k_fraction,
            t_grid: default_t_grid(),
            threshold: self.threshold,
        }
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    nodes: usize,
    edges: usize,
    components: usize,
    t: f64,
    k: usize,
    threshold: f64,
    weighted: bool,
    saturation_time: Option<f64>,
    fiedler_value: Option<f64>,
    largest_eigenvalue: Option<f64>,
    signature_sum: f64,
    f_distance: Option<f64>,
    jacobi_sweeps: usize,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&args.config, &parse_override_args(&args.overrides)?)
}

fn select(r: ExperimentReport, m: Option<Method>, d: Option<f64>) -> Result<ExperimentReport> {
    match m {
        Some(m) => r.select(m, d),
        None => Ok(r),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            classes,
            dim,
            per_class,
            spread,
            seed,
            out,
        } => {
            let ds = gen_blobs(classes, dim, per_class, spread, seed)?;
            ds.write_csv(&out)?;
            eprintln!(
                "wrote {} rows ({} features, {classes} classes) to {}",
                ds.train_x.len() + ds.test_x.len(),
                dim,
                out.display()
            );
        }
        Cmd::Train(args) => {
            let cfg = load_config(&args)?;
            let outcome = run_experiment(&cfg)?;
            let dir = write_outputs(&output_root(&cfg), &outcome)?;
            print_json(&outcome.report.summary)?;
            eprintln!("artifacts in {}", dir.display());
        }
        Cmd::Sweep(args) => {
            let cfg = load_config(&args)?;
            let outcome = run_sweep(&cfg)?;
            let dir = write_outputs(&output_root(&cfg), &outcome)?;
            print_json(&outcome.report.summary)?;
            eprintln!("artifacts in {}", dir.display());
        }
        Cmd::Analyze {
            checkpoint: path,
            reference,
            analysis,
        } => {
            let net = checkpoint::load(&path)?;
            let params = analysis.params();
            let weighted = !analysis.unweighted;
            let ga = analyze_network(&net, weighted, &params)?;
            let f_distance = match reference {
                Some(r) => {
                    let rnet = checkpoint::load(&r)?;
                    let rg = analyze_network(&rnet, weighted, &params)?;
                    Some(signature_distance(&rg.signature, &ga.signature)?)
                }
                None => None,
            };
            let ev = &ga.spectrum.eigenvalues;
            print_json(&AnalyzeReport {
                nodes: ga.spectrum.n(),
                edges: to_adjacency(&net, false).edge_count(),
                components: ga.spectrum.null_count(1e-9),
                t: params.t,
                k: ga.scree.k,
                threshold: params.threshold,
                weighted,
                saturation_time: ga.saturation_time.is_finite().then_some(ga.saturation_time),
                fiedler_value: ev.get(1).copied(),
                largest_eigenvalue: ev.last().copied(),
                signature_sum: ga.signature.values.iter().sum(),
                f_distance,
                jacobi_sweeps: ga.spectrum.sweeps,
            })?;
        }
        Cmd::Scree {
            checkpoint: path,
            analysis,
            out,
        } => {
            let net = checkpoint::load(&path)?;
            let spec = eig_sym(&graph_laplacian(&to_adjacency(&net, !analysis.unweighted))?)?;
            let k = percent_to_count(analysis.k_fraction, spec.n());
            let curve = scree_curve(&spec, k, &default_t_grid())?;
            if curve.degenerate {
                eprintln!("warning: scree curve is not monotone (degenerate spectrum)");
            }
            write_or_print(out.as_deref(), &curve.to_csv())?;
        }
        Cmd::Compare {
            a,
            b,
            a_method,
            a_density,
            b_method,
            b_density,
        } => {
            let ra = select(ExperimentReport::load(&a)?, a_method, a_density)?;
            let rb = select(ExperimentReport::load(&b)?, b_method, b_density)?;
            print_json(&compare(&ra, &rb)?)?;
        }
        Cmd::ExportAdjacency {
            checkpoint: path,
            unweighted,
            out,
        } => {
            let net = checkpoint::load(&path)?;
            write_or_print(
                out.as_deref(),
                &write_edge_list(&to_adjacency(&net, !unweighted)),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
