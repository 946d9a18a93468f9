//! Experiment orchestration: prune, insert skips, train, evaluate and analyze
//! every seed, then aggregate and write artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, Method};
use crate::connectivity::{analyze_network, signature_distance, HeatSignature, ScreeCurve};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{build_network, Network};
use crate::pruning::{csp_prune, random_prune_with};
use crate::skipgen::{insert_n2nskip, SkipBudget};
use crate::trainer::{evaluate, train, History};

/// Environment variable that overrides the output root.
pub const OUT_ENV: &str = "N2NSKIP_OUT";

/// Eigenvalues below this count as zero when counting graph components.
const ZERO_EIG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dir: String,
    pub method: Method,
    /// Requested density; absent for the baseline.
    pub density: Option<f64>,
    pub split_ratio: Option<f64>,
    pub seed: u64,
    pub achieved_density: f64,
    pub seq_nnz: usize,
    pub skip_nnz: usize,
    pub reference_params: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub final_train_loss: Option<f64>,
    pub analysis: RunAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub t: f64,
    pub k: usize,
    pub nodes: usize,
    pub components: usize,
    pub weighted: bool,
    pub post_training: bool,
    /// Distance between this run's heat signature and the dense reference's.
    pub f_distance: f64,
    /// `None` when the scree curve never reaches the threshold on the grid.
    pub saturation_time: Option<f64>,
    pub reference_saturation_time: Option<f64>,
    pub threshold: f64,
    pub scree_degenerate: bool,
}

/// One seed's full output, including the trained network.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub result: RunResult,
    pub network: Network,
    pub history: History,
    pub scree: ScreeCurve,
    pub signature: HeatSignature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for a single value.
    pub sample_std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sample_std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat {
            n,
            mean,
            sample_std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub density: Option<f64>,
    pub seeds: Vec<u64>,
    pub test_acc: Stat,
    pub train_acc: Stat,
    pub achieved_density: Stat,
    pub f_distance: Stat,
    /// Over seeds whose curve saturated; `None` if none did.
    pub saturation_time: Option<Stat>,
    pub unsaturated_seeds: usize,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub summary: Vec<GroupSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub runs: Vec<RunArtifacts>,
}

/// Directory name for one run, e.g. `n2nskip-rp-d0.02-s3`.
pub fn run_dir_name(method: Method, density: Option<f64>, seed: u64) -> String {
    format!("{method}-d{}-s{seed}", density.unwrap_or(1.0))
}

/// `N2NSKIP_OUT` if set, else the config's `out_root`, else `out`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.out_root.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Builds the initialized and pruned (and skip-augmented) network for one run.
pub fn prepare_network(
    cfg: &ExperimentConfig,
    method: Method,
    density: f64,
    seed: u64,
    data: &Dataset,
) -> Result<Network> {
    let mut net = build_network(&cfg.network_spec(seed))?;
    let policy = cfg.rp_coverage.into();
    let budget = SkipBudget::new(density, cfg.split_ratio, cfg.network.skip_span);
    match method {
        Method::Baseline => {}
        Method::Rp => random_prune_with(&net, density, seed, policy)?.apply(&mut net)?,
        Method::Csp => {
            csp_prune(&net, &data.train_batch(cfg.csp_batch), density)?.apply(&mut net)?
        }
        Method::N2nskipRp => {
            let masks = random_prune_with(&net, density, seed, policy)?;
            net = insert_n2nskip(&net, &masks, budget, seed)?;
        }
        Method::N2nskipCsp => {
            let masks = csp_prune(&net, &data.train_batch(cfg.csp_batch), density)?;
            net = insert_n2nskip(&net, &masks, budget, seed)?;
        }
    }
    Ok(net)
}

/// Runs one seed. With `reference` absent the run is its own reference,
/// which is only meaningful for the baseline.
pub fn run_single(
    cfg: &ExperimentConfig,
    method: Method,
    density: f64,
    seed: u64,
    data: &Dataset,
    reference: Option<(&HeatSignature, Option<f64>)>,
) -> Result<RunArtifacts> {
    let mut net = prepare_network(cfg, method, density, seed, data)?;
    let initial = (!cfg.analysis.post_training).then(|| net.clone());
    let history = train(&mut net, data, &cfg.hyperparams, seed)?;
    let analyzed = initial.as_ref().unwrap_or(&net);
    let params = cfg.analysis.params();
    let ga = analyze_network(analyzed, cfg.analysis.weighted, &params)?;
    let saturation = ga.saturation_time.is_finite().then_some(ga.saturation_time);
    let (f_distance, reference_saturation_time) = match reference {
        Some((sig, sat)) => (signature_distance(sig, &ga.signature)?, sat),
        None => (0.0, saturation),
    };
    let density_field = method.is_pruned().then_some(density);
    let result = RunResult {
        dir: run_dir_name(method, density_field, seed),
        method,
        density: density_field,
        split_ratio: method.has_skips().then_some(cfg.split_ratio),
        seed,
        achieved_density: net.total_nnz() as f64 / net.reference_params() as f64,
        seq_nnz: net.seq_nnz(),
        skip_nnz: net.skip_nnz(),
        reference_params: net.reference_params(),
        train_acc: evaluate(&net, data.train())?,
        test_acc: evaluate(&net, data.test())?,
        final_train_loss: history.last().map(|r| r.train_loss),
        analysis: RunAnalysis {
            t: params.t,
            k: ga.scree.k,
            nodes: ga.spectrum.n(),
            components: ga.spectrum.null_count(ZERO_EIG),
            weighted: cfg.analysis.weighted,
            post_training: cfg.analysis.post_training,
            f_distance,
            saturation_time: saturation,
            reference_saturation_time,
            threshold: params.threshold,
            scree_degenerate: ga.scree.degenerate,
        },
    };
    check_finite(&result)?;
    Ok(RunArtifacts {
        result,
        network: net,
        history,
        scree: ga.scree,
        signature: ga.signature,
    })
}

fn check_finite(r: &RunResult) -> Result<()> {
    let a = &r.analysis;
    let vals = [
        r.achieved_density,
        r.train_acc,
        r.test_acc,
        r.final_train_loss.unwrap_or(0.0),
        a.t,
        a.f_distance,
        a.saturation_time.unwrap_or(0.0),
        a.reference_saturation_time.unwrap_or(0.0),
    ];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "run {} produced a non-finite metric",
            r.dir
        )))
    }
}

/// Runs the config's single `(method, density)` over all seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_grid(cfg, &[cfg.method], &[cfg.density])
}

/// Runs `sweep.methods × sweep.densities × seeds`, or the single config when
/// no sweep is present.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    match &cfg.sweep {
        Some(s) => run_grid(cfg, &s.methods, &s.densities),
        None => run_experiment(cfg),
    }
}

fn run_grid(
    cfg: &ExperimentConfig,
    methods: &[Method],
    densities: &[f64],
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    if data.feature_dim != cfg.network.layer_dims[0] {
        return Err(Error::Config(format!(
            "dataset has {} features but the network expects {}",
            data.feature_dim, cfg.network.layer_dims[0]
        )));
    }
    if data.classes != *cfg.network.layer_dims.last().expect("validated") {
        return Err(Error::Config(format!(
            "dataset has {} classes but the network has {} outputs",
            data.classes,
            cfg.network.layer_dims.last().expect("validated")
        )));
    }

    let references: Vec<RunArtifacts> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_single(cfg, Method::Baseline, 1.0, s, &data, None))
        .collect::<Result<_>>()?;
    let by_seed: BTreeMap<u64, &RunArtifacts> =
        cfg.seeds.iter().copied().zip(references.iter()).collect();

    let mut jobs: Vec<(Method, f64, u64)> = Vec::new();
    for &m in methods {
        let ds: &[f64] = if m.is_pruned() { densities } else { &[1.0] };
        for &d in ds {
            for &s in &cfg.seeds {
                if !jobs.contains(&(m, d, s)) {
                    jobs.push((m, d, s));
                }
            }
        }
    }

    let runs: Vec<RunArtifacts> = jobs
        .par_iter()
        .map(|&(m, d, s)| {
            let reference = by_seed[&s];
            if m == Method::Baseline {
                return Ok(reference.clone());
            }
            run_single(
                cfg,
                m,
                d,
                s,
                &data,
                Some((
                    &reference.signature,
                    reference.result.analysis.saturation_time,
                )),
            )
        })
        .collect::<Result<_>>()?;

    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    let report = ExperimentReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        summary: summarize(&results),
        runs: results,
    };
    Ok(ExperimentOutcome { report, runs })
}

/// Groups runs by `(method, density)` in first-seen order.
pub fn summarize(runs: &[RunResult]) -> Vec<GroupSummary> {
    let mut keys: Vec<(Method, Option<f64>)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.method, r.density)) {
            keys.push((r.method, r.density));
        }
    }
    keys.into_iter()
        .map(|(method, density)| {
            let g: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.method == method && r.density == density)
                .collect();
            let col = |f: fn(&RunResult) -> f64| -> Stat {
                Stat::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty group")
            };
            let sats: Vec<f64> = g
                .iter()
                .filter_map(|r| r.analysis.saturation_time)
                .collect();
            GroupSummary {
                method,
                density,
                seeds: g.iter().map(|r| r.seed).collect(),
                test_acc: col(|r| r.test_acc),
                train_acc: col(|r| r.train_acc),
                achieved_density: col(|r| r.achieved_density),
                f_distance: col(|r| r.analysis.f_distance),
                saturation_time: Stat::of(&sats),
                unsaturated_seeds: g.len() - sats.len(),
            }
        })
        .collect()
}

impl ExperimentReport {
    /// The sub-report holding only runs of `method` at `density` (ignored for
    /// the baseline).
    pub fn select(&self, method: Method, density: Option<f64>) -> Result<ExperimentReport> {
        let density = if method.is_pruned() { density } else { None };
        let runs: Vec<RunResult> = self
            .runs
            .iter()
            .filter(|r| r.method == method && (density.is_none() || r.density == density))
            .cloned()
            .collect();
        if runs.is_empty() {
            return Err(Error::Config(format!(
                "report {:?} has no runs for {method} at density {density:?}",
                self.name
            )));
        }
        let mut out = self.clone();
        out.summary = summarize(&runs);
        out.runs = runs;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentReport> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes the per-run artifacts and the manifest under `root/<name>/`.
/// Returns the experiment directory.
pub fn write_outputs(root: &Path, outcome: &ExperimentOutcome) -> Result<PathBuf> {
    let exp_dir = root.join(&outcome.report.name);
    fs::create_dir_all(&exp_dir)?;
    outcome
        .runs
        .par_iter()
        .map(|run| write_run(&exp_dir.join(&run.result.dir), run))
        .collect::<Result<Vec<()>>>()?;
    fs::write(
        exp_dir.join("manifest.json"),
        outcome.report.to_json()? + "\n",
    )?;
    Ok(exp_dir)
}

fn write_run(dir: &Path, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(&run.network, &dir.join("checkpoint.json"))?;
    fs::write(dir.join("history.csv"), run.history.to_csv())?;
    fs::write(dir.join("scree.csv"), run.scree.to_csv())?;
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&run.result)? + "\n",
    )?;
    Ok(())
}

/// Wins, ties and losses of `a` against `b` over paired seeds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignTest {
    pub a_better: usize,
    pub ties: usize,
    pub b_better: usize,
}

impl SignTest {
    fn record(&mut self, ord: std::cmp::Ordering) {
        match ord {
            std::cmp::Ordering::Greater => self.a_better += 1,
            std::cmp::Ordering::Equal => self.ties += 1,
            std::cmp::Ordering::Less => self.b_better += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDelta {
    pub seed: u64,
    /// `a − b`.
    pub test_acc: f64,
    pub f_distance: f64,
    /// `F_a / F_b`, absent when `F_b = 0`.
    pub f_ratio: Option<f64>,
    /// Absent unless both runs saturated.
    pub saturation_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub a: String,
    pub b: String,
    pub deltas: Vec<SeedDelta>,
    /// Higher accuracy is better.
    pub test_acc: SignTest,
    /// Lower distance to the reference is better.
    pub f_distance: SignTest,
    /// Earlier saturation is better; never saturating is worst.
    pub saturation_time: SignTest,
    pub mean_test_acc_delta: f64,
}

fn label(r: &ExperimentReport) -> Result<String> {
    match r.summary.as_slice() {
        [g] => Ok(match g.density {
            Some(d) => format!("{}/{} d={d}", r.name, g.method),
            None => format!("{}/{}", r.name, g.method),
        }),
        _ => Err(Error::Incomparable(format!(
            "report {:?} holds {} method/density groups; select one",
            r.name,
            r.summary.len()
        ))),
    }
}

/// Paired per-seed comparison of two single-group reports.
pub fn compare(a: &ExperimentReport, b: &ExperimentReport) -> Result<ComparisonSummary> {
    let (la, lb) = (label(a)?, label(b)?);
    let (ca, cb) = (&a.config, &b.config);
    if ca.dataset != cb.dataset {
        return Err(Error::Incomparable("reports use different datasets".into()));
    }
    if ca.network.layer_dims != cb.network.layer_dims || ca.hyperparams != cb.hyperparams {
        return Err(Error::Incomparable(
            "reports use different reference networks".into(),
        ));
    }
    if ca.analysis.params() != cb.analysis.params()
        || ca.analysis.weighted != cb.analysis.weighted
        || ca.analysis.post_training != cb.analysis.post_training
    {
        return Err(Error::Incomparable(
            "reports use different analysis settings".into(),
        ));
    }
    let mut deltas = Vec::new();
    let (mut acc, mut fd, mut sat) = (
        SignTest::default(),
        SignTest::default(),
        SignTest::default(),
    );
    for ra in &a.runs {
        let Some(rb) = b.runs.iter().find(|r| r.seed == ra.seed) else {
            continue;
        };
        let (fa, fb) = (ra.analysis.f_distance, rb.analysis.f_distance);
        let sa = ra.analysis.saturation_time.unwrap_or(f64::INFINITY);
        let sb = rb.analysis.saturation_time.unwrap_or(f64::INFINITY);
        acc.record(ra.test_acc.total_cmp(&rb.test_acc));
        fd.record(fb.total_cmp(&fa));
        sat.record(sb.total_cmp(&sa));
        deltas.push(SeedDelta {
            seed: ra.seed,
            test_acc: ra.test_acc - rb.test_acc,
            f_distance: fa - fb,
            f_ratio: (fb > 0.0).then(|| fa / fb),
            saturation_time: ra
                .analysis
                .saturation_time
                .zip(rb.analysis.saturation_time)
                .map(|(x, y)| x - y),
        });
    }
    if deltas.is_empty() {
        return Err(Error::Incomparable("reports share no seeds".into()));
    }
    let mean_test_acc_delta = deltas.iter().map(|d| d.test_acc).sum::<f64>() / deltas.len() as f64;
    Ok(ComparisonSummary {
        a: la,
        b: lb,
        deltas,
        test_acc: acc,
        f_distance: fd,
        saturation_time: sat,
        mean_test_acc_delta,
    })
}
