//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Criteria 1 to 4 and 8 must pass
//! for the process to succeed. The desk-scale trend criteria 5 to 7 print
//! their verdict and measurements but only fail the process when
//! `N2NSKIP_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use n2nskip_core::checkpoint;
use n2nskip_core::config::{ExperimentConfig, Method};
use n2nskip_core::data::gen_blobs;
use n2nskip_core::experiment::{
    run_experiment, run_sweep, write_outputs, ExperimentReport, RunResult,
};
use n2nskip_core::net::{build_network, NetworkSpec};
use n2nskip_core::pruning::{csp_prune, random_prune_with, CoveragePolicy};
use n2nskip_core::skipgen::{density, insert_n2nskip, SkipBudget};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    trend: bool,
    detail: String,
}

fn calibration(
    method: &str,
    density: f64,
    seeds: &[u64],
    sweep: Option<(&[&str], &[f64])>,
) -> ExperimentConfig {
    let mut v = serde_json::json!({
        "name": "acceptance",
        "network": {"layer_dims": [100, 64, 32, 16, 4], "skip_span": 2},
        "method": method,
        "density": density,
        "split_ratio": 0.5,
        "seeds": seeds,
        "dataset": {"kind": "blobs", "classes": 4, "dim": 100, "per_class": 250, "spread": 0.35, "seed": 0}
    });
    if let Some((methods, densities)) = sweep {
        v["sweep"] = serde_json::json!({"methods": methods, "densities": densities});
    }
    ExperimentConfig::from_value(v).expect("valid calibration config")
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        worst = worst.max(common::gradient_check(1000 + seed, seed % 2 == 0));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "gradient correctness",
        pass: worst < 1e-5 && secs < 60.0,
        trend: false,
        detail: format!("50 nets (25 with skips), max rel err {worst:.2e}, {secs:.1}s"),
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let rep = common::spectral_oracle(100, 2);
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        name: "spectral oracle equivalence",
        pass: rep.heat_err < 1e-8 && rep.recon_rel < 1e-9 && rep.p3_err < 1e-10 && secs < 60.0,
        trend: false,
        detail: format!(
            "100 graphs: max |H - expm| {:.2e}, recon {:.2e}·‖L‖, P3 err {:.2e}, {secs:.1}s",
            rep.heat_err, rep.recon_rel, rep.p3_err
        ),
    }
}

fn criterion_3() -> Verdict {
    let r = common::heat_invariants(50, 3);
    let pass = r.identity_err < 1e-12
        && r.null_rel < 1e-10
        && r.semigroup_err < 1e-8
        && r.trace_err < 1e-8
        && r.conservation_err < 1e-8
        && r.min_entry >= -1e-9
        && r.min_eigenvalue >= -1e-9
        && r.component_mismatches == 0;
    Verdict {
        id: 3,
        name: "heat invariants",
        pass,
        trend: false,
        detail: format!(
            "H(0) {:.1e}, L1 {:.1e}, semigroup {:.1e}, trace {:.1e}, conservation {:.1e}, multiplicity mismatches {}/{} ({} disconnected)",
            r.identity_err, r.null_rel, r.semigroup_err, r.trace_err, r.conservation_err,
            r.component_mismatches, r.graphs, r.disconnected
        ),
    }
}

fn criterion_4() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = gen_blobs(4, 100, 250, 0.35, 0).expect("blobs");
    let batch = data.train_batch(128);
    let mut worst_slack = f64::NEG_INFINITY;
    let mut cases = 0;
    for d in [0.10, 0.05, 0.02] {
        for seed in 0..5u64 {
            let net = build_network(&NetworkSpec::new(vec![100, 64, 32, 16, 4], 2, seed)).unwrap();
            let origins = [
                random_prune_with(&net, d, seed, CoveragePolicy::BestEffort).unwrap(),
                csp_prune(&net, &batch, d).unwrap(),
            ];
            for (o, masks) in origins.iter().enumerate() {
                let mut pruned = net.clone();
                masks.apply(&mut pruned).unwrap();
                let before_path = dir.path().join(format!("before-{d}-{seed}-{o}.json"));
                checkpoint::save(&pruned, &before_path).unwrap();
                let skipped =
                    insert_n2nskip(&net, masks, SkipBudget::new(d, 0.5, 2), seed).unwrap();
                let after_path = dir.path().join(format!("after-{d}-{seed}-{o}.json"));
                checkpoint::save(&skipped, &after_path).unwrap();
                let before = density(&checkpoint::load(&before_path).unwrap());
                let after_net = checkpoint::load(&after_path).unwrap();
                let after = density(&after_net);
                let tol = after_net.skips.len() as f64 / after_net.reference_params() as f64;
                worst_slack = worst_slack.max((after - before).abs() - tol);
                cases += 1;
            }
        }
    }
    Verdict {
        id: 4,
        name: "budget conservation",
        pass: worst_slack <= 0.0,
        trend: false,
        detail: format!(
            "{cases} checkpoint pairs (RP and CSP origin, d in 0.10/0.05/0.02), max |Δdensity| − tol = {worst_slack:.2e}"
        ),
    }
}

type Table<'a> = BTreeMap<(Method, u64), &'a RunResult>;

fn table(report: &ExperimentReport, d: f64) -> Table<'_> {
    report
        .runs
        .iter()
        .filter(|r| r.density.is_none_or(|x| x == d))
        .map(|r| ((r.method, r.seed), r))
        .collect()
}

fn fmt_vec(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

const PAIRS: [(Method, Method); 2] = [
    (Method::Rp, Method::N2nskipRp),
    (Method::Csp, Method::N2nskipCsp),
];

fn criterion_5(report: &ExperimentReport, seeds: &[u64], secs: f64) -> Verdict {
    let mut pass = secs < 1800.0;
    let mut lines = Vec::new();
    let mut gap_grows = false;
    for (x, n2n) in PAIRS {
        let mut gaps = Vec::new();
        for d in [0.02, 0.10] {
            let t = table(report, d);
            let ax: Vec<f64> = seeds.iter().map(|s| t[&(x, *s)].test_acc).collect();
            let an: Vec<f64> = seeds.iter().map(|s| t[&(n2n, *s)].test_acc).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let wins = ax.iter().zip(&an).filter(|(a, b)| b > a).count();
            gaps.push(mean(&an) - mean(&ax));
            if d == 0.02 {
                pass &= mean(&an) > mean(&ax) && wins >= 4;
            }
            lines.push(format!(
                "d={d} {x} {} vs {n2n} {} (wins {wins}/5)",
                fmt_vec(&ax),
                fmt_vec(&an)
            ));
        }
        gap_grows |= gaps[0] > gaps[1];
        lines.push(format!(
            "{x} gap d=0.02 {:+.3} vs d=0.10 {:+.3}",
            gaps[0], gaps[1]
        ));
    }
    pass &= gap_grows;
    Verdict {
        id: 5,
        name: "accuracy trend",
        pass,
        trend: true,
        detail: format!("{}; sweep {secs:.0}s", lines.join("; ")),
    }
}

fn criterion_6(report: &ExperimentReport, seeds: &[u64]) -> Verdict {
    let t = table(report, 0.02);
    let mut pass = true;
    let mut lines = Vec::new();
    for (x, n2n) in PAIRS {
        let mut ok = 0;
        let mut ratios = Vec::new();
        for s in seeds {
            let (fx, fn_) = (
                t[&(x, *s)].analysis.f_distance,
                t[&(n2n, *s)].analysis.f_distance,
            );
            let ratio = fn_ / fx;
            ratios.push(ratio);
            if fn_ < fx && ratio < 0.5 {
                ok += 1;
            }
        }
        pass &= ok >= 4;
        lines.push(format!(
            "{n2n}/{x} F ratio {} ({ok}/5 below 0.5)",
            fmt_vec(&ratios)
        ));
    }
    Verdict {
        id: 6,
        name: "connectivity distance trend",
        pass,
        trend: true,
        detail: format!("d=0.02 t=1.5: {}", lines.join("; ")),
    }
}

fn criterion_7(report: &ExperimentReport, seeds: &[u64]) -> Verdict {
    let sat = |r: &RunResult| r.analysis.saturation_time.unwrap_or(f64::INFINITY);
    let mut pass = true;
    let mut lines = Vec::new();
    for d in [0.02, 0.10] {
        let t = table(report, d);
        for (x, n2n) in PAIRS {
            let ok = seeds
                .iter()
                .filter(|s| sat(t[&(n2n, **s)]) <= sat(t[&(x, **s)]))
                .count();
            pass &= ok >= 4;
            let sx: Vec<f64> = seeds.iter().map(|s| sat(t[&(x, *s)])).collect();
            let sn: Vec<f64> = seeds.iter().map(|s| sat(t[&(n2n, *s)])).collect();
            lines.push(format!(
                "d={d} {x} {} vs {n2n} {} ({ok}/5)",
                fmt_vec(&sx),
                fmt_vec(&sn)
            ));
        }
    }
    let ref_ok = report
        .runs
        .iter()
        .filter(|r| r.method.is_pruned())
        .all(|r| {
            r.analysis
                .reference_saturation_time
                .unwrap_or(f64::INFINITY)
                <= sat(r)
        });
    pass &= ref_ok;
    lines.push(format!(
        "reference no later than every pruned net: {ref_ok}"
    ));
    Verdict {
        id: 7,
        name: "saturation trend",
        pass,
        trend: true,
        detail: lines.join("; "),
    }
}

fn criterion_8() -> Verdict {
    let cfg = calibration("n2nskip-csp", 0.02, &[0, 1], None);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for dir in &dirs {
        let exp = write_outputs(dir.path(), &run_experiment(&cfg).unwrap()).unwrap();
        let mut found = Vec::new();
        for entry in walk(&exp) {
            let name = entry.strip_prefix(&exp).unwrap().display().to_string();
            if name.ends_with("metrics.json")
                || name.ends_with("manifest.json")
                || name.ends_with(".csv")
            {
                found.push((name, fs::read(&entry).unwrap()));
            }
        }
        found.sort();
        files.push(found);
    }
    let metrics = files[0]
        .iter()
        .filter(|(n, _)| n.ends_with("metrics.json"))
        .count();
    Verdict {
        id: 8,
        name: "determinism",
        pass: metrics == cfg.seeds.len() && files[0] == files[1],
        trend: false,
        detail: format!(
            "{} artifacts ({metrics} metrics.json + manifest + csv) compared byte-for-byte across two runs",
            files[0].len()
        ),
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let strict = std::env::var("N2NSKIP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut verdicts = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];

    let seeds = [0u64, 1, 2, 3, 4];
    let cfg = calibration(
        "rp",
        0.02,
        &seeds,
        Some((&["rp", "csp", "n2nskip-rp", "n2nskip-csp"], &[0.10, 0.02])),
    );
    let start = Instant::now();
    let report = run_sweep(&cfg).expect("calibration sweep").report;
    let secs = start.elapsed().as_secs_f64();
    verdicts.push(criterion_5(&report, &seeds, secs));
    verdicts.push(criterion_6(&report, &seeds));
    verdicts.push(criterion_7(&report, &seeds));
    verdicts.push(criterion_8());

    let mut hard_fail = false;
    for v in &verdicts {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {} ({}): {}", v.id, v.name, v.detail);
        if !v.pass && (!v.trend || strict) {
            hard_fail = true;
        }
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!(
        "acceptance: {}/{} criteria pass{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {failed:?}")
        }
    );
    if hard_fail {
        std::process::exit(1);
    }
}
