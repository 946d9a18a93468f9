mod common;

use std::io::Write;

use n2nskip_core::data::{gen_blobs, load_csv, Dataset};
use n2nskip_core::net::{build_network, NetworkSpec};
use n2nskip_core::numcore::softmax_xent;
use n2nskip_core::trainer::{evaluate, train, HyperParams};
use rand::Rng;

/// Column-wise mean and population std, one column at a time.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in 0..dim {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / n;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        means.push(m);
        stds.push(v.sqrt());
    }
    (means, stds)
}

#[test]
fn csv_standardization_matches_two_pass_oracle() {
    let mut r = common::rng(11);
    let raw: Vec<(Vec<f64>, usize)> = (0..57)
        .map(|i| {
            let x = vec![
                r.random_range(-5.0..5.0),
                r.random_range(100.0..200.0),
                3.25,
                r.random_range(-1e-3..1e-3),
            ];
            (x, i % 3)
        })
        .collect();
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "a,b,c,d,label").unwrap();
    for (x, y) in &raw {
        let cells: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        writeln!(f, "{},{y}", cells.join(",")).unwrap();
    }
    let ds = load_csv(f.path(), 3).unwrap();
    let n_train = ds.train_x.len();
    assert_eq!(n_train, 46);
    assert_eq!(ds.test_x.len(), 11);
    let train_raw: Vec<Vec<f64>> = raw[..n_train].iter().map(|(x, _)| x.clone()).collect();
    let (m, s) = column_stats(&train_raw);
    for (i, (x, y)) in raw.iter().enumerate() {
        let got = if i < n_train {
            &ds.train_x[i]
        } else {
            &ds.test_x[i - n_train]
        };
        let label = if i < n_train {
            ds.train_y[i]
        } else {
            ds.test_y[i - n_train]
        };
        assert_eq!(label, *y);
        for j in 0..4 {
            let expect = if s[j] < 1e-12 {
                0.0
            } else {
                (x[j] - m[j]) / s[j]
            };
            assert!((got[j] - expect).abs() < 1e-12, "row {i} col {j}");
        }
    }
    let (gm, gs) = column_stats(&ds.train_x);
    for j in [0, 1, 3] {
        assert!(gm[j].abs() < 1e-12 && (gs[j] - 1.0).abs() < 1e-12);
    }
    assert!(ds.train_x.iter().all(|x| x[2] == 0.0));
}

#[test]
fn three_row_csv_round_trips() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(f, "0.5,-2.25,1\n1.5,0.125,0\n4.0,3.0,1\n").unwrap();
    let ds = load_csv(f.path(), 2).unwrap();
    assert_eq!(ds.train_x.len(), 3);
    let orig = [[0.5, -2.25], [1.5, 0.125], [4.0, 3.0]];
    let (m, s) = column_stats(&orig.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    for (x, o) in ds.train_x.iter().zip(orig) {
        for j in 0..2 {
            assert!((x[j] * s[j] + m[j] - o[j]).abs() < 1e-12);
        }
    }
    assert_eq!(ds.train_y, vec![1, 0, 1]);
}

/// Multinomial logistic regression by full-batch gradient descent.
fn logistic_accuracy(ds: &Dataset, epochs: usize) -> f64 {
    let (d, c) = (ds.feature_dim, ds.classes);
    let mut w = vec![vec![0.0; d + 1]; c];
    for _ in 0..epochs {
        let mut g = vec![vec![0.0; d + 1]; c];
        for (x, &y) in ds.train_x.iter().zip(&ds.train_y) {
            let logits: Vec<f64> = w
                .iter()
                .map(|wk| wk[d] + wk[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let (_, dz) = softmax_xent(&logits, y).unwrap();
            for k in 0..c {
                for j in 0..d {
                    g[k][j] += dz[k] * x[j];
                }
                g[k][d] += dz[k];
            }
        }
        let n = ds.train_x.len() as f64;
        for k in 0..c {
            for j in 0..=d {
                w[k][j] -= 0.5 * g[k][j] / n;
            }
        }
    }
    let correct = ds
        .test_x
        .iter()
        .zip(&ds.test_y)
        .filter(|(x, &y)| {
            let scores: Vec<f64> = w
                .iter()
                .map(|wk| wk[d] + wk[..d].iter().zip(*x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            n2nskip_core::trainer::argmax(&scores) == y
        })
        .count();
    correct as f64 / ds.test_x.len() as f64
}

#[test]
fn small_mlp_learns_blobs_like_logistic_regression() {
    let ds = gen_blobs(2, 2, 200, 0.3, 5).unwrap();
    let oracle = logistic_accuracy(&ds, 300);
    let mut net = build_network(&NetworkSpec::new(vec![2, 8, 2], 2, 0)).unwrap();
    let hp = HyperParams {
        epochs: 60,
        batch_size: 32,
        ..HyperParams::default()
    };
    let hist = train(&mut net, &ds, &hp, 0).unwrap();
    let acc = evaluate(&net, ds.test()).unwrap();
    assert!(oracle >= 0.95, "logistic oracle {oracle}");
    assert!(acc >= 0.95, "mlp {acc}");
    assert!((acc - oracle).abs() <= 0.05);
    assert!(hist.records.last().unwrap().train_loss < hist.records[0].train_loss);
}

#[test]
fn separable_limit_reaches_full_accuracy() {
    let ds = gen_blobs(3, 10, 40, 0.0, 1).unwrap();
    let mut net = build_network(&NetworkSpec::new(vec![10, 16, 8, 3], 2, 2)).unwrap();
    let hp = HyperParams {
        epochs: 20,
        batch_size: 16,
        ..HyperParams::default()
    };
    train(&mut net, &ds, &hp, 2).unwrap();
    assert_eq!(evaluate(&net, ds.test()).unwrap(), 1.0);
}

#[test]
fn calibration_baseline_reaches_ninety_percent() {
    let ds = gen_blobs(4, 100, 250, 0.35, 0).unwrap();
    let mut net = build_network(&NetworkSpec::new(vec![100, 64, 32, 16, 4], 2, 0)).unwrap();
    train(&mut net, &ds, &HyperParams::default(), 0).unwrap();
    assert!(evaluate(&net, ds.test()).unwrap() >= 0.90);
}

#[test]
fn accuracy_on_unrelated_labels_stays_near_chance() {
    let mut r = common::rng(3);
    let n = 2000;
    let classes = 4;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let net = build_network(&NetworkSpec::new(vec![5, 7, classes], 2, 4)).unwrap();
    let acc = evaluate(&net, n2nskip_core::data::Split { x: &x, y: &y }).unwrap();
    // labels are independent of the inputs, so correct predictions are
    // Binomial(n, 1/4); allow five standard deviations
    let p = 1.0 / classes as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((acc - p).abs() < 5.0 * sd, "acc {acc}");
}
