//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssd_health::data::{generate_synthetic, read_csv, write_csv, GeneratorConfig, NUM_CLASSES};
use ssd_health::layers::{bigru_forward, gru_cell_forward, mha_forward, GruCellParams, MhaParams};
use ssd_health::metrics::{auc, roc_points};
use ssd_health::model::{encode_checkpoint, predict_proba, read_checkpoint, ModelConfig, Sample};
use ssd_health::numerics::Matrix;
use ssd_health::training::{encode_dataset, run_experiment, Experiment, ExperimentConfig};
use ssd_health::data::EncodingMode;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        input_dim: 1,
        hidden: 6,
        heads: 3,
        classes: 3,
        seq_len: 8,
        l2_lambda: 0.001,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = random_params(&cfg, &mut rng);
    let batch: Vec<Sample> = (0..4)
        .map(|i| Sample {
            x: random_matrix(&mut rng, cfg.seq_len, cfg.input_dim, 1.5),
            label: [0, 1, 2, 1][i],
        })
        .collect();
    let g = gradient_check(&params, &cfg, &batch, 1e-5);
    let elapsed = start.elapsed();
    outcome(
        g.max_rel < 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {:.3e} at {}; {} of {} entries at or above 1e-6, largest such |gradient| {:.1e}; max absolute error {:.1e}; {:.2}s",
            g.max_rel,
            g.worst_entry,
            g.over_tolerance,
            g.entries,
            g.largest_offending,
            g.max_abs,
            elapsed.as_secs_f64()
        ),
    )
}

fn layer_oracles() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // GRU: zero weights
    let zero = GruCellParams::zeros(1, 1);
    let (h, _) = gru_cell_forward(&Matrix::row_vector(&[0.7]), &Matrix::row_vector(&[1.0]), &zero).unwrap();
    if (h[(0, 0)] - 0.5).abs() > 1e-12 {
        failures.push(format!("zero-weight cell gave {}", h[(0, 0)]));
    }
    // GRU: saturated retain gate
    let mut sat = random_gru(&mut rng, 2, 3);
    sat.b_z = Matrix::filled(1, 3, 100.0);
    let prev = Matrix::row_vector(&[0.3, -0.6, 0.9]);
    let (h, _) = gru_cell_forward(&Matrix::row_vector(&[0.4, -1.2]), &prev, &sat).unwrap();
    if h.as_slice().iter().zip(prev.as_slice()).any(|(a, b)| (a - b).abs() > 1e-12) {
        failures.push("saturated retain gate moved the state".into());
    }
    // GRU: hand-evaluated scalar cell
    let mut hand = GruCellParams::zeros(1, 1);
    hand.b_z = Matrix::row_vector(&[-100.0]);
    hand.b_r = Matrix::row_vector(&[100.0]);
    hand.w_h = Matrix::row_vector(&[1.0]);
    let (h, _) = gru_cell_forward(&Matrix::row_vector(&[0.5]), &Matrix::row_vector(&[0.3]), &hand).unwrap();
    if (h[(0, 0)] - 0.5f64.tanh()).abs() > 1e-12 || (h[(0, 0)] - 0.4621171573).abs() > 1e-10 {
        failures.push(format!("scalar cell gave {}", h[(0, 0)]));
    }

    // BiGRU against the sequential oracle, T = 1..=16
    let mut bigru_err: f64 = 0.0;
    for t_len in 1..=16 {
        let fwd = random_gru(&mut rng, 2, 3);
        let bwd = random_gru(&mut rng, 2, 3);
        let x = random_matrix(&mut rng, t_len, 2, 1.5);
        let (h, _) = bigru_forward(&x, &fwd, &bwd).unwrap();
        for (t, row) in bigru_longhand(&x, &fwd, &bwd).iter().enumerate() {
            for (a, b) in h.row(t).iter().zip(row) {
                bigru_err = bigru_err.max((a - b).abs());
            }
        }
    }
    if bigru_err > 1e-12 {
        failures.push(format!("bigru deviates by {bigru_err:e}"));
    }

    // Attention: hand-set T = 2, d_model = 2, one head; then random configs
    let mut hand = MhaParams::zeros(2, 1).unwrap();
    hand.heads[0].w_q = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]);
    hand.heads[0].w_k = Matrix::from_rows(&[[1.0, 0.5], [-0.5, 1.5]]);
    hand.heads[0].w_v = Matrix::from_rows(&[[0.3, 0.7], [-1.1, 0.2]]);
    hand.w_o = Matrix::from_rows(&[[1.0, -0.4], [0.6, 0.9]]);
    let mut cases = vec![(Matrix::from_rows(&[[0.2, -0.7], [1.3, 0.4]]), hand)];
    for (t_len, heads) in [(2, 3), (5, 3), (8, 2)] {
        let mut p = MhaParams::zeros(6, heads).unwrap();
        for head in &mut p.heads {
            head.w_q = random_matrix(&mut rng, 6, 6 / heads, 0.8);
            head.w_k = random_matrix(&mut rng, 6, 6 / heads, 0.8);
            head.w_v = random_matrix(&mut rng, 6, 6 / heads, 0.8);
        }
        p.w_o = random_matrix(&mut rng, 6, 6, 0.8);
        cases.push((random_matrix(&mut rng, t_len, 6, 1.5), p));
    }
    let (mut mha_err, mut row_err): (f64, f64) = (0.0, 0.0);
    for (h, p) in &cases {
        let (a, cache) = mha_forward(h, p).unwrap();
        let (expected, weights) = mha_longhand(h, p);
        for (t, row) in expected.iter().enumerate() {
            for (x, y) in a.row(t).iter().zip(row) {
                mha_err = mha_err.max((x - y).abs());
            }
        }
        for (w, w_ref) in cache.weights().iter().zip(&weights) {
            for (t, ref_row) in w_ref.iter().enumerate() {
                row_err = row_err.max((w.row(t).iter().sum::<f64>() - 1.0).abs());
                for (x, y) in w.row(t).iter().zip(ref_row) {
                    mha_err = mha_err.max((x - y).abs());
                }
            }
        }
    }
    if mha_err > 1e-12 {
        failures.push(format!("attention deviates by {mha_err:e}"));
    }
    if row_err > 1e-12 {
        failures.push(format!("attention rows off by {row_err:e}"));
    }

    let detail = if failures.is_empty() {
        format!("gru cell examples exact; bigru max dev {bigru_err:.1e}; mha max dev {mha_err:.1e}; row-sum dev {row_err:.1e}")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let Ok(points) = roc_points(&scores, &pos) else { continue };
        worst = worst.max((auc(&points) - pair_count_auc(&scores, &pos)).abs());
        done += 1;
    }
    let worked = auc(&roc_points(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap());
    outcome(
        worst <= 1e-9 && worked == 0.75,
        format!("200 instances, max |trapezoid - pair count| {worst:.1e}; worked example {worked}"),
    )
}

fn default_dataset() -> ssd_health::data::Dataset {
    generate_synthetic(&GeneratorConfig {
        n: 593,
        seed: 42,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn experiment() -> (Experiment, Duration) {
    let start = Instant::now();
    let exp = run_experiment(&default_dataset(), &ExperimentConfig::default(), |_| {}).unwrap();
    (exp, start.elapsed())
}

fn end_to_end(exp: &Experiment, elapsed: Duration) -> Outcome {
    let train = exp.train_report.accuracy;
    let test = exp.test_report.accuracy;
    let macro_auc = exp.test_report.macro_auc.unwrap_or(0.0);
    let failure_auc = exp.test_report.failure_auc.unwrap_or(0.0);
    let checks = [
        test >= 0.85,
        (train - test).abs() <= 0.05,
        macro_auc >= 0.90,
        failure_auc >= 0.90,
        elapsed < Duration::from_secs(300),
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "test acc {test:.4} (>= 0.85: {}), train acc {train:.4}, gap {:.4} (<= 0.05: {}), macro AUC {macro_auc:.4} (>= 0.90: {}), failure AUC {failure_auc:.4} (>= 0.90: {}), {:.1}s (< 300: {})",
            checks[0],
            (train - test).abs(),
            checks[1],
            checks[2],
            checks[3],
            elapsed.as_secs_f64(),
            checks[4]
        ),
    )
}

fn training_dynamics(exp: &Experiment) -> Outcome {
    let first = exp.history.first().map(|e| e.loss).unwrap_or(f64::NAN);
    let last = exp.history.last().map(|e| e.loss).unwrap_or(f64::NAN);
    let mut csv = Vec::new();
    exp.history.write_csv(&mut csv).unwrap();
    let rows = String::from_utf8(csv).unwrap().lines().count() - 1;
    let epochs_match = rows == exp.history.len()
        && rows == ExperimentConfig::default().train.max_epochs
        && exp.history.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1);
    outcome(
        last < 0.5 * first && epochs_match,
        format!("first-epoch loss {first:.4}, final loss {last:.4} (ratio {:.3}); {rows} history rows", last / first),
    )
}

fn reproducibility(exp: &Experiment) -> Outcome {
    let (again, _) = experiment();
    let same_run = again.history == exp.history
        && again.params == exp.params
        && again.train_report == exp.train_report
        && again.test_report == exp.test_report
        && again.test_report.to_json() == exp.test_report.to_json();

    let bytes = encode_checkpoint(&exp.params, &exp.config, &exp.standardizer).unwrap();
    let (params, cfg, st) = read_checkpoint(&bytes).unwrap();
    let samples = encode_dataset(&exp.test_set, &exp.standardizer, EncodingMode::Features).unwrap();
    let loaded = encode_dataset(&exp.test_set, &st, EncodingMode::Features).unwrap();
    let identical_predictions = samples.iter().zip(&loaded).all(|(a, b)| {
        let p = predict_proba(&exp.params, &exp.config, &a.x).unwrap();
        let q = predict_proba(&params, &cfg, &b.x).unwrap();
        p.iter().zip(&q).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let resaved = encode_checkpoint(&params, &cfg, &st).unwrap() == bytes;
    outcome(
        same_run && identical_predictions && resaved,
        format!(
            "rerun bit-identical: {same_run}; reloaded predictions bit-identical on {} test rows: {identical_predictions}; second save byte-identical: {resaved}",
            samples.len()
        ),
    )
}

fn data_properties() -> Outcome {
    let mut failures = Vec::new();
    let ds = default_dataset();
    if ds.len() != 593 {
        failures.push(format!("{} records", ds.len()));
    }
    let big = generate_synthetic(&GeneratorConfig {
        n: 10_000,
        seed: 7,
        ..GeneratorConfig::default()
    })
    .unwrap();
    for r in ds.records.iter().chain(&big.records) {
        let envelope = (5000.0..=30000.0).contains(&r.usage_hours)
            && (8.0..=17.0).contains(&r.avg_erase_count)
            && (20.0..=180.0).contains(&r.total_write_tb)
            && (30.0..=75.0).contains(&r.temperature_c)
            && (0.0..=0.26).contains(&r.rw_error_rate)
            && (200..=4800).contains(&r.power_on_count);
        if r.validate().is_err() || !envelope {
            failures.push(format!("record out of range: {r:?}"));
            break;
        }
    }

    let temps: Vec<f64> = big.records.iter().map(|r| r.temperature_c).collect();
    let (cool, hot) = two_component_means(&temps);
    if (cool - 43.0).abs() > 3.0 || (hot - 62.0).abs() > 3.0 {
        failures.push(format!("temperature modes {cool:.2}, {hot:.2}"));
    }

    let counts = big.class_counts();
    let priors = GeneratorConfig::default().priors;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / big.len() as f64).collect();
    if (0..NUM_CLASSES).any(|k| (freqs[k] - priors[k]).abs() > 0.03) {
        failures.push(format!("class frequencies {freqs:?} vs {priors:?}"));
    }

    let mut buf = Vec::new();
    write_csv(&ds.records, &mut buf).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    if back != ds.records {
        failures.push("CSV round trip changed records".into());
    }

    let detail = if failures.is_empty() {
        format!(
            "593 + 10000 records within invariants and envelopes; temperature modes {cool:.2} / {hot:.2}; class frequencies {:.3}/{:.3}/{:.3} vs {:?}; CSV round trip exact",
            freqs[0], freqs[1], freqs[2], priors
        )
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "layer oracles", layer_oracles()),
        (3, "metric oracle", metric_oracle()),
    ];
    let (exp, elapsed) = experiment();
    results.push((4, "end-to-end experiment", end_to_end(&exp, elapsed)));
    results.push((5, "training dynamics", training_dynamics(&exp)));
    results.push((6, "reproducibility and persistence", reproducibility(&exp)));
    results.push((7, "data properties", data_properties()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{tag}] {name}: {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
