//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line.

mod common;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use rand::Rng;
use sleepwake::cli;
use sleepwake::metrics::{clinical_metrics, confusion, tst_errors, ConfusionCounts, TstPair};
use sleepwake::preprocess::{fit_standardization, mask_and_interpolate, prepare_all, InputsMode, PreparedSequence};
use sleepwake::rnn::{forward, gru_cell_step, init_params, lstm_cell_step, CellKind, GruCellParams, LstmCellParams};
use sleepwake::signal_io::{load_manifest, Split};
use sleepwake::staging::{majority_vote, predict_per_second, Hypnogram, HypnogramSource};
use sleepwake::synthgen::{generate_with_truth, SynthConfig};
use sleepwake::training::{
    adam_step, batch_loss_and_grads, forward_batch, make_batches, AdamConfig, AdamState, Batch, TrainConfig,
};
use sleepwake::rnn::BackwardOptions;
use sleepwake::{OximetryRecord, Stage};

// ---------------------------------------------------------------------------
// Gradient correctness

fn fd_check(kind: CellKind) -> (f64, usize, f64) {
    let started = Instant::now();
    let (h, width, t_max) = (4, 2, 12);
    let mut r = rng(11 + kind as u64);
    let mut params = init_params(kind, h, width, 3).unwrap();
    // Nonzero biases and a positive head offset keep every path active.
    jitter(&mut params, &mut r, 0.3);
    for b in params.head.b.iter_mut() {
        *b += 1.0;
    }
    let lengths = [12usize, 9];
    let seqs: Vec<(Vec<Vec<f64>>, Vec<Stage>)> = lengths
        .iter()
        .map(|&len| (steps(&random_vec(&mut r, len * width, 1.5), width), random_stages(&mut r, len, 0.6)))
        .collect();

    // The library batch wants 30-step sequences, so build the padded batch by hand.
    let b = lengths.len();
    let mut inputs = vec![0.0; t_max * b * width];
    let mut targets = vec![Stage::Sleep; t_max * b];
    let mut mask = vec![false; t_max * b];
    for (j, (xs, ys)) in seqs.iter().enumerate() {
        for t in 0..xs.len() {
            inputs[(t * b + j) * width..(t * b + j + 1) * width].copy_from_slice(&xs[t]);
            targets[t * b + j] = ys[t];
            mask[t * b + j] = true;
        }
    }
    let batch = Batch {
        inputs,
        width,
        lengths: lengths.to_vec(),
        targets,
        loss_mask: mask,
        patient_ids: vec!["a".into(), "b".into()],
    };
    let (_, grads) = batch_loss_and_grads(&params, &batch, BackwardOptions::default()).unwrap();

    let total: usize = lengths.iter().sum();
    let pooled = |p: &sleepwake::rnn::ModelParams| -> f64 {
        seqs.iter()
            .map(|(xs, ys)| loss_ref(p, xs, ys, &vec![true; xs.len()]) * xs.len() as f64)
            .sum::<f64>()
            / total as f64
    };

    let step = 1e-5;
    let analytic = grads.to_flat();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].2.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][k] -= step;
            let numeric = (pooled(&plus) - pooled(&minus)) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    (worst, idx, started.elapsed().as_secs_f64())
}

#[test]
fn gradient_matches_finite_differences() {
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [CellKind::Gru, CellKind::Lstm] {
        let (worst, n, secs) = fd_check(kind);
        pass &= worst <= 1e-4 && secs < 30.0;
        details.push(format!("{} worst rel err {worst:.2e} over {n} params in {secs:.1}s", kind.as_str()));
    }
    report("gradient correctness (H=4, T=12, B=2, padded)", pass, &details.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Cell-equation oracles

fn random_matrix(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> sleepwake::linalg::Matrix {
    sleepwake::linalg::Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.5..1.5))
}

#[test]
fn cell_steps_match_scalar_oracles() {
    let mut r = rng(21);
    let mut worst_gru = 0.0f64;
    let mut worst_lstm = 0.0f64;
    for _ in 0..100 {
        let h = r.random_range(1..7);
        let d = r.random_range(1..5);
        let gru = GruCellParams {
            w_u: random_matrix(&mut r, h, h + d),
            w_r: random_matrix(&mut r, h, h + d),
            w_h: random_matrix(&mut r, h, h + d),
            b_u: random_vec(&mut r, h, 1.0),
            b_r: random_vec(&mut r, h, 1.0),
            b_h: random_vec(&mut r, h, 1.0),
        };
        let lstm = LstmCellParams {
            w_f: random_matrix(&mut r, h, h + d),
            w_g: random_matrix(&mut r, h, h + d),
            w_s: random_matrix(&mut r, h, h + d),
            w_o: random_matrix(&mut r, h, h + d),
            b_f: random_vec(&mut r, h, 1.0),
            b_g: random_vec(&mut r, h, 1.0),
            b_s: random_vec(&mut r, h, 1.0),
            b_o: random_vec(&mut r, h, 1.0),
        };
        let hp = random_vec(&mut r, h, 1.0);
        let sp = random_vec(&mut r, h, 2.0);
        let x = random_vec(&mut r, d, 3.0);

        let got = gru_cell_step(&gru, &hp, &x).unwrap();
        for (a, b) in got.iter().zip(gru_ref(&gru, &hp, &x)) {
            worst_gru = worst_gru.max((a - b).abs());
        }
        let (gh, gs) = lstm_cell_step(&lstm, &hp, &sp, &x).unwrap();
        let (rh, rs) = lstm_ref(&lstm, &hp, &sp, &x);
        for (a, b) in gh.iter().chain(&gs).zip(rh.iter().chain(&rs)) {
            worst_lstm = worst_lstm.max((a - b).abs());
        }
    }
    let pass = worst_gru <= 1e-12 && worst_lstm <= 1e-12;
    report(
        "cell-equation oracles (100 instances)",
        pass,
        &format!("max abs diff gru {worst_gru:.1e}, lstm {worst_lstm:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Padding invariance

fn short_synthetic(patients: usize, seed: u64) -> Vec<OximetryRecord> {
    let cfg = SynthConfig {
        patients,
        duration_min_s: 60,
        duration_max_s: 600,
        desat_rate_per_hour: 40.0,
        dropout_rate_per_hour: 20.0,
        seed,
        ..SynthConfig::default()
    };
    generate_with_truth(&cfg).unwrap().into_iter().map(|p| p.record).collect()
}

#[test]
fn padding_does_not_change_predictions() {
    let records = short_synthetic(20, 31);
    let stats = fit_standardization(&records).unwrap();
    let seqs = prepare_all(&records, &stats, InputsMode::HrSpo2).unwrap();
    let mut worst = 0.0f64;
    let mut padded_steps = 0;
    for kind in [CellKind::Gru, CellKind::Lstm] {
        let params = init_params(kind, 6, 2, 8).unwrap();
        let mut batches = make_batches(&seqs, 4, 2).unwrap();
        for batch in &mut batches {
            padded_steps += batch.padded_steps();
            // Fill padding with large garbage so any leak would show.
            let bs = batch.batch_size();
            for t in 0..batch.t_max() {
                for j in 0..bs {
                    if !batch.loss_mask[t * bs + j] {
                        for d in 0..batch.width {
                            batch.inputs[(t * bs + j) * batch.width + d] = 1e3 * (1.0 + (t + d) as f64);
                        }
                    }
                }
            }
            let in_batch = forward_batch(&params, batch).unwrap();
            for (j, probs) in in_batch.iter().enumerate() {
                let seq = seqs.iter().find(|s| s.patient_id == batch.patient_ids[j]).unwrap();
                let (alone, _) = forward(&params, &seq.inputs, seq.length).unwrap();
                let oracle = model_ref(&params, &steps(&seq.inputs, seq.width));
                assert_eq!(probs.len(), seq.length);
                for t in 0..seq.length {
                    for c in 0..2 {
                        worst = worst.max((probs[t][c] - alone[t][c]).abs());
                        worst = worst.max((probs[t][c] - oracle[t][c]).abs());
                    }
                }
            }
        }
    }
    let pass = worst <= 1e-10 && padded_steps > 0;
    report(
        "padding invariance (20 sequences)",
        pass,
        &format!("max abs diff {worst:.1e} with {padded_steps} padded steps"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Majority vote and metric oracles

fn opt_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => close(x, y, 1e-12),
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn vote_and_metrics_match_brute_force() {
    let mut r = rng(41);
    let mut mismatches = 0;
    let mut pairs = Vec::new();
    let mut tst_pairs = Vec::new();
    for i in 0..1000 {
        let windows = r.random_range(1..120);
        let p_wake: f64 = r.random_range(0.0..1.0);
        // Mix of random per-second labels and exact 15/15 ties.
        let per_second: Vec<Stage> = if i % 10 == 0 {
            (0..windows * 30).map(|t| if t % 2 == 0 { Stage::Wake } else { Stage::Sleep }).collect()
        } else {
            random_stages(&mut r, windows * 30, 1.0 - p_wake)
        };
        let p_sleep = r.random_range(0.0..1.0);
        let reference = random_stages(&mut r, windows, p_sleep);

        let voted = majority_vote(&per_second, 30).unwrap();
        if voted != vote_ref(&per_second) {
            mismatches += 1;
        }
        let ref_h = Hypnogram::new(format!("p{i}"), reference.clone(), HypnogramSource::Reference).unwrap();
        let pred_h = Hypnogram::new(format!("p{i}"), voted.clone(), HypnogramSource::Predicted).unwrap();
        let c = confusion(&ref_h, &pred_h).unwrap();
        let (tp, fp, tn, fn_) = counts_ref(&reference, &voted);
        if c != (ConfusionCounts { tp, fp, tn, fn_ }) {
            mismatches += 1;
        }
        let m = clinical_metrics(&c).unwrap();
        let want = metrics_ref(tp, fp, tn, fn_);
        let got = [Some(m.acc), m.se, m.sp, m.prec, m.npv, m.kappa];
        if !got.iter().zip(want).all(|(&a, b)| opt_close(a, b)) {
            mismatches += 1;
        }

        let pair = TstPair::from_hypnograms(&ref_h, &pred_h);
        if pair.tst > 0.0 {
            let sleep_ref = reference.iter().filter(|&&s| s == Stage::Sleep).count() as f64 * 0.5;
            let sleep_hat = voted.iter().filter(|&&s| s == Stage::Sleep).count() as f64 * 0.5;
            let (e1, e2) = tst_errors(std::slice::from_ref(&pair)).unwrap();
            let (w1, w2) = tst_ref(&[(sleep_ref, sleep_hat)]);
            if !close(e1, w1, 1e-12) || !close(e2, w2, 1e-12) {
                mismatches += 1;
            }
            tst_pairs.push(pair);
            pairs.push((sleep_ref, sleep_hat));
        }
    }
    let (e1, e2) = tst_errors(&tst_pairs).unwrap();
    let (w1, w2) = tst_ref(&pairs);
    if !close(e1, w1, 1e-12) || !close(e2, w2, 1e-12) {
        mismatches += 1;
    }

    let worked = clinical_metrics(&ConfusionCounts { tp: 1, fn_: 1, tn: 2, fp: 0 }).unwrap();
    let kappa_ok = close(worked.kappa.unwrap(), 0.5, 1e-12);
    let pass = mismatches == 0 && kappa_ok;
    report(
        "majority vote and metric oracles (1000 pairs)",
        pass,
        &format!("{mismatches} mismatches; worked example kappa {}", worked.kappa.unwrap()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Preprocessing

#[test]
fn standardization_and_interpolation() {
    let records = short_synthetic(24, 51);
    let stats = fit_standardization(&records).unwrap();
    let seqs = prepare_all(&records, &stats, InputsMode::HrSpo2).unwrap();
    let mut worst_mean = 0.0f64;
    let mut worst_std = 0.0f64;
    for c in 0..2 {
        let vals: Vec<f64> = seqs.iter().flat_map(|s| s.inputs.iter().skip(c).step_by(2).copied()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }

    let mut rec = OximetryRecord {
        patient_id: "i".into(),
        hr: vec![70.0; 30],
        spo2: vec![95.0; 30],
        quality: vec![true; 30],
        stages_30s: vec![Stage::Sleep],
    };
    rec.hr[..4].copy_from_slice(&[60.0, 0.5, 250.0, 72.0]);
    rec.quality[1] = false;
    rec.quality[2] = false;
    let filled = mask_and_interpolate(&rec).unwrap();
    let interp_ok = filled.hr[..4] == [60.0, 64.0, 68.0, 72.0];

    let pass = worst_mean <= 1e-6 && worst_std <= 1e-6 && interp_ok;
    report(
        "preprocessing",
        pass,
        &format!(
            "|mean| {worst_mean:.1e}, |std-1| {worst_std:.1e}, interpolation {:?}",
            &filled.hr[..4]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// End-to-end synthetic run and determinism

/// Settings for the end-to-end experiment.
const E2E_PATIENTS: usize = 60;
const E2E_SEED: u64 = 7;
const E2E_HIDDEN: &str = "64";
const E2E_EPOCHS: &str = "20";
const E2E_LR: &str = "0.003";
const E2E_GRAD_CLIP: &str = "1.0";

struct E2eRun {
    dir: tempfile::TempDir,
    seconds: f64,
}

impl E2eRun {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn run_cli(args: &[&dyn AsRef<std::ffi::OsStr>]) {
    let mut argv: Vec<OsString> = vec!["sleepwake".into()];
    argv.extend(args.iter().map(|a| a.as_ref().to_os_string()));
    let code = cli::run(argv.clone());
    assert_eq!(code, 0, "command failed: {argv:?}");
}

fn train_and_evaluate(data: &Path, run: &Path, eval: &Path, inputs: &str) {
    run_cli(&[
        &"train", &"--data", &data, &"--out", &run, &"--hidden", &E2E_HIDDEN, &"--cell", &"gru", &"--inputs", &inputs,
        &"--epochs", &E2E_EPOCHS, &"--batch-size", &"2", &"--seed", &"1", &"--lr", &E2E_LR, &"--grad-clip", &E2E_GRAD_CLIP,
    ]);
    run_cli(&[&"evaluate", &"--data", &data, &"--checkpoint", &run, &"--split", &"test", &"--out", &eval]);
}

fn e2e() -> &'static E2eRun {
    static RUN: OnceLock<E2eRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        run_cli(&[&"synth", &"--patients", &E2E_PATIENTS.to_string(), &"--seed", &E2E_SEED.to_string(), &"--out", &data]);
        train_and_evaluate(&data, &dir.path().join("run"), &dir.path().join("eval"), "hr+spo2");
        let seconds = started.elapsed().as_secs_f64();
        train_and_evaluate(&data, &dir.path().join("run_hr"), &dir.path().join("eval_hr"), "hr");
        train_and_evaluate(&data, &dir.path().join("run_again"), &dir.path().join("eval_again"), "hr+spo2");
        E2eRun { dir, seconds }
    })
}

/// Average row of a metrics CSV keyed by column name.
fn averages(path: &Path) -> std::collections::HashMap<String, Option<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let avg = lines.find(|l| l.starts_with("average,")).unwrap();
    header
        .iter()
        .zip(avg.split(','))
        .skip(1)
        .map(|(h, v)| (h.to_string(), v.parse().ok()))
        .collect()
}

/// Window-level oracle that knows each subject's awake HR level, the HR
/// noise, the sleep drop and which seconds lie inside desaturation events.
fn oracle_metrics() -> (f64, f64, f64) {
    let cfg = SynthConfig {
        patients: E2E_PATIENTS,
        seed: E2E_SEED,
        ..SynthConfig::default()
    };
    let patients = generate_with_truth(&cfg).unwrap();
    let run = e2e();
    let manifest = load_manifest(&run.path("data/manifest.json")).unwrap();
    let test_ids = manifest.ids(Split::Test);
    let prior = (0.72f64 / 0.28).ln();
    let var = cfg.hr_noise_std.powi(2) + cfg.hr_quantum.powi(2) / 12.0;
    let mut pairs = Vec::new();
    for p in patients.iter().filter(|p| test_ids.contains(&p.record.patient_id.as_str())) {
        let rec = &p.record;
        let mut labels = Vec::new();
        for w in 0..rec.window_count() {
            let secs = w * 30..(w + 1) * 30;
            if secs.clone().any(|t| p.in_desaturation[t]) {
                labels.push(Stage::Sleep);
                continue;
            }
            let mut llr = prior;
            for t in secs {
                if rec.quality[t] {
                    let x = rec.hr[t];
                    let wake = (x - p.hr_baseline).powi(2);
                    let sleep = (x - p.hr_baseline + cfg.hr_sleep_drop).powi(2);
                    llr += (wake - sleep) / (2.0 * var);
                }
            }
            labels.push(if llr >= 0.0 { Stage::Sleep } else { Stage::Wake });
        }
        let reference = Hypnogram::new(rec.patient_id.clone(), rec.stages_30s.clone(), HypnogramSource::Reference).unwrap();
        let predicted = Hypnogram::new(rec.patient_id.clone(), labels, HypnogramSource::Predicted).unwrap();
        pairs.push((reference, predicted));
    }
    let report = sleepwake::metrics::build_report(&pairs).unwrap();
    let a = &report.averages;
    (a.acc.mean.unwrap(), a.kappa.mean.unwrap(), a.e2_percent.mean.unwrap())
}

#[test]
fn end_to_end_synthetic_run() {
    let run = e2e();
    let full = averages(&run.path("eval/metrics.csv"));
    let hr_only = averages(&run.path("eval_hr/metrics.csv"));
    let acc = full["acc"].unwrap();
    let kappa = full["kappa"].unwrap();
    let e2 = full["e2_pct"].unwrap();
    let acc_hr = hr_only["acc"].unwrap();
    let (o_acc, o_kappa, o_e2) = oracle_metrics();
    let oracle_ok = o_acc >= 90.0 && o_kappa >= 0.6 && o_e2 <= 12.0;
    let pass = acc >= 90.0 && kappa >= 0.6 && e2 <= 12.0 && acc >= acc_hr && oracle_ok && run.seconds <= 1800.0;
    report(
        "end-to-end synthetic run",
        pass,
        &format!(
            "acc {acc:.2}% kappa {kappa:.3} E2 {e2:.2}% (HR-only acc {acc_hr:.2}%); \
             oracle acc {o_acc:.2}% kappa {o_kappa:.3} E2 {o_e2:.2}%; {:.0}s",
            run.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn end_to_end_is_bitwise_deterministic() {
    let run = e2e();
    let same = |a: &str, b: &str| std::fs::read(run.path(a)).unwrap() == std::fs::read(run.path(b)).unwrap();
    let ckpt = same("run/checkpoint.json", "run_again/checkpoint.json");
    let metrics = same("eval/metrics.csv", "eval_again/metrics.csv");
    let pass = ckpt && metrics;
    report(
        "determinism",
        pass,
        &format!("checkpoint identical: {ckpt}, metrics CSV identical: {metrics}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Toy separability

fn toy_sequence(r: &mut rand_chacha::ChaCha8Rng, id: usize, len: usize) -> PreparedSequence {
    let mut inputs = Vec::with_capacity(len);
    while inputs.len() < len {
        let level: f64 = r.random_range(-2.0..2.0);
        let run = 30 * r.random_range(1..4);
        inputs.extend(std::iter::repeat_n(level, run));
    }
    inputs.truncate(len);
    let targets = inputs.iter().map(|&z| if z < 0.0 { Stage::Sleep } else { Stage::Wake }).collect();
    PreparedSequence::new(format!("toy{id}"), inputs, 1, targets).unwrap()
}

#[test]
fn toy_rule_is_learned() {
    let mut r = rng(61);
    let seqs: Vec<_> = (0..8).map(|i| toy_sequence(&mut r, i, 600)).collect();
    let cfg = TrainConfig {
        epochs: 30,
        hidden_size: 8,
        inputs_mode: InputsMode::Hr,
        seed: 3,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut params = init_params(cfg.cell_kind, cfg.hidden_size, 1, cfg.seed).unwrap();
    let mut adam = AdamState::new(&params, cfg.adam);
    let batches = make_batches(&seqs, cfg.batch_size, cfg.seed).unwrap();
    let mut acc = 0.0f64;
    let mut reached = None;
    for epoch in 1..=cfg.epochs {
        for batch in &batches {
            let (_, grads) = batch_loss_and_grads(&params, batch, BackwardOptions::default()).unwrap();
            adam_step(&mut params, &grads, &mut adam).unwrap();
        }
        let mut correct = 0;
        let mut total = 0;
        for s in &seqs {
            let pred = predict_per_second(&params, s).unwrap();
            correct += pred.iter().zip(&s.targets).filter(|(a, b)| a == b).count();
            total += s.length;
        }
        let epoch_acc = 100.0 * correct as f64 / total as f64;
        acc = acc.max(epoch_acc);
        if epoch_acc >= 99.0 && reached.is_none() {
            reached = Some(epoch);
        }
    }
    let pass = acc >= 99.0;
    report(
        "toy separability (H=8, 30 epochs)",
        pass,
        &format!("best per-second train accuracy {acc:.2}%, first at or above 99% in epoch {reached:?}"),
    );
    assert!(pass);
}
