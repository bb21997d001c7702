//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! gated criterion fails.
//!
//! Run with `cargo test --release -p cxrnet-cli --test acceptance`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cxrnet::evaluation::{auc, reference_auc, roc_curve, select_threshold, F1Objective, ScoredSet};
use cxrnet::network::{preset_config, Checkpoint, Network};
use cxrnet::tensor::{ops, Mode, Tape};
use cxrnet::training::{class_weights, select_checkpoint, TrainHistory, CLASS_NEGATIVE, CLASS_POSITIVE};
use cxrnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cxrnet(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cxrnet")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "cxrnet {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn parameter_counts() -> Verdict {
    let (out, took) = timed(|| cxrnet(&["params", "--preset", "densenet121-paper"]));
    let out = out?;
    ensure(
        out == "trainable=6955906 non_trainable=83648\n" && took < Duration::from_secs(10),
        format!("{:?} in {:.2}s", out.trim(), took.as_secs_f64()),
    )
}

fn feature_shape() -> Verdict {
    let (out, took) = timed(|| cxrnet(&["params", "--preset", "densenet121-paper", "--trace"]));
    let out = out?;
    let features = out.lines().find(|l| l.starts_with("features ")).unwrap_or("features missing").to_string();
    ensure(
        features == "features 1x1024x10x10" && took < Duration::from_secs(60),
        format!("{features} in {:.2}s", took.as_secs_f64()),
    )
}

fn class_weight_identity() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for ((n_p, n_n), (hand_p, hand_n)) in [((935, 7430), (8.94652, 1.12584)), ((8552, 21941), (3.56560, 1.38977))] {
        let w = class_weights(n_p, n_n).map_err(|e| e.to_string())?;
        let total = (n_p + n_n) as f64;
        let rel_p = (w.w_p * n_p as f64 - total).abs() / total;
        let rel_n = (w.w_n * n_n as f64 - total).abs() / total;
        ok &= rel_p < 1e-9 && rel_n < 1e-9;
        ok &= (w.w_p - hand_p).abs() < 1e-4 && (w.w_n - hand_n).abs() < 1e-4;
        lines.push(format!("({n_p},{n_n}) -> w_p={:.5} w_n={:.5}", w.w_p, w.w_n));
    }
    ensure(ok, lines.join("; "))
}

fn gradient_check() -> Verdict {
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut cfg = preset_config("tiny").map_err(|e| e.to_string())?;
    cfg.input_size = 16;
    let mut net = Network::<f64>::build(&cfg, 17).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Tensor::new([2, 1, 16, 16], (0..512).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let targets = [CLASS_POSITIVE, CLASS_NEGATIVE];
    let weights = class_weights(935, 7430).unwrap().per_class();

    let analytic: Vec<(usize, Tensor<f64>)> = {
        let mut tape = Tape::new();
        let out = net.forward_graph(&mut tape, x.clone(), Mode::Train).map_err(|e| e.to_string())?;
        let loss = tape.weighted_cross_entropy(out.probs, &targets, &weights).map_err(|e| e.to_string())?;
        let g = tape.backward(loss).map_err(|e| e.to_string())?;
        out.params.iter().map(|&(i, v)| (i, g.get(v).cloned().unwrap_or_else(|| tape.value(v).zeros_like()))).collect()
    };
    let loss_of = |net: &Network<f64>| -> f64 {
        let probs = net.forward(x.clone(), Mode::Train).unwrap().probs;
        ops::weighted_cross_entropy(&probs, &targets, &weights).unwrap()
    };

    let (mut checked, mut worst, mut failures, mut worst_abs, mut worst_large) =
        (0usize, 0.0f64, 0usize, 0.0f64, 0.0f64);
    for (index, grad) in &analytic {
        let name = net.params()[*index].name.clone();
        let base = net.params()[*index].value.clone();
        for e in 0..base.len() {
            let mut probe = base.clone();
            probe.data_mut()[e] = base.data()[e] + STEP;
            net.set_param(&name, probe.clone()).unwrap();
            let plus = loss_of(&net);
            probe.data_mut()[e] = base.data()[e] - STEP;
            net.set_param(&name, probe).unwrap();
            let minus = loss_of(&net);
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.data()[e];
            let err = (a - numeric).abs();
            worst_abs = worst_abs.max(err);
            if a.abs() > 1e-4 {
                worst_large = worst_large.max(err / a.abs());
            }
            if err > 1e-8 {
                let rel = err / a.abs().max(numeric.abs());
                worst = worst.max(rel);
                failures += usize::from(rel >= 1e-3);
            }
            checked += 1;
        }
        net.set_param(&name, base).unwrap();
    }
    let took = start.elapsed();
    ensure(
        failures == 0 && checked > 0 && took < Duration::from_secs(120),
        format!(
            "{checked} scalars over {} tensors, max abs err {worst_abs:.1e}, max rel err above the 1e-8 floor {worst:.1e}, max rel err where |grad| > 1e-4 {worst_large:.1e}, {failures} over 1e-3, {:.1}s",
            analytic.len(),
            took.as_secs_f64()
        ),
    )
}

/// Mann-Whitney estimate: P(score_pos > score_neg) + ½·P(tie).
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0f64, 0.0f64);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

/// Brute force over every candidate: 0, each midpoint of adjacent distinct
/// scores, and one value above the maximum. Macro F1 is compared as an exact
/// fraction; the first (smallest) maximizer wins.
fn brute_force_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0];
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    let max = *distinct.last().unwrap();
    candidates.push(if max < 1.0 { (max + 1.0) / 2.0 } else { 1.0f64.next_up() });

    let frac = |hit: u128, wrong_in: u128, wrong_out: u128| {
        if hit == 0 {
            (0, 1)
        } else {
            (2 * hit, 2 * hit + wrong_in + wrong_out)
        }
    };
    let mut best: Option<(f64, u128, u128)> = None;
    for t in candidates {
        let (mut tp, mut fp, mut tn, mut fn_) = (0u128, 0u128, 0u128, 0u128);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= t, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let (a, b) = frac(tp, fp, fn_);
        let (c, d) = frac(tn, fn_, fp);
        let (num, den) = (a * d + c * b, 2 * b * d);
        if best.is_none_or(|(_, bn, bd)| num * bd > bn * den) {
            best = Some((t, num, den));
        }
    }
    best.unwrap().0
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_auc, mut threshold_mismatches, mut tied_sets) = (0.0f64, 0usize, 0usize);
    for k in 0..200 {
        let n = rng.random_range(2..=500);
        let levels = if k % 2 == 0 { Some(rng.random_range(2..=12)) } else { None };
        let mut scores: Vec<f64> = (0..n)
            .map(|_| match levels {
                Some(l) => rng.random_range(0..=l) as f64 / l as f64,
                None => rng.random::<f64>(),
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        if k % 7 == 0 {
            scores[0] = 1.0;
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        tied_sets += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));

        let set = ScoredSet::new(scores.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let area = auc(&roc_curve(&set).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((area - pairwise_auc(&scores, &labels)).abs());
        let (t, _) = select_threshold(&set, F1Objective::Macro).map_err(|e| e.to_string())?;
        threshold_mismatches += usize::from(t.to_bits() != brute_force_threshold(&scores, &labels).to_bits());
    }
    let took = start.elapsed();
    ensure(
        worst_auc <= 1e-9 && threshold_mismatches == 0 && tied_sets >= 50 && took < Duration::from_secs(60),
        format!(
            "200 sets ({tied_sets} with ties): max |AUC - pairwise| {worst_auc:.1e}, {threshold_mismatches} threshold mismatches, {:.2}s",
            took.as_secs_f64()
        ),
    )
}

fn checkpoint_selection() -> Verdict {
    let net = Network::<f32>::build(&preset_config("tiny").unwrap(), 0).map_err(|e| e.to_string())?;
    let mut sequences: Vec<Vec<f64>> = vec![
        vec![0.5],
        vec![0.5, 0.5, 0.5],
        vec![0.9, 0.4, 0.4, 0.7],
        vec![0.9, 0.8, 0.3, 0.6, 0.3, 0.3],
        vec![1.0, 0.9, 0.8, 0.7, 0.6],
        vec![0.2, 0.3, 0.4, 0.2],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let len = rng.random_range(1..=15);
        sequences.push((0..len).map(|_| rng.random_range(1..=4) as f64 / 8.0).collect());
    }
    let mut wrong = 0usize;
    for losses in &sequences {
        let mut expected = 1;
        for (i, &l) in losses.iter().enumerate() {
            if l < losses[expected - 1] {
                expected = i + 1;
            }
        }
        let saved: Vec<Checkpoint> = losses
            .iter()
            .enumerate()
            .map(|(i, &val_loss)| Checkpoint {
                network: net.clone(),
                epoch: i + 1,
                val_loss,
                seed: 0,
                meta: Vec::new(),
            })
            .collect();
        let history = TrainHistory::from_val_losses(losses);
        let chosen = select_checkpoint(&history, &saved).map_err(|e| e.to_string())?;
        wrong += usize::from(chosen.epoch != expected || history.best_epoch() != Some(expected));
    }
    ensure(wrong == 0, format!("{} sequences, {wrong} wrong", sequences.len()))
}

struct PipelineRun {
    report: Value,
    best_epoch_matches: bool,
    took: Duration,
}

/// synth → train → evaluate with default settings, optionally unit weights.
fn pipeline(dir: &Path, weighted: bool) -> Result<PipelineRun, String> {
    let p = |name: &str| dir.join(name).display().to_string();
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    fs::write(dir.join("config.json"), format!("{{\"weighted_loss\": {weighted}}}")).map_err(|e| e.to_string())?;
    let cfg = p("config.json");
    let (res, took) = timed(|| -> Result<(), String> {
        cxrnet(&["synth", "--config", &cfg, "--out", &p("data")])?;
        cxrnet(&["train", "--config", &cfg, "--cohort", &p("data/cohort.csv"), "--out", &p("train")])?;
        cxrnet(&[
            "evaluate",
            "--config",
            &cfg,
            "--checkpoint",
            &p("train/checkpoint.ckpt"),
            "--cohort",
            &p("data/cohort.csv"),
            "--out",
            &p("eval"),
        ])?;
        Ok(())
    });
    res?;
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("eval/report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let history = TrainHistory::read_csv(fs::File::open(dir.join("train/history.csv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let best_epoch_matches = history.best_epoch().map(|e| e as u64) == report["checkpoint_epoch"].as_u64();
    Ok(PipelineRun { report, best_epoch_matches, took })
}

fn end_to_end(root: &Path) -> (Verdict, String) {
    let run = match pipeline(&root.join("weighted_a"), true) {
        Ok(r) => r,
        Err(e) => return (Err(e), String::new()),
    };
    let (auc, f1) = (run.report["auc"].as_f64().unwrap_or(0.0), run.report["f1_macro"].as_f64().unwrap_or(0.0));
    let verdict = ensure(
        auc >= 0.90 && f1 >= 0.75 && run.best_epoch_matches && run.took <= Duration::from_secs(600),
        format!(
            "test AUC {auc:.4} (>= 0.90), macro-F1 {f1:.4} (>= 0.75) at threshold {:.4}, best epoch {}, {:.1}s",
            run.report["threshold"].as_f64().unwrap_or(f64::NAN),
            run.report["checkpoint_epoch"],
            run.took.as_secs_f64()
        ),
    );
    let comparison = match pipeline(&root.join("unit"), false) {
        Ok(u) => format!(
            "unit weights: test AUC {:.4}, macro-F1 {:.4} | weighted: test AUC {auc:.4}, macro-F1 {f1:.4}",
            u.report["auc"].as_f64().unwrap_or(f64::NAN),
            u.report["f1_macro"].as_f64().unwrap_or(f64::NAN)
        ),
        Err(e) => format!("unit-weight run failed: {e}"),
    };
    (verdict, comparison)
}

fn determinism(root: &Path) -> Verdict {
    pipeline(&root.join("weighted_b"), true)?;
    let mut differing = Vec::new();
    for file in ["train/checkpoint.ckpt", "train/history.csv", "eval/report.json"] {
        let a = fs::read(root.join("weighted_a").join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(root.join("weighted_b").join(file)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(file);
        }
    }
    ensure(
        differing.is_empty(),
        format!("checkpoint, history and report compared byte-for-byte; differing: {differing:?}"),
    )
}

fn reference_metadata(root: &Path) -> Verdict {
    let lesion = reference_auc("Lung Lesion");
    let cardio = reference_auc("Cardiomegaly");
    let report: Value = fs::read_to_string(root.join("weighted_a/eval/report.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(Value::Null);
    ensure(
        lesion == Some(0.73) && cardio == Some(0.92) && report["reference_auc"].as_f64() == Some(0.73),
        format!(
            "reference only, not reproduced at desk scale: Lung Lesion AUC {lesion:?}, Cardiomegaly AUC {cardio:?}; recorded in report.json"
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    })
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let mut comparison = String::new();
    let results: Vec<(u8, &str, Verdict)> = vec![
        (1, "parameter counts", guarded(parameter_counts)),
        (2, "penultimate feature shape", guarded(feature_shape)),
        (3, "class-weight identity", guarded(class_weight_identity)),
        (4, "gradient check", guarded(gradient_check)),
        (5, "metric oracles", guarded(metric_oracles)),
        (6, "checkpoint selection", guarded(checkpoint_selection)),
        (
            7,
            "desk-scale end-to-end",
            guarded(|| {
                let (v, c) = end_to_end(root.path());
                comparison = c;
                v
            }),
        ),
        (8, "determinism", guarded(|| determinism(root.path()))),
        (9, "reference metrics", guarded(|| reference_metadata(root.path()))),
    ];

    let mut failed = 0;
    for (id, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
        if *id == 7 && !comparison.is_empty() {
            println!("INFO criterion 7 comparison (not gated): {comparison}");
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
