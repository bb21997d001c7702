use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cxrnet::data::{
    extract_cohort, generate_synthetic, parse_manifest, reference_cohort, split, Cohort, Split, REFERENCE_COHORTS,
};
use cxrnet::evaluation::{evaluate as score_split, roc_svg, select_threshold, write_roc_csv, EvalError, ScoredSet};
use cxrnet::network::{load_checkpoint, save_checkpoint, Network};
use cxrnet::tensor::{Mode, Tensor};
use cxrnet::training::{class_weights, predict, train as fit, ClassWeights, Examples, Normalization, OnDisk};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_CSV_FILE: &str = "roc.csv";
pub const ROC_SVG_FILE: &str = "roc.svg";
pub const COHORT_CSV_FILE: &str = "cohort.csv";
pub const COHORT_JSON_FILE: &str = "cohort.json";

/// Checkpoint header key holding the compact training configuration.
const TRAIN_META_KEY: &str = "train";
const WEIGHTED_META_KEY: &str = "weighted_loss";

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn existing<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let path = required(value, flag)?;
    if !path.exists() {
        return Err(CliError::Data(format!("--{flag} {}: no such file", path.display())));
    }
    Ok(path)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = required(&cfg.out, "out")?.to_path_buf();
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    Ok(out)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The configuration with every filesystem path removed, so artifacts that
/// embed it do not depend on where a run was launched.
fn portable(cfg: &RunConfig) -> Value {
    let clean =
        RunConfig { manifest: None, image_root: None, cohort: None, checkpoint: None, out: None, ..cfg.clone() };
    serde_json::to_value(clean).expect("config serializes")
}

pub fn synth(cfg: RunConfig) -> Result<(), CliError> {
    let out = out_dir(&cfg)?;
    let ds = generate_synthetic(&cfg.synthetic, &out)?;
    let recorded = RunConfig { cohort: Some(ds.cohort_path.clone()), manifest: Some(ds.manifest_path.clone()), ..cfg };
    write_file(&ds.root.join(RUN_CONFIG_FILE), recorded.to_json())?;
    for s in Split::ALL {
        let c = ds.cohort.counts(s);
        println!("{s} positive={} negative={}", c.positive, c.negative);
    }
    println!("manifest={}", ds.manifest_path.display());
    println!("cohort={}", ds.cohort_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SplitCounts {
    positive: usize,
    negative: usize,
}

pub fn prepare(mut cfg: RunConfig) -> Result<(), CliError> {
    let manifest_path = existing(&cfg.manifest, "manifest")?.to_path_buf();
    let out = out_dir(&cfg)?;
    let root = match &cfg.image_root {
        Some(r) => r.clone(),
        None => manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let root = std::path::absolute(&root).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
    cfg.image_root = Some(root.clone());

    let file =
        fs::File::open(&manifest_path).map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest = parse_manifest(std::io::BufReader::new(file))?;
    let mut records = extract_cohort(&manifest, &cfg.pathology, cfg.uncertain, cfg.view_filter)?;
    for r in &mut records {
        r.path = root.join(&r.path).display().to_string();
    }
    let cohort = split(&records, cfg.split_ratios, cfg.seed, cfg.split_unit, &cfg.pathology)?;

    let cohort_path = out.join(COHORT_CSV_FILE);
    let mut w = create(&cohort_path)?;
    cohort.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", cohort_path.display())))?;

    let counts: Vec<(Split, SplitCounts)> = Split::ALL
        .iter()
        .map(|&s| {
            let c = cohort.counts(s);
            (s, SplitCounts { positive: c.positive, negative: c.negative })
        })
        .collect();
    let summary = json!({
        "pathology": cfg.pathology,
        "seed": cfg.seed,
        "uncertain": cfg.uncertain,
        "view_filter": cfg.view_filter,
        "split_unit": cfg.split_unit,
        "split_ratios": cfg.split_ratios,
        "counts": counts.iter().map(|(s, c)| (s.as_str().to_string(), json!(c))).collect::<serde_json::Map<_, _>>(),
        "config": portable(&cfg),
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&out.join(COHORT_JSON_FILE), text)?;
    cfg.cohort = Some(cohort_path.clone());
    write_file(&out.join(RUN_CONFIG_FILE), cfg.to_json())?;

    print_table(&cohort, &counts);
    println!("cohort={}", cohort_path.display());
    Ok(())
}

fn print_table(cohort: &Cohort, counts: &[(Split, SplitCounts)]) {
    let row = |label: &str, p: usize, n: usize| {
        let frac = if p + n == 0 { 0.0 } else { 100.0 * p as f64 / (p + n) as f64 };
        println!("{label:<22} {p:>9} {n:>9} {:>9} {frac:>9.1}", p + n);
    };
    println!("{}", cohort.pathology);
    println!("{:<22} {:>9} {:>9} {:>9} {:>9}", "split", "positive", "negative", "total", "pos_%");
    for (s, c) in counts {
        row(s.as_str(), c.positive, c.negative);
    }
    let (tv_p, tv_n) = (counts[0].1.positive + counts[1].1.positive, counts[0].1.negative + counts[1].1.negative);
    row("train+val", tv_p, tv_n);
    row("all", tv_p + counts[2].1.positive, tv_n + counts[2].1.negative);
    let references: Vec<_> = match reference_cohort(&cohort.pathology) {
        Some(r) => vec![r],
        None => REFERENCE_COHORTS.iter().collect(),
    };
    for r in references {
        println!("reference {}", r.pathology);
        row("  train+val", r.train_val.0, r.train_val.1);
        row("  test", r.test.0, r.test.1);
        let (p, n) = r.table_total();
        row("  total (sum)", p, n);
        if r.stated_total != (p, n) {
            row("  total (stated)", r.stated_total.0, r.stated_total.1);
        }
    }
}

/// Reads a cohort CSV; relative image paths resolve against its directory.
fn read_cohort(path: &Path, cfg: &RunConfig) -> Result<Cohort, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut cohort = Cohort::read_csv(std::io::BufReader::new(file), &cfg.pathology, cfg.seed, cfg.split_unit)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for r in &mut cohort.records {
        if Path::new(&r.path).is_relative() {
            r.path = base.join(&r.path).display().to_string();
        }
    }
    Ok(cohort)
}

fn weights_for(cfg: &RunConfig, cohort: &Cohort) -> Result<ClassWeights, CliError> {
    let c = cohort.counts(Split::Train);
    if cfg.weighted_loss {
        Ok(class_weights(c.positive, c.negative)?)
    } else {
        Ok(ClassWeights::unit(c.positive, c.negative))
    }
}

pub fn train(cfg: RunConfig) -> Result<(), CliError> {
    let cohort_path = existing(&cfg.cohort, "cohort")?.to_path_buf();
    let net_cfg = cfg.network_config()?;
    cfg.train.validate()?;
    let out = out_dir(&cfg)?;
    let cohort = read_cohort(&cohort_path, &cfg)?;
    let weights = weights_for(&cfg, &cohort)?;
    let side = net_cfg.input_size;
    let train_set = OnDisk::from_cohort(&cohort, Split::Train, side).preload()?;
    let val_set = OnDisk::from_cohort(&cohort, Split::Val, side).preload()?;
    eprintln!(
        "training {} on {} train / {} val images, w_p={:.5} w_n={:.5}",
        cfg.pathology,
        train_set.len(),
        val_set.len(),
        weights.w_p,
        weights.w_n
    );

    let network = Network::<f32>::build(&net_cfg, cfg.seed)?;
    let epochs = cfg.train.epochs;
    let mut progress = |r: &cxrnet::training::EpochRecord| {
        eprintln!("epoch {}/{epochs} train_loss={:.6} val_loss={:.6}", r.epoch, r.train_loss, r.val_loss);
    };
    let outcome = fit(network, &train_set, &val_set, &cfg.train, &weights, &mut progress)?;

    let mut best = outcome.best;
    best.meta.push((TRAIN_META_KEY.into(), serde_json::to_string(&cfg.train).expect("train config serializes")));
    best.meta.push((WEIGHTED_META_KEY.into(), cfg.weighted_loss.to_string()));
    save_checkpoint(&best, out.join(CHECKPOINT_FILE))?;
    let history_path = out.join(HISTORY_FILE);
    let mut w = create(&history_path)?;
    outcome.history.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", history_path.display())))?;
    let recorded = RunConfig { checkpoint: Some(out.join(CHECKPOINT_FILE)), ..cfg };
    write_file(&out.join(RUN_CONFIG_FILE), recorded.to_json())?;
    eprintln!("best epoch {} val_loss={:.6}", best.epoch, best.val_loss);
    Ok(())
}

pub fn evaluate(cfg: RunConfig) -> Result<(), CliError> {
    let checkpoint_path = existing(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let cohort_path = existing(&cfg.cohort, "cohort")?.to_path_buf();
    if let Some(t) = cfg.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(EvalError::Threshold(t).into());
        }
    }
    let out = out_dir(&cfg)?;
    let checkpoint = load_checkpoint(&checkpoint_path)?;
    let normalization = checkpoint
        .meta
        .iter()
        .find(|(k, _)| k == Normalization::HEADER_KEY)
        .and_then(|(_, v)| Normalization::from_header(v))
        .ok_or_else(|| CliError::Data(format!("{}: no normalization entry", checkpoint_path.display())))?;
    let network = &checkpoint.network;
    let side = network.config().input_size;
    let cohort = read_cohort(&cohort_path, &cfg)?;
    let batch = cfg.train.batch_size;

    let (threshold, source) = match cfg.threshold {
        Some(t) => (t, "fixed"),
        None => {
            let val = OnDisk::from_cohort(&cohort, Split::Val, side).preload()?;
            let labels = (0..val.len()).map(|i| val.positive(i)).collect();
            let scores = predict(network, &val, &normalization, batch).map_err(EvalError::from)?;
            let set = ScoredSet::new(scores.iter().map(|s| s.clamp(0.0, 1.0)).collect(), labels)?;
            (select_threshold(&set, cfg.objective)?.0, "validation")
        }
    };
    let test = OnDisk::from_cohort(&cohort, Split::Test, side).preload()?;
    let outcome = score_split(network, &test, &normalization, threshold, &cfg.pathology, cfg.objective, batch)?;

    let mut report = serde_json::to_value(&outcome.report).expect("report serializes");
    let map = report.as_object_mut().expect("report is an object");
    map.insert("threshold_source".into(), json!(source));
    map.insert("seed".into(), json!(checkpoint.seed));
    map.insert("checkpoint_epoch".into(), json!(checkpoint.epoch));
    map.insert("checkpoint_val_loss".into(), json!(checkpoint.val_loss));
    map.insert("normalization".into(), json!(normalization));
    map.insert("network".into(), json!(network.config()));
    map.insert("config".into(), portable(&cfg));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&out.join(REPORT_FILE), text)?;

    let roc_path = out.join(ROC_CSV_FILE);
    let mut w = create(&roc_path)?;
    write_roc_csv(&outcome.curve, &mut w)?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", roc_path.display())))?;
    let title = format!("{} (test, n={})", cfg.pathology, test.len());
    write_file(&out.join(ROC_SVG_FILE), roc_svg(&outcome.curve, &title, outcome.report.auc))?;
    let recorded = RunConfig { threshold: Some(threshold), ..cfg };
    write_file(&out.join(RUN_CONFIG_FILE), recorded.to_json())?;

    let r = &outcome.report;
    println!(
        "auc={:?} threshold={:?} f1_macro={:?} f1_pos={:?} f1_neg={:?}",
        r.auc, r.threshold, r.f1_macro, r.f1_pos, r.f1_neg
    );
    Ok(())
}

pub fn params(cfg: &RunConfig, trace: bool) -> Result<(), CliError> {
    let net_cfg = cfg.network_config()?;
    let network = Network::<f32>::build(&net_cfg, cfg.seed)?;
    let counts = network.count_parameters();
    println!("trainable={} non_trainable={}", counts.trainable, counts.non_trainable);
    if trace {
        let (c, s) = (net_cfg.input_channels, net_cfg.input_size);
        let input = Tensor::<f32>::zeros([1, c, s, s])?;
        for (stage, shape) in network.forward(input, Mode::Eval)?.trace {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            println!("{stage} {}", dims.join("x"));
        }
    }
    Ok(())
}
