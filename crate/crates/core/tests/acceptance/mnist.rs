//! MNIST criteria. They share one classifier and the seed-0 V-ABC model.

use std::path::PathBuf;
use std::time::Instant;

use vabc::artifacts::{manifold_grid, GridSpec};
use vabc::config::{Preset, RunConfig};
use vabc::evaluation::{sweep, sweep_points, EvalClassifier, SweepAxis};
use vabc::pipeline::{self, ModelKind};
use vabc::models::VabcModel;

use super::{outcome, Outcome};

const SUBSAMPLE: usize = 12_000;
const SEEDS: [u64; 3] = [0, 1, 2];

fn data_dir() -> PathBuf {
    std::env::var_os("VABC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn base_config() -> RunConfig {
    let mut cfg = RunConfig::preset(Preset::Mnist);
    cfg.dataset.subsample = Some(SUBSAMPLE);
    cfg.paths.data_dir = Some(data_dir());
    cfg
}

fn seeded(seed: u64) -> RunConfig {
    let mut cfg = base_config();
    cfg.dataset.seed = seed;
    cfg.train.seed = seed;
    cfg
}

type Row = (usize, &'static str, Outcome, f64);

fn all_failed(reason: &str) -> Vec<Row> {
    vec![
        (4, "MNIST negative generation error", outcome(false, reason), 0.0),
        (5, "manifold exclusion", outcome(false, reason), 0.0),
        (6, "sensitivity direction", outcome(false, reason), 0.0),
    ]
}

fn criterion_4(clf: &EvalClassifier) -> (Outcome, Option<VabcModel>) {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut first = None;
    for seed in SEEDS {
        let cfg = seeded(seed);
        let t = Instant::now();
        let errs = pipeline::folds(&cfg).and_then(|folds| {
            let a = pipeline::train_on(&cfg, &folds, ModelKind::Vabc)?;
            let b = pipeline::train_on(&cfg, &folds, ModelKind::Vae)?;
            let ea = pipeline::evaluate(&cfg, &a.model, clf)?.error;
            let eb = pipeline::evaluate(&cfg, &b.model, clf)?.error;
            Ok((a.model, ea, eb))
        });
        match errs {
            Ok((model, ea, eb)) => {
                let ok = ea <= 0.015 && eb >= 0.03 && ea <= eb / 3.0;
                pass &= ok;
                lines.push(format!(
                    "seed {seed}: V-ABC {ea:.4}, VAE {eb:.4} ({:.0}s)",
                    t.elapsed().as_secs_f64()
                ));
                if first.is_none() {
                    first = Some(model);
                }
            }
            Err(e) => {
                pass = false;
                lines.push(format!("seed {seed}: {e}"));
            }
        }
    }
    let detail = format!("{}; need V-ABC <= 0.015, VAE >= 0.03, ratio >= 3", lines.join("; "));
    (outcome(pass, detail), first)
}

fn criterion_5(model: Option<&VabcModel>, clf: &EvalClassifier, neg: u8) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "no criterion-4 V-ABC checkpoint to inspect");
    };
    let cells = manifold_grid(model, &GridSpec::manifold()).and_then(|m| clf.predict(&m.cells));
    match cells {
        Ok(labels) => {
            let hits = labels.iter().filter(|&&c| c == neg).count();
            outcome(hits <= 1, format!("{hits} of {} manifold cells classified as {neg} (limit 1)", labels.len()))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_6(clf: &EvalClassifier) -> Outcome {
    let base = base_config();
    let points = sweep_points(&[0.1, 0.3], &SEEDS);
    let table = sweep(&points, |p| {
        let cfg = pipeline::apply_sweep_point(&base, SweepAxis::P, p)?;
        let t = pipeline::train_model(&cfg, ModelKind::Vabc)?;
        pipeline::evaluate(&cfg, &t.model, clf)
    });
    if !table.failures.is_empty() {
        return outcome(false, format!("{} sweep runs failed: {:?}", table.failures.len(), table.failures));
    }
    let (lo, hi) = (table.mean_at(0.1), table.mean_at(0.3));
    match (lo, hi) {
        (Some(lo), Some(hi)) => outcome(hi <= lo, format!("mean error p=0.1: {lo:.4}, p=0.3: {hi:.4}")),
        _ => outcome(false, "sweep produced no results"),
    }
}

pub fn run_all() -> Vec<Row> {
    let base = base_config();
    let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cnn.json");
    let t = Instant::now();
    let clf = match pipeline::classifier(&base, Some(&cache)) {
        Ok(c) => c,
        Err(e) => return all_failed(&format!("MNIST unavailable under {}: {e}", data_dir().display())),
    };
    println!(
        "  (classifier ready in {:.0}s, held-out accuracy {:.4})",
        t.elapsed().as_secs_f64(),
        clf.accuracy()
    );
    let neg = pipeline::negative_class(&base);

    let t = Instant::now();
    let (c4, model) = criterion_4(&clf);
    let s4 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let c5 = criterion_5(model.as_ref(), &clf, neg);
    let s5 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let c6 = criterion_6(&clf);
    let s6 = t.elapsed().as_secs_f64();
    vec![
        (4, "MNIST negative generation error", c4, s4),
        (5, "manifold exclusion", c5, s5),
        (6, "sensitivity direction", c6, s6),
    ]
}
