mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use vabc::artifacts::{
    ellipses_to_csv, gradient_field, latent_ellipses, manifold_grid, reconstruction_panel, GridSpec,
    DEFAULT_BINARIZE_THRESHOLD,
};
use vabc::config::{resolve, DatasetKind, Override, RunConfig};
use vabc::evaluation::{sweep, sweep_points, KnnOracle, SweepAxis, SweepPoint, SweepTable};
use vabc::fmt::sig9;
use vabc::models::{TrainMeta, VabcModel};
use vabc::pipeline::{self, ModelKind};
use vabc::{Error, Result};

use manifest::{sha256_file, verify_checkpoint, Manifest, VerifiedCheckpoint};

/// Negative-unlabeled generative modelling: train, sample, evaluate, sweep
/// and visualize V-ABC and VAE models.
///
/// Any config key can be overridden with a dotted flag, e.g.
/// `--train.seed 7` or `--dataset.p=0.3`.
#[derive(Parser, Debug)]
#[command(name = "vabc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a preset instead of (or on top of) a config file.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory (same as `--paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Moons,
    Mnist,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the NU training fold and write it (moons) or its counts (MNIST).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a V-ABC model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the VAE baseline on the unlabeled fold.
    TrainVae {
        #[command(flatten)]
        common: Common,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples (defaults to eval.n_samples).
        #[arg(long)]
        n: Option<usize>,
        /// Add unit-variance output noise to the decoder mean.
        #[arg(long)]
        noise: bool,
    },
    /// Score a checkpoint's samples with the gated classifier.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and score one model per (axis value, seed).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Number of seeds, 0..seeds.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, value_enum, default_value = "vabc")]
        model: ModelArg,
        /// Parallel workers, each running whole points.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Emit diagnostic tables (and optionally PNGs) from a checkpoint.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        kind: VizKind,
        /// Also render PNG images where the kind supports them.
        #[arg(long)]
        png: bool,
        /// Grid resolution per axis (defaults depend on the kind).
        #[arg(long)]
        resolution: Option<usize>,
        /// Label for the gradient field.
        #[arg(long, default_value_t = 0)]
        y: u8,
        /// γ for the gradient field (defaults to the checkpoint's final γ).
        #[arg(long)]
        gamma: Option<f64>,
        /// β for the gradient field (defaults to the checkpoint's final β).
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_BINARIZE_THRESHOLD)]
        threshold: f32,
        /// Examples for reconstruction panels and ellipses.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Vabc,
    Vae,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum VizKind {
    Field,
    Manifold,
    Recon,
    Ellipses,
}

/// Splits `--a.b value` / `--a.b=value` pairs out of the argument list.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::Config {
                key: name.into(),
                constraint: "override flag needs a value".into(),
            })?,
        };
        overrides.push(Override::parse(name, &value)?);
    }
    Ok((rest, overrides))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::EvaluatorUnusable { .. } => 4,
        e if e.is_numeric() => 3,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::EvaluatorUnusable { .. } => "evaluator_unusable",
        Error::Diverged { .. } => "diverged",
        Error::NonFinite { .. } | Error::Domain(_) => "numeric",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Format { .. } | Error::Length { .. } => "data_format",
        _ => "contract",
    }
}

fn report(e: &Error) -> ExitCode {
    let code = exit_code(e);
    let mut line = json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": code,
    });
    if let Error::Config { key, .. } = e {
        line["key"] = Value::String(key.clone());
    }
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let msg = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report(&Error::Config {
                key: "<args>".into(),
                constraint: msg.to_string(),
            });
        }
    };
    match run(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

/// Config from (in order) a checkpoint's manifest or a config file or a
/// bare preset, then `--preset`, `--out` and dotted overrides.
fn load_config(common: &Common, overrides: &[Override], base: Option<&Manifest>) -> Result<(RunConfig, Option<(PathBuf, String)>)> {
    let mut all = Vec::new();
    let mut input = None;
    let doc = if let Some(path) = &common.config {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        input = Some((path.clone(), manifest::sha256_hex(s.as_bytes())));
        serde_json::from_str(&s).map_err(|e| Error::Config {
            key: "<root>".into(),
            constraint: format!("{}: not valid JSON: {e}", path.display()),
        })?
    } else if let Some(m) = base {
        serde_json::to_value(&m.config)?
    } else if common.preset.is_some() {
        json!({})
    } else {
        return Err(Error::Config {
            key: "<args>".into(),
            constraint: "need --config or --preset".into(),
        });
    };
    if let Some(p) = common.preset {
        let name = match p {
            PresetArg::Moons => "moons",
            PresetArg::Mnist => "mnist",
        };
        all.push(Override::parse("model.preset", &format!("\"{name}\""))?);
    }
    if let Some(out) = &common.out {
        all.push(Override {
            path: "paths.out_dir".into(),
            value: Value::String(out.display().to_string()),
        });
    }
    all.extend_from_slice(overrides);
    Ok((resolve(doc, &all)?, input))
}

fn bytes(s: String) -> Vec<u8> {
    s.into_bytes()
}

fn pretty_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn new_manifest(sub: &str, cfg: &RunConfig, config_input: Option<(PathBuf, String)>) -> Manifest {
    let mut m = Manifest::new(sub, cfg);
    if let Some((p, sha)) = config_input {
        m.record_input(&p, sha);
    }
    m
}

/// Downstream output directory: `--out` if given, else a subdirectory of
/// the checkpoint's directory.
fn downstream_dir(common: &Common, ckpt: &Path, sub: &str) -> PathBuf {
    match &common.out {
        Some(d) => d.clone(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join(sub),
    }
}

struct Loaded {
    cfg: RunConfig,
    model: VabcModel,
    meta: TrainMeta,
    manifest: Manifest,
}

fn load_checkpoint(common: &Common, overrides: &[Override], path: &Path, sub: &str) -> Result<Loaded> {
    let VerifiedCheckpoint {
        path,
        contents,
        sha256,
        manifest: source,
    } = verify_checkpoint(path)?;
    let (mut cfg, config_input) = load_config(common, overrides, Some(&source))?;
    cfg.paths.out_dir = downstream_dir(common, &path, sub);
    let (model, meta) = VabcModel::from_checkpoint_json(&contents)?;
    if model.input_dim() != cfg.input_dim() {
        return Err(Error::Config {
            key: "dataset.kind".into(),
            constraint: format!(
                "checkpoint expects {}-dimensional inputs, config gives {}",
                model.input_dim(),
                cfg.input_dim()
            ),
        });
    }
    let mut manifest = new_manifest(sub, &cfg, config_input);
    manifest.record_input(&path, sha256);
    Ok(Loaded {
        cfg,
        model,
        meta,
        manifest,
    })
}

fn classifier_cache(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .classifier_cache
        .clone()
        .unwrap_or_else(|| cfg.paths.out_dir.join("classifier.json"))
}

fn run(command: Command, overrides: &[Override]) -> Result<()> {
    match command {
        Command::GenData { common } => {
            let (cfg, input) = load_config(&common, overrides, None)?;
            let fold = pipeline::training_fold(&cfg)?;
            let mut files = vec![("config.json".to_string(), pretty_json(&cfg)?)];
            files.push(("counts.json".into(), pretty_json(&fold.counts())?));
            if cfg.dataset.kind == DatasetKind::Moons {
                files.push(("fold.csv".into(), bytes(fold.to_moons_csv()?)));
            }
            new_manifest("gen-data", &cfg, input).write(&cfg.paths.out_dir, &files)
        }
        Command::Train { common } => train_cmd(&common, overrides, ModelKind::Vabc),
        Command::TrainVae { common } => train_cmd(&common, overrides, ModelKind::Vae),
        Command::Sample {
            common,
            checkpoint,
            n,
            noise,
        } => {
            let l = load_checkpoint(&common, overrides, &checkpoint, "sample")?;
            let n = n.unwrap_or(l.cfg.eval.n_samples);
            if n == 0 {
                return Err(Error::Config {
                    key: "n".into(),
                    constraint: "must be at least 1".into(),
                });
            }
            let x = l.model.sample(n, l.cfg.train.seed, noise)?;
            let mut csv = (1..=x.cols()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
            csv.push('\n');
            for i in 0..x.rows() {
                let row: Vec<String> = x.row(i).iter().map(|&v| sig9(v as f64)).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            l.manifest.write(&l.cfg.paths.out_dir, &[("samples.csv".into(), bytes(csv))])
        }
        Command::Eval { common, checkpoint } => {
            let l = load_checkpoint(&common, overrides, &checkpoint, "eval")?;
            let mut manifest = l.manifest;
            let cache = classifier_cache(&l.cfg);
            let cache_existed = cache.exists();
            let clf = pipeline::classifier(&l.cfg, Some(&cache))?;
            if cache_existed {
                manifest.record_input(&cache, sha256_file(&cache)?);
            }
            let report = pipeline::evaluate(&l.cfg, &l.model, &clf)?;
            let mut files = vec![("report.json".to_string(), pretty_json(&report)?)];
            if l.cfg.dataset.kind == DatasetKind::Moons {
                let oracle = KnnOracle::clean_moons(l.cfg.eval.oracle_points_per_moon)?;
                let rate = pipeline::moons_rate(&l.cfg, &l.model, &oracle)?;
                files.push((
                    "oracle_rate.json".into(),
                    pretty_json(&json!({ "moons_negative_rate": rate, "n": l.cfg.eval.n_samples }))?,
                ));
            }
            manifest.write(&l.cfg.paths.out_dir, &files)
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
            model,
            workers,
        } => {
            let (cfg, input) = load_config(&common, overrides, None)?;
            let kind = match model {
                ModelArg::Vabc => ModelKind::Vabc,
                ModelArg::Vae => ModelKind::Vae,
            };
            sweep_cmd(&cfg, input, axis, &values, seeds, kind, workers)
        }
        Command::Viz {
            common,
            checkpoint,
            kind,
            png,
            resolution,
            y,
            gamma,
            beta,
            threshold,
            count,
        } => {
            let sub = match kind {
                VizKind::Field => "viz-field",
                VizKind::Manifold => "viz-manifold",
                VizKind::Recon => "viz-recon",
                VizKind::Ellipses => "viz-ellipses",
            };
            let l = load_checkpoint(&common, overrides, &checkpoint, sub)?;
            let mut files = Vec::new();
            match kind {
                VizKind::Field => {
                    let mut grid = GridSpec::moons_field();
                    if let Some(r) = resolution {
                        grid = GridSpec::new(grid.min, grid.max, [r, r])?;
                    }
                    let g = gamma.unwrap_or(l.meta.final_gamma);
                    let b = beta.unwrap_or(l.meta.final_beta);
                    let field = gradient_field(&l.model, &grid, y, g, b)?;
                    files.push((format!("field_y{y}.csv"), bytes(field.to_csv())));
                }
                VizKind::Manifold => {
                    let mut grid = GridSpec::manifold();
                    if let Some(r) = resolution {
                        grid = GridSpec::new(grid.min, grid.max, [r, r])?;
                    }
                    let m = manifold_grid(&l.model, &grid)?;
                    files.push(("manifold.csv".into(), bytes(m.to_csv())));
                    if png {
                        files.push(("manifold.png".into(), m.to_png()?));
                    }
                }
                VizKind::Recon => {
                    let fold = pipeline::training_fold(&l.cfg)?;
                    let mut idx = fold.unwanted_indices();
                    idx.truncate(count);
                    let x = fold.batch_features(&idx);
                    let panel = reconstruction_panel(&l.model, &x, threshold)?;
                    files.push(("reconstructions.csv".into(), bytes(panel.to_csv())));
                    if png {
                        files.push(("reconstructions.png".into(), panel.to_png()?));
                    }
                }
                VizKind::Ellipses => {
                    let fold = pipeline::training_fold(&l.cfg)?;
                    let sub = fold.subsample(count, l.cfg.dataset.seed);
                    let rows = latent_ellipses(&l.model, &sub)?;
                    files.push(("ellipses.csv".into(), bytes(ellipses_to_csv(&rows))));
                }
            }
            l.manifest.write(&l.cfg.paths.out_dir, &files)
        }
    }
}

fn train_cmd(common: &Common, overrides: &[Override], kind: ModelKind) -> Result<()> {
    let (cfg, input) = load_config(common, overrides, None)?;
    let sub = match kind {
        ModelKind::Vabc => "train",
        ModelKind::Vae => "train-vae",
    };
    let manifest = new_manifest(sub, &cfg, input);
    match pipeline::train_model(&cfg, kind) {
        Ok(t) => {
            let files = vec![
                ("config.json".to_string(), pretty_json(&cfg)?),
                ("checkpoint.json".into(), bytes(t.model.to_checkpoint_json(&t.meta)?)),
                ("metrics.csv".into(), bytes(t.metrics.to_csv())),
            ];
            manifest.write(&cfg.paths.out_dir, &files)
        }
        Err(Error::Diverged {
            epoch,
            batch,
            reason,
            last_good,
        }) => {
            // Keep the last finite parameters for inspection, then fail.
            let meta = TrainMeta {
                seed: cfg.train.seed,
                epochs_completed: epoch,
                ..TrainMeta::default()
            };
            let files = vec![
                ("config.json".to_string(), pretty_json(&cfg)?),
                ("checkpoint.last_good.json".into(), bytes(last_good.to_checkpoint_json(&meta)?)),
            ];
            manifest.write(&cfg.paths.out_dir, &files)?;
            Err(Error::Diverged {
                epoch,
                batch,
                reason,
                last_good,
            })
        }
        Err(e) => Err(e),
    }
}

fn sweep_cmd(
    cfg: &RunConfig,
    input: Option<(PathBuf, String)>,
    axis: SweepAxis,
    values: &[f64],
    seeds: u64,
    kind: ModelKind,
    workers: usize,
) -> Result<()> {
    let out = cfg.paths.out_dir.clone();
    let seed_list: Vec<u64> = (0..seeds).collect();
    let points = sweep_points(values, &seed_list);
    let mut clf_cfg = cfg.clone();
    clf_cfg.paths.out_dir = out.clone();
    let clf = pipeline::classifier(&clf_cfg, Some(&classifier_cache(&clf_cfg)))?;

    let run_point = |i: usize, p: &SweepPoint| -> Result<vabc::evaluation::GenerationReport> {
        let mut pc = pipeline::apply_sweep_point(cfg, axis, p)?;
        pc.paths.out_dir = out.join(format!("point-{i:03}"));
        let t = pipeline::train_model(&pc, kind)?;
        let report = pipeline::evaluate(&pc, &t.model, &clf)?;
        let files = vec![
            ("config.json".to_string(), pretty_json(&pc)?),
            ("checkpoint.json".into(), bytes(t.model.to_checkpoint_json(&t.meta)?)),
            ("metrics.csv".into(), bytes(t.metrics.to_csv())),
            ("report.json".into(), pretty_json(&report)?),
        ];
        Manifest::new("sweep-point", &pc).write(&pc.paths.out_dir, &files)?;
        Ok(report)
    };

    // Worker w takes points w, w + workers, ...; results are reassembled in
    // point order so the table does not depend on scheduling.
    let workers = workers.clamp(1, points.len().max(1));
    let indexed: Vec<(usize, SweepPoint)> = points.iter().copied().enumerate().collect();
    let parts: Vec<(Vec<usize>, SweepTable)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mine: Vec<(usize, SweepPoint)> = indexed.iter().copied().skip(w).step_by(workers).collect();
                let run_point = &run_point;
                s.spawn(move || {
                    let ids: Vec<usize> = mine.iter().map(|(i, _)| *i).collect();
                    let pts: Vec<SweepPoint> = mine.iter().map(|(_, p)| *p).collect();
                    let mut k = 0;
                    let table = sweep(&pts, |p| {
                        let r = run_point(ids[k], p);
                        k += 1;
                        r
                    });
                    (ids, table)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = vec![None; points.len()];
    let mut failures = Vec::new();
    for (ids, table) in parts {
        // failures are recorded in the same order as their NaN rows
        let mut msgs = table.failures.into_iter();
        for (id, row) in ids.iter().zip(table.rows) {
            if row.neg_gen_error.is_none() {
                if let Some((p, msg)) = msgs.next() {
                    failures.push((*id, p, msg));
                }
            }
            rows[*id] = Some(row);
        }
    }
    failures.sort_by_key(|f| f.0);
    let table = SweepTable {
        rows: rows.into_iter().map(|r| r.expect("every point ran")).collect(),
        failures: failures.iter().map(|(_, p, m)| (*p, m.clone())).collect(),
    };
    let mut fail_json = String::from("[\n");
    for (n, (id, p, msg)) in failures.iter().enumerate() {
        let sep = if n + 1 == failures.len() { "" } else { "," };
        let _ = writeln!(
            fail_json,
            "  {}{sep}",
            json!({"point": id, "axis_value": p.axis_value, "seed": p.seed, "error": msg})
        );
    }
    fail_json.push_str("]\n");
    let mut manifest = new_manifest("sweep", cfg, input);
    if classifier_cache(&clf_cfg).exists() {
        let c = classifier_cache(&clf_cfg);
        manifest.record_input(&c, sha256_file(&c)?);
    }
    manifest.write(
        &out,
        &[
            ("sweep.csv".into(), bytes(table.to_csv())),
            ("failures.json".into(), bytes(fail_json)),
        ],
    )
}
