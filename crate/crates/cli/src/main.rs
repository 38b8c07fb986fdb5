//! Command-line front end: synthetic data, cross-validated training,
//! checkpoint evaluation, gradient checks, micro-benchmarks, and
//! attention-map dumps.
//!
//! Exit codes: 0 on success, 2 on usage errors (flag parsing), 1 on
//! runtime failures (bad files, failed checks). Progress and timings go
//! to stderr; report artifacts never embed timings, so repeated runs with
//! the same seed produce byte-identical files.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use clap::{Parser, Subcommand};

use slidemil::data::load_manifest;
use slidemil::model::{expected_param_count, load_checkpoint, save_checkpoint};
use slidemil::numerics::ops::DropoutMode;
use slidemil::numerics::{gradcheck, GradCheckOptions, Tensor};
use slidemil::pipeline::auroc;
use slidemil::rng::derive_rng;
use slidemil::{
    train_task, AggregatorKind, EvalReport, MilModel, ModelConfig, SynthSpec, TissueLabel,
    TrainConfig,
};

// ---------------------------------------------------------------------------
// Counting allocator, for the `bench` subcommand's peak-memory column.

struct CountingAlloc;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let grow = new_size - layout.size();
                let live = LIVE.fetch_add(grow, Ordering::Relaxed) + grow;
                PEAK.fetch_max(live, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn reset_peak() -> usize {
    let live = LIVE.load(Ordering::Relaxed);
    PEAK.store(live, Ordering::Relaxed);
    live
}

// ---------------------------------------------------------------------------
// Argument surface.

#[derive(Parser)]
#[command(
    name = "slidemil",
    version,
    about = "Multiple-instance learning over patch-embedding bags"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

const AGGREGATOR_NAMES: [&str; 4] = ["asym_trans_dec", "trans_dec", "trans_enc", "abmil"];

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from a TOML spec
    Synth {
        /// TOML file describing the dataset
        #[arg(long)]
        spec: PathBuf,
        /// Master seed; the dataset is a pure function of spec + seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training; writes the best-fold checkpoint and a report
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Training config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for model-<hash>.ckpt and report-<hash>.json
        #[arg(long)]
        out: PathBuf,
        /// Fold-level parallelism (1 = sequential)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Cross-validation report over one or more tasks, no checkpoint
    Crossval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated task names (default: the config's task)
        #[arg(long)]
        tasks: Option<String>,
        /// If set, write report-<hash>.json here
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score every labeled bag with a checkpoint and report AUROC
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "mut")]
        task: String,
        /// If set, write per-bag scores as JSON to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks on freshly initialized aggregators
    Gradcheck {
        /// Patch embedding widths to check, comma separated
        #[arg(long = "d-kv", value_delimiter = ',', default_values_t = [8usize, 64])]
        d_kv: Vec<usize>,
        /// Restrict to one aggregator (default: all four)
        #[arg(long, value_parser = AGGREGATOR_NAMES)]
        aggregator: Option<String>,
        /// Elements sampled per parameter tensor
        #[arg(long, default_value_t = 8)]
        max_elements: usize,
        /// Central-difference step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Relative-error tolerance
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter counts, per-bag latency, and peak memory at WSI-scale widths
    Bench {
        #[arg(long = "d-kv", value_delimiter = ',', default_values_t = [768usize, 1536])]
        d_kv: Vec<usize>,
        /// Patches per synthetic bag
        #[arg(long, default_value_t = 256)]
        patches: usize,
        /// Timed iterations per measurement
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long, value_parser = AGGREGATOR_NAMES)]
        aggregator: Option<String>,
    },
    /// Dump a bag's attention maps as JSON
    Inspect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bag id from the manifest
        #[arg(long)]
        bag: String,
        /// Task whose label to attach (default: the bag's first label)
        #[arg(long)]
        task: Option<String>,
        /// If set, write JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Synth { spec, seed, out } => cmd_synth(&spec, seed, &out),
        Cmd::Train {
            manifest,
            config,
            seed,
            out,
            jobs,
        } => cmd_train(&manifest, &config, seed, &out, jobs),
        Cmd::Crossval {
            manifest,
            config,
            seed,
            tasks,
            out,
            jobs,
        } => cmd_crossval(&manifest, &config, seed, tasks.as_deref(), out.as_deref(), jobs),
        Cmd::Eval {
            manifest,
            checkpoint,
            task,
            out,
        } => cmd_eval(&manifest, &checkpoint, &task, out.as_deref()),
        Cmd::Gradcheck {
            d_kv,
            aggregator,
            max_elements,
            step,
            tol,
            seed,
        } => cmd_gradcheck(&d_kv, aggregator.as_deref(), max_elements, step, tol, seed),
        Cmd::Bench {
            d_kv,
            patches,
            iters,
            aggregator,
        } => cmd_bench(&d_kv, patches, iters, aggregator.as_deref()),
        Cmd::Inspect {
            manifest,
            checkpoint,
            bag,
            task,
            out,
        } => cmd_inspect(&manifest, &checkpoint, &bag, task.as_deref(), out.as_deref()),
    }
}

fn read_to_string(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn kinds_for(filter: Option<&str>) -> Result<Vec<AggregatorKind>, Box<dyn std::error::Error>> {
    match filter {
        None => Ok(AggregatorKind::ALL.to_vec()),
        Some(name) => Ok(vec![AggregatorKind::parse(name)?]),
    }
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(spec_path: &Path, seed: u64, out: &Path) -> CliResult {
    let spec: SynthSpec = toml::from_str(&read_to_string(spec_path)?)
        .map_err(|e| format!("{}: {e}", spec_path.display()))?;
    let started = Instant::now();
    let manifest = slidemil::data::synth_generate(&spec, seed, out)?;
    eprintln!(
        "generated {} bags (d_kv={}) in {:.2}s",
        manifest.len(),
        manifest.d_kv,
        started.elapsed().as_secs_f64()
    );
    println!("{}", out.join("manifest.txt").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train / crossval

fn load_train_config(path: &Path, seed_override: Option<u64>) -> Result<TrainConfig, String> {
    let mut cfg: TrainConfig =
        toml::from_str(&read_to_string(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(
    manifest_path: &Path,
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    jobs: usize,
) -> CliResult {
    let cfg = load_train_config(config_path, seed)?;
    let manifest = load_manifest(manifest_path)?;
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;

    let started = Instant::now();
    let (task_result, model) = train_task(&manifest, &cfg, jobs)?;
    eprintln!(
        "trained task {:?} ({} folds) in {:.1}s",
        cfg.task,
        cfg.k_folds,
        started.elapsed().as_secs_f64()
    );

    let hash = cfg.hash();
    let report = EvalReport {
        aggregator: cfg.model.aggregator.name().to_string(),
        seed: cfg.seed,
        config_hash: hash.clone(),
        k_folds: cfg.k_folds,
        tasks: vec![task_result],
    };
    let ckpt_path = out.join(format!("model-{hash}.ckpt"));
    let report_path = out.join(format!("report-{hash}.json"));
    save_checkpoint(&model, &ckpt_path)?;
    report.write(&report_path)?;
    eprintln!("wrote {}", ckpt_path.display());
    eprintln!("wrote {}", report_path.display());
    println!("{}", report.render_table());
    Ok(())
}

fn cmd_crossval(
    manifest_path: &Path,
    config_path: &Path,
    seed: Option<u64>,
    tasks: Option<&str>,
    out: Option<&Path>,
    jobs: usize,
) -> CliResult {
    let mut cfg = load_train_config(config_path, seed)?;
    let manifest = load_manifest(manifest_path)?;
    let task_names: Vec<String> = match tasks {
        Some(t) => t.split(',').map(|s| s.trim().to_string()).collect(),
        None => vec![cfg.task.clone()],
    };
    // The report's config hash reflects the config as run for the first
    // task; later tasks differ only in the task field.
    cfg.task = task_names[0].clone();
    let hash = cfg.hash();

    let mut results = Vec::with_capacity(task_names.len());
    for name in &task_names {
        cfg.task = name.clone();
        let started = Instant::now();
        let (task_result, _model) = train_task(&manifest, &cfg, jobs)?;
        eprintln!(
            "task {:?}: {:.1}s",
            name,
            started.elapsed().as_secs_f64()
        );
        results.push(task_result);
    }
    let report = EvalReport {
        aggregator: cfg.model.aggregator.name().to_string(),
        seed: cfg.seed,
        config_hash: hash.clone(),
        k_folds: cfg.k_folds,
        tasks: results,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let report_path = dir.join(format!("report-{hash}.json"));
        report.write(&report_path)?;
        eprintln!("wrote {}", report_path.display());
    }
    println!("{}", report.render_table());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(
    manifest_path: &Path,
    ckpt_path: &Path,
    task: &str,
    out: Option<&Path>,
) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let model = load_checkpoint(ckpt_path)?;
    let pairs = manifest.task_labels(task);
    if pairs.is_empty() {
        return Err(format!("no bag in the manifest carries a label for task {task:?}").into());
    }

    let started = Instant::now();
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    let mut rows = Vec::with_capacity(pairs.len());
    for (bag_id, label) in &pairs {
        let bag = manifest.load_bag(bag_id, task)?;
        let fwd = bag_forward(&model, &bag.embeddings, &bag.tissue)?;
        scores.push(fwd.logit);
        labels.push(*label);
        rows.push(serde_json::json!({
            "bag_id": bag_id,
            "label": label,
            "logit": fwd.logit,
        }));
    }
    let auc = auroc(&scores, &labels)?;
    eprintln!(
        "scored {} bags in {:.1}s",
        pairs.len(),
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = out {
        let doc = serde_json::json!({ "task": task, "auroc": auc, "scores": rows });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    println!("task {task}  n {}  auroc {auc:.6}", pairs.len());
    Ok(())
}

fn bag_forward(
    model: &MilModel,
    embeddings: &Tensor,
    tissue: &[TissueLabel],
) -> slidemil::Result<slidemil::model::Forward> {
    model.forward(embeddings, tissue, DropoutMode::Eval, None)
}

// ---------------------------------------------------------------------------
// gradcheck

fn cmd_gradcheck(
    widths: &[usize],
    aggregator: Option<&str>,
    max_elements: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> CliResult {
    let kinds = kinds_for(aggregator)?;
    let opts = GradCheckOptions {
        step,
        max_elements_per_param: Some(max_elements),
        sample_seed: seed,
    };
    let mut failures = 0usize;
    for &d_kv in widths {
        for &kind in &kinds {
            let mut config = ModelConfig::new(kind, d_kv);
            config.attention.d_q = 16;
            config.attention.n_queries = 4;
            config.attention.dropout_p = 0.0;

            let mut rng = derive_rng(seed, &format!("cli/gradcheck/{}/{d_kv}", kind.name()));
            let mut model = MilModel::new(config, &mut rng)?;
            let x = Tensor::randn(&[5, d_kv], 1.0, &mut rng);
            let labels: Vec<TissueLabel> = (0..5)
                .map(|i| TissueLabel::ALL[i % TissueLabel::ALL.len()])
                .collect();

            let started = Instant::now();
            let report = gradcheck(
                &mut model,
                |m: &mut MilModel| {
                    let fwd = m.forward(&x, &labels, DropoutMode::Eval, None)?;
                    Ok(fwd.logit * fwd.logit)
                },
                |m: &mut MilModel| -> slidemil::Result<BTreeMap<String, Tensor>> {
                    m.zero_grads();
                    let fwd = m.forward(&x, &labels, DropoutMode::Eval, None)?;
                    let logit = fwd.logit;
                    m.backward(&fwd, 2.0 * logit)?;
                    Ok(m.grads())
                },
                &opts,
            )?;
            let verdict = if report.passed(tol) { "ok" } else { "FAIL" };
            if !report.passed(tol) {
                failures += 1;
            }
            println!(
                "gradcheck {:<14} d_kv={:<5} max_rel_err={:.3e} worst={} ({} elements, {:.2}s) {}",
                kind.name(),
                d_kv,
                report.max_rel_err,
                report.worst_param,
                report.elements_checked,
                started.elapsed().as_secs_f64(),
                verdict
            );
        }
    }
    if failures > 0 {
        return Err(format!("{failures} gradient check(s) exceeded tolerance {tol:e}").into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

fn cmd_bench(
    widths: &[usize],
    patches: usize,
    iters: usize,
    aggregator: Option<&str>,
) -> CliResult {
    if iters == 0 {
        return Err("need at least one iteration".into());
    }
    let kinds = kinds_for(aggregator)?;
    println!(
        "{:<14} {:>6} {:>12} {:>10} {:>10} {:>9}",
        "aggregator", "d_kv", "params", "fwd_ms", "bwd_ms", "peak_mb"
    );
    for &d_kv in widths {
        for &kind in &kinds {
            let mut config = ModelConfig::new(kind, d_kv);
            config.use_tissue_encoding = false;
            let expected = expected_param_count(&config);

            let mut rng = derive_rng(0, &format!("cli/bench/{}/{d_kv}", kind.name()));
            let x = Tensor::randn(&[patches, d_kv], 1.0, &mut rng);
            let labels: Vec<TissueLabel> = (0..patches)
                .map(|i| TissueLabel::ALL[i % TissueLabel::ALL.len()])
                .collect();

            let live0 = reset_peak();
            let mut model = MilModel::new(config, &mut rng)?;
            let counted = model.param_count();
            if counted != expected {
                return Err(format!(
                    "{} at d_kv={d_kv}: model has {counted} parameters, closed form says {expected}",
                    kind.name()
                )
                .into());
            }
            let fwd = bag_forward(&model, &x, &labels)?;
            model.backward(&fwd, 1.0)?;
            let peak_mb = PEAK.load(Ordering::Relaxed).saturating_sub(live0) as f64 / 1e6;
            drop(fwd);
            model.zero_grads();

            let t0 = Instant::now();
            for _ in 0..iters {
                std::hint::black_box(bag_forward(&model, &x, &labels)?);
            }
            let fwd_ms = t0.elapsed().as_secs_f64() * 1e3 / iters as f64;

            let fwd = bag_forward(&model, &x, &labels)?;
            let t1 = Instant::now();
            for _ in 0..iters {
                model.zero_grads();
                model.backward(&fwd, 1.0)?;
            }
            let bwd_ms = t1.elapsed().as_secs_f64() * 1e3 / iters as f64;

            println!(
                "{:<14} {:>6} {:>12} {:>10.2} {:>10.2} {:>9.1}",
                kind.name(),
                d_kv,
                counted,
                fwd_ms,
                bwd_ms,
                peak_mb
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect

fn cmd_inspect(
    manifest_path: &Path,
    ckpt_path: &Path,
    bag_id: &str,
    task: Option<&str>,
    out: Option<&Path>,
) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let model = load_checkpoint(ckpt_path)?;
    let record = manifest.record(bag_id)?;
    let task = match task {
        Some(t) => t.to_string(),
        None => record
            .labels
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| format!("bag {bag_id:?} carries no labels; pass --task"))?,
    };
    let bag = manifest.load_bag(bag_id, &task)?;
    let fwd = bag_forward(&model, &bag.embeddings, &bag.tissue)?;
    let maps = model.attention_maps(&fwd);

    let maps_json: Vec<serde_json::Value> = maps
        .iter()
        .map(|m| {
            let cols = m.weights.cols();
            let rows: Vec<&[f64]> = m.weights.data().chunks(cols).collect();
            serde_json::json!({
                "block": m.block,
                "site": m.site,
                "head": m.head,
                "shape": m.weights.shape(),
                "weights": rows,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "bag_id": bag_id,
        "task": task,
        "label": bag.label,
        "num_patches": bag.num_patches(),
        "logit": fwd.logit,
        "maps": maps_json,
    });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
