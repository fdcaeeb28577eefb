//! Command implementations. Every command writes its artifacts plus a
//! `manifest.json` echoing the resolved configuration and seeds.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use objdecode::datamodel::{
    load_dataset, save_dataset, synth_continuous, synth_generate, ContinuousSynthConfig, EegDataset, LabelKind,
    MaskSpec, OffMaskNoise, SynthConfig, DATASET_MAGIC,
};
use objdecode::dsp::{preprocess as run_preprocess, read_recording, write_recording, FilterMode, PreprocessParams, RECORDING_MAGIC};
use objdecode::evaluation::{
    accuracy_line, compare_methods, comparison_csv, comparison_table, confusion_svg, eval_csv, exemplar_svg,
    fold_seed, make_folds, per_class_csv, per_exemplar_csv, run_cv, transfer_csv, transfer_experiment, CvOptions,
    EvalReport,
};
use objdecode::models::{fit_spec, load_params, predict_trained, save_params, FitOptions, Trained};
use objdecode::tensor::checkpoint::CHECKPOINT_MAGIC;
use objdecode::tensor::gradcheck::standard_battery;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_err, load_or_default, read_json, Precision, RunConfig};
use crate::{Common, GradcheckFailed};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub trials_per_exemplar: Option<usize>,
    /// Peak template amplitude over noise standard deviation
    #[arg(long)]
    pub snr: Option<f64>,
    /// Noise level outside the mask channels (default mask: occipital)
    #[arg(long)]
    pub off_mask_snr: Option<f64>,
    /// Emit a raw continuous recording with event markers instead of epochs
    #[arg(long)]
    pub continuous: bool,
    /// Number of markers in a continuous recording
    #[arg(long)]
    pub markers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw continuous recording
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub highpass_hz: Option<f64>,
    #[arg(long)]
    pub lowpass_hz: Option<f64>,
    /// Chebyshev passband ripple in dB
    #[arg(long)]
    pub ripple_db: Option<f64>,
    #[arg(long)]
    pub decimation: Option<usize>,
    /// Epoch length in output samples
    #[arg(long)]
    pub window: Option<usize>,
    /// Forward-backward filtering instead of a single causal pass
    #[arg(long)]
    pub zero_phase: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Dataset file(s); `compare` takes one per subject
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Comma-separated methods: lda, shallow_convnet, lstm, lstm_cnn, plain_cnn, attention_cnn
    #[arg(long, alias = "model", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Number of cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Permute the labels before evaluating (chance-level control)
    #[arg(long)]
    pub shuffle_labels: bool,
    /// Head-only epochs after transfer (default: same as --epochs)
    #[arg(long)]
    pub fine_tune_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Maximum relative error per op
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Random instances per op
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Dataset (.eegd), raw recording (.eegr) or checkpoint (.edkp)
    pub path: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'static str,
    config: &'a C,
    seeds: Value,
    inputs: Vec<Value>,
    outputs: Vec<String>,
}

/// Collects the files a command writes under one directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn manifest<C: Serialize>(mut self, command: &str, config: &C, seeds: Value, inputs: Vec<Value>) -> anyhow::Result<()> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds,
            inputs,
            outputs: self.written.clone(),
        };
        self.json("manifest.json", &m)
    }
}

/// For commands whose `--out` names a file: the manifest goes beside it.
fn sibling_manifest<C: Serialize>(out: &Path, command: &str, config: &C, seeds: Value, inputs: Vec<Value>) -> anyhow::Result<()> {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        seeds,
        inputs,
        outputs: vec![name.clone()],
    };
    let path = out.with_file_name(format!("{name}.manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_file(c: &Common) -> anyhow::Result<&Path> {
    let out = c.out.as_deref().ok_or_else(|| config_err("--out is required"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(out)
}

fn dataset_info(path: &Path, d: &EegDataset) -> Value {
    json!({
        "path": path,
        "subject_id": d.subject_id(),
        "n_trials": d.n_trials(),
        "n_channels": d.n_channels(),
        "n_samples": d.n_samples(),
    })
}

pub fn synth(c: &Common, a: &SynthArgs) -> anyhow::Result<()> {
    let out = out_file(c)?;
    let apply = |base: &mut SynthConfig| -> anyhow::Result<()> {
        if let Some(s) = c.seed {
            base.seed = s;
        }
        if let Some(s) = &a.subject {
            base.subject_id = s.clone();
        }
        if let Some(n) = a.trials_per_exemplar {
            base.n_trials_per_exemplar = n;
        }
        if let Some(s) = a.snr {
            base.snr = s;
        }
        if let Some(snr) = a.off_mask_snr {
            let mask = match &c.mask {
                Some(p) => MaskSpec::load(p, base.n_channels).map_err(|e| config_err(format!("mask {}: {e}", p.display())))?,
                None => objdecode::datamodel::default_occipital_mask(),
            };
            base.off_mask = Some(OffMaskNoise { indices: mask.indices, snr });
        }
        base.validate().map_err(|e| config_err(e.to_string()))
    };
    if a.continuous {
        let mut cfg: ContinuousSynthConfig = load_or_default(c.config.as_deref())?;
        apply(&mut cfg.base)?;
        if let Some(n) = a.markers {
            cfg.n_markers = n;
        }
        let rec = synth_continuous(&cfg).map_err(|e| config_err(e.to_string()))?;
        let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        let mut w = BufWriter::new(f);
        write_recording(&mut w, &rec)?;
        w.flush()?;
        log::info!(
            "wrote {} channels x {} samples at {} Hz with {} markers to {}",
            rec.n_channels(),
            rec.n_samples,
            rec.sampling_rate_hz,
            rec.markers.len(),
            out.display()
        );
        sibling_manifest(out, "synth", &cfg, json!({ "seed": cfg.base.seed }), Vec::new())
    } else {
        let mut cfg: SynthConfig = load_or_default(c.config.as_deref())?;
        apply(&mut cfg)?;
        let d = synth_generate(&cfg).map_err(|e| config_err(e.to_string()))?;
        save_dataset(out, &d).with_context(|| format!("writing {}", out.display()))?;
        log::info!(
            "wrote {} trials of {} x {} to {}",
            d.n_trials(),
            d.n_channels(),
            d.n_samples(),
            out.display()
        );
        sibling_manifest(out, "synth", &cfg, json!({ "seed": cfg.seed }), Vec::new())
    }
}

pub fn preprocess(c: &Common, a: &PreprocessArgs) -> anyhow::Result<()> {
    let out = out_file(c)?;
    let mut p: PreprocessParams = load_or_default(c.config.as_deref())?;
    if let Some(v) = a.highpass_hz {
        p.highpass_hz = v;
    }
    if let Some(v) = a.lowpass_hz {
        p.lowpass_hz = v;
    }
    if let Some(v) = a.ripple_db {
        p.ripple_db = v;
    }
    if let Some(v) = a.decimation {
        p.decimation = v;
    }
    if let Some(v) = a.window {
        p.window = v;
    }
    if a.zero_phase {
        p.mode = FilterMode::ZeroPhase;
    }
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let rec = read_recording(BufReader::new(f)).with_context(|| format!("reading {}", a.input.display()))?;
    let r = run_preprocess(&rec, &p)?;
    save_dataset(out, &r.dataset).with_context(|| format!("writing {}", out.display()))?;
    log::info!(
        "{} epochs of {} x {} at {} Hz ({} dropped)",
        r.dataset.n_trials(),
        r.dataset.n_channels(),
        r.dataset.n_samples(),
        r.dataset.sampling_rate_hz(),
        r.dropped
    );
    let config = json!({ "params": p, "highpass": r.highpass, "lowpass": r.lowpass, "dropped": r.dropped });
    let input = json!({ "path": a.input, "subject_id": rec.subject_id, "n_markers": rec.markers.len() });
    sibling_manifest(out, "preprocess", &config, json!({}), vec![input])
}

fn resolve(c: &Common, a: &ModelArgs) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if !a.data.is_empty() {
        cfg.data = a.data.clone();
    }
    if !a.methods.is_empty() {
        cfg.methods = a.methods.clone();
    }
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    if a.shuffle_labels {
        cfg.shuffle_labels = true;
    }
    if a.fine_tune_epochs.is_some() {
        cfg.fine_tune_epochs = a.fine_tune_epochs;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = &c.classes {
        cfg.classes = n.parse().map_err(|_| config_err(format!("bad --classes {n}")))?;
    }
    if c.mask.is_some() {
        cfg.mask = c.mask.clone();
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    if let Some(p) = c.precision {
        cfg.precision = p;
    }
    if c.epochs.is_some() {
        cfg.epochs = c.epochs;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    cfg.check()?;
    Ok(cfg)
}

/// Load a dataset and, for the chance control, permute its labels.
fn load_subject(path: &Path, cfg: &RunConfig) -> anyhow::Result<EegDataset> {
    let d = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    if !cfg.shuffle_labels {
        return Ok(d);
    }
    let mut labels = d.exemplar_labels().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    labels.shuffle(&mut rng);
    Ok(d.with_exemplar_labels(labels)?)
}

fn cv_options(cfg: &RunConfig) -> CvOptions {
    CvOptions {
        threads: cfg.threads,
        ..CvOptions::default()
    }
}

fn fold_seeds(cfg: &RunConfig, subjects: &[EegDataset]) -> Value {
    let per_subject: serde_json::Map<String, Value> = subjects
        .iter()
        .map(|d| {
            let seeds: Vec<u64> = (0..cfg.folds).map(|f| fold_seed(cfg.seed, d.subject_id(), f)).collect();
            (d.subject_id().to_string(), json!(seeds))
        })
        .collect();
    json!({ "seed": cfg.seed, "fold_seeds": per_subject, "label_shuffle_seed": cfg.shuffle_labels.then_some(cfg.seed) })
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn write_eval(o: &mut Outputs, prefix: &str, r: &EvalReport) -> anyhow::Result<()> {
    let title = format!("{} {} ({}-class)", r.subject_id, r.method, r.n_classes);
    o.json(&format!("{prefix}report.json"), r)?;
    o.text(&format!("{prefix}folds.csv"), &eval_csv(r))?;
    o.text(&format!("{prefix}per_class.csv"), &per_class_csv(r))?;
    o.text(&format!("{prefix}per_exemplar.csv"), &per_exemplar_csv(r))?;
    o.text(&format!("{prefix}confusion.svg"), &confusion_svg(&r.confusion_normalized, &title))?;
    o.text(
        &format!("{prefix}exemplars.svg"),
        &exemplar_svg(&r.per_exemplar_accuracy, r.chance_level, &title),
    )
}

pub fn train(c: &Common, a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = resolve(c, a)?;
    let mut o = Outputs::new(cfg.out_dir()?)?;
    let d = load_subject(&cfg.data[0], &cfg)?;
    let spec = cfg.specs(&d)?.remove(0);
    let all: Vec<usize> = (0..d.n_trials()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, report) = fit_spec(&spec, &d, &all, &FitOptions::default(), &mut rng)?;
    let predictions = predict_trained(&mut model, &d, &all)?;
    let labels = d.labels(LabelKind::from_n_classes(spec.n_classes).expect("validated class count"));
    let correct = predictions.iter().zip(&labels).filter(|(p, t)| p == t).count();
    let accuracy = correct as f64 / all.len() as f64;
    match &model {
        Trained::Net(p) => {
            let path = o.path("model.edkp");
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            let epochs = report.as_ref().map_or(0, |r| r.epochs_run);
            save_params(&mut w, p, cfg.seed, epochs)?;
            w.flush()?;
        }
        Trained::Lda(m) => o.json("model_lda.json", m)?,
    }
    o.json(
        "train_report.json",
        &json!({
            "method": spec.variant.name(),
            "n_classes": spec.n_classes,
            "n_trials": all.len(),
            "train_accuracy": accuracy,
            "report": report,
        }),
    )?;
    println!(
        "{} trained on {} trials: training accuracy {:.2}%",
        spec.variant.name(),
        all.len(),
        100.0 * accuracy
    );
    let inputs = vec![dataset_info(&cfg.data[0], &d)];
    o.manifest("train", &json!({ "run": cfg, "spec": spec }), json!({ "seed": cfg.seed }), inputs)
}

pub fn evaluate(c: &Common, a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = resolve(c, a)?;
    let mut o = Outputs::new(cfg.out_dir()?)?;
    let d = load_subject(&cfg.data[0], &cfg)?;
    let spec = cfg.specs(&d)?.remove(0);
    let plan = make_folds(&d, cfg.folds, cfg.seed)?;
    let report = run_cv(&d, &spec, &plan, &cv_options(&cfg))?;
    write_eval(&mut o, "", &report)?;
    println!("{}", accuracy_line(&report));
    let seeds = fold_seeds(&cfg, std::slice::from_ref(&d));
    let inputs = vec![dataset_info(&cfg.data[0], &d)];
    o.manifest("evaluate", &json!({ "run": cfg, "spec": spec }), seeds, inputs)
}

pub fn compare(c: &Common, a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = resolve(c, a)?;
    let mut o = Outputs::new(cfg.out_dir()?)?;
    let subjects = cfg.data.iter().map(|p| load_subject(p, &cfg)).collect::<anyhow::Result<Vec<_>>>()?;
    let specs = cfg.specs(&subjects[0])?;
    let (cmp, evals) = compare_methods(&subjects, &specs, cfg.folds, cfg.seed, &cv_options(&cfg))?;
    for r in &evals {
        write_eval(&mut o, &format!("{}__{}__", file_stem(&r.subject_id), file_stem(&r.method)), r)?;
    }
    o.json("comparison.json", &cmp)?;
    o.text("comparison.csv", &comparison_csv(&cmp))?;
    let table = comparison_table(&cmp);
    o.text("comparison.txt", &table)?;
    print!("{table}");
    let seeds = fold_seeds(&cfg, &subjects);
    let inputs = cfg.data.iter().zip(&subjects).map(|(p, d)| dataset_info(p, d)).collect();
    o.manifest("compare", &json!({ "run": cfg, "specs": specs }), seeds, inputs)
}

pub fn transfer(c: &Common, a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = resolve(c, a)?;
    if cfg.classes != 6 {
        return Err(config_err("transfer starts from a 6-class model; omit --classes or pass 6"));
    }
    let mut o = Outputs::new(cfg.out_dir()?)?;
    let d = load_subject(&cfg.data[0], &cfg)?;
    let spec = cfg.specs(&d)?.remove(0);
    let plan = make_folds(&d, cfg.folds, cfg.seed)?;
    let t = transfer_experiment(&d, &spec, &plan, &cv_options(&cfg), cfg.fine_tune_epochs)?;
    o.json("transfer.json", &t)?;
    o.text("transfer.csv", &transfer_csv(&t))?;
    write_eval(&mut o, "scratch_", &t.from_scratch)?;
    write_eval(&mut o, "transferred_", &t.transferred)?;
    println!("from scratch: {}", accuracy_line(&t.from_scratch));
    println!("transferred:  {}", accuracy_line(&t.transferred));
    println!(
        "transferred is {} by {:.2} points; frozen layers unchanged: {}",
        t.direction,
        100.0 * t.mean_difference.abs(),
        t.frozen_unchanged
    );
    let seeds = fold_seeds(&cfg, std::slice::from_ref(&d));
    let inputs = vec![dataset_info(&cfg.data[0], &d)];
    o.manifest("transfer", &json!({ "run": cfg, "spec": spec }), seeds, inputs)
}

pub fn gradcheck(c: &Common, a: &GradcheckArgs) -> anyhow::Result<()> {
    let precision = c.precision.unwrap_or(Precision::F64);
    let start = Instant::now();
    let reports = match precision {
        Precision::F64 => standard_battery::<f64>(a.instances, a.tolerance)?,
        Precision::F32 => standard_battery::<f32>(a.instances, a.tolerance)?,
    };
    for r in &reports {
        println!(
            "{:<22} {} max rel err {:.3e} (tol {:.0e}, {} checked) {}",
            r.name,
            r.dtype,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!(
        "{} of {} ops passed in {:.1} s",
        reports.len() - failed.len(),
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    if let Some(dir) = &c.out {
        let mut o = Outputs::new(dir)?;
        o.json("gradcheck.json", &reports)?;
        let config = json!({ "precision": precision, "tolerance": a.tolerance, "instances": a.instances });
        o.manifest("gradcheck", &config, json!({ "instance_seeds": (0..a.instances).collect::<Vec<_>>() }), Vec::new())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(GradcheckFailed(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}

pub fn inspect(a: &InspectArgs) -> anyhow::Result<()> {
    let mut magic = [0u8; 4];
    File::open(&a.path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", a.path.display()))?;
    let open = || -> anyhow::Result<BufReader<File>> { Ok(BufReader::new(File::open(&a.path)?)) };
    if &magic == DATASET_MAGIC {
        let d = load_dataset(&a.path)?;
        println!("dataset {}", a.path.display());
        println!("  subject: {}", d.subject_id());
        println!(
            "  trials: {}  channels: {}  samples: {}  rate: {} Hz",
            d.n_trials(),
            d.n_channels(),
            d.n_samples(),
            d.sampling_rate_hz()
        );
        let mut per_cat = [0usize; 6];
        for c in d.category_labels() {
            per_cat[c] += 1;
        }
        println!("  trials per category: {per_cat:?}");
        let mut per_ex = vec![0usize; 72];
        for &e in d.exemplar_labels() {
            per_ex[e as usize] += 1;
        }
        let (lo, hi) = (per_ex.iter().min().copied().unwrap_or(0), per_ex.iter().max().copied().unwrap_or(0));
        println!("  trials per exemplar: min {lo}, max {hi}");
        let stats = d.channel_stats();
        let range = |f: &dyn Fn(usize) -> f64| {
            let v: Vec<f64> = (0..stats.len()).map(f).collect();
            (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let (m_lo, m_hi) = range(&|i| stats[i].mean);
        let (s_lo, s_hi) = range(&|i| stats[i].std);
        println!("  channel means in [{m_lo:.4}, {m_hi:.4}], stds in [{s_lo:.4}, {s_hi:.4}]");
        println!("  model-ready shape: {}", d.is_model_ready());
    } else if &magic == RECORDING_MAGIC {
        let r = read_recording(open()?)?;
        println!("raw recording {}", a.path.display());
        println!("  subject: {}", r.subject_id);
        println!(
            "  channels: {}  samples: {}  rate: {} Hz  markers: {}",
            r.n_channels(),
            r.n_samples,
            r.sampling_rate_hz,
            r.markers.len()
        );
    } else if &magic == CHECKPOINT_MAGIC {
        let (p, seed, epoch) = load_params(open()?)?;
        let frozen = p.params.iter().filter(|q| q.frozen).count();
        println!("checkpoint {}", a.path.display());
        println!("  model: {}  classes: {}", p.spec.variant.name(), p.spec.n_classes);
        println!(
            "  parameters: {} in {} tensors ({frozen} frozen)  seed: {seed}  epochs: {epoch}",
            p.n_parameters(),
            p.params.len()
        );
    } else {
        return Err(config_err(format!("{}: unrecognized file type {magic:?}", a.path.display())));
    }
    Ok(())
}
