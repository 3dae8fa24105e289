use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use qtarget::control::ControlDecision;
use qtarget::encoders::{EncoderAdapter, ExternalEncoderConfig};
use qtarget::evaluation::{
    evaluate as run_evaluation, macro_average, write_histogram_csv, write_report_csv,
    write_report_json, write_targets_summary_csv, EvalOptions,
};
use qtarget::models::{
    bundled_model, bundled_model_ids, hevc_log_linear, PsnrLeModelSet, QpLambdaMap,
};
use qtarget::pixels::{self, LumaPlane};
use qtarget::synth::{generate, SeededRng, SynthKind};
use qtarget::training::{fit_grid, select_anchors, sweep_corpus, write_fit_grid_csv, SweepOptions};
use qtarget::transform::{compute_le, QuantMode};

use crate::{usage, CliError, CliResult, MODEL_DIR_ENV};

static QUIET: AtomicBool = AtomicBool::new(false);

pub fn set_quiet(quiet: bool) {
    QUIET.store(quiet, Ordering::Relaxed);
}

macro_rules! warn_line {
    ($($arg:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            eprintln!("warning: {}", format_args!($($arg)*));
        }
    };
}

// ---------------------------------------------------------------------------
// shared parsing / resolution
// ---------------------------------------------------------------------------

/// "4..40" (inclusive) or "4,10,22".
fn parse_i32_list(spec: &str, what: &str) -> CliResult<Vec<i32>> {
    let bad = || {
        usage(format!(
            "cannot parse {what} '{spec}' (use lo..hi or a,b,c)"
        ))
    };
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let vals: Result<Vec<i32>, _> = spec.split(',').map(|t| t.trim().parse()).collect();
    let vals = vals.map_err(|_| bad())?;
    if vals.is_empty() {
        return Err(bad());
    }
    Ok(vals)
}

/// Targets accept fractional values in comma form.
fn parse_targets(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || {
        usage(format!(
            "cannot parse targets '{spec}' (use lo..hi or a,b,c)"
        ))
    };
    if spec.contains("..") {
        return Ok(parse_i32_list(spec, "targets")?
            .into_iter()
            .map(|t| t as f64)
            .collect());
    }
    let vals: Result<Vec<f64>, _> = spec.split(',').map(|t| t.trim().parse()).collect();
    let vals = vals.map_err(|_| bad())?;
    if vals.is_empty() {
        return Err(bad());
    }
    Ok(vals)
}

fn parse_qsteps(spec: &str) -> CliResult<Vec<u32>> {
    let vals: Result<Vec<u32>, _> = spec.split(',').map(|t| t.trim().parse()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]) && v[0] >= 1 => Ok(v),
        _ => Err(usage(format!(
            "cannot parse qsteps '{spec}' (need a strictly increasing comma list, each >= 1)"
        ))),
    }
}

/// All referenced input files are checked before any work starts; every
/// missing path is reported in one message.
fn require_files(paths: &[PathBuf]) -> CliResult<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(usage(format!(
            "missing input file(s): {}",
            missing.join(", ")
        )))
    }
}

fn raw_dims(width: Option<usize>, height: Option<usize>) -> CliResult<Option<(usize, usize)>> {
    match (width, height) {
        (Some(w), Some(h)) => Ok(Some((w, h))),
        (None, None) => Ok(None),
        _ => Err(usage("--width and --height must be given together")),
    }
}

fn load_image(path: &Path, dims: Option<(usize, usize)>) -> qtarget::Result<LumaPlane> {
    let format = pixels::format_for_path(path, dims)?;
    pixels::load_luma(path, format)
}

/// Model resolution order: explicit path, then $QTARGET_MODEL_DIR/<id>.json,
/// then the bundled defaults.
fn resolve_model(spec: &str) -> CliResult<PsnrLeModelSet> {
    let as_path = Path::new(spec);
    if as_path.is_file() {
        return Ok(PsnrLeModelSet::from_path(as_path)?);
    }
    if let Ok(dir) = std::env::var(MODEL_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{spec}.json"));
        if candidate.is_file() {
            return Ok(PsnrLeModelSet::from_path(&candidate)?);
        }
    }
    if let Some(set) = bundled_model(spec) {
        return Ok(set);
    }
    Err(usage(format!(
        "model '{spec}' is neither a file nor a known id (bundled: {})",
        bundled_model_ids().join(", ")
    )))
}

fn resolve_adapter(spec: &str) -> CliResult<EncoderAdapter> {
    if spec == "reference" {
        return Ok(EncoderAdapter::Reference);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!(
            "adapter '{spec}' is neither \"reference\" nor an existing config file"
        )));
    }
    Ok(EncoderAdapter::External(ExternalEncoderConfig::from_path(
        path,
    )?))
}

/// PGM/PNG files of a directory, sorted by name; the file stem is the id.
fn list_corpus(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(usage(format!(
            "corpus '{}' is not a directory",
            dir.display()
        )));
    }
    let mut items: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "pgm" || e == "pnm" || e == "png"
            )
        })
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            (id, p)
        })
        .collect();
    items.sort_by(|a, b| a.1.cmp(&b.1));
    if items.is_empty() {
        return Err(usage(format!(
            "corpus '{}' holds no PGM/PNG images",
            dir.display()
        )));
    }
    Ok(items)
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '\r'], "_")
}

// ---------------------------------------------------------------------------
// le
// ---------------------------------------------------------------------------

pub fn le(
    images: &[PathBuf],
    qsteps: &str,
    mode: QuantMode,
    width: Option<usize>,
    height: Option<usize>,
) -> CliResult<()> {
    let q_steps = parse_qsteps(qsteps)?;
    let dims = raw_dims(width, height)?;
    require_files(images)?;

    let mut header = String::from("image");
    for q in &q_steps {
        header.push_str(&format!(",le_q{q}"));
    }
    println!("{header}");

    let mut failed = false;
    for path in images {
        match load_image(path, dims).and_then(|plane| compute_le(&plane, &q_steps, mode)) {
            Ok(le) => {
                let mut row = csv_safe(&path.display().to_string());
                for entry in le.entries() {
                    row.push_str(&format!(",{}", entry.le));
                }
                println!("{row}");
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed = true;
            }
        }
    }
    if failed {
        Err(CliError::Runtime("some images failed".into()))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

pub fn predict(
    images: &[PathBuf],
    target_psnr: f64,
    model: &str,
    audit: bool,
    parallelism: usize,
    width: Option<usize>,
    height: Option<usize>,
) -> CliResult<()> {
    if !(target_psnr > 0.0 && target_psnr < 100.0) {
        return Err(usage(format!(
            "--target-psnr must be in (0, 100), got {target_psnr}"
        )));
    }
    let dims = raw_dims(width, height)?;
    require_files(images)?;
    let set = resolve_model(model)?;

    let decisions = qtarget::control::predict_qp_batch_paths(
        images.to_vec().as_slice(),
        dims,
        target_psnr,
        &set,
        parallelism,
    );

    if !audit {
        println!("image,qp,lambda,a,b,clamped");
    }
    let mut failed = false;
    for (path, result) in images.iter().zip(decisions) {
        match result {
            Ok(decision) => {
                if audit {
                    println!("{}", audit_json(path, target_psnr, &decision));
                } else {
                    let (a, b) = decision
                        .dlambda
                        .as_ref()
                        .map(|m| (m.a.to_string(), m.b.to_string()))
                        .unwrap_or_default();
                    println!(
                        "{},{},{},{},{},{}",
                        csv_safe(&path.display().to_string()),
                        decision.qp,
                        decision.lambda,
                        a,
                        b,
                        decision.clamped
                    );
                }
                for w in &decision.warnings {
                    warn_line!("{}: {w}", path.display());
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed = true;
            }
        }
    }
    if failed {
        Err(CliError::Runtime("some images failed".into()))
    } else {
        Ok(())
    }
}

fn audit_json(path: &Path, target_psnr: f64, decision: &ControlDecision) -> String {
    serde_json::json!({
        "image": path.display().to_string(),
        "target_psnr": target_psnr,
        "decision": decision,
    })
    .to_string()
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub adapter: String,
    pub qps: String,
    pub qsteps: String,
    pub out: PathBuf,
    pub records: Option<PathBuf>,
    pub resume: bool,
    pub grid_out: Option<PathBuf>,
    pub encoder_id: Option<String>,
    pub qp_lambda: Option<PathBuf>,
    pub parallelism: usize,
    pub workdir: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let corpus = list_corpus(&args.corpus)?;
    let adapter = resolve_adapter(&args.adapter)?;
    let qps = parse_i32_list(&args.qps, "qps")?;
    let q_steps = parse_qsteps(&args.qsteps)?;

    if args.resume && args.records.is_none() {
        return Err(usage("--resume needs --records"));
    }
    if let (Some(records), false) = (&args.records, args.resume) {
        if records.exists() {
            return Err(usage(format!(
                "records file {} already exists; pass --resume to continue it",
                records.display()
            )));
        }
    }

    let qp_lambda = match &args.qp_lambda {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let map: QpLambdaMap = serde_json::from_str(&text)
                .map_err(|e| usage(format!("{}: bad QP-lambda JSON: {e}", path.display())))?;
            map.validate()?;
            map
        }
        None => hevc_log_linear(),
    };

    let opts = SweepOptions {
        qps,
        q_steps: q_steps.clone(),
        parallelism: args.parallelism,
        workdir: args.workdir.clone(),
    };
    let outcome = sweep_corpus(&corpus, &adapter, &opts, args.records.as_deref())?;
    for f in &outcome.failures {
        match f.qp {
            Some(qp) => warn_line!("{} at qp {qp}: {}", f.image_id, f.error),
            None => warn_line!("{}: {}", f.image_id, f.error),
        }
    }

    let grid = fit_grid(&outcome.records)?;
    if let Some(path) = &args.grid_out {
        write_fit_grid_csv(&grid, path)?;
    }

    let encoder_id = args
        .encoder_id
        .unwrap_or_else(|| adapter.encoder_id().to_string());
    let set = select_anchors(&grid, &q_steps, &encoder_id, adapter.qp_range(), qp_lambda)?;
    set.write_to(&args.out)?;

    println!(
        "trained {} on {} images ({} records, {} failures)",
        encoder_id,
        corpus.len(),
        outcome.records.len(),
        outcome.failures.len()
    );
    for e in &set.entries {
        println!(
            "  anchor q_step {} -> qp {} (a {:.4}, b {:.4}, r2 {})",
            e.q_step,
            e.qp,
            e.a,
            e.b,
            e.r2.map(|v| format!("{v:.4}")).unwrap_or_default()
        );
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub struct EvaluateArgs {
    pub corpus: PathBuf,
    pub targets: String,
    pub model: String,
    pub adapter: String,
    pub bad_case_threshold: f64,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub workdir: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let corpus = list_corpus(&args.corpus)?;
    let set = resolve_model(&args.model)?;
    let adapter = resolve_adapter(&args.adapter)?;
    let targets = parse_targets(&args.targets)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out_dir.display())))?;

    let opts = EvalOptions {
        bad_case_threshold: args.bad_case_threshold,
        parallelism: args.parallelism,
        workdir: args.workdir.clone(),
        ..Default::default()
    };

    let mut reports = Vec::with_capacity(targets.len());
    println!("target_psnr,images,diff_percent,variance,bad_case_ratio");
    for &target in &targets {
        let report = run_evaluation(&corpus, target, &set, &adapter, &opts)?;
        let tag = format!("t{}", target.to_string().replace('.', "p"));
        write_report_csv(&report, &args.out_dir.join(format!("per_image_{tag}.csv")))?;
        write_histogram_csv(&report, &args.out_dir.join(format!("histogram_{tag}.csv")))?;
        write_report_json(&report, &args.out_dir.join(format!("report_{tag}.json")))?;
        for (id, err) in &report.failures {
            warn_line!("{target} dB: {id}: {err}");
        }
        println!(
            "{},{},{:.6},{},{:.6}",
            target,
            report.per_image.len(),
            report.diff_percent,
            report
                .variance
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            report.bad_case_ratio
        );
        reports.push(report);
    }

    write_targets_summary_csv(&reports, &args.out_dir.join("summary.csv"))?;
    let avg = macro_average(&reports)?;
    println!(
        "average,,{:.6},{},",
        avg.mean_diff_percent,
        avg.mean_variance
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

pub fn gen_corpus(
    out: &Path,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
    kinds: &str,
) -> CliResult<()> {
    if count == 0 {
        return Err(usage("--count must be positive"));
    }
    if width == 0 || height == 0 {
        return Err(usage("--width and --height must be positive"));
    }
    let kinds: Vec<&str> = kinds.split(',').map(str::trim).collect();
    for k in &kinds {
        if !matches!(*k, "noise" | "gradient" | "flat") {
            return Err(usage(format!(
                "unknown kind '{k}' (expected noise, gradient, flat)"
            )));
        }
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    let sigmas = [12.0, 18.0, 26.0, 36.0, 48.0, 60.0];
    let levels = [128u8, 64, 192, 32, 224];
    let mut rng = SeededRng::new(seed);
    for i in 0..count {
        let kind_name = kinds[i % kinds.len()];
        let kind = match kind_name {
            "noise" => SynthKind::Noise {
                sigma: sigmas[(i / kinds.len()) % sigmas.len()],
                smooth: (i / (kinds.len() * 3)) % 3,
            },
            "gradient" => SynthKind::Gradient {
                angle: ((i / kinds.len()) % 3) as u8,
            },
            _ => SynthKind::Flat {
                level: levels[(i / kinds.len()) % levels.len()],
            },
        };
        let plane = generate(kind, width, height, rng.next_u64());
        let path = out.join(format!("{kind_name}_{i:04}.pgm"));
        pixels::write_pgm(&plane, &path)?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

pub fn models(export: Option<&str>, out: Option<&Path>) -> CliResult<()> {
    match (export, out) {
        (Some(id), Some(path)) => {
            let set = resolve_model(id)?;
            set.write_to(path)?;
            println!("wrote {} to {}", id, path.display());
            Ok(())
        }
        (Some(_), None) => Err(usage("--export needs --out")),
        (None, Some(_)) => Err(usage("--out needs --export")),
        (None, None) => {
            println!("id,qp_range,anchors");
            for id in bundled_model_ids() {
                let set = bundled_model(id).expect("bundled model");
                let anchors: Vec<String> = set
                    .entries
                    .iter()
                    .map(|e| format!("(q{} qp{})", e.q_step, e.qp))
                    .collect();
                println!(
                    "{},{}..{},{}",
                    id,
                    set.qp_range.0,
                    set.qp_range.1,
                    anchors.join(" ")
                );
            }
            println!("# set ${MODEL_DIR_ENV} to shadow these with <id>.json files");
            Ok(())
        }
    }
}
