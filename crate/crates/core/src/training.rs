//! Training harness: sweep a corpus through an encoder across a QP range,
//! pool per-image (LE, PSNR) samples, and pick the best (q_step, QP) anchors
//! by goodness of fit.
//!
//! Sweeps against real encoders take hours, so records stream to an
//! append-only CSV keyed by `(image_id, qp)`; rerunning with the same file
//! resumes instead of re-encoding. Fits are pooled across images: one global
//! line per (q_step, QP) cell, because the anchors the model set ships are
//! content-independent by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::encoders::EncoderAdapter;
use crate::models::{fit_line, Line, PsnrLeEntry, PsnrLeModelSet, QpLambdaMap};
use crate::pixels;
use crate::transform::{compute_le, LeEntry, QuantMode};
use crate::util::parallel_map;
use crate::{Error, Result};

/// One (image, QP) sample: the encode's PSNR plus the image's LE values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub image_id: String,
    pub qp: i32,
    pub psnr: f64,
    pub le: Vec<LeEntry>,
}

impl SweepRecord {
    pub fn le_for(&self, q_step: u32) -> Option<f64> {
        self.le.iter().find(|e| e.q_step == q_step).map(|e| e.le)
    }
}

/// A failed sweep job.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub image_id: String,
    /// QP of the failed encode; `None` when the image itself failed to load.
    pub qp: Option<i32>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub qps: Vec<i32>,
    pub q_steps: Vec<u32>,
    pub parallelism: usize,
    /// Working directory root for external adapters.
    pub workdir: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            qps: (4..=40).collect(),
            q_steps: vec![8, 16, 32],
            parallelism: 1,
            workdir: None,
        }
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub failures: Vec<SweepFailure>,
}

/// Sweeps `corpus` through `adapter` at every QP in `opts.qps`.
///
/// LE is computed once per image and reused across QPs. With `records_path`
/// set, completed `(image_id, qp)` cells found in the file are not re-encoded
/// and new rows are appended as they complete, so an interrupted sweep picks
/// up where it left off. Failures are collected per job; the sweep errors
/// only when nothing succeeded.
pub fn sweep_corpus(
    corpus: &[(String, PathBuf)],
    adapter: &EncoderAdapter,
    opts: &SweepOptions,
    records_path: Option<&Path>,
) -> Result<SweepOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("sweep corpus"));
    }
    if opts.qps.is_empty() {
        return Err(Error::EmptyInput("sweep qp list"));
    }

    let existing = match records_path {
        Some(path) if path.exists() => read_records_csv(path)?,
        _ => Vec::new(),
    };
    if let Some(first) = existing.first() {
        let file_steps: Vec<u32> = first.le.iter().map(|e| e.q_step).collect();
        if file_steps != opts.q_steps {
            return Err(Error::BadRecord {
                path: records_path.expect("existing implies a path").to_path_buf(),
                line: 1,
                reason: format!(
                    "file records q_steps {:?} but this sweep uses {:?}",
                    file_steps, opts.q_steps
                ),
            });
        }
    }
    let done: HashSet<(String, i32)> = existing
        .iter()
        .map(|r| (r.image_id.clone(), r.qp))
        .collect();

    let writer = match records_path {
        Some(path) => {
            let fresh = !path.exists();
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{}", records_header(&opts.q_steps)).map_err(|e| Error::io(path, e))?;
            }
            Some(Mutex::new(w))
        }
        None => None,
    };

    struct JobResult {
        records: Vec<SweepRecord>,
        failures: Vec<SweepFailure>,
    }

    let outcomes = parallel_map(corpus, opts.parallelism, |(image_id, path)| {
        let pending: Vec<i32> = opts
            .qps
            .iter()
            .copied()
            .filter(|qp| !done.contains(&(image_id.clone(), *qp)))
            .collect();
        if pending.is_empty() {
            return JobResult {
                records: Vec::new(),
                failures: Vec::new(),
            };
        }

        let plane = match pixels::format_for_path(path, None)
            .and_then(|fmt| pixels::load_luma(path, fmt))
        {
            Ok(p) => p,
            Err(e) => {
                return JobResult {
                    records: Vec::new(),
                    failures: vec![SweepFailure {
                        image_id: image_id.clone(),
                        qp: None,
                        error: e.to_string(),
                    }],
                }
            }
        };
        let le = match compute_le(&plane, &opts.q_steps, QuantMode::Centered) {
            Ok(le) => le.entries().to_vec(),
            Err(e) => {
                return JobResult {
                    records: Vec::new(),
                    failures: vec![SweepFailure {
                        image_id: image_id.clone(),
                        qp: None,
                        error: e.to_string(),
                    }],
                }
            }
        };

        let mut records = Vec::with_capacity(pending.len());
        let mut failures = Vec::new();
        for qp in pending {
            match adapter.encode(&plane, qp, opts.workdir.as_deref()) {
                Ok(enc) => {
                    let record = SweepRecord {
                        image_id: image_id.clone(),
                        qp,
                        psnr: enc.psnr,
                        le: le.clone(),
                    };
                    if let Some(w) = &writer {
                        let mut w = w.lock().expect("records writer");
                        // Append-and-flush per row keeps interrupted sweeps resumable.
                        let _ = writeln!(w, "{}", record_row(&record));
                        let _ = w.flush();
                    }
                    records.push(record);
                }
                Err(e) => failures.push(SweepFailure {
                    image_id: image_id.clone(),
                    qp: Some(qp),
                    error: e.to_string(),
                }),
            }
        }
        JobResult { records, failures }
    });

    let mut records = existing;
    let mut failures = Vec::new();
    for mut job in outcomes {
        records.append(&mut job.records);
        failures.append(&mut job.failures);
    }

    if records.is_empty() {
        return Err(Error::SweepFailed(failures.len()));
    }

    // Deterministic output order regardless of worker scheduling.
    let order: HashMap<&str, usize> = corpus
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    records.sort_by(|a, b| {
        let ka = (order.get(a.image_id.as_str()), &a.image_id, a.qp);
        let kb = (order.get(b.image_id.as_str()), &b.image_id, b.qp);
        ka.cmp(&kb)
    });

    Ok(SweepOutcome { records, failures })
}

fn records_header(q_steps: &[u32]) -> String {
    let mut h = String::from("image_id,qp,psnr");
    for q in q_steps {
        h.push_str(&format!(",le_q{q}"));
    }
    h
}

fn record_row(r: &SweepRecord) -> String {
    let id = r.image_id.replace([',', '\n', '\r'], "_");
    let mut row = format!("{},{},{}", id, r.qp, r.psnr);
    for e in &r.le {
        row.push_str(&format!(",{}", e.le));
    }
    row
}

/// Writes a whole record set as CSV (header + rows).
pub fn write_records_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let q_steps: Vec<u32> = records[0].le.iter().map(|e| e.q_step).collect();
    let mut out = records_header(&q_steps);
    out.push('\n');
    for r in records {
        out.push_str(&record_row(r));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads records back from CSV, recovering the q_step list from the header.
pub fn read_records_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let bad = |line: usize, reason: String| Error::BadRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[0] != "image_id" || cols[1] != "qp" || cols[2] != "psnr" {
        return Err(bad(1, format!("unexpected header '{header}'")));
    }
    let q_steps: Vec<u32> = cols[3..]
        .iter()
        .map(|c| {
            c.strip_prefix("le_q")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(1, format!("unexpected LE column '{c}'")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 3 + q_steps.len() {
            return Err(bad(
                idx + 1,
                format!("expected {} fields", 3 + q_steps.len()),
            ));
        }
        let qp: i32 = fields[1]
            .parse()
            .map_err(|_| bad(idx + 1, "bad qp".into()))?;
        let psnr: f64 = fields[2]
            .parse()
            .map_err(|_| bad(idx + 1, "bad psnr".into()))?;
        let le = q_steps
            .iter()
            .zip(&fields[3..])
            .map(|(&q_step, f)| {
                f.parse()
                    .map(|le| LeEntry { q_step, le })
                    .map_err(|_| bad(idx + 1, "bad LE".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(SweepRecord {
            image_id: fields[0].to_string(),
            qp,
            psnr,
            le,
        });
    }
    Ok(records)
}

/// One pooled regression cell: PSNR at `qp` against LE at `q_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCell {
    pub q_step: u32,
    pub qp: i32,
    /// Distinct images pooled into the fit.
    pub n_images: usize,
    /// Absent when the cell is degenerate.
    pub line: Option<Line>,
    pub degenerate: bool,
}

/// All (q_step, qp) cells of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FitGrid {
    pub cells: Vec<FitCell>,
    pub q_steps: Vec<u32>,
    pub qps: Vec<i32>,
}

impl FitGrid {
    pub fn cell(&self, q_step: u32, qp: i32) -> Option<&FitCell> {
        self.cells.iter().find(|c| c.q_step == q_step && c.qp == qp)
    }
}

/// Fewer distinct images than this makes a cell's goodness of fit
/// meaningless; such cells are marked degenerate and never selected.
pub const MIN_IMAGES_PER_CELL: usize = 3;

/// Pools records into per-(q_step, qp) regressions of PSNR against LE.
///
/// Cells where all images share one LE value (or with too few images) are
/// marked degenerate rather than failing the grid. Record order and
/// duplicated images do not change the fitted lines.
pub fn fit_grid(records: &[SweepRecord]) -> Result<FitGrid> {
    if records.is_empty() {
        return Err(Error::EmptyInput("fit_grid records"));
    }
    let q_steps: Vec<u32> = records[0].le.iter().map(|e| e.q_step).collect();
    for r in records {
        let rq: Vec<u32> = r.le.iter().map(|e| e.q_step).collect();
        if rq != q_steps {
            return Err(Error::InvalidQStepList);
        }
    }

    let mut by_qp: BTreeMap<i32, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        by_qp.entry(r.qp).or_default().push(r);
    }
    // Fit inputs in image order, so record order cannot perturb the sums.
    for rows in by_qp.values_mut() {
        rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }

    let mut cells = Vec::new();
    for (&qp, rows) in &by_qp {
        for &q_step in &q_steps {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.le_for(q_step).expect("validated q_steps"), r.psnr))
                .collect();
            let n_images = rows
                .iter()
                .map(|r| r.image_id.as_str())
                .collect::<HashSet<_>>()
                .len();
            let (line, degenerate) = if n_images < MIN_IMAGES_PER_CELL {
                (None, true)
            } else {
                match fit_line(&points) {
                    Ok(line) => {
                        let degenerate = line.r2.is_none();
                        (Some(line), degenerate)
                    }
                    Err(_) => (None, true),
                }
            };
            cells.push(FitCell {
                q_step,
                qp,
                n_images,
                line,
                degenerate,
            });
        }
    }

    Ok(FitGrid {
        cells,
        q_steps,
        qps: by_qp.keys().copied().collect(),
    })
}

/// Picks, for each q_step, the QP whose pooled fit has the highest goodness
/// of fit (ties to the lower QP), and assembles the model set.
pub fn select_anchors(
    grid: &FitGrid,
    q_steps: &[u32],
    encoder_id: &str,
    qp_range: (i32, i32),
    qp_lambda: QpLambdaMap,
) -> Result<PsnrLeModelSet> {
    let mut entries = Vec::with_capacity(q_steps.len());
    for &q_step in q_steps {
        let mut best: Option<(&FitCell, f64)> = None;
        for cell in grid.cells.iter().filter(|c| c.q_step == q_step) {
            if cell.degenerate {
                continue;
            }
            let Some(line) = &cell.line else { continue };
            let Some(r2) = line.r2 else { continue };
            // Strictly-greater keeps the lowest qp on ties (cells iterate in
            // ascending qp order).
            let better = match best {
                None => true,
                Some((_, best_r2)) => r2 > best_r2,
            };
            if better {
                best = Some((cell, r2));
            }
        }
        let (cell, _) = best.ok_or_else(|| {
            Error::DegenerateFit(format!("q_step {q_step}: no usable (q_step, qp) cell"))
        })?;
        let line = cell.line.as_ref().unwrap();
        entries.push(PsnrLeEntry {
            q_step,
            qp: cell.qp,
            a: line.a,
            b: line.b,
            r2: line.r2,
        });
    }

    let set = PsnrLeModelSet {
        encoder_id: encoder_id.to_string(),
        qp_range,
        qp_lambda,
        entries,
    };
    set.validate()?;
    Ok(set)
}

/// Dumps every grid cell as CSV for external plotting.
pub fn write_fit_grid_csv(grid: &FitGrid, path: &Path) -> Result<()> {
    let mut out = String::from("q_step,qp,n_images,a,b,r2,degenerate\n");
    for c in &grid.cells {
        let (a, b, r2) = match &c.line {
            Some(l) => (
                l.a.to_string(),
                l.b.to_string(),
                l.r2.map(|v| v.to_string()).unwrap_or_default(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.q_step, c.qp, c.n_images, a, b, r2, c.degenerate
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
