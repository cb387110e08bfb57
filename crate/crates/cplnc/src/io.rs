//! File formats, configuration loading, and report emission.
//!
//! Streams, prototype sets, and reports are line-delimited structured
//! records: one JSON object per line, a header line first, numbers stored at
//! 32-bit precision. Identical inputs produce byte-identical outputs, and
//! every report echoes enough configuration (plus input digests) to
//! reproduce the run.

use crate::cache::AdmitOutcome;
use crate::config::{ConfigError, HyperParams};
use crate::engine::{SessionOutcome, StreamRecord};
use crate::harness::{AblationReport, SyntheticSpec};
use crate::numerics::EmbeddingVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("dimension mismatch at {path}:{line}: expected {expected}, got {got}")]
    DimensionMismatch {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("view count mismatch at {path}:{line}: expected {expected}, got {got}")]
    ViewCountMismatch {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn narrow(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&x| x as f32).collect()
}

fn widen(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

// ── stream files ────────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum StreamLine {
    Header {
        format_version: u32,
        d: usize,
        c: usize,
        n_views: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        class_names: Option<Vec<String>>,
    },
    Sample {
        sample_id: u64,
        views: Vec<Vec<f32>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        true_label: Option<usize>,
    },
}

/// Stream header metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamMeta {
    pub dim: usize,
    pub n_classes: usize,
    pub n_views: usize,
    pub class_names: Option<Vec<String>>,
}

impl StreamMeta {
    pub fn new(dim: usize, n_classes: usize, n_views: usize) -> Self {
        Self {
            dim,
            n_classes,
            n_views,
            class_names: None,
        }
    }
}

pub fn write_stream(
    path: &Path,
    meta: &StreamMeta,
    records: &[StreamRecord],
) -> Result<(), IoError> {
    let mut out = Vec::new();
    let header = StreamLine::Header {
        format_version: FORMAT_VERSION,
        d: meta.dim,
        c: meta.n_classes,
        n_views: meta.n_views,
        class_names: meta.class_names.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))
        .expect("vec write");
    for record in records {
        let line = StreamLine::Sample {
            sample_id: record.sample_id,
            views: record.views.iter().map(|v| narrow(v.as_slice())).collect(),
            true_label: record.true_label,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))
            .expect("vec write");
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

pub fn load_stream(path: &Path) -> Result<(Vec<StreamRecord>, StreamMeta), IoError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut meta: Option<StreamMeta> = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StreamLine =
            serde_json::from_str(&line).map_err(|e| IoError::Parse {
                path: path_str.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        match parsed {
            StreamLine::Header {
                format_version,
                d,
                c,
                n_views,
                class_names,
            } => {
                if format_version != FORMAT_VERSION {
                    return Err(IoError::Parse {
                        path: path_str,
                        line: line_no,
                        detail: format!(
                            "unsupported format_version {format_version}, expected {FORMAT_VERSION}"
                        ),
                    });
                }
                if meta.is_some() {
                    return Err(IoError::Parse {
                        path: path_str,
                        line: line_no,
                        detail: "duplicate header".into(),
                    });
                }
                meta = Some(StreamMeta {
                    dim: d,
                    n_classes: c,
                    n_views,
                    class_names,
                });
            }
            StreamLine::Sample {
                sample_id,
                views,
                true_label,
            } => {
                let meta = meta.as_ref().ok_or_else(|| IoError::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    detail: "sample record before header".into(),
                })?;
                if views.len() != meta.n_views {
                    return Err(IoError::ViewCountMismatch {
                        path: path_str,
                        line: line_no,
                        expected: meta.n_views,
                        got: views.len(),
                    });
                }
                let mut parsed_views = Vec::with_capacity(views.len());
                for view in &views {
                    if view.len() != meta.dim {
                        return Err(IoError::DimensionMismatch {
                            path: path_str,
                            line: line_no,
                            expected: meta.dim,
                            got: view.len(),
                        });
                    }
                    let v = EmbeddingVector::normalize(&widen(view)).map_err(|e| {
                        IoError::Parse {
                            path: path_str.clone(),
                            line: line_no,
                            detail: e.to_string(),
                        }
                    })?;
                    parsed_views.push(v);
                }
                if let Some(label) = true_label {
                    if label >= meta.n_classes {
                        return Err(IoError::Parse {
                            path: path_str,
                            line: line_no,
                            detail: format!(
                                "true_label {label} out of range for {} classes",
                                meta.n_classes
                            ),
                        });
                    }
                }
                records.push(StreamRecord {
                    sample_id,
                    views: parsed_views,
                    true_label,
                });
            }
        }
    }
    let meta = meta.ok_or_else(|| IoError::Parse {
        path: path_str,
        line: 0,
        detail: "missing header".into(),
    })?;
    Ok((records, meta))
}

// ── prototype files ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum PrototypeLine {
    Header {
        format_version: u32,
        d: usize,
        c: usize,
    },
    Prototype {
        class_id: usize,
        values: Vec<f32>,
    },
}

pub fn write_prototypes(path: &Path, protos: &[EmbeddingVector]) -> Result<(), IoError> {
    let dim = protos.first().map_or(0, |p| p.dim());
    let mut out = Vec::new();
    let header = PrototypeLine::Header {
        format_version: FORMAT_VERSION,
        d: dim,
        c: protos.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))
        .expect("vec write");
    for (class_id, proto) in protos.iter().enumerate() {
        let line = PrototypeLine::Prototype {
            class_id,
            values: narrow(proto.as_slice()),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))
            .expect("vec write");
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

pub fn load_prototypes(path: &Path) -> Result<Vec<EmbeddingVector>, IoError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut dims: Option<(usize, usize)> = None;
    let mut rows: Vec<Option<EmbeddingVector>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PrototypeLine =
            serde_json::from_str(&line).map_err(|e| IoError::Parse {
                path: path_str.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        match parsed {
            PrototypeLine::Header {
                format_version,
                d,
                c,
            } => {
                if format_version != FORMAT_VERSION {
                    return Err(IoError::Parse {
                        path: path_str,
                        line: line_no,
                        detail: format!("unsupported format_version {format_version}"),
                    });
                }
                dims = Some((d, c));
                rows = vec![None; c];
            }
            PrototypeLine::Prototype { class_id, values } => {
                let (d, c) = dims.ok_or_else(|| IoError::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    detail: "prototype record before header".into(),
                })?;
                if class_id >= c {
                    return Err(IoError::Parse {
                        path: path_str,
                        line: line_no,
                        detail: format!("class_id {class_id} out of range for {c} classes"),
                    });
                }
                if values.len() != d {
                    return Err(IoError::DimensionMismatch {
                        path: path_str,
                        line: line_no,
                        expected: d,
                        got: values.len(),
                    });
                }
                let raw = widen(&values);
                let norm = crate::numerics::l2_norm(&raw);
                if (norm - 1.0).abs() > 1e-4 {
                    eprintln!(
                        "warning: prototype {class_id} in {path_str} has norm {norm:.6}; normalizing"
                    );
                }
                let v = EmbeddingVector::normalize(&raw).map_err(|e| IoError::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    detail: e.to_string(),
                })?;
                rows[class_id] = Some(v);
            }
        }
    }
    let (_, c) = dims.ok_or_else(|| IoError::Parse {
        path: path_str.clone(),
        line: 0,
        detail: "missing header".into(),
    })?;
    let mut protos = Vec::with_capacity(c);
    for (class_id, row) in rows.into_iter().enumerate() {
        protos.push(row.ok_or_else(|| IoError::Parse {
            path: path_str.clone(),
            line: 0,
            detail: format!("missing prototype row for class {class_id}"),
        })?);
    }
    Ok(protos)
}

// ── digests ─────────────────────────────────────────────────────────────────

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn digest_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(digest_bytes(&bytes))
}

/// Canonical digest of an in-memory stream: the hash of its serialized
/// sample lines. Used to verify paired ablation streams.
pub fn stream_digest(records: &[StreamRecord]) -> String {
    let mut hasher = Sha256::new();
    for record in records {
        let line = StreamLine::Sample {
            sample_id: record.sample_id,
            views: record.views.iter().map(|v| narrow(v.as_slice())).collect(),
            true_label: record.true_label,
        };
        hasher.update(serde_json::to_string(&line).expect("serializable"));
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

// ── config files ────────────────────────────────────────────────────────────

/// Parse a flat `key = value` config file with `#` comments.
pub fn parse_config_text(path_str: &str, text: &str) -> Result<Vec<(String, String)>, IoError> {
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(IoError::Parse {
                path: path_str.to_string(),
                line: line_no,
                detail: format!("expected `key = value`, got `{line}`"),
            });
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Parse one `key=value` CLI override.
pub fn parse_override(raw: &str) -> Result<(String, String), IoError> {
    match raw.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(IoError::Parse {
            path: "<cli>".into(),
            line: 0,
            detail: format!("override `{raw}` is not of the form key=value"),
        }),
    }
}

/// Assemble hyperparameters: defaults, then the config file, then CLI
/// overrides, rightmost wins; validate the result.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<HyperParams, IoError> {
    let mut hp = HyperParams::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        for (key, value) in parse_config_text(&path.display().to_string(), &text)? {
            hp.set(&key, &value)?;
        }
    }
    for (key, value) in overrides {
        hp.set(key, value)?;
    }
    hp.validate()?;
    Ok(hp)
}

/// A fully commented config file with every key at its default.
pub fn config_template() -> String {
    let hp = HyperParams::default();
    let docs: &[(&str, &str)] = &[
        ("epsilon", "suppression log guard (symbol: epsilon)"),
        ("s", "suppression smoothness (symbol: s)"),
        ("gamma", "capacity sensitivity to frequency (symbol: gamma)"),
        ("m_base", "base capacity per class (symbol: M)"),
        ("m_max", "hard capacity cap per class (symbol: M_max)"),
        ("eta", "inactivity threshold in steps (symbol: eta)"),
        ("delta", "max rejuvenation boost (symbol: delta)"),
        ("alpha_decay", "boost frequency penalty (symbol: alpha, boost)"),
        ("tau", "softmax / contrastive temperature (symbol: tau)"),
        ("lambda1", "alignment loss weight (symbol: lambda_1)"),
        ("lambda2", "negative-contrast loss weight (symbol: lambda_2)"),
        ("alpha_fuse", "cache adaptation scale (symbol: alpha, fusion)"),
        ("beta_fuse", "cache adaptation sharpness (symbol: beta, fusion)"),
        (
            "entropy_gate",
            "admission gate in nats; `auto` = 0.4*ln(C); -inf/inf allowed",
        ),
        ("rho", "confident-view fraction (symbol: rho)"),
        (
            "entropy_threshold",
            "absolute view entropy filter in nats (symbol: t); inf = off",
        ),
        ("n_views", "views per record when generating (symbol: N)"),
        (
            "ncl_refresh_stride",
            "samples between hard-negative refreshes",
        ),
        ("lr", "optimizer learning rate"),
        ("beta1", "optimizer first-moment decay"),
        ("beta2", "optimizer second-moment decay"),
        ("eps_opt", "optimizer denominator guard"),
        ("weight_decay", "decoupled weight decay"),
        ("steps_per_sample", "optimizer steps per test sample"),
        (
            "frequency_mode",
            "p_c counting: cumulative assignments or cache occupancy",
        ),
        (
            "aug_prediction",
            "prediction inside the entropy loss: fused or textual",
        ),
        (
            "rejuvenation_synthesis",
            "admit synthetic features for long-inactive classes",
        ),
        ("seed", "RNG seed for generation and paired experiments"),
    ];
    let mut out = String::from("# adaptation engine configuration\n");
    for (key, value) in hp.to_key_values() {
        let doc = docs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, d)| *d)
            .unwrap_or("");
        out.push_str(&format!("{key} = {value}  # {doc}\n"));
    }
    out
}

// ── report files ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_aug: f32,
    pub l_align: f32,
    pub l_ncl: f32,
    pub total: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityRecord {
    pub base: usize,
    pub boost: usize,
    pub total: usize,
    pub p_c: f32,
    pub phi: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Header {
        format_version: u32,
        kind: String,
        d: usize,
        c: usize,
        n_views: usize,
    },
    Config {
        entries: Vec<(String, String)>,
        resolved_entropy_gate: String,
        stream_digest: String,
        prototypes_digest: String,
    },
    SampleReport {
        sample_id: u64,
        probabilities: Vec<f32>,
        pseudo_label: usize,
        sample_entropy: f32,
        admit_outcome: AdmitOutcome,
        #[serde(skip_serializing_if = "Option::is_none")]
        true_label: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        loss: Option<LossRecord>,
        #[serde(skip_serializing_if = "Option::is_none")]
        capacity: Option<CapacityRecord>,
    },
    CacheClass {
        class_id: usize,
        activation_count: u64,
        last_update_step: Option<u64>,
        entry_count: usize,
        base: usize,
        boost: usize,
        total: usize,
        p_c: f32,
        phi: f32,
        admission_entropies: Vec<f32>,
        inactive_at_end: bool,
        true_count: u64,
        correct: u64,
    },
    NclPair {
        class_id: usize,
        visual_neg: usize,
        textual_neg: usize,
        cos_visual: f32,
        cos_textual: f32,
        class_loss: f32,
    },
    CapacityCheckpoint {
        step: u64,
        totals: Vec<usize>,
    },
    Summary {
        n_samples: u64,
        n_labeled: u64,
        n_correct: u64,
        accuracy: Option<f32>,
        dead_class_count: usize,
        tail_classes: Vec<usize>,
        tail_retention: Option<f32>,
        tail_accuracy: Option<f32>,
    },
}

/// Serialize non-finite gate values losslessly.
fn render_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Render a full session report to its canonical byte representation.
pub fn render_report(
    meta: &StreamMeta,
    hp: &HyperParams,
    stream_digest: &str,
    prototypes_digest: &str,
    outcome: &SessionOutcome,
    per_sample: bool,
    trace_loss: bool,
) -> Vec<u8> {
    let mut lines: Vec<ReportLine> = Vec::new();
    lines.push(ReportLine::Header {
        format_version: FORMAT_VERSION,
        kind: "session_report".into(),
        d: meta.dim,
        c: meta.n_classes,
        n_views: meta.n_views,
    });
    lines.push(ReportLine::Config {
        entries: hp.to_key_values(),
        resolved_entropy_gate: render_f64(outcome.resolved_entropy_gate),
        stream_digest: stream_digest.to_string(),
        prototypes_digest: prototypes_digest.to_string(),
    });
    if per_sample || trace_loss {
        for report in &outcome.reports {
            lines.push(ReportLine::SampleReport {
                sample_id: report.sample_id,
                probabilities: narrow(report.probabilities.as_slice()),
                pseudo_label: report.pseudo_label,
                sample_entropy: report.sample_entropy as f32,
                admit_outcome: report.admit_outcome,
                true_label: report.true_label,
                loss: trace_loss.then_some(LossRecord {
                    l_aug: report.loss.l_aug as f32,
                    l_align: report.loss.l_align as f32,
                    l_ncl: report.loss.l_ncl as f32,
                    total: report.loss.total as f32,
                }),
                capacity: Some(CapacityRecord {
                    base: report.capacity.base,
                    boost: report.capacity.boost,
                    total: report.capacity.total,
                    p_c: report.capacity.p_c as f32,
                    phi: report.capacity.phi as f32,
                }),
            });
        }
    }
    for stat in &outcome.class_stats {
        lines.push(ReportLine::CacheClass {
            class_id: stat.class_id,
            activation_count: stat.activation_count,
            last_update_step: stat.last_update_step,
            entry_count: stat.entry_count,
            base: stat.capacity.base,
            boost: stat.capacity.boost,
            total: stat.capacity.total,
            p_c: stat.capacity.p_c as f32,
            phi: stat.capacity.phi as f32,
            admission_entropies: stat
                .admission_entropies
                .iter()
                .map(|&h| h as f32)
                .collect(),
            inactive_at_end: stat.inactive_at_end,
            true_count: stat.true_count,
            correct: stat.correct,
        });
    }
    for pair in &outcome.pair_diagnostics {
        lines.push(ReportLine::NclPair {
            class_id: pair.class_id,
            visual_neg: pair.visual_neg,
            textual_neg: pair.textual_neg,
            cos_visual: pair.cos_visual as f32,
            cos_textual: pair.cos_textual as f32,
            class_loss: pair.class_loss as f32,
        });
    }
    for checkpoint in &outcome.capacity_checkpoints {
        lines.push(ReportLine::CapacityCheckpoint {
            step: checkpoint.step,
            totals: checkpoint.totals.clone(),
        });
    }
    lines.push(ReportLine::Summary {
        n_samples: outcome.n_samples,
        n_labeled: outcome.n_labeled,
        n_correct: outcome.n_correct,
        accuracy: outcome.accuracy.map(|a| a as f32),
        dead_class_count: outcome.dead_class_count,
        tail_classes: outcome.tail_classes.clone(),
        tail_retention: outcome.tail_retention.map(|x| x as f32),
        tail_accuracy: outcome.tail_accuracy.map(|x| x as f32),
    });

    let mut out = Vec::new();
    for line in &lines {
        writeln!(out, "{}", serde_json::to_string(line).expect("serializable"))
            .expect("vec write");
    }
    out
}

pub fn write_report(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| file_err(path, e))
}

pub fn load_report_lines(path: &Path) -> Result<Vec<ReportLine>, IoError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(
            serde_json::from_str(&line).map_err(|e| IoError::Parse {
                path: path_str.clone(),
                line: idx + 1,
                detail: e.to_string(),
            })?,
        );
    }
    Ok(lines)
}

// ── ablation report files ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum AblationLine {
    Header {
        format_version: u32,
        kind: String,
        n_seeds: u64,
        c: usize,
        d: usize,
        zipf_exponent: f32,
        intra_class_noise: f32,
        view_jitter: f32,
        n_samples: usize,
        textual_offset_noise: f32,
        n_views: usize,
        min_angle_deg: f32,
        seed: u64,
    },
    StreamDigest {
        seed_index: u64,
        digest: String,
    },
    ArmResult {
        arm: String,
        accuracies: Vec<f32>,
        mean_accuracy: f32,
        stdev_accuracy: f32,
        mean_tail_retention: f32,
        mean_tail_accuracy: f32,
        mean_dead_classes: f32,
    },
}

pub fn render_ablation_report(spec: &SyntheticSpec, report: &AblationReport) -> Vec<u8> {
    let mut lines: Vec<AblationLine> = Vec::new();
    lines.push(AblationLine::Header {
        format_version: FORMAT_VERSION,
        kind: "ablation_report".into(),
        n_seeds: report.n_seeds,
        c: spec.n_classes,
        d: spec.dim,
        zipf_exponent: spec.zipf_exponent as f32,
        intra_class_noise: spec.intra_class_noise as f32,
        view_jitter: spec.view_jitter as f32,
        n_samples: spec.n_samples,
        textual_offset_noise: spec.textual_offset_noise as f32,
        n_views: spec.n_views,
        min_angle_deg: spec.min_angle_deg as f32,
        seed: spec.seed,
    });
    for (i, digest) in report.stream_digests.iter().enumerate() {
        lines.push(AblationLine::StreamDigest {
            seed_index: i as u64,
            digest: digest.clone(),
        });
    }
    for arm in &report.arms {
        lines.push(AblationLine::ArmResult {
            arm: arm.arm.name().to_string(),
            accuracies: arm.accuracies.iter().map(|&a| a as f32).collect(),
            mean_accuracy: arm.mean_accuracy as f32,
            stdev_accuracy: arm.stdev_accuracy as f32,
            mean_tail_retention: arm.mean_tail_retention as f32,
            mean_tail_accuracy: arm.mean_tail_accuracy as f32,
            mean_dead_classes: arm.mean_dead_classes as f32,
        });
    }
    let mut out = Vec::new();
    for line in &lines {
        writeln!(out, "{}", serde_json::to_string(line).expect("serializable"))
            .expect("vec write");
    }
    out
}

/// Human-readable capacity / dead-class table from a report's cache dump.
pub fn render_cache_table(lines: &[ReportLine]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>5} {:>9} {:>8} {:>7} {:>6} {:>6} {:>6} {:>9} {:>11} {:>5}\n",
        "class", "activated", "entries", "last_t", "base", "boost", "total", "p_c", "truth/corr", "dead"
    ));
    let mut dead_total = 0usize;
    for line in lines {
        if let ReportLine::CacheClass {
            class_id,
            activation_count,
            last_update_step,
            entry_count,
            base,
            boost,
            total,
            p_c,
            inactive_at_end,
            true_count,
            correct,
            ..
        } = line
        {
            if *inactive_at_end {
                dead_total += 1;
            }
            out.push_str(&format!(
                "{:>5} {:>9} {:>8} {:>7} {:>6} {:>6} {:>6} {:>9.5} {:>5}/{:<5} {:>5}\n",
                class_id,
                activation_count,
                entry_count,
                last_update_step.map_or("-".to_string(), |t| t.to_string()),
                base,
                boost,
                total,
                p_c,
                true_count,
                correct,
                if *inactive_at_end { "yes" } else { "no" }
            ));
        }
    }
    for line in lines {
        if let ReportLine::Summary {
            n_samples,
            accuracy,
            dead_class_count,
            tail_retention,
            ..
        } = line
        {
            out.push_str(&format!(
                "\nsamples: {}  accuracy: {}  dead classes: {}  tail retention: {}\n",
                n_samples,
                accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
                dead_class_count,
                tail_retention.map_or("-".to_string(), |r| format!("{r:.2}")),
            ));
            debug_assert_eq!(*dead_class_count, dead_total);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_stream, SyntheticSpec};
    use tempfile::tempdir;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 4,
            dim: 6,
            n_samples: 12,
            n_views: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn stream_round_trip_preserves_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stream.jsonl");
        let generated = generate_stream(&small_spec()).unwrap();
        let meta = StreamMeta::new(6, 4, 2);
        write_stream(&path, &meta, &generated.records).unwrap();
        let (loaded, loaded_meta) = load_stream(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.len(), generated.records.len());
        for (a, b) in loaded.iter().zip(&generated.records) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.true_label, b.true_label);
            // Storage narrows to f32; loaded values match at f32 precision.
            for (va, vb) in a.views.iter().zip(&b.views) {
                for (&xa, &xb) in va.as_slice().iter().zip(vb.as_slice()) {
                    assert!((xa - xb).abs() < 1e-6);
                }
            }
        }
        // A second write of the loaded records is byte-identical.
        let path2 = dir.path().join("stream2.jsonl");
        write_stream(&path2, &loaded_meta, &loaded).unwrap();
        let (reloaded, _) = load_stream(&path2).unwrap();
        for (a, b) in reloaded.iter().zip(&loaded) {
            for (va, vb) in a.views.iter().zip(&b.views) {
                assert_eq!(va.as_slice(), vb.as_slice());
            }
        }
    }

    #[test]
    fn stream_short_view_reports_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"record\":\"header\",\"format_version\":1,\"d\":3,\"c\":2,\"n_views\":1}\n",
                "{\"record\":\"sample\",\"sample_id\":0,\"views\":[[1.0,0.0]]}\n",
            ),
        )
        .unwrap();
        let err = load_stream(&path).unwrap_err();
        match err {
            IoError::DimensionMismatch { line, expected, got, .. } => {
                assert_eq!(line, 2);
                assert_eq!(expected, 3);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stream_wrong_view_count_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"record\":\"header\",\"format_version\":1,\"d\":2,\"c\":2,\"n_views\":2}\n",
                "{\"record\":\"sample\",\"sample_id\":0,\"views\":[[1.0,0.0]]}\n",
            ),
        )
        .unwrap();
        assert!(matches!(
            load_stream(&path).unwrap_err(),
            IoError::ViewCountMismatch { line: 2, expected: 2, got: 1, .. }
        ));
    }

    #[test]
    fn prototype_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("protos.jsonl");
        let generated = generate_stream(&small_spec()).unwrap();
        write_prototypes(&path, &generated.textual_prototypes).unwrap();
        let loaded = load_prototypes(&path).unwrap();
        assert_eq!(loaded.len(), 4);
        for (a, b) in loaded.iter().zip(&generated.textual_prototypes) {
            for (&xa, &xb) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((xa - xb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prototype_missing_row_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("protos.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"record\":\"header\",\"format_version\":1,\"d\":2,\"c\":2}\n",
                "{\"record\":\"prototype\",\"class_id\":0,\"values\":[1.0,0.0]}\n",
            ),
        )
        .unwrap();
        let err = load_prototypes(&path).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn config_precedence_rightmost_wins() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "gamma = 2\n# comment\nlr = 0.01\n").unwrap();
        let hp = load_config(
            Some(&path),
            &[("gamma".to_string(), "1".to_string())],
        )
        .unwrap();
        assert_eq!(hp.gamma, 1.0);
        assert_eq!(hp.lr, 0.01);
    }

    #[test]
    fn config_empty_file_gives_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.conf");
        fs::write(&path, "# nothing here\n").unwrap();
        let hp = load_config(Some(&path), &[]).unwrap();
        assert_eq!(hp, HyperParams::default());
    }

    #[test]
    fn config_range_violation_names_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "tau = -1\n").unwrap();
        let err = load_config(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("tau"));
    }

    #[test]
    fn config_unknown_key_names_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "taou = 1\n").unwrap();
        let err = load_config(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("taou"));
    }

    #[test]
    fn config_template_parses_back_to_defaults() {
        let entries = parse_config_text("<template>", &config_template()).unwrap();
        let mut hp = HyperParams::default();
        for (k, v) in &entries {
            hp.set(k, v).unwrap();
        }
        assert_eq!(hp, HyperParams::default());
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let generated = generate_stream(&small_spec()).unwrap();
        let hp = HyperParams::default();
        let outcome = crate::engine::run_session(
            &generated.records,
            &hp,
            generated.textual_prototypes.clone(),
        )
        .unwrap();
        let meta = StreamMeta::new(6, 4, 2);
        let a = render_report(&meta, &hp, "digest-a", "digest-b", &outcome, true, true);
        let b = render_report(&meta, &hp, "digest-a", "digest-b", &outcome, true, true);
        assert_eq!(a, b);
    }

    #[test]
    fn report_lines_parse_back() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.jsonl");
        let generated = generate_stream(&small_spec()).unwrap();
        let hp = HyperParams::default();
        let outcome = crate::engine::run_session(
            &generated.records,
            &hp,
            generated.textual_prototypes.clone(),
        )
        .unwrap();
        let meta = StreamMeta::new(6, 4, 2);
        let bytes = render_report(&meta, &hp, "dg-s", "dg-p", &outcome, true, false);
        write_report(&path, &bytes).unwrap();
        let lines = load_report_lines(&path).unwrap();
        assert!(matches!(lines[0], ReportLine::Header { .. }));
        assert!(matches!(lines[1], ReportLine::Config { .. }));
        assert!(lines
            .iter()
            .any(|l| matches!(l, ReportLine::Summary { .. })));
        let table = render_cache_table(&lines);
        assert!(table.contains("class"));
    }
}
