//! Per-sample adaptation pipeline: fused prediction, confident-view
//! aggregation, loss/optimizer invocation, entropy-gated cache admission,
//! timestamp bookkeeping, and periodic hard-negative refresh.
//!
//! A session is strictly sequential; the reported prediction for each sample
//! is the one a deployed system would have emitted *before* adapting on it.

use crate::cache::{AdmitOutcome, CacheError, CapacityDecision, PrototypeCache};
use crate::config::HyperParams;
use crate::ncl::{mine_hard_negatives, ncl_loss_class, HardNegativePair, NclError};
use crate::numerics::{entropy, softmax, EmbeddingVector, ProbabilityVector};
use crate::objective::{
    grad_textual, optimizer_step, select_confident_views, total_loss, LossBreakdown,
    ObjectiveError, TextualPrototypeSet,
};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("dimension mismatch: session dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record {sample_id} has no views")]
    NoViews { sample_id: u64 },
    #[error("true label {label} out of range for {n_classes} classes")]
    UnknownLabel { label: usize, n_classes: usize },
    #[error("session needs at least one class prototype")]
    NoClasses,
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// One test sample: its augmented views (the first view is the canonical
/// feature) and, when known, the ground-truth label for scoring.
#[derive(Debug, Clone)]
pub struct StreamRecord {
    pub sample_id: u64,
    pub views: Vec<EmbeddingVector>,
    pub true_label: Option<usize>,
}

/// What the engine emitted for one sample, reflecting the state *before*
/// this sample's updates were applied.
#[derive(Debug, Clone)]
pub struct PredictionReport {
    pub sample_id: u64,
    pub probabilities: ProbabilityVector,
    pub pseudo_label: usize,
    pub sample_entropy: f64,
    pub admit_outcome: AdmitOutcome,
    pub true_label: Option<usize>,
    pub loss: LossBreakdown,
    pub capacity: CapacityDecision,
}

/// Fused class probabilities for one feature: textual affinity plus the
/// cache affinity score per class, temperature-normalized. Classes without
/// cached evidence contribute a zero cache term, so with an empty cache (or
/// a zero fusion scale) this reduces to the zero-shot prediction.
pub fn fused_probability(
    f_v: &EmbeddingVector,
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    alpha_fuse: f64,
    beta_fuse: f64,
    tau: f64,
) -> ProbabilityVector {
    let logits: Vec<f64> = (0..textual.len())
        .map(|c| f_v.dot(textual.proto(c)) + cache.cache_score(f_v, c, alpha_fuse, beta_fuse))
        .collect();
    softmax(&logits, tau).expect("finite logits")
}

/// Confident-view aggregation over the fused per-view predictions: filter
/// by the entropy threshold, keep the top-ρ fraction by confidence, average,
/// and return the averaged distribution with its entropy. Falls back to the
/// single most confident view when the filter empties.
pub fn aggregate_views(
    views: &[EmbeddingVector],
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    hp: &HyperParams,
) -> Result<(ProbabilityVector, f64), ObjectiveError> {
    if views.is_empty() {
        return Err(ObjectiveError::NoViews);
    }
    let per_view: Vec<ProbabilityVector> = views
        .iter()
        .map(|v| fused_probability(v, textual, cache, hp.alpha_fuse, hp.beta_fuse, hp.tau))
        .collect();
    let entropies: Vec<f64> = per_view.iter().map(entropy).collect();
    let selected = select_confident_views(&entropies, hp.rho, hp.entropy_threshold);
    let c = per_view[0].len();
    let mut mean = vec![0.0; c];
    for &n in &selected {
        for (m, &p) in mean.iter_mut().zip(per_view[n].as_slice()) {
            *m += p;
        }
    }
    let k = selected.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    let aggregated = ProbabilityVector::from_softmax_unchecked(mean);
    let h = entropy(&aggregated);
    Ok((aggregated, h))
}

/// One adaptation session: refined textual prototypes, the class-aware
/// cache, the current hard-negative pairs, and the global step counter.
#[derive(Debug, Clone)]
pub struct Session {
    hp: HyperParams,
    textual: TextualPrototypeSet,
    cache: PrototypeCache,
    pairs: BTreeMap<usize, HardNegativePair>,
    step: u64,
    dim: usize,
}

impl Session {
    pub fn new(
        hp: &HyperParams,
        initial_textual: Vec<EmbeddingVector>,
    ) -> Result<Self, EngineError> {
        hp.validate()?;
        if initial_textual.is_empty() {
            return Err(EngineError::NoClasses);
        }
        let n_classes = initial_textual.len();
        let dim = initial_textual.first().map_or(0, |p| p.dim());
        for proto in &initial_textual {
            if proto.dim() != dim {
                return Err(EngineError::DimensionMismatch {
                    expected: dim,
                    got: proto.dim(),
                });
            }
        }
        Ok(Self {
            hp: hp.clone(),
            textual: TextualPrototypeSet::new(initial_textual),
            cache: PrototypeCache::new(n_classes, hp),
            pairs: BTreeMap::new(),
            step: 0,
            dim,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.textual.len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn textual(&self) -> &TextualPrototypeSet {
        &self.textual
    }

    pub fn cache(&self) -> &PrototypeCache {
        &self.cache
    }

    pub fn pairs(&self) -> &BTreeMap<usize, HardNegativePair> {
        &self.pairs
    }

    fn refresh_pairs(&mut self) {
        let visual: BTreeMap<usize, EmbeddingVector> = self
            .cache
            .active_classes()
            .into_iter()
            .map(|c| (c, self.cache.visual_prototype(c).expect("active").clone()))
            .collect();
        match mine_hard_negatives(&visual, self.textual.protos(), self.step) {
            Ok(pairs) => self.pairs = pairs,
            Err(NclError::InsufficientClasses { .. }) => self.pairs = BTreeMap::new(),
            Err(NclError::EmptyActiveSet) => self.pairs = BTreeMap::new(),
        }
    }

    /// Interpolate an inactive class's textual prototype with its most
    /// similar active visual prototype and admit the result under a
    /// sentinel entropy. Default-off reconstruction of rare-class feature
    /// synthesis; active only behind the `rejuvenation_synthesis` flag.
    fn synthesize_for_inactive(&mut self) -> Result<(), EngineError> {
        for c in 0..self.n_classes() {
            let class = self.cache.class(c)?;
            if !crate::cache::is_inactive(
                self.step,
                class.last_update_step(),
                class.activation_count(),
                self.hp.eta,
            ) {
                continue;
            }
            let t_c = self.textual.proto(c);
            let mut best: Option<(usize, f64)> = None;
            for j in self.cache.active_classes() {
                if j == c {
                    continue;
                }
                let cos = t_c.dot(self.cache.visual_prototype(j).expect("active"));
                if best.is_none_or(|(_, s)| cos > s) {
                    best = Some((j, cos));
                }
            }
            let Some((neighbor, _)) = best else { continue };
            let v_n = self.cache.visual_prototype(neighbor).expect("active");
            let raw: Vec<f64> = t_c
                .as_slice()
                .iter()
                .zip(v_n.as_slice())
                .map(|(&a, &b)| 0.5 * a + 0.5 * b)
                .collect();
            if let Ok(feature) = EmbeddingVector::normalize(&raw) {
                self.cache.admit_synthetic(&feature, c, self.step)?;
            }
        }
        Ok(())
    }

    /// Process one record: predict, refresh negatives on stride, adapt the
    /// textual prototypes, admit the canonical view, advance the clock.
    pub fn process_sample(&mut self, record: &StreamRecord) -> Result<PredictionReport, EngineError> {
        if record.views.is_empty() {
            return Err(EngineError::NoViews {
                sample_id: record.sample_id,
            });
        }
        for view in &record.views {
            if view.dim() != self.dim {
                return Err(EngineError::DimensionMismatch {
                    expected: self.dim,
                    got: view.dim(),
                });
            }
        }
        if let Some(label) = record.true_label {
            if label >= self.n_classes() {
                return Err(EngineError::UnknownLabel {
                    label,
                    n_classes: self.n_classes(),
                });
            }
        }

        // (1) Predict before any update.
        let (probabilities, sample_entropy) =
            aggregate_views(&record.views, &self.textual, &self.cache, &self.hp)?;
        let pseudo_label = probabilities.argmax();

        // (2) Periodic hard-negative refresh, aligned to the sample count.
        if self.step.is_multiple_of(self.hp.ncl_refresh_stride) {
            self.refresh_pairs();
        }

        // (3) Textual refinement. The recorded breakdown is the pre-update
        // loss, matching the pre-update prediction above.
        let loss = total_loss(
            &record.views,
            &self.textual,
            &self.cache,
            &self.pairs,
            &self.hp,
        )?;
        for _ in 0..self.hp.steps_per_sample {
            let grad = grad_textual(
                &record.views,
                &self.textual,
                &self.cache,
                &self.pairs,
                &self.hp,
            )?;
            optimizer_step(
                &mut self.textual,
                &grad,
                self.hp.lr,
                self.hp.beta1,
                self.hp.beta2,
                self.hp.eps_opt,
                self.hp.weight_decay,
            )?;
        }

        // (4) Entropy-gated admission of the canonical view.
        let admit_outcome =
            self.cache
                .admit(&record.views[0], pseudo_label, sample_entropy, self.step)?;
        let capacity = self.cache.total_capacity(pseudo_label, self.step)?;

        if self.hp.rejuvenation_synthesis {
            self.synthesize_for_inactive()?;
        }

        // (5) Advance the global clock.
        self.step += 1;

        Ok(PredictionReport {
            sample_id: record.sample_id,
            probabilities,
            pseudo_label,
            sample_entropy,
            admit_outcome,
            true_label: record.true_label,
            loss,
            capacity,
        })
    }
}

/// Per-class roll-up at stream end.
#[derive(Debug, Clone)]
pub struct ClassStat {
    pub class_id: usize,
    pub true_count: u64,
    pub correct: u64,
    pub activation_count: u64,
    pub entry_count: usize,
    pub last_update_step: Option<u64>,
    pub capacity: CapacityDecision,
    pub admission_entropies: Vec<f64>,
    pub inactive_at_end: bool,
}

/// Final mined negatives with their similarities and per-class penalty.
#[derive(Debug, Clone)]
pub struct PairDiagnostic {
    pub class_id: usize,
    pub visual_neg: usize,
    pub textual_neg: usize,
    pub cos_visual: f64,
    pub cos_textual: f64,
    pub class_loss: f64,
}

/// Per-class total capacities sampled at one step.
#[derive(Debug, Clone)]
pub struct CapacityCheckpoint {
    pub step: u64,
    pub totals: Vec<usize>,
}

/// Aggregated results of a whole-stream run.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub reports: Vec<PredictionReport>,
    pub n_samples: u64,
    pub n_labeled: u64,
    pub n_correct: u64,
    pub accuracy: Option<f64>,
    pub dead_class_count: usize,
    pub tail_classes: Vec<usize>,
    pub tail_retention: Option<f64>,
    pub tail_accuracy: Option<f64>,
    pub class_stats: Vec<ClassStat>,
    pub pair_diagnostics: Vec<PairDiagnostic>,
    pub capacity_checkpoints: Vec<CapacityCheckpoint>,
    pub resolved_entropy_gate: f64,
}

/// Bottom-quintile classes by true-label frequency, ties toward the lower
/// class index. Empty when the stream carries no labels.
pub fn bottom_quintile_classes(true_counts: &[u64]) -> Vec<usize> {
    let n_classes = true_counts.len();
    if n_classes == 0 {
        return Vec::new();
    }
    let n_tail = n_classes.div_ceil(5);
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by_key(|&c| (true_counts[c], c));
    let mut tail: Vec<usize> = order.into_iter().take(n_tail).collect();
    tail.sort_unstable();
    tail
}

/// Sequential fold of `process_sample` over a stream, aggregating accuracy,
/// tail metrics, dead-class statistics, and capacity trajectories.
pub fn run_session(
    stream: &[StreamRecord],
    hp: &HyperParams,
    initial_textual: Vec<EmbeddingVector>,
) -> Result<SessionOutcome, EngineError> {
    let mut session = Session::new(hp, initial_textual)?;
    let n_classes = session.n_classes();
    let mut reports = Vec::with_capacity(stream.len());
    let mut true_counts = vec![0u64; n_classes];
    let mut correct_counts = vec![0u64; n_classes];
    let mut checkpoints = Vec::new();
    let checkpoint_stride = (stream.len() / 8).max(1) as u64;

    for record in stream {
        let report = session.process_sample(record)?;
        if let Some(label) = record.true_label {
            true_counts[label] += 1;
            if report.pseudo_label == label {
                correct_counts[label] += 1;
            }
        }
        reports.push(report);
        if session.step % checkpoint_stride == 0 || session.step == stream.len() as u64 {
            let totals = (0..n_classes)
                .map(|c| session.cache.total_capacity(c, session.step).map(|d| d.total))
                .collect::<Result<Vec<_>, _>>()?;
            checkpoints.push(CapacityCheckpoint {
                step: session.step,
                totals,
            });
        }
    }

    let t_end = session.step;
    let n_labeled: u64 = true_counts.iter().sum();
    let n_correct: u64 = correct_counts.iter().sum();
    let accuracy = (n_labeled > 0).then(|| n_correct as f64 / n_labeled as f64);

    let mut class_stats = Vec::with_capacity(n_classes);
    let mut dead_class_count = 0;
    for c in 0..n_classes {
        let class = session.cache.class(c)?;
        let inactive = crate::cache::is_inactive(
            t_end,
            class.last_update_step(),
            class.activation_count(),
            hp.eta,
        );
        if inactive {
            dead_class_count += 1;
        }
        class_stats.push(ClassStat {
            class_id: c,
            true_count: true_counts[c],
            correct: correct_counts[c],
            activation_count: class.activation_count(),
            entry_count: class.entries().len(),
            last_update_step: class.last_update_step(),
            capacity: session.cache.total_capacity(c, t_end)?,
            admission_entropies: class
                .entries()
                .iter()
                .map(|e| e.admission_entropy)
                .collect(),
            inactive_at_end: inactive,
        });
    }

    let (tail_classes, tail_retention, tail_accuracy) = if n_labeled > 0 {
        let tail = bottom_quintile_classes(&true_counts);
        let retained = tail
            .iter()
            .filter(|&&c| class_stats[c].entry_count > 0)
            .count();
        let retention = retained as f64 / tail.len() as f64;
        let scored: Vec<f64> = tail
            .iter()
            .filter(|&&c| true_counts[c] > 0)
            .map(|&c| correct_counts[c] as f64 / true_counts[c] as f64)
            .collect();
        let acc = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
        (tail, Some(retention), acc)
    } else {
        (Vec::new(), None, None)
    };

    let pair_diagnostics = session
        .pairs
        .values()
        .map(|pair| {
            let v_c = session.cache.visual_prototype(pair.class_id).expect("active");
            let v_neg = session
                .cache
                .visual_prototype(pair.visual_neg)
                .expect("active");
            let t_c = session.textual.proto(pair.class_id);
            let t_neg = session.textual.proto(pair.textual_neg);
            PairDiagnostic {
                class_id: pair.class_id,
                visual_neg: pair.visual_neg,
                textual_neg: pair.textual_neg,
                cos_visual: v_c.dot(v_neg),
                cos_textual: t_c.dot(t_neg),
                class_loss: ncl_loss_class(v_c, t_c, v_neg, t_neg, hp.tau),
            }
        })
        .collect();

    Ok(SessionOutcome {
        reports,
        n_samples: stream.len() as u64,
        n_labeled,
        n_correct,
        accuracy,
        dead_class_count,
        tail_classes,
        tail_retention,
        tail_accuracy,
        class_stats,
        pair_diagnostics,
        capacity_checkpoints: checkpoints,
        resolved_entropy_gate: session.cache.entropy_gate(),
    })
}
