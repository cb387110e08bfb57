//! Class-aware prototype cache: per-class bounded embedding stores with
//! frequency-aware capacity, inactivity detection, rejuvenation boosts,
//! entropy-gated admission, and cache-affinity scoring.
//!
//! Capacity is a pure function of the current activation statistics, so a
//! class's budget grows the moment it goes quiet and snaps back after its
//! next admission. Shrinking is reconciled lazily at admission time for the
//! admitted class only.

use crate::config::{FrequencyMode, HyperParams};
use crate::numerics::EmbeddingVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("unknown class {class_id} (session has {n_classes} classes)")]
    UnknownClass { class_id: usize, n_classes: usize },
    #[error("rejuvenation boost requested for a class that is not inactive")]
    NotInactive,
}

/// One admitted embedding plus the statistics that govern its eviction.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub embedding: EmbeddingVector,
    pub admission_entropy: f64,
    pub admission_step: u64,
}

/// Per-class bounded store plus activation statistics (N_c, t_c).
#[derive(Debug, Clone)]
pub struct ClassCache {
    pub class_id: usize,
    entries: Vec<CacheEntry>,
    /// Cumulative pseudo-label assignments to this class (N_c).
    activation_count: u64,
    /// Step of the most recent admission (t_c), `None` if never admitted.
    last_update_step: Option<u64>,
    /// Normalized mean of `entries`, refreshed on every mutation.
    prototype: Option<EmbeddingVector>,
}

impl ClassCache {
    fn new(class_id: usize) -> Self {
        Self {
            class_id,
            entries: Vec::new(),
            activation_count: 0,
            last_update_step: None,
            prototype: None,
        }
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn activation_count(&self) -> u64 {
        self.activation_count
    }

    pub fn last_update_step(&self) -> Option<u64> {
        self.last_update_step
    }

    fn refresh_prototype(&mut self) {
        if self.entries.is_empty() {
            self.prototype = None;
            return;
        }
        let d = self.entries[0].embedding.dim();
        let mut mean = vec![0.0f64; d];
        for entry in &self.entries {
            for (m, &x) in mean.iter_mut().zip(entry.embedding.as_slice()) {
                *m += x;
            }
        }
        let n = self.entries.len() as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        // A mean of unit vectors can only vanish for exactly antipodal
        // contents; treat that as no evidence.
        self.prototype = EmbeddingVector::normalize(&mean).ok();
    }

    /// Index of the eviction victim: highest admission entropy, ties broken
    /// toward the most recent admission so earlier arrivals win.
    fn worst_index(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                (a.admission_entropy, a.admission_step)
                    .partial_cmp(&(b.admission_entropy, b.admission_step))
                    .expect("admission entropies are finite")
            })
            .map(|(i, _)| i)
    }
}

/// The capacity ruling for one class at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityDecision {
    /// Base capacity M_c from frequency suppression.
    pub base: usize,
    /// Rejuvenation boost; zero unless the class is inactive.
    pub boost: usize,
    /// base + boost.
    pub total: usize,
    /// Relative activation frequency p_c used for the ruling.
    pub p_c: f64,
    /// Suppression value φ(p_c).
    pub phi: f64,
}

/// What happened to a sample offered for admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmitOutcome {
    Inserted,
    ReplacedWorst,
    RejectedGate,
    RejectedFull,
}

/// Relative activation frequency p_c = N_c / N_total for every class.
/// With no history yet, falls back to the uniform 1/C.
pub fn activation_frequency(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let c = counts.len() as f64;
        return vec![1.0 / c; counts.len()];
    }
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}

/// Non-linear frequency suppression φ(p_c) = tanh(−ln(p_c + ε)/s).
/// Strictly decreasing in p_c; ε keeps the logarithm finite at p_c = 0.
pub fn suppression(p_c: f64, epsilon: f64, s: f64) -> f64 {
    (-(p_c + epsilon).ln() / s).tanh()
}

/// Base capacity M_c = min(M_max, max(1, ⌈M·(1 + γ·φ(p_c))⌉)).
pub fn base_capacity(
    p_c: f64,
    m_base: usize,
    gamma: f64,
    m_max: usize,
    epsilon: f64,
    s: f64,
) -> usize {
    let phi = suppression(p_c, epsilon, s);
    let scaled = (m_base as f64 * (1.0 + gamma * phi)).ceil();
    let clamped_low = scaled.max(1.0) as usize;
    clamped_low.min(m_max).max(1)
}

/// Inactivity test: t − t_c > η. A class pseudo-labeled at least once but
/// never admitted counts as inactive once t > η; a class with no label
/// history at all has nothing to rejuvenate and is never inactive.
pub fn is_inactive(t: u64, t_c: Option<u64>, activation_count: u64, eta: u64) -> bool {
    match t_c {
        Some(tc) => t.saturating_sub(tc) > eta,
        None => activation_count > 0 && t > eta,
    }
}

/// Frequency-decayed capacity boost ⌈δ·e^(−α·p_c)·(t − t_c)/η⌉ for an
/// inactive class. The caller gates on the inactivity test; calling this
/// for an active class signals a gating bug upstream.
pub fn rejuvenation_boost(
    p_c: f64,
    t: u64,
    t_c: Option<u64>,
    activation_count: u64,
    delta: f64,
    alpha_decay: f64,
    eta: u64,
) -> Result<usize, CacheError> {
    if !is_inactive(t, t_c, activation_count, eta) {
        return Err(CacheError::NotInactive);
    }
    let elapsed = t - t_c.unwrap_or(0);
    let raw = delta * (-alpha_decay * p_c).exp() * (elapsed as f64 / eta as f64);
    Ok(raw.ceil() as usize)
}

/// The full per-class cache: C class stores sharing one admission gate.
#[derive(Debug, Clone)]
pub struct PrototypeCache {
    classes: Vec<ClassCache>,
    entropy_gate: f64,
    params: HyperParams,
}

impl PrototypeCache {
    pub fn new(n_classes: usize, params: &HyperParams) -> Self {
        Self {
            classes: (0..n_classes).map(ClassCache::new).collect(),
            entropy_gate: params.resolved_entropy_gate(n_classes),
            params: params.clone(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn entropy_gate(&self) -> f64 {
        self.entropy_gate
    }

    pub fn class(&self, class_id: usize) -> Result<&ClassCache, CacheError> {
        self.classes.get(class_id).ok_or(CacheError::UnknownClass {
            class_id,
            n_classes: self.classes.len(),
        })
    }

    /// Activation counts per class under the configured frequency mode.
    pub fn frequency_counts(&self) -> Vec<u64> {
        match self.params.frequency_mode {
            FrequencyMode::Cumulative => {
                self.classes.iter().map(|c| c.activation_count).collect()
            }
            FrequencyMode::Occupancy => self
                .classes
                .iter()
                .map(|c| c.entries.len() as u64)
                .collect(),
        }
    }

    /// Capacity ruling for one class at step `t`, composing suppression,
    /// base capacity, the inactivity gate, and the rejuvenation boost.
    pub fn total_capacity(&self, class_id: usize, t: u64) -> Result<CapacityDecision, CacheError> {
        let class = self.class(class_id)?;
        let p = activation_frequency(&self.frequency_counts())[class_id];
        let phi = suppression(p, self.params.epsilon, self.params.s);
        let base = base_capacity(
            p,
            self.params.m_base,
            self.params.gamma,
            self.params.m_max,
            self.params.epsilon,
            self.params.s,
        );
        let boost = if is_inactive(t, class.last_update_step, class.activation_count, self.params.eta)
        {
            rejuvenation_boost(
                p,
                t,
                class.last_update_step,
                class.activation_count,
                self.params.delta,
                self.params.alpha_decay,
                self.params.eta,
            )?
        } else {
            0
        };
        Ok(CapacityDecision {
            base,
            boost,
            total: base + boost,
            p_c: p,
            phi,
        })
    }

    /// Offer one embedding for admission under its pseudo-label.
    ///
    /// The activation count advances unconditionally; samples above the
    /// entropy gate leave the stored entries untouched. Below the gate the
    /// class is first reconciled to its current capacity, then the sample is
    /// inserted, replaces the worst entry (strictly lower entropy required),
    /// or is turned away.
    pub fn admit(
        &mut self,
        embedding: &EmbeddingVector,
        pseudo_label: usize,
        sample_entropy: f64,
        step: u64,
    ) -> Result<AdmitOutcome, CacheError> {
        if pseudo_label >= self.classes.len() {
            return Err(CacheError::UnknownClass {
                class_id: pseudo_label,
                n_classes: self.classes.len(),
            });
        }
        self.classes[pseudo_label].activation_count += 1;
        if sample_entropy > self.entropy_gate {
            return Ok(AdmitOutcome::RejectedGate);
        }
        let decision = self.total_capacity(pseudo_label, step)?;
        self.shrink_class_to(pseudo_label, decision.total);
        let class = &mut self.classes[pseudo_label];
        let outcome = if class.entries.len() < decision.total {
            class.entries.push(CacheEntry {
                embedding: embedding.clone(),
                admission_entropy: sample_entropy,
                admission_step: step,
            });
            class.last_update_step = Some(step);
            AdmitOutcome::Inserted
        } else {
            let worst = class.worst_index().expect("capacity >= 1 implies entries");
            if sample_entropy < class.entries[worst].admission_entropy {
                class.entries[worst] = CacheEntry {
                    embedding: embedding.clone(),
                    admission_entropy: sample_entropy,
                    admission_step: step,
                };
                class.last_update_step = Some(step);
                AdmitOutcome::ReplacedWorst
            } else {
                AdmitOutcome::RejectedFull
            }
        };
        if outcome != AdmitOutcome::RejectedFull {
            self.classes[pseudo_label].refresh_prototype();
        }
        Ok(outcome)
    }

    /// Normalized mean of the class's cached embeddings, or `None` when the
    /// class holds no evidence yet.
    pub fn visual_prototype(&self, class_id: usize) -> Option<&EmbeddingVector> {
        self.classes
            .get(class_id)
            .and_then(|c| c.prototype.as_ref())
    }

    /// Class ids that currently hold a visual prototype, ascending.
    pub fn active_classes(&self) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| c.prototype.is_some())
            .map(|c| c.class_id)
            .collect()
    }

    /// Cache affinity score α·exp(−β·(1 − cos(f_v, v_c))); zero without
    /// cached evidence.
    pub fn cache_score(
        &self,
        f_v: &EmbeddingVector,
        class_id: usize,
        alpha_fuse: f64,
        beta_fuse: f64,
    ) -> f64 {
        match self.visual_prototype(class_id) {
            Some(proto) => alpha_fuse * (-beta_fuse * (1.0 - f_v.dot(proto))).exp(),
            None => 0.0,
        }
    }

    /// Evict highest-entropy entries until the class fits its current
    /// capacity at step `t`. Returns the number evicted.
    pub fn shrink_to_capacity(&mut self, class_id: usize, t: u64) -> Result<usize, CacheError> {
        let decision = self.total_capacity(class_id, t)?;
        Ok(self.shrink_class_to(class_id, decision.total))
    }

    fn shrink_class_to(&mut self, class_id: usize, capacity: usize) -> usize {
        let class = &mut self.classes[class_id];
        let mut evicted = 0;
        while class.entries.len() > capacity {
            let worst = class.worst_index().expect("non-empty while over capacity");
            class.entries.swap_remove(worst);
            evicted += 1;
        }
        if evicted > 0 {
            class.refresh_prototype();
        }
        evicted
    }

    /// Admit a synthetic feature for an inactive class, bypassing the gate
    /// with a sentinel entropy equal to the gate itself. Used only by the
    /// optional rejuvenation-synthesis path.
    pub(crate) fn admit_synthetic(
        &mut self,
        embedding: &EmbeddingVector,
        class_id: usize,
        step: u64,
    ) -> Result<AdmitOutcome, CacheError> {
        let sentinel = self.entropy_gate;
        if class_id >= self.classes.len() {
            return Err(CacheError::UnknownClass {
                class_id,
                n_classes: self.classes.len(),
            });
        }
        let decision = self.total_capacity(class_id, step)?;
        self.shrink_class_to(class_id, decision.total);
        let class = &mut self.classes[class_id];
        let outcome = if class.entries.len() < decision.total {
            class.entries.push(CacheEntry {
                embedding: embedding.clone(),
                admission_entropy: sentinel,
                admission_step: step,
            });
            class.last_update_step = Some(step);
            AdmitOutcome::Inserted
        } else {
            let worst = class.worst_index().expect("capacity >= 1");
            if sentinel < class.entries[worst].admission_entropy {
                class.entries[worst] = CacheEntry {
                    embedding: embedding.clone(),
                    admission_entropy: sentinel,
                    admission_step: step,
                };
                class.last_update_step = Some(step);
                AdmitOutcome::ReplacedWorst
            } else {
                AdmitOutcome::RejectedFull
            }
        };
        if outcome != AdmitOutcome::RejectedFull {
            self.classes[class_id].refresh_prototype();
        }
        Ok(outcome)
    }
}
