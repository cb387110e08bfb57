//! Hard-negative mining over visual and textual prototypes and the
//! per-class / aggregate InfoNCE penalty built from the mined pairs.
//!
//! For each active class the most similar *wrong* prototype is selected in
//! each modality; the loss then contrasts the matched visual-textual pair
//! against those two confusers. Selection is argmax, so gradients flow only
//! through the chosen vectors, never through the choice.

use crate::numerics::{log_sum_exp, EmbeddingVector};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NclError {
    #[error("hard-negative mining needs at least 2 active classes, found {found}")]
    InsufficientClasses { found: usize },
    #[error("no active classes contribute a contrastive term")]
    EmptyActiveSet,
}

/// The mined confusers for one anchor class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardNegativePair {
    pub class_id: usize,
    /// Class whose visual prototype is most similar to the anchor's.
    pub visual_neg: usize,
    /// Class whose textual prototype is most similar to the anchor's.
    pub textual_neg: usize,
    pub refreshed_at: u64,
}

/// Mine the most-similar negative prototype per modality for every active
/// class. Classes without a visual prototype are excluded from both anchor
/// and candidate roles. Ties break toward the lowest class index.
pub fn mine_hard_negatives(
    visual_protos: &BTreeMap<usize, EmbeddingVector>,
    textual_protos: &[EmbeddingVector],
    refreshed_at: u64,
) -> Result<BTreeMap<usize, HardNegativePair>, NclError> {
    let eligible: Vec<usize> = visual_protos.keys().copied().collect();
    if eligible.len() < 2 {
        return Err(NclError::InsufficientClasses {
            found: eligible.len(),
        });
    }
    let mut pairs = BTreeMap::new();
    for &c in &eligible {
        let v_c = &visual_protos[&c];
        let t_c = &textual_protos[c];
        let mut best_visual: Option<(usize, f64)> = None;
        let mut best_textual: Option<(usize, f64)> = None;
        for &j in &eligible {
            if j == c {
                continue;
            }
            let cos_v = v_c.dot(&visual_protos[&j]);
            if best_visual.is_none_or(|(_, s)| cos_v > s) {
                best_visual = Some((j, cos_v));
            }
            let cos_t = t_c.dot(&textual_protos[j]);
            if best_textual.is_none_or(|(_, s)| cos_t > s) {
                best_textual = Some((j, cos_t));
            }
        }
        pairs.insert(
            c,
            HardNegativePair {
                class_id: c,
                visual_neg: best_visual.expect("eligible.len() >= 2").0,
                textual_neg: best_textual.expect("eligible.len() >= 2").0,
                refreshed_at,
            },
        );
    }
    Ok(pairs)
}

/// Per-class contrastive penalty: the matched pair against the two mined
/// confusers, max-stabilized.
pub fn ncl_loss_class(
    v_c: &EmbeddingVector,
    t_c: &EmbeddingVector,
    v_neg: &EmbeddingVector,
    t_neg: &EmbeddingVector,
    tau: f64,
) -> f64 {
    let pos = v_c.dot(t_c) / tau;
    let neg_t = v_c.dot(t_neg) / tau;
    let neg_v = v_neg.dot(t_c) / tau;
    log_sum_exp(&[pos, neg_t, neg_v]) - pos
}

/// Mean per-class penalty over the classes carrying a mined pair. Every
/// referenced class must still expose a visual prototype (pairs are only
/// mined among active classes, and active classes stay active).
pub fn ncl_loss_total(
    visual_protos: &BTreeMap<usize, EmbeddingVector>,
    textual_protos: &[EmbeddingVector],
    pairs: &BTreeMap<usize, HardNegativePair>,
    tau: f64,
) -> Result<f64, NclError> {
    if pairs.is_empty() {
        return Err(NclError::EmptyActiveSet);
    }
    let mut sum = 0.0;
    for (&c, pair) in pairs {
        let v_c = &visual_protos[&c];
        let t_c = &textual_protos[c];
        let v_neg = &visual_protos[&pair.visual_neg];
        let t_neg = &textual_protos[pair.textual_neg];
        sum += ncl_loss_class(v_c, t_c, v_neg, t_neg, tau);
    }
    Ok(sum / pairs.len() as f64)
}
