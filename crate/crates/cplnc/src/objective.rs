//! The composite adaptation objective: augmented-view entropy, cross-modal
//! prototype alignment, and the negative-contrast penalty, with analytic
//! gradients taken with respect to the textual prototypes only.
//!
//! Asymmetry is structural: visual prototypes, cache contents, and mined
//! negative indices are constants of the differentiation. Losses are
//! computed with raw dot products, which coincide with cosine similarity on
//! unit inputs; gradients therefore live on the ambient (pre-renormalization)
//! parameters, and each optimizer step renormalizes afterwards.

use crate::cache::PrototypeCache;
use crate::config::{AugPrediction, HyperParams};
use crate::ncl::{ncl_loss_class, HardNegativePair};
use crate::numerics::{entropy, softmax, EmbeddingVector, ProbabilityVector};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("no views supplied for this sample")]
    NoViews,
    #[error("shape mismatch: state is {expected_classes}x{expected_dim}, gradient is {got_classes}x{got_dim}")]
    ShapeMismatch {
        expected_classes: usize,
        expected_dim: usize,
        got_classes: usize,
        got_dim: usize,
    },
    #[error("no active classes contribute to the alignment loss")]
    EmptyActiveSet,
    #[error("prototype {class_id} collapsed to zero norm during optimization")]
    DegeneratePrototype { class_id: usize },
}

/// The refined textual prototypes plus their optimizer moments.
#[derive(Debug, Clone)]
pub struct TextualPrototypeSet {
    protos: Vec<EmbeddingVector>,
    moments_m: Vec<Vec<f64>>,
    moments_v: Vec<Vec<f64>>,
    step_count: u64,
}

impl TextualPrototypeSet {
    pub fn new(protos: Vec<EmbeddingVector>) -> Self {
        let c = protos.len();
        let d = protos.first().map_or(0, |p| p.dim());
        Self {
            protos,
            moments_m: vec![vec![0.0; d]; c],
            moments_v: vec![vec![0.0; d]; c],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.protos.first().map_or(0, |p| p.dim())
    }

    pub fn proto(&self, class_id: usize) -> &EmbeddingVector {
        &self.protos[class_id]
    }

    pub fn protos(&self) -> &[EmbeddingVector] {
        &self.protos
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Copy with one raw coordinate displaced and *no* renormalization.
    /// This is the probe used by finite-difference gradient checks, which
    /// are specified on the ambient parameters.
    pub fn nudged(&self, class_id: usize, coord: usize, delta: f64) -> Self {
        let mut out = self.clone();
        let mut raw = out.protos[class_id].as_slice().to_vec();
        raw[coord] += delta;
        out.protos[class_id] = EmbeddingVector::from_unit_unchecked(raw);
        out
    }
}

/// Per-class gradient of the total loss with respect to each textual
/// prototype. Rows are zero exactly for classes touched by no loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    rows: Vec<Vec<f64>>,
}

impl GradientMatrix {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            rows: vec![vec![0.0; dim]; n_classes],
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, class_id: usize) -> &[f64] {
        &self.rows[class_id]
    }
}

/// The three loss components and their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_aug: f64,
    pub l_align: f64,
    pub l_ncl: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Logits for one view: textual affinity plus (in fused mode) the cache
/// affinity score per class.
pub(crate) fn view_logits(
    view: &EmbeddingVector,
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    hp: &HyperParams,
    mode: AugPrediction,
) -> Vec<f64> {
    (0..textual.len())
        .map(|c| {
            let text_term = view.dot(textual.proto(c));
            match mode {
                AugPrediction::Fused => {
                    text_term + cache.cache_score(view, c, hp.alpha_fuse, hp.beta_fuse)
                }
                AugPrediction::Textual => text_term,
            }
        })
        .collect()
}

/// Indices of the views retained by the confidence filter, ascending.
///
/// Views with entropy above the threshold are dropped; of the survivors the
/// top-ρ fraction by confidence (lowest entropy) is kept. If nothing
/// survives the threshold, the single most confident view stands in.
pub(crate) fn select_confident_views(
    entropies: &[f64],
    rho: f64,
    entropy_threshold: f64,
) -> Vec<usize> {
    let mut passing: Vec<usize> = (0..entropies.len())
        .filter(|&i| entropies[i] <= entropy_threshold)
        .collect();
    if passing.is_empty() {
        let mut best = 0;
        for i in 1..entropies.len() {
            if entropies[i] < entropies[best] {
                best = i;
            }
        }
        return vec![best];
    }
    passing.sort_by(|&a, &b| {
        (entropies[a], a)
            .partial_cmp(&(entropies[b], b))
            .expect("entropies are finite")
    });
    let keep = ((rho * passing.len() as f64) + 1e-9).floor() as usize;
    passing.truncate(keep.max(1));
    passing.sort_unstable();
    passing
}

/// Mean of the selected per-view distributions plus the selected indices.
fn aggregate_distributions(per_view: &[Vec<f64>], selected: &[usize]) -> Vec<f64> {
    let c = per_view[0].len();
    let mut mean = vec![0.0; c];
    for &n in selected {
        for (m, &p) in mean.iter_mut().zip(&per_view[n]) {
            *m += p;
        }
    }
    let k = selected.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    mean
}

/// Entropy of the confidence-filtered average prediction over augmented
/// views, with an arbitrary per-view predictor.
pub fn aug_entropy_loss<F>(
    views: &[EmbeddingVector],
    predict: F,
    rho: f64,
    entropy_threshold: f64,
) -> Result<f64, ObjectiveError>
where
    F: Fn(&EmbeddingVector) -> ProbabilityVector,
{
    if views.is_empty() {
        return Err(ObjectiveError::NoViews);
    }
    let per_view: Vec<Vec<f64>> = views.iter().map(|v| predict(v).as_slice().to_vec()).collect();
    let entropies: Vec<f64> = per_view
        .iter()
        .map(|p| entropy(&ProbabilityVector::from_softmax_unchecked(p.clone())))
        .collect();
    let selected = select_confident_views(&entropies, rho, entropy_threshold);
    let mean = aggregate_distributions(&per_view, &selected);
    Ok(entropy(&ProbabilityVector::from_softmax_unchecked(mean)))
}

/// Cross-modal alignment: class-mean InfoNCE with the textual prototype as
/// anchor, its own visual prototype as positive, and every other active
/// visual prototype as negative.
pub fn align_loss(
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    tau: f64,
) -> Result<f64, ObjectiveError> {
    let eligible = cache.active_classes();
    if eligible.is_empty() {
        return Err(ObjectiveError::EmptyActiveSet);
    }
    let mut sum = 0.0;
    for &c in &eligible {
        let t_c = textual.proto(c);
        let scores: Vec<f64> = eligible
            .iter()
            .map(|&j| t_c.dot(cache.visual_prototype(j).expect("active class")) / tau)
            .collect();
        let own = t_c.dot(cache.visual_prototype(c).expect("active class")) / tau;
        sum += crate::numerics::log_sum_exp(&scores) - own;
    }
    Ok(sum / eligible.len() as f64)
}

/// Per-view distributions and entropies under the configured prediction
/// mode; shared by the loss value and its gradient so the selection mask is
/// identical in both.
fn per_view_predictions(
    views: &[EmbeddingVector],
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    hp: &HyperParams,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let per_view: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let logits = view_logits(v, textual, cache, hp, hp.aug_prediction);
            softmax(&logits, hp.tau)
                .expect("finite logits")
                .as_slice()
                .to_vec()
        })
        .collect();
    let entropies = per_view
        .iter()
        .map(|p| entropy(&ProbabilityVector::from_softmax_unchecked(p.clone())))
        .collect();
    (per_view, entropies)
}

/// Total objective for one sample. Components with a zero weight are
/// skipped entirely, so their inputs cannot influence any output.
pub fn total_loss(
    views: &[EmbeddingVector],
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    pairs: &BTreeMap<usize, HardNegativePair>,
    hp: &HyperParams,
) -> Result<LossBreakdown, ObjectiveError> {
    if views.is_empty() {
        return Err(ObjectiveError::NoViews);
    }
    let (per_view, entropies) = per_view_predictions(views, textual, cache, hp);
    let selected = select_confident_views(&entropies, hp.rho, hp.entropy_threshold);
    let mean = aggregate_distributions(&per_view, &selected);
    let l_aug = entropy(&ProbabilityVector::from_softmax_unchecked(mean));

    let l_align = if hp.lambda1 != 0.0 {
        match align_loss(textual, cache, hp.tau) {
            Ok(v) => v,
            Err(ObjectiveError::EmptyActiveSet) => 0.0,
            Err(e) => return Err(e),
        }
    } else {
        0.0
    };

    let l_ncl = if hp.lambda2 != 0.0 && !pairs.is_empty() {
        let mut sum = 0.0;
        for (&c, pair) in pairs {
            let v_c = cache.visual_prototype(c).expect("paired class is active");
            let v_neg = cache
                .visual_prototype(pair.visual_neg)
                .expect("paired negative is active");
            sum += ncl_loss_class(
                v_c,
                textual.proto(c),
                v_neg,
                textual.proto(pair.textual_neg),
                hp.tau,
            );
        }
        sum / pairs.len() as f64
    } else {
        0.0
    };

    Ok(LossBreakdown {
        l_aug,
        l_align,
        l_ncl,
        total: l_aug + hp.lambda1 * l_align + hp.lambda2 * l_ncl,
        lambda1: hp.lambda1,
        lambda2: hp.lambda2,
    })
}

/// Analytic gradient of `total_loss` with respect to each textual
/// prototype, holding visual prototypes, cache contents, the view-selection
/// mask, and the mined negative indices fixed.
pub fn grad_textual(
    views: &[EmbeddingVector],
    textual: &TextualPrototypeSet,
    cache: &PrototypeCache,
    pairs: &BTreeMap<usize, HardNegativePair>,
    hp: &HyperParams,
) -> Result<GradientMatrix, ObjectiveError> {
    if views.is_empty() {
        return Err(ObjectiveError::NoViews);
    }
    let n_classes = textual.len();
    let dim = textual.dim();
    let mut grad = vec![vec![0.0; dim]; n_classes];

    // Entropy of the averaged selected predictions. Writing w_c = ln p̄_c + 1,
    // dL/dT_k = Σ_{n in S} P^n_k (⟨w, P^n⟩ − w_k) / (|S| τ) · x_n.
    let (per_view, entropies) = per_view_predictions(views, textual, cache, hp);
    let selected = select_confident_views(&entropies, hp.rho, hp.entropy_threshold);
    let mean = aggregate_distributions(&per_view, &selected);
    let w: Vec<f64> = mean
        .iter()
        .map(|&p| if p > 0.0 { p.ln() + 1.0 } else { 0.0 })
        .collect();
    let k_sel = selected.len() as f64;
    for &n in &selected {
        let pn = &per_view[n];
        let inner: f64 = w.iter().zip(pn).map(|(a, b)| a * b).sum();
        let x = views[n].as_slice();
        for c in 0..n_classes {
            let coef = pn[c] * (inner - w[c]) / (k_sel * hp.tau);
            if coef != 0.0 {
                for (g, &xj) in grad[c].iter_mut().zip(x) {
                    *g += coef * xj;
                }
            }
        }
    }

    // Alignment: softmax over active visual prototypes per anchor,
    // dL/dT_c = λ1/(K τ) (Σ_j σ_cj v_j − v_c).
    if hp.lambda1 != 0.0 {
        let eligible = cache.active_classes();
        if !eligible.is_empty() {
            let k_e = eligible.len() as f64;
            for &c in &eligible {
                let t_c = textual.proto(c);
                let scores: Vec<f64> = eligible
                    .iter()
                    .map(|&j| t_c.dot(cache.visual_prototype(j).expect("active")) / hp.tau)
                    .collect();
                let sigma = softmax(&scores, 1.0).expect("finite scores");
                let scale = hp.lambda1 / (k_e * hp.tau);
                for (jj, &j) in eligible.iter().enumerate() {
                    let coef = scale * sigma.as_slice()[jj];
                    let v_j = cache.visual_prototype(j).expect("active").as_slice();
                    for (g, &vj) in grad[c].iter_mut().zip(v_j) {
                        *g += coef * vj;
                    }
                }
                let v_c = cache.visual_prototype(c).expect("active").as_slice();
                for (g, &vj) in grad[c].iter_mut().zip(v_c) {
                    *g -= scale * vj;
                }
            }
        }
    }

    // Negative contrast: per anchor a 3-way softmax π over (pos, textual
    // negative, visual negative) terms.
    //   dL/dT_c      += λ2/(K τ) ((π_pos − 1) v_c + π_vneg v_neg)
    //   dL/dT_{tneg} += λ2/(K τ) π_tneg v_c
    if hp.lambda2 != 0.0 && !pairs.is_empty() {
        let k_p = pairs.len() as f64;
        let scale = hp.lambda2 / (k_p * hp.tau);
        for (&c, pair) in pairs {
            let v_c = cache.visual_prototype(c).expect("paired class is active");
            let v_neg = cache
                .visual_prototype(pair.visual_neg)
                .expect("paired negative is active");
            let t_c = textual.proto(c);
            let t_neg = textual.proto(pair.textual_neg);
            let logits = [
                v_c.dot(t_c) / hp.tau,
                v_c.dot(t_neg) / hp.tau,
                v_neg.dot(t_c) / hp.tau,
            ];
            let pi = softmax(&logits, 1.0).expect("finite logits");
            let pi = pi.as_slice();
            for (g, (&vcj, &vnj)) in grad[c]
                .iter_mut()
                .zip(v_c.as_slice().iter().zip(v_neg.as_slice()))
            {
                *g += scale * ((pi[0] - 1.0) * vcj + pi[2] * vnj);
            }
            for (g, &vcj) in grad[pair.textual_neg].iter_mut().zip(v_c.as_slice()) {
                *g += scale * pi[1] * vcj;
            }
        }
    }

    Ok(GradientMatrix { rows: grad })
}

/// One adaptive-moment update with bias correction and decoupled weight
/// decay, followed by renormalization of every prototype to unit length.
pub fn optimizer_step(
    state: &mut TextualPrototypeSet,
    grad: &GradientMatrix,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps_opt: f64,
    weight_decay: f64,
) -> Result<(), ObjectiveError> {
    if grad.rows.len() != state.protos.len()
        || grad.rows.first().map_or(0, |r| r.len()) != state.dim()
    {
        return Err(ObjectiveError::ShapeMismatch {
            expected_classes: state.protos.len(),
            expected_dim: state.dim(),
            got_classes: grad.rows.len(),
            got_dim: grad.rows.first().map_or(0, |r| r.len()),
        });
    }
    let t = state.step_count + 1;
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    for (c, row) in grad.rows.iter().enumerate() {
        let mut raw = state.protos[c].as_slice().to_vec();
        for (j, &g) in row.iter().enumerate() {
            let m = &mut state.moments_m[c][j];
            let v = &mut state.moments_v[c][j];
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            raw[j] -= lr * (m_hat / (v_hat.sqrt() + eps_opt)) + lr * weight_decay * raw[j];
        }
        state.protos[c] = EmbeddingVector::normalize(&raw)
            .map_err(|_| ObjectiveError::DegeneratePrototype { class_id: c })?;
    }
    state.step_count = t;
    Ok(())
}
