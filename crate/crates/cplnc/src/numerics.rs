//! Dense-vector kernels shared by every scoring and loss computation:
//! L2 normalization, cosine similarity, temperature softmax, and Shannon
//! entropy in nats.
//!
//! All arithmetic is `f64`; file I/O narrows to `f32` at the serialization
//! boundary. Everything here is a pure function, safe to call concurrently.

use thiserror::Error;

/// Norm deviation below which a vector is treated as already unit-length.
/// Skipping the division keeps `normalize` bitwise-idempotent.
const UNIT_NORM_SKIP_TOL: f64 = 1e-12;

/// Norm below which a vector cannot be meaningfully normalized.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("cannot normalize a near-zero vector (L2 norm {norm:.3e})")]
    ZeroVector { norm: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },
}

/// Unit-norm d-dimensional embedding. The currency of the whole system:
/// sample features, visual prototypes, and textual prototypes all live here.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalize a raw vector to unit L2 norm, preserving direction.
    pub fn normalize(raw: &[f64]) -> Result<Self, NumericsError> {
        if let Some(index) = raw.iter().position(|x| !x.is_finite()) {
            return Err(NumericsError::NonFiniteInput { index });
        }
        let norm = l2_norm(raw);
        if norm < ZERO_NORM_THRESHOLD {
            return Err(NumericsError::ZeroVector { norm });
        }
        if (norm - 1.0).abs() <= UNIT_NORM_SKIP_TOL {
            return Ok(Self {
                values: raw.to_vec(),
            });
        }
        Ok(Self {
            values: raw.iter().map(|x| x / norm).collect(),
        })
    }

    /// Wrap values already known to lie on (or, for gradient-check probes,
    /// within a finite-difference step of) the unit sphere.
    pub(crate) fn from_unit_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(
            (l2_norm(&values) - 1.0).abs() < 1e-3,
            "from_unit_unchecked given non-unit vector"
        );
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Dot product; equals cosine similarity because both sides are unit-norm.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        dot(&self.values, &other.values)
    }
}

/// Cosine similarity between two unit vectors (their dot product).
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, NumericsError> {
    if u.dim() != v.dim() {
        return Err(NumericsError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    Ok(u.dot(v))
}

/// Discrete distribution over C classes. Entries in [0, 1], summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, NumericsError> {
        if let Some(index) = probs.iter().position(|p| !p.is_finite()) {
            return Err(NumericsError::NonFiniteInput { index });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(NumericsError::NonFiniteInput { index: 0 });
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_softmax_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.probs)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// First index attaining the maximum value.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature softmax, stabilized by subtracting the max logit before
/// exponentiation. The stabilization is mandatory, not an optimization.
pub fn softmax(logits: &[f64], tau: f64) -> Result<ProbabilityVector, NumericsError> {
    if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
        return Err(NumericsError::NonFiniteInput { index });
    }
    assert!(tau > 0.0, "softmax temperature must be positive");
    let scaled: Vec<f64> = logits.iter().map(|&z| z / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbabilityVector::from_softmax_unchecked(
        exps.iter().map(|&e| e / sum).collect(),
    ))
}

/// Shannon entropy in nats, with the convention 0·ln 0 = 0.
pub fn entropy(p: &ProbabilityVector) -> f64 {
    p.as_slice()
        .iter()
        .map(|&pi| if pi > 0.0 { -pi * pi.ln() } else { 0.0 })
        .sum()
}

/// log(sum(exp(x_i))) with max-shift stabilization.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalize(values).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let v = unit(&[3.0, 4.0]);
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_already_unit() {
        let v = unit(&[1.0, 0.0, 0.0]);
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_diagonal() {
        let v = unit(&[2.0, 2.0]);
        let expect = 2.0 / 8.0f64.sqrt();
        assert!((v.as_slice()[0] - expect).abs() < 1e-12);
        assert!((v.as_slice()[1] - expect).abs() < 1e-12);
        assert!((v.as_slice()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn normalize_zero_vector_rejected() {
        let err = EmbeddingVector::normalize(&[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, NumericsError::ZeroVector { .. }));
    }

    #[test]
    fn normalize_non_finite_rejected() {
        let err = EmbeddingVector::normalize(&[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteInput { index: 1 }));
    }

    #[test]
    fn cosine_self_is_one() {
        let u = unit(&[0.3, -0.7, 0.2]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let u = unit(&[1.0, 0.0]);
        let v = unit(&[0.0, 1.0]);
        assert_eq!(cosine(&u, &v).unwrap(), 0.0);
    }

    #[test]
    fn cosine_direct_dot() {
        let u = unit(&[1.0, 0.0]);
        let v = unit(&[0.6, 0.8]);
        assert!((cosine(&u, &v).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let u = unit(&[1.0, 0.0]);
        let v = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&u, &v),
            Err(NumericsError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for &pi in p.as_slice() {
            assert!((pi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_log_two() {
        let p = softmax(&[2.0f64.ln(), 0.0], 1.0).unwrap();
        assert!((p.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_temperature_rescaling() {
        let a = 0.37;
        let b = -1.2;
        let half = softmax(&[a, b], 0.5).unwrap();
        let doubled = softmax(&[2.0 * a, 2.0 * b], 1.0).unwrap();
        for (x, y) in half.as_slice().iter().zip(doubled.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[f64::INFINITY, 0.0], 1.0),
            Err(NumericsError::NonFiniteInput { index: 0 })
        ));
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let p = ProbabilityVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy(&p), 0.0);
    }

    #[test]
    fn entropy_uniform_five() {
        let p = ProbabilityVector::new(vec![0.2; 5]).unwrap();
        assert!((entropy(&p) - 5.0f64.ln()).abs() < 1e-12);
        assert!((entropy(&p) - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn entropy_binary_uniform() {
        let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert!((entropy(&p) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(
            logits in proptest::collection::vec(-1e4..1e4f64, 1..24),
            tau in 1e-3..10.0f64,
        ) {
            let p = softmax(&logits, tau).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }

        #[test]
        fn entropy_within_bounds(
            weights in proptest::collection::vec(1e-9..1.0f64, 1..24),
        ) {
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let c = probs.len() as f64;
            let p = ProbabilityVector::from_softmax_unchecked(probs);
            let h = entropy(&p);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= c.ln() + 1e-9);
        }

        #[test]
        fn cosine_symmetric_and_bounded(
            (a, b) in (2usize..16).prop_flat_map(|n| (
                proptest::collection::vec(-1.0..1.0f64, n),
                proptest::collection::vec(-1.0..1.0f64, n),
            )),
        ) {
            prop_assume!(l2_norm(&a) > 1e-6 && l2_norm(&b) > 1e-6);
            let u = EmbeddingVector::normalize(&a).unwrap();
            let v = EmbeddingVector::normalize(&b).unwrap();
            let uv = cosine(&u, &v).unwrap();
            let vu = cosine(&v, &u).unwrap();
            prop_assert_eq!(uv, vu);
            prop_assert!(uv.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn normalize_is_idempotent_bitwise(
            raw in proptest::collection::vec(-100.0..100.0f64, 2..16),
        ) {
            prop_assume!(l2_norm(&raw) > 1e-6);
            let once = EmbeddingVector::normalize(&raw).unwrap();
            let twice = EmbeddingVector::normalize(once.as_slice()).unwrap();
            prop_assert_eq!(once.as_slice(), twice.as_slice());
        }
    }
}
