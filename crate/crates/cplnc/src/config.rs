//! Every scalar knob of the adaptation pipeline in one validated struct,
//! plus the canonical key=value rendering used for config echo in reports.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("range violation for `{key}`: {reason}")]
    RangeViolation { key: String, reason: String },
    #[error("parse error for `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
}

/// How the per-class activation frequency p_c is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyMode {
    /// Cumulative pseudo-label assignments per class (default).
    Cumulative,
    /// Current cache occupancy per class.
    Occupancy,
}

impl FrequencyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrequencyMode::Cumulative => "cumulative",
            FrequencyMode::Occupancy => "occupancy",
        }
    }
}

/// Which per-view prediction feeds the augmented-view entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugPrediction {
    /// The cache-fused prediction (default).
    Fused,
    /// The textual-only prediction (cache term omitted).
    Textual,
}

impl AugPrediction {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugPrediction::Fused => "fused",
            AugPrediction::Textual => "textual",
        }
    }
}

/// All hyperparameters of the adaptation engine.
///
/// Symbol map (doc-comment per field gives the conventional symbol):
/// the two fusion scalars of the cache adaptation function are named
/// `alpha_fuse`/`beta_fuse` and the rejuvenation decay rate `alpha_decay`
/// to keep them apart.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// ε — guard added inside the suppression logarithm.
    pub epsilon: f64,
    /// s — smoothness of the frequency suppression.
    pub s: f64,
    /// γ — sensitivity of base capacity to frequency deviations.
    pub gamma: f64,
    /// M — base cache capacity per class.
    pub m_base: usize,
    /// M_max — hard upper bound on any class capacity.
    pub m_max: usize,
    /// η — inactivity threshold in stream steps.
    pub eta: u64,
    /// δ — maximum rejuvenation boost magnitude.
    pub delta: f64,
    /// α (decay) — frequency penalty inside the rejuvenation boost.
    pub alpha_decay: f64,
    /// τ — softmax / contrastive temperature, shared across all losses.
    pub tau: f64,
    /// λ1 — weight of the cross-modal alignment loss.
    pub lambda1: f64,
    /// λ2 — weight of the negative-contrast loss.
    pub lambda2: f64,
    /// α (fusion) — scale of the cache adaptation function.
    pub alpha_fuse: f64,
    /// β (fusion) — sharpness of the cache adaptation function.
    pub beta_fuse: f64,
    /// Entropy admission gate in nats; `None` resolves to 0.4·ln C.
    pub entropy_gate: Option<f64>,
    /// ρ — confident-view fraction kept when aggregating augmented views.
    pub rho: f64,
    /// t — absolute entropy threshold for view selection (nats).
    pub entropy_threshold: f64,
    /// N — number of views per stream record (generation default).
    pub n_views: usize,
    /// Hard negatives are re-mined every this many stream samples.
    pub ncl_refresh_stride: u64,
    /// Optimizer learning rate.
    pub lr: f64,
    /// Optimizer first-moment decay.
    pub beta1: f64,
    /// Optimizer second-moment decay.
    pub beta2: f64,
    /// Optimizer denominator guard.
    pub eps_opt: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Optimizer steps applied per test sample.
    pub steps_per_sample: u32,
    /// How p_c is counted (cumulative assignments vs cache occupancy).
    pub frequency_mode: FrequencyMode,
    /// Prediction variant inside the augmented-view entropy loss.
    pub aug_prediction: AugPrediction,
    /// Admit a synthetic interpolated feature for long-inactive classes.
    pub rejuvenation_synthesis: bool,
    /// RNG seed for generation and paired experiments.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            s: 1.0,
            gamma: 1.0,
            m_base: 3,
            m_max: 10,
            eta: 400,
            delta: 3.0,
            alpha_decay: 2.0,
            tau: 0.01,
            lambda1: 1.0,
            lambda2: 0.5,
            alpha_fuse: 1.0,
            beta_fuse: 2.0,
            entropy_gate: None,
            rho: 0.1,
            entropy_threshold: f64::INFINITY,
            n_views: 40,
            ncl_refresh_stride: 5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            weight_decay: 0.0,
            steps_per_sample: 1,
            frequency_mode: FrequencyMode::Cumulative,
            aug_prediction: AugPrediction::Fused,
            rejuvenation_synthesis: false,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// Entropy gate in nats for a session with `n_classes` classes.
    pub fn resolved_entropy_gate(&self, n_classes: usize) -> f64 {
        self.entropy_gate
            .unwrap_or_else(|| 0.4 * (n_classes as f64).ln())
    }

    /// Validate every positivity/range constraint. Violations abort before
    /// any streaming starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn fail(key: &str, reason: &str) -> Result<(), ConfigError> {
            Err(ConfigError::RangeViolation {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon", "must be > 0");
        }
        if self.s.is_nan() || self.s <= 0.0 {
            return fail("s", "must be > 0");
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return fail("gamma", "must be finite and >= 0");
        }
        if self.m_base < 1 {
            return fail("m_base", "must be >= 1");
        }
        if self.m_max < 1 {
            return fail("m_max", "must be >= 1");
        }
        if self.eta == 0 {
            return fail("eta", "must be >= 1");
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return fail("delta", "must be finite and >= 0");
        }
        if !self.alpha_decay.is_finite() || self.alpha_decay < 0.0 {
            return fail("alpha_decay", "must be finite and >= 0");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return fail("tau", "must be > 0");
        }
        if !self.lambda1.is_finite() || self.lambda1 < 0.0 {
            return fail("lambda1", "must be finite and >= 0");
        }
        if !self.lambda2.is_finite() || self.lambda2 < 0.0 {
            return fail("lambda2", "must be finite and >= 0");
        }
        if !self.alpha_fuse.is_finite() || self.alpha_fuse < 0.0 {
            return fail("alpha_fuse", "must be finite and >= 0");
        }
        if !self.beta_fuse.is_finite() || self.beta_fuse < 0.0 {
            return fail("beta_fuse", "must be finite and >= 0");
        }
        if let Some(gate) = self.entropy_gate {
            if gate.is_nan() {
                return fail("entropy_gate", "must not be NaN");
            }
        }
        if self.rho.is_nan() || self.rho <= 0.0 || self.rho > 1.0 {
            return fail("rho", "must be in (0, 1]");
        }
        if self.entropy_threshold.is_nan() {
            return fail("entropy_threshold", "must not be NaN");
        }
        if self.n_views < 1 {
            return fail("n_views", "must be >= 1");
        }
        if self.ncl_refresh_stride == 0 {
            return fail("ncl_refresh_stride", "must be >= 1");
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return fail("lr", "must be finite and >= 0");
        }
        if self.beta1.is_nan() || self.beta1 < 0.0 || self.beta1 >= 1.0 {
            return fail("beta1", "must be in [0, 1)");
        }
        if self.beta2.is_nan() || self.beta2 < 0.0 || self.beta2 >= 1.0 {
            return fail("beta2", "must be in [0, 1)");
        }
        if self.eps_opt.is_nan() || self.eps_opt <= 0.0 {
            return fail("eps_opt", "must be > 0");
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return fail("weight_decay", "must be finite and >= 0");
        }
        if self.steps_per_sample < 1 {
            return fail("steps_per_sample", "must be >= 1");
        }
        Ok(())
    }

    /// Apply one `key = value` assignment. Used by both the config-file
    /// loader and CLI `--set` overrides, so precedence is purely call order.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num(key: &str, value: &str) -> Result<f64, ConfigError> {
            match value {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => value.parse::<f64>().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                }),
            }
        }
        fn int<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse::<T>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "epsilon" => self.epsilon = num(key, value)?,
            "s" => self.s = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "m_base" => self.m_base = int(key, value)?,
            "m_max" => self.m_max = int(key, value)?,
            "eta" => self.eta = int(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "alpha_decay" => self.alpha_decay = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "alpha_fuse" => self.alpha_fuse = num(key, value)?,
            "beta_fuse" => self.beta_fuse = num(key, value)?,
            "entropy_gate" => {
                self.entropy_gate = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "rho" => self.rho = num(key, value)?,
            "entropy_threshold" => self.entropy_threshold = num(key, value)?,
            "n_views" => self.n_views = int(key, value)?,
            "ncl_refresh_stride" => self.ncl_refresh_stride = int(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps_opt" => self.eps_opt = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "steps_per_sample" => self.steps_per_sample = int(key, value)?,
            "frequency_mode" => {
                self.frequency_mode = match value {
                    "cumulative" => FrequencyMode::Cumulative,
                    "occupancy" => FrequencyMode::Occupancy,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "aug_prediction" => {
                self.aug_prediction = match value {
                    "fused" => AugPrediction::Fused,
                    "textual" => AugPrediction::Textual,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "rejuvenation_synthesis" => {
                self.rejuvenation_synthesis = match value {
                    "true" | "on" => true,
                    "false" | "off" => false,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "seed" => self.seed = int(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Canonical key=value rendering, in fixed key order. This is what gets
    /// echoed into reports; parsing it back reproduces the struct exactly.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        fn f(x: f64) -> String {
            if x == f64::INFINITY {
                "inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x}")
            }
        }
        let gate = match self.entropy_gate {
            None => "auto".to_string(),
            Some(g) => f(g),
        };
        vec![
            ("epsilon".into(), f(self.epsilon)),
            ("s".into(), f(self.s)),
            ("gamma".into(), f(self.gamma)),
            ("m_base".into(), self.m_base.to_string()),
            ("m_max".into(), self.m_max.to_string()),
            ("eta".into(), self.eta.to_string()),
            ("delta".into(), f(self.delta)),
            ("alpha_decay".into(), f(self.alpha_decay)),
            ("tau".into(), f(self.tau)),
            ("lambda1".into(), f(self.lambda1)),
            ("lambda2".into(), f(self.lambda2)),
            ("alpha_fuse".into(), f(self.alpha_fuse)),
            ("beta_fuse".into(), f(self.beta_fuse)),
            ("entropy_gate".into(), gate),
            ("rho".into(), f(self.rho)),
            ("entropy_threshold".into(), f(self.entropy_threshold)),
            ("n_views".into(), self.n_views.to_string()),
            (
                "ncl_refresh_stride".into(),
                self.ncl_refresh_stride.to_string(),
            ),
            ("lr".into(), f(self.lr)),
            ("beta1".into(), f(self.beta1)),
            ("beta2".into(), f(self.beta2)),
            ("eps_opt".into(), f(self.eps_opt)),
            ("weight_decay".into(), f(self.weight_decay)),
            (
                "steps_per_sample".into(),
                self.steps_per_sample.to_string(),
            ),
            (
                "frequency_mode".into(),
                self.frequency_mode.as_str().to_string(),
            ),
            (
                "aug_prediction".into(),
                self.aug_prediction.as_str().to_string(),
            ),
            (
                "rejuvenation_synthesis".into(),
                self.rejuvenation_synthesis.to_string(),
            ),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate().unwrap();
    }

    #[test]
    fn negative_tau_rejected() {
        let mut hp = HyperParams::default();
        hp.set("tau", "-1").unwrap();
        let err = hp.validate().unwrap_err();
        assert!(matches!(err, ConfigError::RangeViolation { key, .. } if key == "tau"));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut hp = HyperParams::default();
        let err = hp.set("not_a_key", "1").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { key } if key == "not_a_key"));
    }

    #[test]
    fn gate_auto_resolves_to_fraction_of_max_entropy() {
        let hp = HyperParams::default();
        let gate = hp.resolved_entropy_gate(20);
        assert!((gate - 0.4 * 20.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infinities_round_trip_through_key_values() {
        let mut hp = HyperParams::default();
        hp.set("entropy_gate", "-inf").unwrap();
        hp.set("entropy_threshold", "inf").unwrap();
        let mut rebuilt = HyperParams::default();
        for (k, v) in hp.to_key_values() {
            rebuilt.set(&k, &v).unwrap();
        }
        assert_eq!(hp, rebuilt);
    }

    #[test]
    fn set_overrides_in_call_order() {
        let mut hp = HyperParams::default();
        hp.set("gamma", "2").unwrap();
        hp.set("gamma", "1").unwrap();
        assert_eq!(hp.gamma, 1.0);
    }
}
