//! Domain types and closed-form scaling-law evaluators.
//!
//! All sizes are in millions of sentence pairs. Every evaluator computes the
//! shared base `1/d + C` once so that values and gradients stay bit-consistent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on any fitted scaling exponent.
pub const MAX_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    LogPerplexity,
    Bleu,
}

/// One measured point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub condition: String,
    pub d_millions: f64,
    pub loss: f64,
    pub n_enc: Option<u64>,
    pub n_dec: Option<u64>,
    #[serde(default)]
    pub metric: Metric,
}

impl Observation {
    pub fn new(condition: impl Into<String>, d_millions: f64, loss: f64) -> Result<Self> {
        let obs = Self {
            condition: condition.into(),
            d_millions,
            loss,
            n_enc: None,
            n_dec: None,
            metric: Metric::LogPerplexity,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn with_shape(mut self, n_enc: u64, n_dec: u64) -> Result<Self> {
        self.n_enc = Some(n_enc);
        self.n_dec = Some(n_dec);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_millions.is_finite() && self.d_millions > 0.0) {
            return Err(Error::Domain(format!(
                "dataset size must be positive, got {}",
                self.d_millions
            )));
        }
        if !self.loss.is_finite() {
            return Err(Error::Domain(format!("loss must be finite, got {}", self.loss)));
        }
        if self.metric == Metric::LogPerplexity && self.loss <= 0.0 {
            return Err(Error::Domain(format!("loss must be positive, got {}", self.loss)));
        }
        match (self.n_enc, self.n_dec) {
            (Some(0), _) | (_, Some(0)) => {
                Err(Error::Domain("parameter counts must be positive".into()))
            }
            (Some(_), None) | (None, Some(_)) => Err(Error::Schema(
                "n_enc and n_dec must be given together".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Encoder/decoder parameter counts, when both are present.
    pub fn shape(&self) -> Option<(u64, u64)> {
        self.n_enc.zip(self.n_dec)
    }
}

/// `L(d) = alpha * (1/d + c)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub alpha: f64,
    pub c: f64,
    pub p: f64,
}

impl PowerLaw {
    pub fn new(alpha: f64, c: f64, p: f64) -> Result<Self> {
        let law = Self { alpha, c, p };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Domain(format!("C must be non-negative, got {}", self.c)));
        }
        if !(self.p > 0.0 && self.p <= MAX_EXPONENT) {
            return Err(Error::Domain(format!("p must lie in (0, 2], got {}", self.p)));
        }
        Ok(())
    }

    /// Loss at `d` million sentence pairs.
    pub fn eval(&self, d_millions: f64) -> Result<f64> {
        let base = base(d_millions, self.c)?;
        Ok(self.alpha * base.powf(self.p))
    }

    /// Partial derivatives `(dL/dalpha, dL/dC, dL/dp)` at `d`.
    pub fn gradient(&self, d_millions: f64) -> Result<[f64; 3]> {
        let base = base(d_millions, self.c)?;
        if base == 0.0 && self.p < 1.0 {
            return Err(Error::Singularity("1/d + C = 0 with p < 1".into()));
        }
        let pow = base.powf(self.p);
        Ok([
            pow,
            self.alpha * self.p * base.powf(self.p - 1.0),
            self.alpha * pow * base.ln(),
        ])
    }
}

fn base(d_millions: f64, c: f64) -> Result<f64> {
    if !(d_millions > 0.0) {
        return Err(Error::Domain(format!(
            "dataset size must be positive, got {d_millions}"
        )));
    }
    Ok(d_millions.recip() + c)
}

/// Evaluates `law` at `d_millions`.
pub fn eval_law(law: &PowerLaw, d_millions: f64) -> Result<f64> {
    law.eval(d_millions)
}

/// Analytic Jacobian row of [`eval_law`] with respect to `(alpha, C, p)`.
pub fn eval_law_gradient(law: &PowerLaw, d_millions: f64) -> Result<[f64; 3]> {
    law.gradient(d_millions)
}

/// Variance-limited tail `L(d) = gamma * d^-q + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailLaw {
    pub gamma: f64,
    pub q: f64,
    pub b: f64,
}

impl TailLaw {
    pub fn new(gamma: f64, q: f64, b: f64) -> Result<Self> {
        if !(gamma > 0.0 && q > 0.0 && b >= 0.0) {
            return Err(Error::Domain(format!(
                "tail law needs gamma > 0, q > 0, b >= 0; got ({gamma}, {q}, {b})"
            )));
        }
        Ok(Self { gamma, q, b })
    }

    pub fn eval(&self, d_millions: f64) -> Result<f64> {
        if !(d_millions > 0.0) {
            return Err(Error::Domain(format!(
                "dataset size must be positive, got {d_millions}"
            )));
        }
        Ok(self.gamma * d_millions.powf(-self.q) + self.b)
    }
}

/// Joint data and parameter law. Only `alpha` and `p` are ever fitted;
/// `beta`, `p_e`, `p_d` and `l_inf` come from a separate parameter-scaling fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLawParams {
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub p_e: f64,
    pub p_d: f64,
    pub l_inf: f64,
}

/// The externally supplied part of [`JointLawParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityParams {
    pub beta: f64,
    pub p_e: f64,
    pub p_d: f64,
    pub l_inf: f64,
}

impl CapacityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.p_e > 0.0 && self.p_d > 0.0 && self.l_inf >= 0.0) {
            return Err(Error::Domain(format!(
                "capacity parameters need beta, p_e, p_d > 0 and l_inf >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Parameter-scaling term `N_e^-p_e * N_d^-p_d + L_inf`.
    pub fn size_term(&self, n_e: u64, n_d: u64) -> Result<f64> {
        if n_e == 0 || n_d == 0 {
            return Err(Error::Domain("parameter counts must be positive".into()));
        }
        Ok((n_e as f64).powf(-self.p_e) * (n_d as f64).powf(-self.p_d) + self.l_inf)
    }

    pub fn with_fit(&self, alpha: f64, p: f64) -> JointLawParams {
        JointLawParams {
            alpha,
            p,
            beta: self.beta,
            p_e: self.p_e,
            p_d: self.p_d,
            l_inf: self.l_inf,
        }
    }
}

impl JointLawParams {
    pub fn capacity_params(&self) -> CapacityParams {
        CapacityParams {
            beta: self.beta,
            p_e: self.p_e,
            p_d: self.p_d,
            l_inf: self.l_inf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.p > 0.0 && self.p <= MAX_EXPONENT) {
            return Err(Error::Domain(format!(
                "joint law needs alpha > 0 and p in (0, 2], got ({}, {})",
                self.alpha, self.p
            )));
        }
        self.capacity_params().validate()
    }

    /// Model-capacity constant `C = beta * (N_e^-p_e N_d^-p_d + L_inf)^(1/p)`.
    pub fn capacity(&self, n_e: u64, n_d: u64) -> Result<f64> {
        let term = self.capacity_params().size_term(n_e, n_d)?;
        Ok(self.beta * term.powf(self.p.recip()))
    }

    /// The simple law this joint law reduces to at a fixed model shape.
    pub fn law_at(&self, n_e: u64, n_d: u64) -> Result<PowerLaw> {
        Ok(PowerLaw {
            alpha: self.alpha,
            c: self.capacity(n_e, n_d)?,
            p: self.p,
        })
    }

    pub fn eval(&self, n_e: u64, n_d: u64, d_millions: f64) -> Result<f64> {
        self.law_at(n_e, n_d)?.eval(d_millions)
    }

    /// Partial derivatives `(dL/dalpha, dL/dp)`, accounting for the
    /// dependence of the capacity constant on `p`.
    pub fn gradient(&self, n_e: u64, n_d: u64, d_millions: f64) -> Result<[f64; 2]> {
        let term = self.capacity_params().size_term(n_e, n_d)?;
        let c = self.beta * term.powf(self.p.recip());
        let base = base(d_millions, c)?;
        let pow = base.powf(self.p);
        let dc_dp = -c * term.ln() / (self.p * self.p);
        Ok([
            pow,
            self.alpha * pow * (base.ln() + self.p * dc_dp / base),
        ])
    }
}

/// Evaluates the joint law for a model with `n_e` encoder and `n_d` decoder
/// parameters trained on `d_millions` million pairs.
pub fn eval_joint_law(params: &JointLawParams, n_e: u64, n_d: u64, d_millions: f64) -> Result<f64> {
    params.eval(n_e, n_d, d_millions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const ENC_DEC: PowerLaw = PowerLaw { alpha: 1.969, c: 0.057, p: 0.285 };

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn fd_gradient(law: &PowerLaw, d: f64) -> [f64; 3] {
        let h = 1e-6;
        [
            central_diff(|a| PowerLaw { alpha: a, ..*law }.eval(d).unwrap(), law.alpha, h),
            central_diff(|c| PowerLaw { c, ..*law }.eval(d).unwrap(), law.c, h),
            central_diff(|p| PowerLaw { p, ..*law }.eval(d).unwrap(), law.p, h),
        ]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn pure_power_law() {
        let law = PowerLaw::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(law.eval(2.0).unwrap(), 0.5);
    }

    #[test]
    fn table_values() {
        // 50-digit reference values of alpha * (1/d + C)^p.
        assert_relative_eq!(ENC_DEC.eval(1.0).unwrap(), 2.000355052632167, max_relative = 1e-14);
        assert_relative_eq!(ENC_DEC.eval(512.0).unwrap(), 0.8786990624800946, max_relative = 1e-14);
    }

    #[test]
    fn rejects_non_positive_size() {
        assert!(matches!(ENC_DEC.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(ENC_DEC.eval(-3.0), Err(Error::Domain(_))));
        assert!(matches!(ENC_DEC.gradient(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_laws() {
        assert!(PowerLaw::new(0.0, 0.1, 0.3).is_err());
        assert!(PowerLaw::new(1.0, -0.1, 0.3).is_err());
        assert!(PowerLaw::new(1.0, 0.1, 0.0).is_err());
        assert!(PowerLaw::new(1.0, 0.1, 2.5).is_err());
        assert!(PowerLaw::new(1.0, 0.0, 2.0).is_ok());
    }

    #[test]
    fn gradient_unit_base() {
        let law = PowerLaw::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(law.gradient(1.0).unwrap(), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn gradient_hand_value() {
        let law = PowerLaw::new(2.0, 0.1, 0.5).unwrap();
        assert_relative_eq!(law.gradient(10.0).unwrap()[0], 0.2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(law.gradient(10.0).unwrap()[0], 0.4472, epsilon = 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences_at_table_law() {
        let g = ENC_DEC.gradient(1.0).unwrap();
        let fd = fd_gradient(&ENC_DEC, 1.0);
        for k in 0..3 {
            assert!(rel_err(g[k], fd[k]) < 1e-5, "component {k}: {} vs {}", g[k], fd[k]);
        }
    }

    #[test]
    fn eval_and_gradient_share_base() {
        let g = ENC_DEC.gradient(3.0).unwrap();
        assert_eq!(g[0] * ENC_DEC.alpha, ENC_DEC.eval(3.0).unwrap());
    }

    #[test]
    fn joint_law_unit_counts() {
        // N_e^-p_e * N_d^-p_d is a product, so unit counts give C = beta.
        let params = JointLawParams { alpha: 1.0, p: 1.0, beta: 1.0, p_e: 0.3, p_d: 0.7, l_inf: 0.0 };
        assert_eq!(params.capacity(1, 1).unwrap(), 1.0);
        assert_relative_eq!(params.eval(1, 1, 1e12).unwrap(), 1.0, max_relative = 1e-10);
        let half = JointLawParams { p: 0.5, l_inf: 1.0, ..params };
        assert_relative_eq!(half.capacity(1, 1).unwrap(), 4.0, max_relative = 1e-15);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn joint_law_high_precision_reference() {
        let params = JointLawParams { alpha: 1.0, p: 0.5, beta: 1.0, p_e: 0.25, p_d: 0.25, l_inf: 0.01 };
        // Evaluated with 50-digit arithmetic.
        let want = 0.12540737617859644861759689693683596186994657553763_f64;
        let got = params.eval(100_000_000, 100_000_000, 64.0).unwrap();
        assert!(rel_err(got, want) < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn joint_law_large_models_reach_l_inf_capacity() {
        let params = JointLawParams { alpha: 1.7, p: 0.5, beta: 1.0, p_e: 0.5, p_d: 0.5, l_inf: 0.5 };
        let n = u64::MAX / 2;
        assert_relative_eq!(params.capacity(n, n).unwrap(), 0.25, max_relative = 1e-12);
        let simple = PowerLaw::new(1.7, 0.25, 0.5).unwrap();
        for d in [0.5, 8.0, 300.0] {
            assert_relative_eq!(
                params.eval(n, n, d).unwrap(),
                simple.eval(d).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn joint_law_rejects_zero_counts() {
        let params = JointLawParams { alpha: 1.0, p: 0.5, beta: 1.0, p_e: 0.25, p_d: 0.25, l_inf: 0.01 };
        assert!(matches!(params.eval(0, 10, 1.0), Err(Error::Domain(_))));
        assert!(matches!(params.eval(10, 0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let params = JointLawParams { alpha: 1.5, p: 0.3, beta: 0.8, p_e: 0.2, p_d: 0.3, l_inf: 0.05 };
        let (ne, nd) = (50_000_000, 20_000_000);
        for d in [0.5, 4.0, 128.0] {
            let g = params.gradient(ne, nd, d).unwrap();
            let h = 1e-6;
            let fa = central_diff(|a| JointLawParams { alpha: a, ..params }.eval(ne, nd, d).unwrap(), params.alpha, h);
            let fp = central_diff(|p| JointLawParams { p, ..params }.eval(ne, nd, d).unwrap(), params.p, h);
            assert!(rel_err(g[0], fa) < 1e-6);
            assert!(rel_err(g[1], fp) < 1e-5, "{} vs {}", g[1], fp);
        }
    }

    #[test]
    fn observation_invariants() {
        assert!(Observation::new("a", 0.0, 1.0).is_err());
        assert!(Observation::new("a", 1.0, -1.0).is_err());
        let mut half = Observation::new("a", 1.0, 1.0).unwrap();
        half.n_enc = Some(10);
        assert!(matches!(half.validate(), Err(Error::Schema(_))));
        let mut bleu = Observation::new("a", 1.0, 1.0).unwrap();
        bleu.metric = Metric::Bleu;
        bleu.loss = 0.0;
        assert!(bleu.validate().is_ok());
    }

    fn law_strategy() -> impl Strategy<Value = PowerLaw> {
        (0.5f64..5.0, 0.0f64..0.5, 0.05f64..1.5).prop_map(|(alpha, c, p)| PowerLaw { alpha, c, p })
    }

    proptest! {
        #[test]
        fn monotone_decreasing(law in law_strategy(), d1 in 0.25f64..1024.0, ratio in 1.001f64..4.0) {
            prop_assert!(law.eval(d1).unwrap() > law.eval(d1 * ratio).unwrap());
        }

        #[test]
        fn bounded_by_asymptote(law in law_strategy(), d in 0.25f64..1e9) {
            let floor = law.alpha * law.c.powf(law.p);
            prop_assert!(law.eval(d).unwrap() >= floor);
        }

        #[test]
        fn gradient_matches_central_differences(law in law_strategy(), d in 0.25f64..1024.0) {
            let g = law.gradient(d).unwrap();
            let fd = fd_gradient(&law, d);
            for k in 0..3 {
                // dL/dp vanishes where 1/d + C = 1; compare absolutely there.
                let scale = g[k].abs().max(1e-3 * law.eval(d).unwrap());
                prop_assert!((g[k] - fd[k]).abs() / scale < 1e-5, "k={} g={} fd={}", k, g[k], fd[k]);
            }
        }

        #[test]
        fn joint_equals_simple_with_implied_capacity(
            alpha in 0.5f64..5.0, p in 0.05f64..1.5, beta in 0.1f64..3.0,
            p_e in 0.05f64..0.6, p_d in 0.05f64..0.6, l_inf in 0.0f64..0.5,
            ne in 1_000_000u64..1_000_000_000, nd in 1_000_000u64..1_000_000_000, d in 0.25f64..1024.0,
        ) {
            let params = JointLawParams { alpha, p, beta, p_e, p_d, l_inf };
            let c = beta * ((ne as f64).powf(-p_e) * (nd as f64).powf(-p_d) + l_inf).powf(1.0 / p);
            let simple = PowerLaw { alpha, c, p };
            prop_assert_eq!(params.eval(ne, nd, d).unwrap(), simple.eval(d).unwrap());
        }
    }
}
