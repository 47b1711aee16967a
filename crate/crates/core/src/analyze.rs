//! Quantities derived from a fitted law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_single, FitConfig};
use crate::law::{JointLawParams, Observation, PowerLaw};

/// Largest exponent difference tolerated when comparing two laws' constants.
pub const SHARED_EXPONENT_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 100;

/// Loss approached as data grows without bound, `alpha * C^p`.
pub fn asymptotic_loss(law: &PowerLaw) -> f64 {
    if law.c == 0.0 {
        return 0.0;
    }
    law.alpha * law.c.powf(law.p)
}

/// Dataset size (millions of pairs) where the data-limited and
/// capacity-limited regimes meet, `1/C`. `None` when `C = 0`.
pub fn transition_point(law: &PowerLaw) -> Option<f64> {
    (law.c > 0.0).then(|| law.c.recip())
}

/// Loss reduction per additional million sentence pairs, `-dL/dD`.
pub fn marginal_value(law: &PowerLaw, d_millions: f64) -> Result<f64> {
    if !(d_millions > 0.0) {
        return Err(Error::Domain(format!("dataset size must be positive, got {d_millions}")));
    }
    let base = d_millions.recip() + law.c;
    if base == 0.0 {
        return Err(Error::Singularity("1/d + C = 0".into()));
    }
    Ok(law.alpha * law.p * d_millions.powi(-2) * base.powf(law.p - 1.0))
}

/// Slopes `dL/dD` of the two regime approximations at `d`: the pure power law
/// `alpha d^-p` and the first-order expansion `alpha C^p + alpha p C^(p-1) / d`.
pub fn regime_slopes(law: &PowerLaw, d_millions: f64) -> Result<(f64, f64)> {
    if !(d_millions > 0.0) {
        return Err(Error::Domain(format!("dataset size must be positive, got {d_millions}")));
    }
    if law.c == 0.0 {
        return Err(Error::Domain("capacity-limited regime needs C > 0".into()));
    }
    let scale = -law.alpha * law.p;
    Ok((
        scale * d_millions.powf(-law.p - 1.0),
        scale * law.c.powf(law.p - 1.0) * d_millions.powi(-2),
    ))
}

/// How many times more data condition 1 needs to match condition 2 in the
/// data-limited regime, `(alpha1 / alpha2)^(1/p)`. Both laws must share `p`.
pub fn data_equivalence_factor(law1: &PowerLaw, law2: &PowerLaw) -> Result<f64> {
    if (law1.p - law2.p).abs() > SHARED_EXPONENT_TOL {
        return Err(Error::SharedExponentRequired { p1: law1.p, p2: law2.p });
    }
    Ok((law1.alpha / law2.alpha).powf(law1.p.recip()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub noise_frac: f64,
    pub n_reps: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { noise_frac: 0.02, n_reps: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub mean_p: f64,
    pub std_p: f64,
    /// 5%, 50% and 95% quantiles of the fitted exponent.
    pub quantiles: [f64; 3],
    pub n_converged: usize,
    pub n_reps: usize,
}

/// Generator for Monte Carlo replicate `rep`: one ChaCha stream per replicate
/// so a replicate's draws never depend on which other replicates ran.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn draw_replicate(obs: &[Observation], noise_frac: f64, rng: &mut ChaCha8Rng) -> Option<Vec<Observation>> {
    for _ in 0..MAX_REDRAWS {
        let mut noisy = obs.to_vec();
        let mut ok = true;
        for o in &mut noisy {
            let dist = Normal::new(o.loss, noise_frac * o.loss).ok()?;
            o.loss = dist.sample(rng);
            ok &= o.loss > 0.0;
        }
        if ok {
            return Some(noisy);
        }
    }
    None
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Spread of the fitted exponent when every loss is redrawn from
/// `Normal(l, noise_frac * l)` and the curve refit.
pub fn mc_uncertainty(obs: &[Observation], cfg_fit: &FitConfig, cfg_mc: &McConfig) -> Result<McSummary> {
    if !(cfg_mc.noise_frac > 0.0 && cfg_mc.noise_frac.is_finite()) {
        return Err(Error::Domain(format!("noise_frac must be positive, got {}", cfg_mc.noise_frac)));
    }
    if cfg_mc.n_reps < 2 {
        return Err(Error::Domain(format!("n_reps must be at least 2, got {}", cfg_mc.n_reps)));
    }
    // Surface precondition failures once instead of per replicate.
    fit_single(obs, cfg_fit)?;

    let fitted: Vec<Option<f64>> = (1..=cfg_mc.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(cfg_mc.seed, rep);
            let noisy = draw_replicate(obs, cfg_mc.noise_frac, &mut rng)?;
            let fit = fit_single(&noisy, cfg_fit).ok()?;
            fit.converged.then_some(fit.law.p)
        })
        .collect();
    let mut ps: Vec<f64> = fitted.into_iter().flatten().collect();
    if ps.is_empty() {
        return Err(Error::McFailure(cfg_mc.n_reps));
    }
    let n = ps.len() as f64;
    let mean_p = ps.iter().sum::<f64>() / n;
    let std_p = if ps.len() > 1 {
        (ps.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ps.sort_by(f64::total_cmp);
    Ok(McSummary {
        mean_p,
        std_p,
        quantiles: [quantile(&ps, 0.05), quantile(&ps, 0.5), quantile(&ps, 0.95)],
        n_converged: ps.len(),
        n_reps: cfg_mc.n_reps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Law {
    Simple(PowerLaw),
    Joint(JointLawParams),
}

/// Predicted loss at `d_millions`; joint laws also need the model shape.
pub fn predict(law: &Law, d_millions: f64, shape: Option<(u64, u64)>) -> Result<f64> {
    match (law, shape) {
        (Law::Simple(l), None) => l.eval(d_millions),
        (Law::Simple(_), Some(_)) => {
            Err(Error::Schema("model shape given for a law without parameter dependence".into()))
        }
        (Law::Joint(j), Some((ne, nd))) => j.eval(ne, nd, d_millions),
        (Law::Joint(_), None) => Err(Error::Schema("joint law needs (n_enc, n_dec)".into())),
    }
}
