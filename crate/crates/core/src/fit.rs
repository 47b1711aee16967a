//! Least-squares estimation of the scaling-law variants.
//!
//! Constraints are enforced by reparameterization: `alpha = exp(a)`,
//! `C = exp(c)` and `p = 2 / (1 + exp(-s))`. The optimizer works on the
//! unconstrained `(a, c, s)` and every returned law satisfies the
//! [`PowerLaw`] invariants. Fits are multi-start: the first start is a
//! data-driven seed, the remaining starts perturb it log-normally with a
//! generator keyed by [`FitConfig::seed`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{CapacityParams, JointLawParams, LinearFit, Observation, PowerLaw, TailLaw, MAX_EXPONENT};
use crate::lm::{self, Problem};

/// Fitted capacity constants below this are reported as exactly zero.
pub const C_ZERO_THRESHOLD: f64 = 1e-12;
const RESTART_SIGMA: f64 = 0.5;
const MIN_SINGLE_POINTS: usize = 4;
const MIN_TAIL_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    #[default]
    Log,
    Linear,
}

impl LossSpace {
    fn transform(self, loss: f64) -> f64 {
        match self {
            LossSpace::Log => loss.ln(),
            LossSpace::Linear => loss,
        }
    }

    /// Derivative of the transform at `loss`.
    fn slope(self, loss: f64) -> f64 {
        match self {
            LossSpace::Log => loss.recip(),
            LossSpace::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss_space: LossSpace,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss_space: LossSpace::Log,
            max_iters: 2000,
            rel_tol: 1e-10,
            n_restarts: 8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Domain(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub law: PowerLaw,
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    pub alpha: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFitResult {
    pub p: f64,
    pub per_condition: BTreeMap<String, ConditionParams>,
    pub objective: f64,
    pub residuals: BTreeMap<String, Vec<f64>>,
    pub converged: bool,
    pub n_iters: usize,
}

impl SharedFitResult {
    pub fn law(&self, condition: &str) -> Option<PowerLaw> {
        self.per_condition
            .get(condition)
            .map(|cp| PowerLaw { alpha: cp.alpha, c: cp.c, p: self.p })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFitResult {
    pub params: JointLawParams,
    /// Sum of squared residuals over the in-sample observations only.
    pub objective: f64,
    /// Residuals for every input observation, held-out ones included.
    pub residuals: Vec<f64>,
    pub in_sample: Vec<bool>,
    pub converged: bool,
    pub n_iters: usize,
}

impl JointFitResult {
    fn rms(&self, in_sample: bool) -> Option<f64> {
        let picked: Vec<f64> = self
            .residuals
            .iter()
            .zip(&self.in_sample)
            .filter(|(_, &s)| s == in_sample)
            .map(|(r, _)| *r)
            .collect();
        if picked.is_empty() {
            return None;
        }
        Some((picked.iter().map(|r| r * r).sum::<f64>() / picked.len() as f64).sqrt())
    }

    pub fn in_sample_rms(&self) -> Option<f64> {
        self.rms(true)
    }

    pub fn held_out_rms(&self) -> Option<f64> {
        self.rms(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFitResult {
    pub law: TailLaw,
    pub objective: f64,
    /// Residuals of the observations with `d >= d_min`, in input order.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
}

fn decode_p(s: f64) -> f64 {
    (MAX_EXPONENT / (1.0 + (-s).exp())).max(f64::MIN_POSITIVE)
}

fn encode_p(p: f64) -> f64 {
    (p / (MAX_EXPONENT - p)).ln()
}

fn dp_ds(p: f64) -> f64 {
    p * (1.0 - p / MAX_EXPONENT)
}

fn clamp_seed_p(p: f64) -> f64 {
    if p.is_finite() {
        p.clamp(0.02, 1.9)
    } else {
        0.3
    }
}

/// Ordinary least squares `y = slope * x + intercept`; `None` for degenerate x.
fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Seeds `(alpha, p)` from a log-log regression over the smallest half of the
/// dataset sizes, where `1/d` dominates `C`.
fn seed_alpha_p(d: &[f64], loss: &[f64]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let half = d.len().div_ceil(2).max(2).min(d.len());
    let x: Vec<f64> = order[..half].iter().map(|&i| -d[i].ln()).collect();
    let y: Vec<f64> = order[..half].iter().map(|&i| loss[i].ln()).collect();
    match ols(&x, &y) {
        Some((slope, intercept)) => {
            let p = clamp_seed_p(slope);
            let alpha = intercept.exp();
            let alpha = if alpha.is_finite() && alpha > 0.0 { alpha } else { 1.0 };
            (alpha, p)
        }
        None => (loss.iter().cloned().fold(f64::MIN, f64::max), 0.3),
    }
}

fn seed_law(d: &[f64], loss: &[f64]) -> PowerLaw {
    let (alpha, p) = seed_alpha_p(d, loss);
    let min_loss = loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = (min_loss / alpha).powf(p.recip());
    let c = if c.is_finite() { c.clamp(1e-6, 10.0) } else { 0.05 };
    PowerLaw { alpha, c, p }
}

struct Perturber(ChaCha8Rng);

impl Perturber {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn scale(&mut self, v: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.0);
        v * (RESTART_SIGMA * z).exp()
    }

    fn exponent(&mut self, p: f64) -> f64 {
        clamp_seed_p(self.scale(p))
    }
}

/// Runs every start and keeps the best: converged runs beat non-converged
/// ones, then lowest objective, then lowest start index.
fn multistart<P: Problem>(problem: &P, starts: Vec<DVector<f64>>, cfg: &FitConfig) -> lm::Outcome {
    let mut best: Option<lm::Outcome> = None;
    for x0 in starts {
        let out = lm::minimize(problem, x0, cfg.max_iters, cfg.rel_tol);
        let better = match &best {
            None => true,
            Some(b) => match (out.converged, b.converged) {
                (true, false) => true,
                (false, true) => false,
                _ => out.objective < b.objective,
            },
        };
        if better {
            best = Some(out);
        }
    }
    best.expect("at least one start")
}

/// Residual `f(observed) - f(model)` and its gradient with respect to the
/// model's natural parameters `(alpha, C, p)`.
fn law_residual(law: &PowerLaw, d: f64, target: f64, space: LossSpace) -> Option<(f64, [f64; 3])> {
    let model = law.eval(d).ok()?;
    let grad = law.gradient(d).ok()?;
    let k = -space.slope(model);
    let r = target - space.transform(model);
    r.is_finite().then_some((r, [k * grad[0], k * grad[1], k * grad[2]]))
}

fn validate_curve(obs: &[Observation], min_points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if obs.len() < min_points {
        return Err(Error::InsufficientData { needed: min_points, got: obs.len() });
    }
    let mut seen = BTreeSet::new();
    for o in obs {
        o.validate()?;
        if !(o.loss > 0.0) {
            return Err(Error::Domain(format!("loss must be positive, got {}", o.loss)));
        }
        if !seen.insert(o.d_millions.to_bits()) {
            return Err(Error::DuplicateAbscissa(o.d_millions));
        }
    }
    Ok((obs.iter().map(|o| o.d_millions).collect(), obs.iter().map(|o| o.loss).collect()))
}

fn clean_law(alpha: f64, c: f64, p: f64) -> PowerLaw {
    let c = if c < C_ZERO_THRESHOLD { 0.0 } else { c };
    PowerLaw { alpha, c, p }
}

fn residuals_of(law: &PowerLaw, d: &[f64], loss: &[f64], space: LossSpace) -> Vec<f64> {
    d.iter()
        .zip(loss)
        .map(|(&d, &l)| space.transform(l) - space.transform(law.eval(d).unwrap_or(f64::NAN)))
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Fits `alpha`, `C` and `p` on one learning curve; with `fixed_c` set only
/// `alpha` and `p` are free.
struct SingleProblem {
    d: Vec<f64>,
    target: Vec<f64>,
    space: LossSpace,
    fixed_c: Option<f64>,
}

impl SingleProblem {
    fn decode(&self, x: &DVector<f64>) -> PowerLaw {
        match self.fixed_c {
            Some(c) => PowerLaw { alpha: x[0].exp(), c, p: decode_p(x[1]) },
            None => PowerLaw { alpha: x[0].exp(), c: x[1].exp(), p: decode_p(x[2]) },
        }
    }

    fn encode(&self, law: &PowerLaw) -> DVector<f64> {
        match self.fixed_c {
            Some(_) => DVector::from_vec(vec![law.alpha.ln(), encode_p(law.p)]),
            None => DVector::from_vec(vec![law.alpha.ln(), law.c.ln(), encode_p(law.p)]),
        }
    }
}

impl Problem for SingleProblem {
    fn n_params(&self) -> usize {
        if self.fixed_c.is_some() { 2 } else { 3 }
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let law = self.decode(x);
        let mut r = DVector::zeros(self.d.len());
        for (i, (&d, &t)) in self.d.iter().zip(&self.target).enumerate() {
            r[i] = law_residual(&law, d, t, self.space)?.0;
        }
        Some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let law = self.decode(x);
        let mut jac = DMatrix::zeros(self.d.len(), self.n_params());
        for (i, (&d, &t)) in self.d.iter().zip(&self.target).enumerate() {
            let (_, g) = law_residual(&law, d, t, self.space)?;
            jac[(i, 0)] = g[0] * law.alpha;
            match self.fixed_c {
                Some(_) => jac[(i, 1)] = g[2] * dp_ds(law.p),
                None => {
                    jac[(i, 1)] = g[1] * law.c;
                    jac[(i, 2)] = g[2] * dp_ds(law.p);
                }
            }
        }
        Some(jac)
    }
}

fn fit_curve(obs: &[Observation], fixed_c: Option<f64>, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (d, loss) = validate_curve(obs, MIN_SINGLE_POINTS)?;
    let problem = SingleProblem {
        target: loss.iter().map(|&l| cfg.loss_space.transform(l)).collect(),
        d,
        space: cfg.loss_space,
        fixed_c,
    };
    let seed = match fixed_c {
        Some(c) => {
            let (alpha, p) = seed_alpha_p(&problem.d, &loss);
            PowerLaw { alpha, c, p }
        }
        None => seed_law(&problem.d, &loss),
    };
    let mut perturb = Perturber::new(cfg.seed);
    let mut starts = vec![problem.encode(&seed)];
    for _ in 0..cfg.n_restarts {
        let law = PowerLaw {
            alpha: perturb.scale(seed.alpha),
            c: if fixed_c.is_some() { seed.c } else { perturb.scale(seed.c) },
            p: perturb.exponent(seed.p),
        };
        starts.push(problem.encode(&law));
    }
    let out = multistart(&problem, starts, cfg);
    let raw = problem.decode(&out.x);
    let law = match fixed_c {
        Some(c) => PowerLaw { c, ..raw },
        None => clean_law(raw.alpha, raw.c, raw.p),
    };
    let residuals = residuals_of(&law, &problem.d, &loss, cfg.loss_space);
    Ok(FitResult {
        law,
        objective: sum_sq(&residuals),
        residuals,
        converged: out.converged && out.objective.is_finite(),
        n_iters: out.iters,
    })
}

/// Fits `L = alpha (1/d + C)^p` to a single learning curve.
pub fn fit_single(obs: &[Observation], cfg: &FitConfig) -> Result<FitResult> {
    if let Some(first) = obs.first() {
        if let Some(other) = obs.iter().find(|o| o.condition != first.condition) {
            return Err(Error::Schema(format!(
                "single fit mixes conditions '{}' and '{}'",
                first.condition, other.condition
            )));
        }
    }
    fit_curve(obs, None, cfg)
}

/// Fits `alpha` and `p` with the capacity constant pinned to `c`.
pub fn fit_fixed_capacity(obs: &[Observation], c: f64, cfg: &FitConfig) -> Result<FitResult> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("C must be non-negative, got {c}")));
    }
    fit_curve(obs, Some(c), cfg)
}

/// Parameters are `[s, a_1, c_1, ..., a_k, c_k]`.
struct SharedProblem {
    groups: Vec<(Vec<f64>, Vec<f64>)>,
    space: LossSpace,
    n_obs: usize,
}

impl SharedProblem {
    fn law(&self, x: &DVector<f64>, g: usize) -> PowerLaw {
        PowerLaw { alpha: x[1 + 2 * g].exp(), c: x[2 + 2 * g].exp(), p: decode_p(x[0]) }
    }
}

impl Problem for SharedProblem {
    fn n_params(&self) -> usize {
        1 + 2 * self.groups.len()
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.n_obs);
        let mut row = 0;
        for (g, (d, target)) in self.groups.iter().enumerate() {
            let law = self.law(x, g);
            for (&d, &t) in d.iter().zip(target) {
                r[row] = law_residual(&law, d, t, self.space)?.0;
                row += 1;
            }
        }
        Some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.n_obs, self.n_params());
        let mut row = 0;
        for (g, (d, target)) in self.groups.iter().enumerate() {
            let law = self.law(x, g);
            for (&d, &t) in d.iter().zip(target) {
                let (_, grad) = law_residual(&law, d, t, self.space)?;
                jac[(row, 0)] = grad[2] * dp_ds(law.p);
                jac[(row, 1 + 2 * g)] = grad[0] * law.alpha;
                jac[(row, 2 + 2 * g)] = grad[1] * law.c;
                row += 1;
            }
        }
        Some(jac)
    }
}

/// Fits one exponent shared by every condition together with a separate
/// `(alpha, C)` per condition, as a single joint least-squares problem.
///
/// Starts from the per-condition single fits with their mean exponent.
pub fn fit_shared(
    groups: &BTreeMap<String, Vec<Observation>>,
    cfg: &FitConfig,
) -> Result<SharedFitResult> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut data = Vec::with_capacity(groups.len());
    let mut seeds = Vec::with_capacity(groups.len());
    for obs in groups.values() {
        let (d, loss) = validate_curve(obs, MIN_SINGLE_POINTS)?;
        seeds.push(fit_curve(obs, None, cfg)?.law);
        data.push((d, loss));
    }
    let problem = SharedProblem {
        n_obs: data.iter().map(|(d, _)| d.len()).sum(),
        groups: data
            .iter()
            .map(|(d, l)| (d.clone(), l.iter().map(|&v| cfg.loss_space.transform(v)).collect()))
            .collect(),
        space: cfg.loss_space,
    };
    let p0 = seeds.iter().map(|l| l.p).sum::<f64>() / seeds.len() as f64;
    let encode = |p: f64, consts: &[(f64, f64)]| {
        let mut x = vec![encode_p(p)];
        for &(alpha, c) in consts {
            x.push(alpha.ln());
            x.push(c.max(1e-6).ln());
        }
        DVector::from_vec(x)
    };
    let base: Vec<(f64, f64)> = seeds.iter().map(|l| (l.alpha, l.c)).collect();
    let mut perturb = Perturber::new(cfg.seed);
    let mut starts = vec![encode(p0, &base)];
    for _ in 0..cfg.n_restarts {
        let p = perturb.exponent(p0);
        let consts: Vec<(f64, f64)> =
            base.iter().map(|&(a, c)| (perturb.scale(a), perturb.scale(c.max(1e-6)))).collect();
        starts.push(encode(p, &consts));
    }
    let out = multistart(&problem, starts, cfg);

    let p = decode_p(out.x[0]);
    let mut per_condition = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    let mut objective = 0.0;
    for (g, (name, (d, loss))) in groups.keys().zip(&data).enumerate() {
        let raw = problem.law(&out.x, g);
        let law = clean_law(raw.alpha, raw.c, p);
        let r = residuals_of(&law, d, loss, cfg.loss_space);
        objective += sum_sq(&r);
        per_condition.insert(name.clone(), ConditionParams { alpha: law.alpha, c: law.c });
        residuals.insert(name.clone(), r);
    }
    Ok(SharedFitResult {
        p,
        per_condition,
        objective,
        residuals,
        converged: out.converged && out.objective.is_finite(),
        n_iters: out.iters,
    })
}

struct JointProblem {
    shapes: Vec<(u64, u64)>,
    d: Vec<f64>,
    target: Vec<f64>,
    fixed: CapacityParams,
    space: LossSpace,
}

impl JointProblem {
    fn params(&self, x: &DVector<f64>) -> JointLawParams {
        self.fixed.with_fit(x[0].exp(), decode_p(x[1]))
    }

    fn row(&self, params: &JointLawParams, i: usize) -> Option<(f64, [f64; 2])> {
        let (ne, nd) = self.shapes[i];
        let model = params.eval(ne, nd, self.d[i]).ok()?;
        let grad = params.gradient(ne, nd, self.d[i]).ok()?;
        let k = -self.space.slope(model);
        let r = self.target[i] - self.space.transform(model);
        r.is_finite().then_some((r, [k * grad[0] * params.alpha, k * grad[1] * dp_ds(params.p)]))
    }
}

impl Problem for JointProblem {
    fn n_params(&self) -> usize {
        2
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let params = self.params(x);
        let mut r = DVector::zeros(self.d.len());
        for i in 0..self.d.len() {
            r[i] = self.row(&params, i)?.0;
        }
        Some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let params = self.params(x);
        let mut jac = DMatrix::zeros(self.d.len(), 2);
        for i in 0..self.d.len() {
            let (_, g) = self.row(&params, i)?;
            jac[(i, 0)] = g[0];
            jac[(i, 1)] = g[1];
        }
        Some(jac)
    }
}

/// Fits `alpha` and `p` of the joint data/parameter law with the capacity
/// parameters held fixed. Observations whose `(n_enc, n_dec)` appears in
/// `hold_out` are excluded from the fit and only predicted.
pub fn fit_joint(
    obs: &[Observation],
    fixed: &CapacityParams,
    hold_out: &[(u64, u64)],
    cfg: &FitConfig,
) -> Result<JointFitResult> {
    cfg.validate()?;
    fixed.validate()?;
    let mut shapes = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        o.validate()?;
        if !(o.loss > 0.0) {
            return Err(Error::Domain(format!("loss must be positive, got {}", o.loss)));
        }
        let shape = o.shape().ok_or_else(|| {
            Error::Schema(format!("observation {i} has no encoder/decoder parameter counts"))
        })?;
        shapes.push(shape);
    }
    let in_sample: Vec<bool> = shapes.iter().map(|s| !hold_out.contains(s)).collect();
    let fitted: Vec<usize> = (0..obs.len()).filter(|&i| in_sample[i]).collect();
    if fitted.len() < MIN_SINGLE_POINTS {
        return Err(Error::InsufficientData { needed: MIN_SINGLE_POINTS, got: fitted.len() });
    }
    let problem = JointProblem {
        shapes: fitted.iter().map(|&i| shapes[i]).collect(),
        d: fitted.iter().map(|&i| obs[i].d_millions).collect(),
        target: fitted.iter().map(|&i| cfg.loss_space.transform(obs[i].loss)).collect(),
        fixed: *fixed,
        space: cfg.loss_space,
    };
    let loss: Vec<f64> = fitted.iter().map(|&i| obs[i].loss).collect();
    let (alpha0, p0) = seed_alpha_p(&problem.d, &loss);
    let encode = |alpha: f64, p: f64| DVector::from_vec(vec![alpha.ln(), encode_p(p)]);
    let mut perturb = Perturber::new(cfg.seed);
    let mut starts = vec![encode(alpha0, p0)];
    for _ in 0..cfg.n_restarts {
        starts.push(encode(perturb.scale(alpha0), perturb.exponent(p0)));
    }
    let out = multistart(&problem, starts, cfg);
    let params = problem.params(&out.x);

    let residuals: Vec<f64> = obs
        .iter()
        .zip(&shapes)
        .map(|(o, &(ne, nd))| {
            let model = params.eval(ne, nd, o.d_millions).unwrap_or(f64::NAN);
            cfg.loss_space.transform(o.loss) - cfg.loss_space.transform(model)
        })
        .collect();
    let objective = residuals.iter().zip(&in_sample).filter(|(_, &s)| s).map(|(r, _)| r * r).sum();
    Ok(JointFitResult {
        params,
        objective,
        residuals,
        in_sample,
        converged: out.converged && out.objective.is_finite(),
        n_iters: out.iters,
    })
}

/// `gamma = exp(x0)`, `q = exp(x1)`, `b = exp(x2)`.
struct TailProblem {
    d: Vec<f64>,
    target: Vec<f64>,
    space: LossSpace,
}

impl TailProblem {
    fn law(x: &DVector<f64>) -> TailLaw {
        TailLaw { gamma: x[0].exp(), q: x[1].exp(), b: x[2].exp() }
    }
}

impl Problem for TailProblem {
    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let law = Self::law(x);
        let mut r = DVector::zeros(self.d.len());
        for (i, (&d, &t)) in self.d.iter().zip(&self.target).enumerate() {
            r[i] = t - self.space.transform(law.eval(d).ok()?);
            if !r[i].is_finite() {
                return None;
            }
        }
        Some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let law = Self::law(x);
        let mut jac = DMatrix::zeros(self.d.len(), 3);
        for (i, &d) in self.d.iter().enumerate() {
            let power = d.powf(-law.q);
            let k = -self.space.slope(law.gamma * power + law.b);
            jac[(i, 0)] = k * power * law.gamma;
            jac[(i, 1)] = k * law.gamma * power * (-d.ln()) * law.q;
            jac[(i, 2)] = k * law.b;
        }
        Some(jac)
    }
}

/// Fits the variance-limited tail `L = gamma d^-q + B` to the observations
/// with `d >= d_min`.
pub fn fit_tail(obs: &[Observation], d_min: f64, cfg: &FitConfig) -> Result<TailFitResult> {
    cfg.validate()?;
    if !(d_min > 0.0) {
        return Err(Error::Domain(format!("d_min must be positive, got {d_min}")));
    }
    let tail: Vec<Observation> = obs.iter().filter(|o| o.d_millions >= d_min).cloned().collect();
    let (d, loss) = validate_curve(&tail, MIN_TAIL_POINTS)?;
    let problem = TailProblem {
        target: loss.iter().map(|&l| cfg.loss_space.transform(l)).collect(),
        d,
        space: cfg.loss_space,
    };
    let min_loss = loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let seed_for = |b: f64| {
        let x: Vec<f64> = problem.d.iter().map(|d| d.ln()).collect();
        let y: Vec<f64> = loss.iter().map(|l| (l - b).ln()).collect();
        let (slope, intercept) = ols(&x, &y).unwrap_or((-1.0, 0.0));
        let q = if slope.is_finite() { (-slope).clamp(0.05, 5.0) } else { 1.0 };
        let gamma = if intercept.is_finite() { intercept.exp() } else { 1.0 };
        DVector::from_vec(vec![gamma.ln(), q.ln(), b.ln()])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![seed_for(0.9 * min_loss)];
    for _ in 0..cfg.n_restarts {
        let u: f64 = rand::Rng::random_range(&mut rng, 0.05..0.99);
        starts.push(seed_for(u * min_loss));
    }
    let out = multistart(&problem, starts, cfg);
    let law = TailProblem::law(&out.x);
    let residuals: Vec<f64> = problem
        .d
        .iter()
        .zip(&loss)
        .map(|(&d, &l)| cfg.loss_space.transform(l) - cfg.loss_space.transform(law.eval(d).unwrap_or(f64::NAN)))
        .collect();
    Ok(TailFitResult {
        law,
        objective: sum_sq(&residuals),
        residuals,
        converged: out.converged && out.objective.is_finite(),
        n_iters: out.iters,
    })
}

/// Ordinary least squares line through `(x, y)` with its coefficient of
/// determination.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Schema(format!("x has {} values but y has {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in linear fit".into()));
    }
    let (slope, intercept) =
        ols(x, y).ok_or_else(|| Error::Rank("all x values are identical".into()))?;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    fn value(&self, i: usize) -> f64 {
        if self.steps <= 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub alpha: GridAxis,
    pub c: GridAxis,
    pub p: GridAxis,
    pub loss_space: LossSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub law: PowerLaw,
    pub objective: f64,
    pub evaluations: usize,
}

/// Exhaustive search over a rectangular `(alpha, C, p)` grid. Slow by
/// construction; it exists to bound [`fit_single`] from above in tests.
pub fn grid_oracle(obs: &[Observation], grid: &Grid) -> Result<GridResult> {
    let axes = [grid.alpha, grid.c, grid.p];
    if axes.iter().any(|a| a.steps == 0) {
        return Err(Error::Domain("grid axes need at least one step".into()));
    }
    for o in obs {
        o.validate()?;
    }
    if obs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let transform = |v: f64| match grid.loss_space {
        LossSpace::Log => v.ln(),
        LossSpace::Linear => v,
    };
    let mut best: Option<(PowerLaw, f64)> = None;
    let mut evaluations = 0;
    for i in 0..grid.alpha.steps {
        for j in 0..grid.c.steps {
            for k in 0..grid.p.steps {
                let alpha = grid.alpha.value(i);
                let c = grid.c.value(j);
                let p = grid.p.value(k);
                evaluations += 1;
                let mut total = 0.0;
                for o in obs {
                    let predicted = alpha * (1.0 / o.d_millions + c).powf(p);
                    let r = transform(o.loss) - transform(predicted);
                    total += r * r;
                }
                if total.is_finite() && best.as_ref().is_none_or(|(_, b)| total < *b) {
                    best = Some((PowerLaw { alpha, c, p }, total));
                }
            }
        }
    }
    let (law, objective) =
        best.ok_or_else(|| Error::Domain("objective is undefined on the whole grid".into()))?;
    law.validate()?;
    Ok(GridResult { law, objective, evaluations })
}
