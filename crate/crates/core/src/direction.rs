//! Direction safeguarding and aggregation, and the line search along the
//! aggregated direction.

use log::debug;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exact::{ExactSum, ExactVec};
use crate::loss::{check_dim, dot, norm2, LossKind, MarginCache, Objective};

/// Node directions are kept when `cos(-g, d_p) > tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafeguardConfig {
    pub tau: f64,
}

impl Default for SafeguardConfig {
    fn default() -> Self {
        Self { tau: 0.0 }
    }
}

impl SafeguardConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.tau) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "tau must lie in [0, 1), got {}",
                self.tau
            )))
        }
    }
}

/// Cosine of the angle between `-g` and `d`; `None` when either is zero.
pub fn descent_cosine(d: &[f64], g: &[f64]) -> Option<f64> {
    let (nd, ng) = (norm2(d), norm2(g));
    if nd == 0.0 || ng == 0.0 {
        return None;
    }
    Some(-dot(g, d) / (nd * ng))
}

/// Replaces `d_p` by `-g` unless it is aligned with `-g` beyond the
/// threshold. Returns the direction and whether it was replaced.
pub fn safeguard(d_p: Vec<f64>, g: &[f64], cfg: &SafeguardConfig) -> Result<(Vec<f64>, bool)> {
    check_dim(g.len(), d_p.len())?;
    if g.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroGradient);
    }
    match descent_cosine(&d_p, g) {
        Some(c) if c.is_finite() && c > cfg.tau => Ok((d_p, false)),
        _ => Ok((g.iter().map(|x| -x).collect(), true)),
    }
}

/// `1/P` for each of `P` nodes.
pub fn uniform_weights(nodes: usize) -> Vec<f64> {
    vec![1.0 / nodes as f64; nodes]
}

fn check_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count || count == 0 {
        return Err(Error::Config(format!(
            "{} weights for {count} directions",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config(
            "combination weights must be non-negative".into(),
        ));
    }
    let total: ExactSum = weights.iter().copied().collect();
    if (total.value() - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "combination weights sum to {}, not 1",
            total.value()
        )));
    }
    Ok(())
}

/// Per-direction exact accumulators of `weight_p * d_p`, ready to be reduced.
pub fn weighted_parts(dirs: &[Vec<f64>], weights: &[f64]) -> Result<Vec<ExactVec>> {
    check_weights(weights, dirs.len())?;
    let dim = dirs[0].len();
    dirs.iter()
        .zip(weights)
        .map(|(d, &w)| {
            check_dim(dim, d.len())?;
            Ok(ExactVec::scaled(d, w))
        })
        .collect()
}

/// Convex combination `sum_p weight_p d_p`.
pub fn combine(dirs: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let mut parts = weighted_parts(dirs, weights)?.into_iter();
    let mut acc = parts.next().expect("at least one direction");
    for p in parts {
        acc.merge(&p);
    }
    Ok(acc.round())
}

/// The regularizer restricted to the line `w + t d`, from three inner
/// products.
#[derive(Clone, Copy, Debug)]
pub struct RegularizerLine {
    lambda: f64,
    ww: f64,
    wd: f64,
    dd: f64,
}

impl RegularizerLine {
    pub fn new(lambda: f64, w: &[f64], d: &[f64]) -> Self {
        Self {
            lambda,
            ww: dot(w, w),
            wd: dot(w, d),
            dd: dot(d, d),
        }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        (
            0.5 * self.lambda * (self.ww + t * (2.0 * self.wd + t * self.dd)),
            self.lambda * (self.wd + t * self.dd),
        )
    }
}

/// Exact sums of `l(z_i + t s_i)` and `l'(z_i + t s_i) s_i`.
pub fn margin_loss_along(
    loss: LossKind,
    labels: &[i8],
    z: &[f64],
    s: &[f64],
    t: f64,
) -> (ExactSum, ExactSum) {
    let mut value = ExactSum::new();
    let mut slope = ExactSum::new();
    for ((&y, &zi), &si) in labels.iter().zip(z).zip(s) {
        let (l, dl) = loss.eval(zi + t * si, f64::from(y));
        value.add(l);
        slope.add(dl * si);
    }
    (value, slope)
}

/// `phi(t) = f(w + t d)` and `phi'(t)` from cached margins; no work on
/// feature vectors.
pub fn directional_eval(
    obj: &Objective,
    ds: &Dataset,
    cache: &MarginCache,
    w: &[f64],
    d: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    check_dim(ds.dim(), w.len())?;
    check_dim(ds.dim(), d.len())?;
    let s = cache.s.as_ref().ok_or(Error::StaleCache)?;
    if cache.z.len() != ds.len() || !cache.matches_w(w) || !cache.matches_d(d) {
        return Err(Error::StaleCache);
    }
    let (lv, ls) = margin_loss_along(obj.loss(), ds.labels(), &cache.z, s, t);
    let (rv, rs) = RegularizerLine::new(obj.lambda(), w, d).eval(t);
    Ok((rv + lv.value(), rs + ls.value()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant.
    pub alpha: f64,
    /// Curvature constant.
    pub beta: f64,
    pub t_init: f64,
    pub max_evals: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 0.9,
            t_init: 1.0,
            max_evals: 50,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < self.beta && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha < beta < 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.t_init > 0.0 && self.t_init.is_finite()) || self.max_evals == 0 {
            return Err(Error::Config(
                "line search needs t_init > 0 and max_evals >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn armijo(&self, phi0: f64, dphi0: f64, t: f64, phi_t: f64) -> bool {
        phi_t <= phi0 + self.alpha * t * dphi0
    }

    pub fn wolfe(&self, dphi0: f64, dphi_t: f64) -> bool {
        dphi_t >= self.beta * dphi0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub t: f64,
    pub value: f64,
    pub slope: f64,
    pub evals: usize,
}

#[derive(Clone, Copy)]
struct Point {
    t: f64,
    f: f64,
    g: f64,
}

/// Minimizer of the cubic matching values and slopes at both ends, kept at
/// least a tenth of the bracket away from either end.
fn interpolate(lo: Point, hi: Point) -> f64 {
    let width = hi.t - lo.t;
    let mid = lo.t + 0.5 * width;
    if !(hi.f.is_finite() && hi.g.is_finite()) {
        return mid;
    }
    let d1 = lo.g + hi.g - 3.0 * (lo.f - hi.f) / (lo.t - hi.t);
    let rad = d1 * d1 - lo.g * hi.g;
    if rad < 0.0 {
        return mid;
    }
    let d2 = width.signum() * rad.sqrt();
    let t = hi.t - width * (hi.g + d2 - d1) / (hi.g - lo.g + 2.0 * d2);
    if !t.is_finite() {
        return mid;
    }
    t.clamp(lo.t + 0.1 * width, hi.t - 0.1 * width)
}

/// Finds `t > 0` satisfying the Armijo and (weak) Wolfe conditions.
///
/// The step starts at `t_init` and doubles until the Armijo condition fails,
/// then cubic interpolation (bisection fallback) shrinks the bracket. On
/// budget exhaustion the error carries the best Armijo-feasible step.
pub fn line_search<F>(
    mut phi: F,
    phi0: f64,
    dphi0: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    if !(dphi0 < 0.0) {
        return Err(Error::NotDescent { slope: dphi0 });
    }
    let mut lo = Point {
        t: 0.0,
        f: phi0,
        g: dphi0,
    };
    let mut hi: Option<Point> = None;
    let mut best: Option<(f64, f64)> = None;
    let mut t = cfg.t_init;
    for evals in 1..=cfg.max_evals {
        let (f, g) = phi(t)?;
        let cur = Point { t, f, g };
        if !f.is_finite() || !cfg.armijo(phi0, dphi0, t, f) {
            hi = Some(cur);
        } else {
            if best.is_none_or(|(_, bf)| f < bf) {
                best = Some((t, f));
            }
            if cfg.wolfe(dphi0, g) {
                return Ok(LineSearchOutcome {
                    t,
                    value: f,
                    slope: g,
                    evals,
                });
            }
            lo = cur;
        }
        t = match hi {
            None => 2.0 * t,
            Some(h) => interpolate(lo, h),
        };
        debug!("line search eval {evals}: next t = {t:e}");
    }
    Err(Error::LineSearch {
        evals: cfg.max_evals,
        best: best.map(|(t, _)| t),
    })
}
