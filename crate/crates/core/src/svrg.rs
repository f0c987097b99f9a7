//! Stochastic variance-reduced gradient (SVRG) on a node-local model, plus a
//! plain SGD epoch for parameter mixing.
//!
//! The model is treated as the finite sum `f_p = (1/n) sum_j n psi_j`. Each
//! epoch takes a snapshot `w~`, computes `mu = grad f_p(w~)`, then performs
//! `m` updates
//!
//! ```text
//! w <- w - eta * ( n (grad psi_j(w) - grad psi_j(w~)) + mu )
//! ```
//!
//! The bracketed estimate is unbiased for `grad f_p(w)` and equals `mu`
//! exactly at `w = w~`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::TiltedApprox;
use crate::error::{Error, Result};
use crate::loss::{check_dim, norm2};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Uniform draws with replacement.
    WithReplacement,
    /// Passes over a fresh random permutation.
    Shuffled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `0.1 / L_p` with `L_p` the node-local Lipschitz bound.
    Auto,
    Fixed(f64),
}

impl StepSize {
    pub fn resolve(self, approx: &TiltedApprox<'_>) -> f64 {
        match self {
            StepSize::Auto => {
                let obj = approx.objective();
                0.1 / obj.lipschitz_bound(approx.data())
            }
            StepSize::Fixed(eta) => eta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvrgConfig {
    /// Snapshot epochs `s`.
    pub epochs: usize,
    pub step_size: StepSize,
    /// Inner updates per epoch; `None` means one per local example.
    pub updates_per_epoch: Option<usize>,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for SvrgConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            step_size: StepSize::Auto,
            updates_per_epoch: None,
            seed: 0,
            sampling: Sampling::WithReplacement,
        }
    }
}

impl SvrgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("SVRG needs at least one epoch".into()));
        }
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!(
                    "SVRG step size must be positive, got {eta}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SvrgOutcome {
    pub w: Vec<f64>,
    pub epochs: usize,
    pub inner_updates: usize,
    /// Full passes over local data spent on snapshot gradients.
    pub snapshot_passes: usize,
}

struct IndexSampler {
    mode: Sampling,
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl IndexSampler {
    fn new(mode: Sampling, n: usize) -> Self {
        Self {
            mode,
            n,
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> usize {
        match self.mode {
            Sampling::WithReplacement => rng.random_range(0..self.n),
            Sampling::Shuffled => {
                if self.pos == self.n {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            }
        }
    }
}

/// `grad f_p(w)` and the margins at `w`, with plain (node-local) summation.
fn model_gradient(a: &TiltedApprox<'_>, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let data = a.data();
    let obj = a.objective();
    let lambda = obj.lambda();
    let mut grad: Vec<f64> = w
        .iter()
        .zip(a.tilt())
        .map(|(x, c)| lambda * x + c)
        .collect();
    let mut margins = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let row = data.row(i);
        let z = row.dot(w);
        let dl = obj.loss().eval(z, data.label(i)).1;
        row.axpy(dl, &mut grad);
        margins.push(z);
    }
    (grad, margins)
}

/// The variance-reduced gradient estimate for component `j`, computed
/// directly from component gradients.
pub fn variance_reduced_grad(
    a: &TiltedApprox<'_>,
    w: &[f64],
    snapshot: &[f64],
    mu: &[f64],
    j: usize,
) -> Result<Vec<f64>> {
    check_dim(a.dim(), mu.len())?;
    let n = a.len() as f64;
    let gw = a.component_grad(w, j)?;
    let gs = a.component_grad(snapshot, j)?;
    Ok((0..a.dim()).map(|k| n * (gw[k] - gs[k]) + mu[k]).collect())
}

pub fn run_svrg(a: &TiltedApprox<'_>, v0: &[f64], cfg: &SvrgConfig) -> Result<SvrgOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_svrg_with_rng(a, v0, cfg, &mut rng)
}

/// SVRG drawing indices from a caller-owned generator.
pub fn run_svrg_with_rng<R: Rng>(
    a: &TiltedApprox<'_>,
    v0: &[f64],
    cfg: &SvrgConfig,
    rng: &mut R,
) -> Result<SvrgOutcome> {
    cfg.validate()?;
    check_dim(a.dim(), v0.len())?;
    let data = a.data();
    let n = data.len();
    let m = cfg.updates_per_epoch.unwrap_or(n);
    let eta = cfg.step_size.resolve(a);
    let lambda = a.objective().lambda();
    let loss = a.objective().loss();
    let scale = n as f64;

    let mut w = v0.to_vec();
    let mut sampler = IndexSampler::new(cfg.sampling, n);
    let mut inner = 0;
    for _ in 0..cfg.epochs {
        if m == 0 {
            break;
        }
        let snapshot = w.clone();
        let (mu, snap_margins) = model_gradient(a, &snapshot);
        for _ in 0..m {
            let j = sampler.next(rng);
            let row = data.row(j);
            let y = data.label(j);
            let dl = loss.eval(row.dot(&w), y).1 - loss.eval(snap_margins[j], y).1;
            for k in 0..w.len() {
                w[k] -= eta * (lambda * (w[k] - snapshot[k]) + mu[k]);
            }
            if dl != 0.0 {
                row.axpy(-eta * scale * dl, &mut w);
            }
        }
        inner += m;
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { norm: norm2(&w) });
        }
    }
    Ok(SvrgOutcome {
        w,
        epochs: cfg.epochs,
        inner_updates: inner,
        snapshot_passes: if m == 0 { 0 } else { cfg.epochs },
    })
}

/// One epoch of plain SGD on `a` (usually the untilted local objective),
/// `m` updates `w <- w - eta n grad psi_j(w)`. A zero step returns `v0`.
pub fn sgd_epoch<R: Rng>(
    a: &TiltedApprox<'_>,
    v0: &[f64],
    eta: f64,
    updates: Option<usize>,
    sampling: Sampling,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "SGD step size must be non-negative, got {eta}"
        )));
    }
    check_dim(a.dim(), v0.len())?;
    let data = a.data();
    let n = data.len();
    let lambda = a.objective().lambda();
    let loss = a.objective().loss();
    let mut w = v0.to_vec();
    if eta == 0.0 {
        return Ok(w);
    }
    let mut sampler = IndexSampler::new(sampling, n);
    for _ in 0..updates.unwrap_or(n) {
        let j = sampler.next(rng);
        let row = data.row(j);
        let dl = loss.eval(row.dot(&w), data.label(j)).1;
        for (x, c) in w.iter_mut().zip(a.tilt()) {
            *x -= eta * (lambda * *x + c);
        }
        row.axpy(-eta * n as f64 * dl, &mut w);
    }
    if !w.iter().all(|x| x.is_finite()) {
        return Err(Error::Diverged { norm: norm2(&w) });
    }
    Ok(w)
}
