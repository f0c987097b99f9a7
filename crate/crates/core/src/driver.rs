//! Outer loops: the parallel-SGD descent method (FS), the distributed batch
//! baseline (SQM) and the mixing-initialized baseline (Hybrid).
//!
//! Every method evaluates `f` and `g` at the current point through the
//! cluster, picks a direction, and runs the shared line search. One trace
//! row is written per evaluated point.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info, warn};

use crate::approx::TiltedApprox;
use crate::cluster::{Cluster, CommLedger, Phase};
use crate::data::{Dataset, PartitionPlan};
use crate::direction::{
    line_search, margin_loss_along, safeguard, uniform_weights, weighted_parts, LineSearchConfig,
    LineSearchOutcome, RegularizerLine, SafeguardConfig,
};
use crate::error::{Error, Result};
use crate::exact::{ExactSum, ExactVec};
use crate::loss::{check_dim, dot, norm2, norm_inf, MarginCache, Objective};
use crate::metrics::{relative_gap, ReferenceSolution};
use crate::svrg::{run_svrg_with_rng, sgd_epoch, StepSize, SvrgConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Fs,
    Sqm,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fs, Method::Sqm, Method::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fs => "fs",
            Method::Sqm => "sqm",
            Method::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fs" => Ok(Method::Fs),
            "sqm" => Ok(Method::Sqm),
            "hybrid" => Ok(Method::Hybrid),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (fs, sqm, hybrid)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub svrg: SvrgConfig,
    pub safeguard: SafeguardConfig,
    pub line_search: LineSearchConfig,
    pub max_outer_iters: usize,
    /// Stop once `|g|_inf` falls to this value.
    pub grad_tol: f64,
    /// Stop once the relative gap falls to this value; needs a reference.
    pub gap_tol: Option<f64>,
    /// Seeds the per-node generators.
    pub seed: u64,
    /// Worker threads; `None` means one per core.
    pub workers: Option<usize>,
    /// Fail instead of accepting an Armijo-only step when the line search
    /// runs out of evaluations.
    pub strict: bool,
    /// Correction pairs kept by the batch baselines.
    pub lbfgs_memory: usize,
    /// Record elapsed milliseconds in the trace (otherwise 0).
    pub wall_clock: bool,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Fs,
            svrg: SvrgConfig::default(),
            safeguard: SafeguardConfig::default(),
            line_search: LineSearchConfig::default(),
            max_outer_iters: 100,
            grad_tol: 1e-8,
            gap_tol: None,
            seed: 0,
            workers: None,
            strict: false,
            lbfgs_memory: 10,
            wall_clock: false,
            warm_start: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, reference: Option<&ReferenceSolution>) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::Config(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        if let Some(tol) = self.gap_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!(
                    "gap tolerance must be positive, got {tol}"
                )));
            }
            if reference.is_none() {
                return Err(Error::Config(
                    "gap tolerance needs a reference solution".into(),
                ));
            }
        }
        self.safeguard.validate()?;
        self.line_search.validate()?;
        match self.method {
            Method::Fs => self.svrg.validate()?,
            Method::Sqm | Method::Hybrid => {
                if self.lbfgs_memory == 0 {
                    return Err(Error::Config("L-BFGS memory must be positive".into()));
                }
                if let StepSize::Fixed(eta) = self.svrg.step_size {
                    if !(eta >= 0.0 && eta.is_finite()) {
                        return Err(Error::Config(format!(
                            "SGD step size must be non-negative, got {eta}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    GapTolerance,
    IterationBudget,
    /// The line search found no step with sufficient decrease.
    LineSearchStalled,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::GradientTolerance => "grad_tol",
            StopReason::GapTolerance => "gap_tol",
            StopReason::IterationBudget => "max_outer_iters",
            StopReason::LineSearchStalled => "line_search_stalled",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluated point `w^r` and the step taken from it.
///
/// Counters (`passes`, `scalar_msgs`, `epochs`) are cumulative up to and
/// including the evaluation of `w^r`. `t` is 0 on the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub r: usize,
    pub f: f64,
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub grad_inf: f64,
    pub t: f64,
    /// `g^r . d^r`
    pub slope: f64,
    pub f_next: Option<f64>,
    /// Whether the accepted step also met the curvature condition.
    pub wolfe: bool,
    pub passes: u64,
    pub scalar_msgs: u64,
    /// Node directions replaced by `-g` in this iteration.
    pub safeguards: usize,
    pub epochs: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub w: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub stop: StopReason,
    pub ledger: CommLedger,
}

impl RunResult {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.trace.last()
    }

    /// Passes spent when the gap first fell to `tol`.
    pub fn passes_to_gap(&self, tol: f64) -> Option<u64> {
        self.trace
            .iter()
            .find(|rec| rec.gap.is_some_and(|g| g <= tol))
            .map(|rec| rec.passes)
    }
}

/// A completed step, for audits.
#[derive(Clone, Copy, Debug)]
pub struct StepAudit<'a> {
    pub r: usize,
    pub w: &'a [f64],
    pub g: &'a [f64],
    pub d: &'a [f64],
    pub f: f64,
    pub t: f64,
    pub f_next: f64,
    pub slope_next: f64,
    pub wolfe: bool,
}

/// Hooks into a run. All calls come from the controller thread.
pub trait Observer {
    fn on_evaluate(&mut self, _r: usize, _w: &[f64], _g: &[f64], _f: f64) {}

    /// Called after the parallel phase with node `p`'s model and direction.
    fn on_node_approx(
        &mut self,
        _r: usize,
        _approx: &TiltedApprox<'_>,
        _d_p: &[f64],
        _replaced: bool,
    ) {
    }

    fn on_step(&mut self, _step: &StepAudit<'_>) {}
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoObserver;

impl Observer for NoObserver {}

pub fn check_stop(
    g: &[f64],
    f: f64,
    r: usize,
    cfg: &RunConfig,
    reference: Option<&ReferenceSolution>,
) -> Result<Option<StopReason>> {
    if norm_inf(g) <= cfg.grad_tol {
        return Ok(Some(StopReason::GradientTolerance));
    }
    if let Some(tol) = cfg.gap_tol {
        let reference = reference
            .ok_or_else(|| Error::Config("gap tolerance needs a reference solution".into()))?;
        if relative_gap(f, reference)? <= tol {
            return Ok(Some(StopReason::GapTolerance));
        }
    }
    if r >= cfg.max_outer_iters {
        return Ok(Some(StopReason::IterationBudget));
    }
    Ok(None)
}

/// Limited-memory inverse-Hessian approximation.
#[derive(Clone, Debug)]
struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-10 * norm2(&s) * norm2(&y)) {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qk, yk) in q.iter_mut().zip(y) {
                *qk -= a * yk;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|x| *x *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qk, sk) in q.iter_mut().zip(s) {
                *qk += (a - b) * sk;
            }
        }
        q.iter_mut().for_each(|x| *x = -*x);
        q
    }
}

fn collect_results<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Broadcasts `w`, reduces the gradient and the objective value. Leaves the
/// margins and the local loss gradient on every node.
fn evaluate(cluster: &mut Cluster, obj: Objective, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let w_node = cluster.broadcast(w, Phase::BroadcastW)?;
    let parts = collect_results(cluster.map_mut(|n| {
        let part = obj.loss_partial(&n.data, &w_node)?;
        n.local_grad = part.grad.round();
        n.cache = Some(MarginCache::from_margins(part.margins, &w_node));
        Ok((part.value, part.grad))
    }))?;
    let (values, grads): (Vec<ExactSum>, Vec<ExactVec>) = parts.into_iter().unzip();
    let mut g = cluster.reduce_sum(grads, Phase::ReduceG)?;
    obj.finish_gradient(&mut g, w);
    let loss = cluster.reduce_scalars(values.into_iter().map(|v| vec![v]).collect())?[0];
    Ok((obj.finish_value(loss, w), g))
}

/// Node directions from SVRG on the tilted models, safeguarded and averaged.
fn fs_direction(
    cluster: &mut Cluster,
    obj: Objective,
    cfg: &RunConfig,
    w: &[f64],
    g: &[f64],
    r: usize,
    observer: &mut dyn Observer,
) -> Result<(Vec<f64>, usize)> {
    let svrg = cfg.svrg;
    let guard = cfg.safeguard;
    let dirs = collect_results(cluster.map_mut(|n| {
        let approx =
            TiltedApprox::from_local_gradient(obj, n.id, &n.data, w, g, n.local_grad.clone())?;
        let out = run_svrg_with_rng(&approx, w, &svrg, &mut n.rng)?;
        let d_p: Vec<f64> = out.w.iter().zip(w).map(|(a, b)| a - b).collect();
        let (d, replaced) = safeguard(d_p.clone(), g, &guard)?;
        Ok((d_p, d, replaced))
    }))?;
    for (node, (d_p, _, replaced)) in cluster.nodes().iter().zip(&dirs) {
        let approx = TiltedApprox::from_local_gradient(
            obj,
            node.id,
            &node.data,
            w,
            g,
            node.local_grad.clone(),
        )?;
        observer.on_node_approx(r, &approx, d_p, *replaced);
    }
    let triggered = dirs.iter().filter(|(_, _, replaced)| *replaced).count();
    let kept: Vec<Vec<f64>> = dirs.into_iter().map(|(_, d, _)| d).collect();
    let parts = weighted_parts(&kept, &uniform_weights(cluster.len()))?;
    let d = cluster.reduce_sum(parts, Phase::ReduceD)?;
    Ok((d, triggered))
}

/// One SGD epoch per node on its untilted local objective from `w0`, then
/// the average.
fn mixed_start(
    cluster: &mut Cluster,
    obj: Objective,
    cfg: &RunConfig,
    w0: &[f64],
) -> Result<Vec<f64>> {
    let svrg = cfg.svrg;
    let locals = collect_results(cluster.map_mut(|n| {
        let approx = TiltedApprox::plain(obj, n.id, &n.data, w0)?;
        let eta = svrg.step_size.resolve(&approx);
        sgd_epoch(
            &approx,
            w0,
            eta,
            svrg.updates_per_epoch,
            svrg.sampling,
            &mut n.rng,
        )
    }))?;
    let parts = weighted_parts(&locals, &uniform_weights(cluster.len()))?;
    cluster.reduce_sum(parts, Phase::InitMix)
}

/// `phi(t)` and `phi'(t)` from node-local margin caches; one scalar message.
fn line_eval(
    cluster: &mut Cluster,
    obj: Objective,
    reg: &RegularizerLine,
    t: f64,
) -> Result<(f64, f64)> {
    let loss = obj.loss();
    let parts = collect_results(cluster.map(|n| {
        let cache = n.cache.as_ref().ok_or(Error::StaleCache)?;
        let s = cache.s.as_ref().ok_or(Error::StaleCache)?;
        let (v, d) = margin_loss_along(loss, n.data.labels(), &cache.z, s, t);
        Ok(vec![v, d])
    }))?;
    let sums = cluster.reduce_scalars(parts)?;
    let (rv, rd) = reg.eval(t);
    Ok((rv + sums[0], rd + sums[1]))
}

enum StepResult {
    Accepted(LineSearchOutcome, bool),
    Stalled,
}

fn search(
    cluster: &mut Cluster,
    obj: Objective,
    cfg: &RunConfig,
    w: &[f64],
    d: &[f64],
    f: f64,
    slope: f64,
) -> Result<StepResult> {
    collect_results(cluster.map_mut(|n| {
        let cache = n.cache.take().ok_or(Error::StaleCache)?;
        n.cache = Some(cache.with_direction(&n.data, d)?);
        Ok(())
    }))?;
    let reg = RegularizerLine::new(obj.lambda(), w, d);
    let outcome = line_search(
        |t| line_eval(cluster, obj, &reg, t),
        f,
        slope,
        &cfg.line_search,
    );
    match outcome {
        Ok(out) => Ok(StepResult::Accepted(out, true)),
        Err(Error::LineSearch { evals, best }) if !cfg.strict => match best {
            Some(t) => {
                warn!("line search used {evals} evaluations; accepting Armijo step t = {t:e}");
                let (value, slope) = line_eval(cluster, obj, &reg, t)?;
                Ok(StepResult::Accepted(
                    LineSearchOutcome {
                        t,
                        value,
                        slope,
                        evals: evals + 1,
                    },
                    false,
                ))
            }
            None => {
                warn!("line search found no decrease after {evals} evaluations; stopping");
                Ok(StepResult::Stalled)
            }
        },
        Err(e) => Err(e),
    }
}

/// Runs `cfg.method` on `data` split by `plan`.
pub fn run(
    data: &Dataset,
    plan: &PartitionPlan,
    obj: Objective,
    cfg: &RunConfig,
    reference: Option<&ReferenceSolution>,
    observer: &mut dyn Observer,
) -> Result<RunResult> {
    cfg.validate(reference)?;
    let start = Instant::now();
    let elapsed = || {
        if cfg.wall_clock {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };
    let mut w = match &cfg.warm_start {
        Some(w0) => {
            check_dim(data.dim(), w0.len())?;
            w0.clone()
        }
        None => vec![0.0; data.dim()],
    };
    let mut cluster = Cluster::new(data, plan, cfg.seed, cfg.workers)?;
    debug!(
        "{} on {} nodes, {} workers",
        cfg.method,
        cluster.len(),
        cluster.workers()
    );
    let finish = |w: Vec<f64>,
                  trace: Vec<IterationRecord>,
                  stop: StopReason,
                  cluster: &Cluster|
     -> Result<RunResult> {
        info!("{} stopped ({stop}): {}", cfg.method, cluster.ledger());
        Ok(RunResult {
            method: cfg.method,
            w,
            trace,
            stop,
            ledger: *cluster.ledger(),
        })
    };
    let mut trace = Vec::new();
    if cfg.max_outer_iters == 0 {
        return finish(w, trace, StopReason::IterationBudget, &cluster);
    }

    let mut epochs = 0;
    if cfg.method == Method::Hybrid {
        w = mixed_start(&mut cluster, obj, cfg, &w)?;
        epochs = 1;
    }
    let mut lbfgs = Lbfgs::new(cfg.lbfgs_memory);
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;

    for r in 0.. {
        let (f, g) = evaluate(&mut cluster, obj, &w)?;
        observer.on_evaluate(r, &w, &g, f);
        let gap = reference.map(|rs| relative_gap(f, rs)).transpose()?;
        let mut rec = IterationRecord {
            r,
            f,
            gap,
            grad_norm: norm2(&g),
            grad_inf: norm_inf(&g),
            t: 0.0,
            slope: 0.0,
            f_next: None,
            wolfe: false,
            passes: cluster.ledger().passes(),
            scalar_msgs: cluster.ledger().scalar_msgs(),
            safeguards: 0,
            epochs,
            wall_ms: elapsed(),
        };
        if let Some(stop) = check_stop(&g, f, r, cfg, reference)? {
            trace.push(rec);
            return finish(w, trace, stop, &cluster);
        }

        let (mut d, safeguards) = match cfg.method {
            Method::Fs => {
                epochs += cfg.svrg.epochs;
                fs_direction(&mut cluster, obj, cfg, &w, &g, r, observer)?
            }
            Method::Sqm | Method::Hybrid => {
                if let Some((pw, pg)) = previous.take() {
                    let s = w.iter().zip(&pw).map(|(a, b)| a - b).collect();
                    let y = g.iter().zip(&pg).map(|(a, b)| a - b).collect();
                    if !lbfgs.push(s, y) {
                        debug!("r={r}: skipped curvature pair");
                    }
                }
                (lbfgs.direction(&g), 0)
            }
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0 && slope.is_finite()) {
            warn!("r={r}: direction is not a descent direction (g.d = {slope:e}); using -g");
            lbfgs.clear();
            d = g.iter().map(|x| -x).collect();
            slope = dot(&g, &d);
        }

        let (out, wolfe) = match search(&mut cluster, obj, cfg, &w, &d, f, slope)? {
            StepResult::Accepted(out, wolfe) => (out, wolfe),
            StepResult::Stalled => {
                rec.safeguards = safeguards;
                rec.slope = slope;
                trace.push(rec);
                return finish(w, trace, StopReason::LineSearchStalled, &cluster);
            }
        };
        observer.on_step(&StepAudit {
            r,
            w: &w,
            g: &g,
            d: &d,
            f,
            t: out.t,
            f_next: out.value,
            slope_next: out.slope,
            wolfe,
        });
        rec.t = out.t;
        rec.slope = slope;
        rec.f_next = Some(out.value);
        rec.wolfe = wolfe;
        rec.safeguards = safeguards;
        trace.push(rec);

        let next: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + out.t * b).collect();
        previous = Some((std::mem::replace(&mut w, next), g));
    }
    unreachable!("the outer loop only exits by returning")
}

fn run_as(
    method: Method,
    data: &Dataset,
    plan: &PartitionPlan,
    obj: Objective,
    cfg: &RunConfig,
) -> Result<RunResult> {
    let cfg = RunConfig {
        method,
        ..cfg.clone()
    };
    run(data, plan, obj, &cfg, None, &mut NoObserver)
}

pub fn run_fs(
    data: &Dataset,
    plan: &PartitionPlan,
    obj: Objective,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run_as(Method::Fs, data, plan, obj, cfg)
}

pub fn run_sqm(
    data: &Dataset,
    plan: &PartitionPlan,
    obj: Objective,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run_as(Method::Sqm, data, plan, obj, cfg)
}

pub fn run_hybrid(
    data: &Dataset,
    plan: &PartitionPlan,
    obj: Objective,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run_as(Method::Hybrid, data, plan, obj, cfg)
}

pub const TRACE_HEADER: &str = "r,f,gap,gnorm,t,passes,scalar_msgs,safeguards,epochs,wall_ms";

/// Writes the trace as CSV. `gap` is empty without a reference.
pub fn write_trace<W: Write>(trace: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for rec in trace {
        let gap = rec.gap.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rec.r,
            rec.f,
            gap,
            rec.grad_norm,
            rec.t,
            rec.passes,
            rec.scalar_msgs,
            rec.safeguards,
            rec.epochs,
            rec.wall_ms
        )?;
    }
    Ok(())
}
