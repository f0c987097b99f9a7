//! Ranking quality, optimality gap and high-precision reference solutions.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};

use crate::data::{partition, Dataset, PartitionStrategy};
use crate::driver::{run, Method, NoObserver, RunConfig, StopReason};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::loss::{norm_inf, LossKind, Objective};

/// A solution accurate enough to measure gaps against.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub w_star: Vec<f64>,
    pub f_star: f64,
    /// `|grad f(w_star)|_inf`
    pub achieved_grad_norm: f64,
    pub tolerance: f64,
    pub loss: LossKind,
    pub lambda: f64,
    pub examples: usize,
    pub fingerprint: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-12,
            max_iters: 20_000,
        }
    }
}

pub fn solve_reference(obj: Objective, data: &Dataset) -> Result<ReferenceSolution> {
    solve_reference_with(obj, data, &ReferenceConfig::default())
}

/// Batch L-BFGS on a single node. If progress stalls in floating point
/// before `grad_tol`, the point is kept when its gradient is within
/// `1e-10 (1 + |grad f(0)|_inf)`.
pub fn solve_reference_with(
    obj: Objective,
    data: &Dataset,
    cfg: &ReferenceConfig,
) -> Result<ReferenceSolution> {
    let plan = partition(data, 1, PartitionStrategy::Contiguous)?;
    let run_cfg = RunConfig {
        method: Method::Sqm,
        max_outer_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        workers: Some(1),
        ..RunConfig::default()
    };
    let res = run(data, &plan, obj, &run_cfg, None, &mut NoObserver)?;
    let last = res.final_record().ok_or(Error::EmptyDataset)?;
    let achieved = last.grad_inf;
    if res.stop != StopReason::GradientTolerance {
        let g0 = norm_inf(&obj.gradient(data, &vec![0.0; data.dim()])?);
        let fallback = 1e-10 * (1.0 + g0);
        if achieved > fallback {
            return Err(Error::ReferenceNotConverged {
                grad_norm: achieved,
                tol: cfg.grad_tol,
            });
        }
        info!(
            "reference stopped ({}) at |g|_inf = {achieved:e} after {} iterations",
            res.stop,
            res.trace.len() - 1
        );
    }
    Ok(ReferenceSolution {
        f_star: last.f,
        w_star: res.w,
        achieved_grad_norm: achieved,
        tolerance: cfg.grad_tol,
        loss: obj.loss(),
        lambda: obj.lambda(),
        examples: data.len(),
        fingerprint: data.fingerprint(),
    })
}

impl ReferenceSolution {
    /// Whether this solution belongs to `obj` on `data`.
    pub fn matches(&self, obj: Objective, data: &Dataset) -> bool {
        self.loss == obj.loss()
            && self.lambda == obj.lambda()
            && self.w_star.len() == data.dim()
            && self.examples == data.len()
            && self.fingerprint == data.fingerprint()
    }

    /// Text form: a `key value` header, then one weight per line. Values
    /// round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "loss {}", self.loss);
        let _ = writeln!(s, "lambda {}", self.lambda);
        let _ = writeln!(s, "dim {}", self.w_star.len());
        let _ = writeln!(s, "examples {}", self.examples);
        let _ = writeln!(s, "fingerprint {}", self.fingerprint);
        let _ = writeln!(s, "f_star {}", self.f_star);
        let _ = writeln!(s, "tolerance {}", self.tolerance);
        let _ = writeln!(s, "grad_norm {}", self.achieved_grad_norm);
        for w in &self.w_star {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("reference file ends before {key}")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(Error::Format(format!("expected {key}, found {line:?}"))),
            }
        };
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad {key} value {v:?}")))
        }
        let loss: LossKind = field("loss")?.parse()?;
        let lambda: f64 = num("lambda", field("lambda")?)?;
        let dim: usize = num("dim", field("dim")?)?;
        let examples: usize = num("examples", field("examples")?)?;
        let fingerprint: u64 = num("fingerprint", field("fingerprint")?)?;
        let f_star: f64 = num("f_star", field("f_star")?)?;
        let tolerance: f64 = num("tolerance", field("tolerance")?)?;
        let achieved_grad_norm: f64 = num("grad_norm", field("grad_norm")?)?;
        let w_star = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| num::<f64>("weight", l.trim().to_string()))
            .collect::<Result<Vec<_>>>()?;
        if w_star.len() != dim {
            return Err(Error::Format(format!(
                "reference declares dim {dim} but lists {} weights",
                w_star.len()
            )));
        }
        Ok(Self {
            w_star,
            f_star,
            achieved_grad_norm,
            tolerance,
            loss,
            lambda,
            examples,
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// `(f - f*) / f*`, clamped at 0 when `f` beats the reference.
pub fn relative_gap(f: f64, reference: &ReferenceSolution) -> Result<f64> {
    let f_star = reference.f_star;
    if !(f_star > 0.0 && f_star.is_finite()) {
        return Err(Error::NonPositiveReference(f_star));
    }
    let gap = (f - f_star) / f_star;
    if gap < 0.0 {
        warn!("objective {f} is below the reference {f_star}; gap clamped to 0");
        return Ok(0.0);
    }
    Ok(gap)
}

/// Area under the precision-recall curve, average-precision convention:
/// thresholds at each distinct score, equal scores enter together, and the
/// area is `sum_k (recall_k - recall_{k-1}) precision_k`.
pub fn auprc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Format("AUPRC scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&y| y > 0).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut area = ExactSum::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let score = scores[order[k]];
        let mut group_tp = 0;
        while k < order.len() && scores[order[k]] == score {
            group_tp += usize::from(labels[order[k]] > 0);
            seen += 1;
            k += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            let precision = tp as f64 / seen as f64;
            area.add(group_tp as f64 / positives as f64 * precision);
        }
    }
    Ok(area.value())
}

/// AUPRC of the scores `w . x_i` on `data`.
pub fn model_auprc(w: &[f64], data: &Dataset) -> Result<f64> {
    if w.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: w.len(),
        });
    }
    auprc(&data.margins(w), data.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, SparseVector};
    use crate::fixtures;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, -1, -1]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.5; 5], &[1, -1, 1, -1, -1]).unwrap(), 0.4);
        let ap = auprc(&[0.9, 0.8, 0.7, 0.6], &[1, -1, 1, -1]).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() <= 1e-12);
        assert!(matches!(
            auprc(&[1.0, 2.0], &[-1, -1]),
            Err(Error::NoPositives)
        ));
        assert!(auprc(&[1.0], &[1, -1]).is_err());
        assert!(auprc(&[f64::NAN, 1.0], &[1, -1]).is_err());
    }

    /// Brute force: for every distinct threshold, precision and recall of
    /// `score >= threshold`.
    fn ap_oracle(scores: &[f64], labels: &[i8]) -> f64 {
        let pos = labels.iter().filter(|&&y| y > 0).count() as f64;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for th in thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, &y)| **s >= th && y > 0)
                .count() as f64;
            let all = scores.iter().filter(|s| **s >= th).count() as f64;
            let recall = tp / pos;
            ap += (recall - prev_recall) * (tp / all);
            prev_recall = recall;
        }
        ap
    }

    proptest! {
        #[test]
        fn auprc_matches_threshold_sweep(
            pairs in prop::collection::vec((0u8..6, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64).collect();
            let mut labels: Vec<i8> = pairs.iter().map(|(_, y)| if *y { 1 } else { -1 }).collect();
            labels[0] = 1;
            let ap = auprc(&scores, &labels).unwrap();
            prop_assert!((ap - ap_oracle(&scores, &labels)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
            let shifted: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
            prop_assert_eq!(auprc(&shifted, &labels).unwrap(), ap);
        }

        #[test]
        fn perfect_ranking_beats_its_reverse(pos in 1usize..10, neg in 0usize..10) {
            let n = pos + neg;
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let labels: Vec<i8> = (0..n).map(|i| if i < pos { 1 } else { -1 }).collect();
            let reversed: Vec<f64> = scores.iter().map(|s| -s).collect();
            let best = auprc(&scores, &labels).unwrap();
            prop_assert_eq!(best, 1.0);
            prop_assert!(auprc(&reversed, &labels).unwrap() <= best);
        }
    }

    fn with_reference(f_star: f64) -> ReferenceSolution {
        ReferenceSolution {
            w_star: vec![],
            f_star,
            achieved_grad_norm: 0.0,
            tolerance: 1e-12,
            loss: LossKind::Logistic,
            lambda: 1.0,
            examples: 0,
            fingerprint: 0,
        }
    }

    #[test]
    fn gap_cases() {
        let r = with_reference(3.0);
        assert_eq!(relative_gap(3.0, &r).unwrap(), 0.0);
        assert_eq!(relative_gap(6.0, &r).unwrap(), 1.0);
        assert_eq!(relative_gap(2.9, &r).unwrap(), 0.0);
        assert!(relative_gap(1.0, &with_reference(0.0)).is_err());
        assert!(relative_gap(1.0, &with_reference(-1.0)).is_err());
    }

    fn ridge_oracle(ds: &Dataset, lambda: f64) -> Vec<f64> {
        let d = ds.dim();
        let mut a = DMatrix::<f64>::identity(d, d) * lambda;
        let mut b = DVector::<f64>::zeros(d);
        for i in 0..ds.len() {
            let mut x = DVector::<f64>::zeros(d);
            let row = ds.row(i);
            for (&j, &v) in row.indices.iter().zip(row.values) {
                x[j as usize] = v;
            }
            a += &x * x.transpose();
            b += &x * ds.label(i);
        }
        a.lu().solve(&b).unwrap().as_slice().to_vec()
    }

    #[test]
    fn least_squares_reference_solves_normal_equations() {
        for (ds, lambda) in [
            (fixtures::tiny(), 0.1),
            (fixtures::tiny(), 1e-3),
            (fixtures::synthetic(200, 15, 0.3, 2), 0.5),
        ] {
            let obj = Objective::new(LossKind::LeastSquares, lambda).unwrap();
            let r = solve_reference(obj, &ds).unwrap();
            let oracle = ridge_oracle(&ds, lambda);
            let norm: f64 = oracle.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err: f64 = r
                .w_star
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-8 * norm, "{err} vs {norm}");
            let f_oracle = obj.value(&ds, &oracle).unwrap();
            assert!((r.f_star - f_oracle).abs() <= 1e-8 * f_oracle);
            assert_eq!(relative_gap(r.f_star, &r).unwrap(), 0.0);
        }
    }

    #[test]
    fn logistic_reference_beats_zero() {
        let examples = (0..8)
            .map(|i| Example {
                features: SparseVector::new(vec![0, 1], vec![1.0, i as f64 * 0.1]).unwrap(),
                label: 1,
            })
            .collect();
        let ds = Dataset::from_examples(examples, None).unwrap();
        let obj = Objective::new(LossKind::Logistic, 0.5).unwrap();
        let r = solve_reference(obj, &ds).unwrap();
        assert!(r.f_star < 8.0 * std::f64::consts::LN_2);
        assert_eq!(solve_reference(obj, &ds).unwrap(), r);
        assert!(
            r.achieved_grad_norm
                <= 1e-10 * (1.0 + norm_inf(&obj.gradient(&ds, &[0.0, 0.0]).unwrap()))
        );
    }

    #[test]
    fn reference_text_round_trip() {
        let ds = fixtures::tiny();
        let obj = Objective::new(LossKind::SquaredHinge, 0.25).unwrap();
        let r = solve_reference(obj, &ds).unwrap();
        let back = ReferenceSolution::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(back.matches(obj, &ds));
        assert!(!back.matches(Objective::new(LossKind::SquaredHinge, 0.5).unwrap(), &ds));
        assert!(ReferenceSolution::from_text("loss logistic\n").is_err());
        let truncated: String = r
            .to_text()
            .lines()
            .take(9)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(ReferenceSolution::from_text(&truncated).is_err());
    }

    #[test]
    fn model_auprc_scores_margins() {
        let ds = fixtures::tiny();
        let obj = Objective::new(LossKind::Logistic, 0.01).unwrap();
        let r = solve_reference(obj, &ds).unwrap();
        let ap = model_auprc(&r.w_star, &ds).unwrap();
        assert_eq!(ap, auprc(&ds.margins(&r.w_star), ds.labels()).unwrap());
        assert!(ap > 0.5);
        assert!(model_auprc(&[0.0], &ds).is_err());
    }
}
