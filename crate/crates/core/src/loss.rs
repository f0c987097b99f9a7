//! Margin losses and the L2-regularized objective
//! `f(w) = lambda/2 |w|^2 + sum_i l(w . x_i, y_i)`.
//!
//! Sums over examples go through [`ExactSum`], so values and gradients are
//! the correctly rounded exact sums and do not depend on summation order.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, Fnv, PartitionPlan};
use crate::error::{Error, Result};
use crate::exact::{ExactSum, ExactVec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Logistic,
    SquaredHinge,
    LeastSquares,
}

impl LossKind {
    /// Loss value and its derivative with respect to the margin.
    #[inline]
    pub fn eval(self, margin: f64, y: f64) -> (f64, f64) {
        match self {
            LossKind::Logistic => {
                let ym = y * margin;
                // ln(1 + e^{-ym}) without overflow on either tail.
                let value = if ym > 0.0 {
                    (-ym).exp().ln_1p()
                } else {
                    -ym + ym.exp().ln_1p()
                };
                (value, -y / (1.0 + ym.exp()))
            }
            LossKind::SquaredHinge => {
                let slack = 1.0 - y * margin;
                if slack > 0.0 {
                    (slack * slack, -2.0 * y * slack)
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::LeastSquares => {
                let r = margin - y;
                (0.5 * r * r, r)
            }
        }
    }

    /// Upper bound on the second derivative in the margin.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossKind::Logistic => 0.25,
            LossKind::SquaredHinge => 2.0,
            LossKind::LeastSquares => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::LeastSquares => "least-squares",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "logreg" => Ok(LossKind::Logistic),
            "squared-hinge" | "squared_hinge" | "sqhinge" | "l2svm" => Ok(LossKind::SquaredHinge),
            "least-squares" | "least_squares" | "ls" | "squared" => Ok(LossKind::LeastSquares),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Fingerprint of a dense vector, used to tag margin caches.
pub fn vector_tag(v: &[f64]) -> u64 {
    let mut h = Fnv::new();
    h.write_u64(v.len() as u64);
    for &x in v {
        h.write_u64(x.to_bits());
    }
    h.finish()
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Per-example margins `z_i = w . x_i` and, optionally, `s_i = d . x_i`,
/// tagged with the vectors they were computed from.
#[derive(Clone, Debug)]
pub struct MarginCache {
    pub z: Vec<f64>,
    pub s: Option<Vec<f64>>,
    w_tag: u64,
    d_tag: Option<u64>,
}

impl MarginCache {
    pub fn new(ds: &Dataset, w: &[f64]) -> Result<Self> {
        check_dim(ds.dim(), w.len())?;
        Ok(Self {
            z: ds.margins(w),
            s: None,
            w_tag: vector_tag(w),
            d_tag: None,
        })
    }

    /// Wraps margins already computed at `w`.
    pub fn from_margins(z: Vec<f64>, w: &[f64]) -> Self {
        Self {
            z,
            s: None,
            w_tag: vector_tag(w),
            d_tag: None,
        }
    }

    /// Adds `s_i = d . x_i` for a search direction.
    pub fn with_direction(mut self, ds: &Dataset, d: &[f64]) -> Result<Self> {
        check_dim(ds.dim(), d.len())?;
        if self.z.len() != ds.len() {
            return Err(Error::StaleCache);
        }
        self.s = Some(ds.margins(d));
        self.d_tag = Some(vector_tag(d));
        Ok(self)
    }

    pub fn matches_w(&self, w: &[f64]) -> bool {
        self.w_tag == vector_tag(w)
    }

    pub fn matches_d(&self, d: &[f64]) -> bool {
        self.d_tag == Some(vector_tag(d))
    }
}

/// Loss part of a node's contribution: exact partial sums of the loss values
/// and of the loss gradient over the node's examples.
#[derive(Clone, Debug)]
pub struct LossPartial {
    pub value: ExactSum,
    pub grad: ExactVec,
    pub margins: Vec<f64>,
}

/// Regularized objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    loss: LossKind,
    lambda: f64,
}

impl Objective {
    pub fn new(loss: LossKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "regularization constant must be positive, got {lambda}"
            )));
        }
        Ok(Self { loss, lambda })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `lambda/2 |w|^2`
    pub fn regularizer(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * dot(w, w)
    }

    /// Exact loss sum and loss gradient over all of `ds`.
    pub fn loss_partial(&self, ds: &Dataset, w: &[f64]) -> Result<LossPartial> {
        check_dim(ds.dim(), w.len())?;
        let mut value = ExactSum::new();
        let mut grad = ExactVec::zeros(ds.dim());
        let mut margins = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            let row = ds.row(i);
            let z = row.dot(w);
            let (l, dl) = self.loss.eval(z, ds.label(i));
            value.add(l);
            if dl != 0.0 {
                for (&j, &v) in row.indices.iter().zip(row.values) {
                    grad.add_at(j as usize, dl * v);
                }
            }
            margins.push(z);
        }
        Ok(LossPartial {
            value,
            grad,
            margins,
        })
    }

    /// Finishes a reduced loss value into `f(w)`.
    pub fn finish_value(&self, loss_sum: f64, w: &[f64]) -> f64 {
        self.regularizer(w) + loss_sum
    }

    /// Finishes a reduced loss gradient into `grad f(w)` in place.
    pub fn finish_gradient(&self, loss_grad: &mut [f64], w: &[f64]) {
        for (g, &x) in loss_grad.iter_mut().zip(w) {
            *g += self.lambda * x;
        }
    }

    pub fn value(&self, ds: &Dataset, w: &[f64]) -> Result<f64> {
        check_dim(ds.dim(), w.len())?;
        let loss: ExactSum = (0..ds.len())
            .map(|i| self.loss.eval(ds.row(i).dot(w), ds.label(i)).0)
            .collect();
        Ok(self.finish_value(loss.value(), w))
    }

    /// Same as [`Objective::value`], reading margins from a cache built at `w`.
    pub fn value_cached(&self, ds: &Dataset, w: &[f64], cache: &MarginCache) -> Result<f64> {
        check_dim(ds.dim(), w.len())?;
        if cache.z.len() != ds.len() || !cache.matches_w(w) {
            return Err(Error::StaleCache);
        }
        let loss: ExactSum = cache
            .z
            .iter()
            .enumerate()
            .map(|(i, &z)| self.loss.eval(z, ds.label(i)).0)
            .collect();
        Ok(self.finish_value(loss.value(), w))
    }

    pub fn gradient(&self, ds: &Dataset, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(ds, w)?.1)
    }

    pub fn value_and_gradient(&self, ds: &Dataset, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let part = self.loss_partial(ds, w)?;
        let mut g = part.grad.round();
        self.finish_gradient(&mut g, w);
        Ok((self.finish_value(part.value.value(), w), g))
    }

    /// Loss `L_p` and its gradient over node `p`'s examples (no regularizer).
    pub fn local_loss_and_gradient(
        &self,
        ds: &Dataset,
        plan: &PartitionPlan,
        p: usize,
        w: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        check_dim(ds.dim(), w.len())?;
        let members = plan.members(p)?;
        let mut value = ExactSum::new();
        let mut grad = ExactVec::zeros(ds.dim());
        for &i in members {
            let row = ds.row(i);
            let (l, dl) = self.loss.eval(row.dot(w), ds.label(i));
            value.add(l);
            for (&j, &v) in row.indices.iter().zip(row.values) {
                grad.add_at(j as usize, dl * v);
            }
        }
        Ok((value.value(), grad.round()))
    }

    /// `lambda + c * sum_i |x_i|^2`, an upper bound on the Lipschitz constant
    /// of the gradient of `lambda/2 |w|^2 + sum_i l(w . x_i)` over `ds`.
    pub fn lipschitz_bound(&self, ds: &Dataset) -> f64 {
        let sq: f64 = (0..ds.len()).map(|i| ds.row(i).sq_norm()).sum();
        self.lambda + self.loss.curvature_bound() * sq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_libsvm_str, partition, PartitionStrategy};
    use crate::fixtures;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KINDS: [LossKind; 3] = [
        LossKind::Logistic,
        LossKind::SquaredHinge,
        LossKind::LeastSquares,
    ];

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn scalar_loss_examples() {
        let (v, d) = LossKind::Logistic.eval(0.0, 1.0);
        assert!(close(v, std::f64::consts::LN_2, 1e-15));
        assert_eq!(d, -0.5);

        assert_eq!(LossKind::SquaredHinge.eval(2.0, 1.0), (0.0, 0.0));

        // Oracle: direct evaluation of ln(1+e^-1) and -1/(1+e).
        let (v, d) = LossKind::Logistic.eval(1.0, 1.0);
        let e = std::f64::consts::E;
        assert!(close(v, (1.0 + 1.0 / e).ln(), 1e-15));
        assert!(close(d, -1.0 / (1.0 + e), 1e-15));
        assert!((v - 0.313262).abs() < 1e-6);
        assert!((d + 0.268941).abs() < 1e-6);
    }

    #[test]
    fn logistic_tails_are_finite() {
        for m in [-1e6, -800.0, -31.0, 31.0, 800.0, 1e6] {
            for y in [1.0, -1.0] {
                let (v, d) = LossKind::Logistic.eval(m, y);
                assert!(v.is_finite() && d.is_finite(), "m={m} y={y}");
                assert!(v >= 0.0);
            }
        }
        let (v, d) = LossKind::Logistic.eval(-1e6, 1.0);
        assert_eq!(v, 1e6);
        assert_eq!(d, -1.0);
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!(
            "squared-hinge".parse::<LossKind>().unwrap(),
            LossKind::SquaredHinge
        );
        assert_eq!("Logistic".parse::<LossKind>().unwrap(), LossKind::Logistic);
        assert!("hinge".parse::<LossKind>().is_err());
        for k in KINDS {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(Objective::new(LossKind::Logistic, 0.0).is_err());
        assert!(Objective::new(LossKind::Logistic, -1.0).is_err());
        assert!(Objective::new(LossKind::Logistic, f64::NAN).is_err());
    }

    #[test]
    fn zero_weight_values() {
        let ds = fixtures::tiny();
        let w = vec![0.0; ds.dim()];
        let n = ds.len() as f64;
        let obj = Objective::new(LossKind::Logistic, 3.0).unwrap();
        assert!(close(
            obj.value(&ds, &w).unwrap(),
            n * std::f64::consts::LN_2,
            1e-15
        ));
        let obj = Objective::new(LossKind::LeastSquares, 3.0).unwrap();
        assert_eq!(obj.value(&ds, &w).unwrap(), n / 2.0);
    }

    #[test]
    fn least_squares_gradient_at_zero() {
        let ds = fixtures::tiny();
        let obj = Objective::new(LossKind::LeastSquares, 0.5).unwrap();
        let g = obj.gradient(&ds, &vec![0.0; ds.dim()]).unwrap();
        let mut expected = vec![0.0; ds.dim()];
        for i in 0..ds.len() {
            ds.row(i).axpy(-ds.label(i), &mut expected);
        }
        for (a, b) in g.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn logistic_single_example_gradient() {
        let ds = parse_libsvm_str("+1 1:1\n").unwrap();
        let obj = Objective::new(LossKind::Logistic, 1.0).unwrap();
        assert_eq!(obj.gradient(&ds, &[0.0]).unwrap(), vec![-0.5]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = fixtures::tiny();
        let obj = Objective::new(LossKind::Logistic, 1.0).unwrap();
        assert!(matches!(
            obj.value(&ds, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(obj.gradient(&ds, &vec![0.0; ds.dim() + 1]).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Dataset, Vec<f64>) {
        let mut text = String::new();
        for _ in 0..n {
            text.push_str(if rng.random_bool(0.5) { "+1" } else { "-1" });
            for j in 0..dim {
                if rng.random_bool(0.6) {
                    text.push_str(&format!(" {}:{}", j + 1, rng.random_range(-2.0..2.0)));
                }
            }
            text.push('\n');
        }
        let ds = parse_libsvm_str(&text).unwrap().with_dim(dim).unwrap();
        let w = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ds, w)
    }

    #[test]
    fn value_matches_naive_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in KINDS {
            let (ds, w) = random_instance(&mut rng, 10, 5);
            let obj = Objective::new(k, 0.3).unwrap();
            // Oracle: dense re-summation, term by term.
            let mut naive = 0.0;
            for j in 0..5 {
                naive += 0.5 * 0.3 * w[j] * w[j];
            }
            for i in 0..10 {
                let ex = ds.example(i);
                let mut z = 0.0;
                for (&j, &v) in ex.features.indices().iter().zip(ex.features.values()) {
                    z += w[j as usize] * v;
                }
                naive += k.eval(z, f64::from(ex.label)).0;
            }
            assert!(close(obj.value(&ds, &w).unwrap(), naive, 1e-12));
        }
    }

    #[test]
    fn cached_value_agrees_and_rejects_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ds, w) = random_instance(&mut rng, 15, 6);
        let obj = Objective::new(LossKind::SquaredHinge, 0.1).unwrap();
        let cache = MarginCache::new(&ds, &w).unwrap();
        let a = obj.value(&ds, &w).unwrap();
        let b = obj.value_cached(&ds, &w, &cache).unwrap();
        assert!(close(a, b, 1e-14));
        let mut w2 = w.clone();
        w2[0] += 1.0;
        assert!(matches!(
            obj.value_cached(&ds, &w2, &cache),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn local_losses_add_up() {
        let ds = fixtures::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..ds.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in KINDS {
            let obj = Objective::new(k, 0.7).unwrap();
            let (f, g) = obj.value_and_gradient(&ds, &w).unwrap();

            let single = partition(&ds, 1, PartitionStrategy::RoundRobin).unwrap();
            let (l, gl) = obj.local_loss_and_gradient(&ds, &single, 0, &w).unwrap();
            assert!(close(l, f - obj.regularizer(&w), 1e-12));
            for j in 0..ds.dim() {
                assert!((gl[j] - (g[j] - 0.7 * w[j])).abs() <= 1e-12 * (1.0 + g[j].abs()));
            }

            let plan = partition(&ds, 3, PartitionStrategy::RoundRobin).unwrap();
            let mut lsum = 0.0;
            let mut gsum = vec![0.0; ds.dim()];
            for p in 0..3 {
                let (lp, gp) = obj.local_loss_and_gradient(&ds, &plan, p, &w).unwrap();
                // Oracle: brute-force sum over the node's members.
                let mut naive_l = 0.0;
                let mut naive_g = vec![0.0; ds.dim()];
                for &i in plan.members(p).unwrap() {
                    let (v, dv) = k.eval(ds.row(i).dot(&w), ds.label(i));
                    naive_l += v;
                    ds.row(i).axpy(dv, &mut naive_g);
                }
                assert!(close(lp, naive_l, 1e-12));
                for j in 0..ds.dim() {
                    assert!((gp[j] - naive_g[j]).abs() <= 1e-12 * (1.0 + naive_g[j].abs()));
                }
                lsum += lp;
                for j in 0..ds.dim() {
                    gsum[j] += gp[j];
                }
            }
            assert!(close(f, obj.regularizer(&w) + lsum, 1e-12));
            for j in 0..ds.dim() {
                let expect = g[j] - 0.7 * w[j];
                assert!((gsum[j] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
            assert!(matches!(
                obj.local_loss_and_gradient(&ds, &plan, 3, &w),
                Err(Error::InvalidNode { .. })
            ));
        }
    }

    #[test]
    fn lipschitz_bound_examples() {
        let ds = parse_libsvm_str("+1\n-1\n").unwrap().with_dim(3).unwrap();
        let obj = Objective::new(LossKind::SquaredHinge, 0.25).unwrap();
        assert_eq!(obj.lipschitz_bound(&ds), 0.25);

        let ds = parse_libsvm_str("+1 1:1\n").unwrap();
        let obj = Objective::new(LossKind::LeastSquares, 0.5).unwrap();
        assert_eq!(obj.lipschitz_bound(&ds), 1.5);
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_secants() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in KINDS {
            let (ds, _) = random_instance(&mut rng, 12, 4);
            let obj = Objective::new(k, 0.05).unwrap();
            let bound = obj.lipschitz_bound(&ds);
            for _ in 0..200 {
                let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let ga = obj.gradient(&ds, &a).unwrap();
                let gb = obj.gradient(&ds, &b).unwrap();
                let dg: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
                let dw: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                assert!(norm2(&dg) <= bound * norm2(&dw) * (1.0 + 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_convex(
            m1 in -50.0f64..50.0, m2 in -50.0f64..50.0, mix in 0.0f64..1.0, pos in any::<bool>()
        ) {
            let y = if pos { 1.0 } else { -1.0 };
            for k in KINDS {
                let (v1, _) = k.eval(m1, y);
                let (v2, _) = k.eval(m2, y);
                let (vm, _) = k.eval(mix * m1 + (1.0 - mix) * m2, y);
                prop_assert!(v1 >= 0.0 && v2 >= 0.0);
                let chord = mix * v1 + (1.0 - mix) * v2;
                prop_assert!(vm <= chord + 1e-12 * (1.0 + chord.abs()));
            }
        }

        #[test]
        fn derivative_matches_finite_difference(m in -20.0f64..20.0, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            for k in KINDS {
                let h = 1e-6;
                let fd = (k.eval(m + h, y).0 - k.eval(m - h, y).0) / (2.0 * h);
                let d = k.eval(m, y).1;
                prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0));
            }
        }
    }
}
