//! Node-local approximation of the global objective.
//!
//! Node `p` only sees its own examples, so it models `f` by
//!
//! ```text
//! f_p(w) = lambda/2 |w|^2 + L_p(w) + c . (w - w_r),   c = g_r - lambda w_r - grad L_p(w_r)
//! ```
//!
//! The linear tilt `c` makes the gradient of the model at the anchor `w_r`
//! equal the true global gradient `g_r`. With `c = 0` this is the plain local
//! objective used for parameter mixing.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{check_dim, dot, Objective};

#[derive(Clone, Debug)]
pub struct TiltedApprox<'a> {
    node: usize,
    obj: Objective,
    data: &'a Dataset,
    anchor_w: Vec<f64>,
    anchor_g: Vec<f64>,
    local_grad: Vec<f64>,
    tilt: Vec<f64>,
}

impl<'a> TiltedApprox<'a> {
    /// Builds the tilted model, computing `grad L_p(w_r)` from `data`.
    pub fn build(
        obj: Objective,
        node: usize,
        data: &'a Dataset,
        anchor_w: &[f64],
        anchor_g: &[f64],
    ) -> Result<Self> {
        let local_grad = obj.loss_partial(data, anchor_w)?.grad.round();
        Self::from_local_gradient(obj, node, data, anchor_w, anchor_g, local_grad)
    }

    /// Builds the tilted model from an already computed `grad L_p(w_r)`.
    pub fn from_local_gradient(
        obj: Objective,
        node: usize,
        data: &'a Dataset,
        anchor_w: &[f64],
        anchor_g: &[f64],
        local_grad: Vec<f64>,
    ) -> Result<Self> {
        let dim = data.dim();
        check_dim(dim, anchor_w.len())?;
        check_dim(dim, anchor_g.len())?;
        check_dim(dim, local_grad.len())?;
        let lambda = obj.lambda();
        let tilt = (0..dim)
            .map(|j| anchor_g[j] - lambda * anchor_w[j] - local_grad[j])
            .collect();
        Ok(Self {
            node,
            obj,
            data,
            anchor_w: anchor_w.to_vec(),
            anchor_g: anchor_g.to_vec(),
            local_grad,
            tilt,
        })
    }

    /// The untilted local objective `lambda/2 |w|^2 + L_p(w)`.
    pub fn plain(obj: Objective, node: usize, data: &'a Dataset, anchor_w: &[f64]) -> Result<Self> {
        let dim = data.dim();
        check_dim(dim, anchor_w.len())?;
        let local_grad = obj.loss_partial(data, anchor_w)?.grad.round();
        let mut anchor_g = local_grad.clone();
        obj.finish_gradient(&mut anchor_g, anchor_w);
        Ok(Self {
            node,
            obj,
            data,
            anchor_w: anchor_w.to_vec(),
            anchor_g,
            local_grad,
            tilt: vec![0.0; dim],
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn objective(&self) -> Objective {
        self.obj
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    /// Number of local examples.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn anchor_w(&self) -> &[f64] {
        &self.anchor_w
    }

    pub fn anchor_g(&self) -> &[f64] {
        &self.anchor_g
    }

    pub fn local_grad_at_anchor(&self) -> &[f64] {
        &self.local_grad
    }

    pub fn tilt(&self) -> &[f64] {
        &self.tilt
    }

    fn tilt_term(&self, w: &[f64]) -> f64 {
        self.tilt
            .iter()
            .zip(w.iter().zip(&self.anchor_w))
            .map(|(c, (x, a))| c * (x - a))
            .sum()
    }

    /// `lambda/2 |w|^2 + L_p(w)`, without the tilt.
    pub fn untilted_value(&self, w: &[f64]) -> Result<f64> {
        let part = self.obj.loss_partial(self.data, w)?;
        Ok(self.obj.finish_value(part.value.value(), w))
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        Ok(self.untilted_value(w)? + self.tilt_term(w))
    }

    pub fn value_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let part = self.obj.loss_partial(self.data, w)?;
        let value = self.obj.finish_value(part.value.value(), w) + self.tilt_term(w);
        let mut grad = part.grad.round();
        self.obj.finish_gradient(&mut grad, w);
        for (g, c) in grad.iter_mut().zip(&self.tilt) {
            *g += c;
        }
        Ok((value, grad))
    }

    /// Gradient of the `j`-th finite-sum component
    /// `psi_j(w) = l(w . x_j, y_j) + (lambda/2 |w|^2 + c . (w - w_r)) / n_p`.
    /// The components sum to the model.
    pub fn component_grad(&self, w: &[f64], j: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), w.len())?;
        let n = self.len();
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, len: n });
        }
        let lambda = self.obj.lambda();
        let inv_n = 1.0 / n as f64;
        let mut out: Vec<f64> = w
            .iter()
            .zip(&self.tilt)
            .map(|(x, c)| (lambda * x + c) * inv_n)
            .collect();
        let row = self.data.row(j);
        let dl = self.obj.loss().eval(row.dot(w), self.data.label(j)).1;
        row.axpy(dl, &mut out);
        Ok(out)
    }

    /// `psi_j(w)`.
    pub fn component_value(&self, w: &[f64], j: usize) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let n = self.len();
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, len: n });
        }
        let z = self.data.row(j).dot(w);
        let l = self.obj.loss().eval(z, self.data.label(j)).0;
        Ok(l + (self.obj.regularizer(w) + self.tilt_term(w)) / n as f64)
    }

    /// Largest deviation `|grad f_p(w_r) - g_r|`, recomputed from the data.
    pub fn consistency_residual(&self) -> Result<f64> {
        let (_, g) = self.value_grad(&self.anchor_w)?;
        let diff: Vec<f64> = g.iter().zip(&self.anchor_g).map(|(a, b)| a - b).collect();
        Ok(dot(&diff, &diff).sqrt())
    }
}
