//! Gated-attention multiple-instance learning (ABMIL) over bags of frozen
//! tile embeddings.
//!
//! Instances are stored as the columns of a `D × K` matrix in ascending
//! member order, so pooling always sums in the same order.
//!
//! ```text
//! h_k = ReLU(W1 x_k + b1)              (M)   dropout during training
//! g_k = tanh(V h_k + bv) ⊙ σ(U h_k + bu) (L)
//! a   = softmax_k(wᵀ g_k + bw)
//! z   = Σ_k a_k h_k
//! out = Wo z + bo                      (C logits, or 1 value)
//! ```

pub mod adamw;
pub mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataspec::{Bag, EmbeddingTable, Label};
use crate::error::{Error, Result};

pub use adamw::{AdamW, WeightDecayMode};
pub use train::{grid_select, retrain_full, train, write_training_log, AbmilConfig, EpochLog, GridSelection, TrainOutcome};

/// Output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Classes(usize),
    Regression,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Classes(c) => c,
            Head::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmilParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub v: DMatrix<f64>,
    pub bv: DVector<f64>,
    pub u: DMatrix<f64>,
    pub bu: DVector<f64>,
    pub w: DVector<f64>,
    pub bw: DVector<f64>,
    pub wo: DMatrix<f64>,
    pub bo: DVector<f64>,
}

pub const TENSOR_NAMES: [&str; 10] = ["w1", "b1", "v", "bv", "u", "bu", "w", "bw", "wo", "bo"];

impl AbmilParams {
    pub fn zeros(d: usize, m: usize, l: usize, outputs: usize) -> Self {
        Self {
            w1: DMatrix::zeros(m, d),
            b1: DVector::zeros(m),
            v: DMatrix::zeros(l, m),
            bv: DVector::zeros(l),
            u: DMatrix::zeros(l, m),
            bu: DVector::zeros(l),
            w: DVector::zeros(l),
            bw: DVector::zeros(1),
            wo: DMatrix::zeros(outputs, m),
            bo: DVector::zeros(outputs),
        }
    }

    /// Uniform `±1/√fan_in` for every weight and bias.
    pub fn init<R: Rng>(d: usize, m: usize, l: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d, m, l, outputs);
        let fan_in = [d, d, m, m, m, m, l, l, m, m];
        for (t, fan) in p.tensors_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            t.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.v.as_slice(),
            self.bv.as_slice(),
            self.u.as_slice(),
            self.bu.as_slice(),
            self.w.as_slice(),
            self.bw.as_slice(),
            self.wo.as_slice(),
            self.bo.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.v.as_mut_slice(),
            self.bv.as_mut_slice(),
            self.u.as_mut_slice(),
            self.bu.as_mut_slice(),
            self.w.as_mut_slice(),
            self.bw.as_mut_slice(),
            self.wo.as_mut_slice(),
            self.bo.as_mut_slice(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }
}

/// Bag instances and target, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct BagData {
    pub bag_id: String,
    /// `D × K`, columns in ascending member order.
    pub x: DMatrix<f64>,
    pub target: Label,
}

impl BagData {
    pub fn new(bag_id: impl Into<String>, x: DMatrix<f64>, target: Label) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::EmptyBag);
        }
        Ok(Self { bag_id: bag_id.into(), x, target })
    }

    pub fn from_bag(table: &EmbeddingTable, bag: &Bag) -> Result<Self> {
        let mut members = bag.members.clone();
        members.sort_unstable();
        if let Some(&r) = members.iter().find(|&&r| r >= table.n_rows()) {
            return Err(Error::Range(format!("bag {} references row {r}", bag.bag_id)));
        }
        let x = DMatrix::from_fn(table.dim(), members.len(), |i, k| table.row(members[k])[i] as f64);
        Self::new(bag.bag_id.clone(), x, bag.label)
    }
}

/// Forward-pass intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub pre: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub mask: Option<DMatrix<f64>>,
    pub t: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub attention: DVector<f64>,
    pub z: DVector<f64>,
    pub out: DVector<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_column(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

/// `mask` holds the inverted-dropout multipliers (0 or 1/(1−p)), or `None`
/// at evaluation time.
pub fn forward(p: &AbmilParams, x: &DMatrix<f64>, mask: Option<DMatrix<f64>>) -> Result<Forward> {
    if x.ncols() == 0 {
        return Err(Error::EmptyBag);
    }
    if x.nrows() != p.input_dim() {
        return Err(Error::Shape(format!("model expects dim {}, bag has {}", p.input_dim(), x.nrows())));
    }
    let mut pre = &p.w1 * x;
    add_column(&mut pre, &p.b1);
    let mut h = pre.map(|v| v.max(0.0));
    if let Some(m) = &mask {
        h.component_mul_assign(m);
    }
    let mut t = &p.v * &h;
    add_column(&mut t, &p.bv);
    t.apply(|v| *v = v.tanh());
    let mut s = &p.u * &h;
    add_column(&mut s, &p.bu);
    s.apply(|v| *v = sigmoid(*v));
    let g = t.component_mul(&s);
    let scores = g.tr_mul(&p.w).add_scalar(p.bw[0]);
    let max = scores.max();
    let mut attention = scores.map(|v| (v - max).exp());
    let total = attention.sum();
    attention /= total;
    let mut z = DVector::zeros(h.nrows());
    for (k, col) in h.column_iter().enumerate() {
        z.axpy(attention[k], &col, 1.0);
    }
    let out = &p.wo * &z + &p.bo;
    Ok(Forward { pre, h, mask, t, s, g, attention, z, out })
}

/// Loss for one bag and its gradient with respect to the head output.
pub fn loss_and_dout(out: &DVector<f64>, target: &Label, head: Head, target_scale: (f64, f64)) -> Result<(f64, DVector<f64>)> {
    match (head, target) {
        (Head::Classes(c), Label::Class(y)) => {
            if *y >= c {
                return Err(Error::Range(format!("class {y} >= {c}")));
            }
            let max = out.max();
            let e = out.map(|v| (v - max).exp());
            let z = e.sum();
            let p = e / z;
            let loss = -(p[*y]).ln();
            let mut d = p;
            d[*y] -= 1.0;
            Ok((loss, d))
        }
        (Head::Regression, Label::Real(y)) => {
            let (mean, std) = target_scale;
            let r = out[0] - (y - mean) / std;
            Ok((r * r, DVector::from_element(1, 2.0 * r)))
        }
        _ => Err(Error::LabelKind("bag label does not match the model head".into())),
    }
}

/// Gradient of the loss given `dout = ∂loss/∂out`.
pub fn backward(p: &AbmilParams, x: &DMatrix<f64>, f: &Forward, dout: &DVector<f64>) -> AbmilParams {
    let wo = dout * f.z.transpose();
    let bo = dout.clone();
    let dz = p.wo.tr_mul(dout);
    let da = f.h.tr_mul(&dz);
    let dot = f.attention.dot(&da);
    let ds = f.attention.component_mul(&da.add_scalar(-dot));
    let w = &f.g * &ds;
    let bw = DVector::from_element(1, ds.sum());
    let dg = &p.w * ds.transpose();
    let dtv = dg.component_mul(&f.s).component_mul(&f.t.map(|v| 1.0 - v * v));
    let dsu = dg.component_mul(&f.t).component_mul(&f.s.map(|v| v * (1.0 - v)));
    let v = &dtv * f.h.transpose();
    let u = &dsu * f.h.transpose();
    let bv = dtv.column_sum();
    let bu = dsu.column_sum();
    let mut dh = &dz * f.attention.transpose();
    dh.gemm_tr(1.0, &p.v, &dtv, 1.0);
    dh.gemm_tr(1.0, &p.u, &dsu, 1.0);
    if let Some(m) = &f.mask {
        dh.component_mul_assign(m);
    }
    dh.zip_apply(&f.pre, |g, pre| {
        if pre <= 0.0 {
            *g = 0.0
        }
    });
    let w1 = &dh * x.transpose();
    let b1 = dh.column_sum();
    AbmilParams { w1, b1, v, bv, u, bu, w, bw, wo, bo }
}

/// A fitted model together with the target standardisation used in
/// regression.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmilModel {
    pub params: AbmilParams,
    pub head: Head,
    /// `(mean, std)` of training targets; `(0, 1)` for classification.
    pub target_scale: (f64, f64),
}

impl AbmilModel {
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Forward> {
        forward(&self.params, x, None)
    }

    pub fn predict(&self, bag: &BagData) -> Result<Label> {
        let f = self.forward(&bag.x)?;
        Ok(match self.head {
            Head::Classes(_) => {
                let mut best = 0;
                for k in 1..f.out.len() {
                    if f.out[k] > f.out[best] {
                        best = k;
                    }
                }
                Label::Class(best)
            }
            Head::Regression => Label::Real(f.out[0] * self.target_scale.1 + self.target_scale.0),
        })
    }

    /// Mean evaluation-mode loss over `bags`.
    pub fn mean_loss(&self, bags: &[BagData]) -> Result<f64> {
        let mut total = 0.0;
        for b in bags {
            let f = self.forward(&b.x)?;
            total += loss_and_dout(&f.out, &b.target, self.head, self.target_scale)?.0;
        }
        Ok(total / bags.len() as f64)
    }
}
