//! Training objective of the autoencoder. Every squared norm is mean-reduced
//! over all of its elements.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::LossWeights;
use super::model::ForwardPass;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::{FkOp, FootContactLabels, JOINT_COUNT};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Arguments of the codebook/commitment/reconstruction loss.
#[derive(Clone, Copy, Debug)]
pub struct VqInputs {
    pub x: Var,
    pub x_hat: Var,
    /// `P(h_b')`
    pub projected: Var,
    pub e_b: Var,
    pub h_t: Var,
    pub e_t: Var,
}

impl VqInputs {
    pub fn from_forward(x: Var, f: &ForwardPass) -> Self {
        Self {
            x,
            x_hat: f.x_hat,
            projected: f.projected,
            e_b: f.e_b,
            h_t: f.h_t,
            e_t: f.e_t,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VqTerms {
    /// `|sg[P(h_b')] - e_b|^2`, reaches the bottom codebook only.
    pub bottom_codebook: Var,
    /// `|sg[e_b] - P(h_b')|^2`, reaches the encoders only.
    pub bottom_commit: Var,
    pub top_codebook: Var,
    pub top_commit: Var,
    pub reconstruction: Var,
    pub total: Var,
}

pub fn vq_loss<T: Scalar>(g: &mut Graph<'_, T>, v: VqInputs, w: &LossWeights) -> VqTerms {
    let p_sg = g.detach(v.projected);
    let bottom_codebook = g.mse(p_sg, v.e_b);
    let e_b_sg = g.detach(v.e_b);
    let bottom_commit = g.mse(e_b_sg, v.projected);
    let h_t_sg = g.detach(v.h_t);
    let top_codebook = g.mse(h_t_sg, v.e_t);
    let e_t_sg = g.detach(v.e_t);
    let top_commit = g.mse(e_t_sg, v.h_t);
    let reconstruction = g.mse(v.x, v.x_hat);

    let a = g.scale(bottom_commit, T::lit(w.alpha));
    let b = g.scale(top_commit, T::lit(w.beta));
    let mut total = g.add(bottom_codebook, a);
    total = g.add(total, top_codebook);
    total = g.add(total, b);
    total = g.add(total, reconstruction);
    VqTerms {
        bottom_codebook,
        bottom_commit,
        top_codebook,
        top_commit,
        reconstruction,
        total,
    }
}

/// Per-frame foot contact mask over flattened joint coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactMask<T> {
    /// `[B, N - 1, 72]`; row `i` masks the displacement from frame `i` to `i + 1`.
    pub mask: Tensor<T>,
    pub feet: usize,
}

impl<T: Scalar> ContactMask<T> {
    pub fn from_labels(labels: &[FootContactLabels]) -> Result<Self> {
        let first = labels
            .first()
            .ok_or_else(|| Error::InvalidArgument("no contact labels".into()))?;
        let n = first.frames;
        if n < 2 {
            return Err(Error::SequenceTooShort { need: 2, got: n });
        }
        let w = JOINT_COUNT * 3;
        let mut data = vec![T::zero(); labels.len() * (n - 1) * w];
        for (b, l) in labels.iter().enumerate() {
            if l.frames != n || l.foot_joints != first.foot_joints {
                return Err(Error::LengthMismatch("contact labels differ in shape across the batch".into()));
            }
            for i in 0..n - 1 {
                for (k, &j) in l.foot_joints.iter().enumerate() {
                    if l.get(i, k) {
                        let o = (b * (n - 1) + i) * w + j * 3;
                        data[o..o + 3].fill(T::one());
                    }
                }
            }
        }
        Ok(Self {
            mask: Tensor::new(&[labels.len(), n - 1, w], data),
            feet: first.feet(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AuxTerms {
    pub pos: Var,
    pub vel: Var,
    pub acc: Var,
    pub contact: Var,
    pub total: Var,
}

/// Joint-position, velocity, acceleration and foot-contact losses.
///
/// `x` and `x_hat` are `[B, N, 147]`. Velocity and acceleration compare
/// temporal differences of the raw motion channels; both sums are divided by
/// `N - 1` as written, so the acceleration term, which has `N - 2` addends,
/// carries a factor `(N - 2) / (N - 1)` relative to a plain mean.
pub fn aux_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    x_hat: Var,
    contacts: &ContactMask<T>,
    fk: &Arc<FkOp<T>>,
    w: &LossWeights,
) -> Result<AuxTerms> {
    let shape = g.shape(x).to_vec();
    if g.shape(x_hat) != shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "x is {:?}, x_hat is {:?}",
            shape,
            g.shape(x_hat)
        )));
    }
    let (b, n) = (shape[0], shape[1]);
    if n < 3 {
        return Err(Error::SequenceTooShort { need: 3, got: n });
    }
    if contacts.mask.shape() != [b, n - 1, JOINT_COUNT * 3] {
        return Err(Error::ShapeMismatch(format!(
            "contact mask {:?} does not cover {b} x {} steps",
            contacts.mask.shape(),
            n - 1
        )));
    }
    let flat = [b, n, JOINT_COUNT * 3];
    let op: Arc<dyn crate::autodiff::CustomOp<T>> = fk.clone();
    let pos_x = g.custom(x, op.clone());
    let pos_x = g.detach(pos_x);
    let pos_x = g.reshape(pos_x, &flat);
    let pos_hat = g.custom(x_hat, op);
    let pos_hat = g.reshape(pos_hat, &flat);
    let pos = g.mse(pos_x, pos_hat);

    let v = g.time_diff(x);
    let v_hat = g.time_diff(x_hat);
    let vel = g.mse(v, v_hat);

    let a = g.time_diff(v);
    let a_hat = g.time_diff(v_hat);
    let acc = g.mse(a, a_hat);
    let acc = g.scale(acc, T::lit((n - 2) as f64 / (n - 1) as f64));

    let step = g.time_diff(pos_hat);
    let mask = g.constant(contacts.mask.clone());
    let masked = g.mul(step, mask);
    let sq = g.square(masked);
    let s = g.sum(sq);
    let denom = (b * (n - 1) * contacts.feet.max(1) * 3) as f64;
    let contact = g.scale(s, T::lit(1.0 / denom));

    let mut total = pos;
    let t = g.scale(vel, T::lit(w.gamma));
    total = g.add(total, t);
    let t = g.scale(acc, T::lit(w.phi));
    total = g.add(total, t);
    let t = g.scale(contact, T::lit(w.psi));
    total = g.add(total, t);
    Ok(AuxTerms {
        pos,
        vel,
        acc,
        contact,
        total,
    })
}

/// `|e_t - h_m|^2` between top codes and encoded music.
pub fn modality_alignment_loss<T: Scalar>(g: &mut Graph<'_, T>, e_t: Var, h_m: Var) -> Result<Var> {
    if g.shape(e_t) != g.shape(h_m) {
        return Err(Error::LengthMismatch(format!(
            "e_t is {:?}, encoded music is {:?}",
            g.shape(e_t),
            g.shape(h_m)
        )));
    }
    Ok(g.mse(e_t, h_m))
}

pub fn total_loss<T: Scalar>(g: &mut Graph<'_, T>, vq: Var, aux: Var, ma: Option<Var>, w: &LossWeights) -> Var {
    let a = g.scale(aux, T::lit(w.lambda_aux));
    let mut total = g.add(vq, a);
    if let Some(ma) = ma {
        let m = g.scale(ma, T::lit(w.lambda_ma));
        total = g.add(total, m);
    }
    total
}

/// Scalar values of every loss term, for logs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub vq: f64,
    pub reconstruction: f64,
    pub commit: f64,
    pub codebook: f64,
    pub aux: f64,
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
    pub contact: f64,
    pub ma: f64,
}

impl LossValues {
    pub fn add_scaled(&mut self, o: &LossValues, s: f64) {
        self.total += s * o.total;
        self.vq += s * o.vq;
        self.reconstruction += s * o.reconstruction;
        self.commit += s * o.commit;
        self.codebook += s * o.codebook;
        self.aux += s * o.aux;
        self.pos += s * o.pos;
        self.vel += s * o.vel;
        self.acc += s * o.acc;
        self.contact += s * o.contact;
        self.ma += s * o.ma;
    }
}

/// Handles of the full objective in one graph.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub vq: VqTerms,
    pub aux: AuxTerms,
    pub ma: Option<Var>,
    pub total: Var,
}

impl Objective {
    pub fn build<T: Scalar>(
        g: &mut Graph<'_, T>,
        x: Var,
        f: &ForwardPass,
        contacts: &ContactMask<T>,
        fk: &Arc<FkOp<T>>,
        w: &LossWeights,
    ) -> Result<Self> {
        let vq = vq_loss(g, VqInputs::from_forward(x, f), w);
        let aux = aux_loss(g, x, f.x_hat, contacts, fk, w)?;
        let ma = match f.music {
            Some(h_m) => Some(modality_alignment_loss(g, f.e_t_st, h_m)?),
            None => None,
        };
        let total = total_loss(g, vq.total, aux.total, ma, w);
        Ok(Self { vq, aux, ma, total })
    }

    pub fn values<T: Scalar>(&self, g: &Graph<'_, T>) -> LossValues {
        let v = |x: Var| g.value(x).item().as_f64();
        LossValues {
            total: v(self.total),
            vq: v(self.vq.total),
            reconstruction: v(self.vq.reconstruction),
            commit: v(self.vq.bottom_commit) + v(self.vq.top_commit),
            codebook: v(self.vq.bottom_codebook) + v(self.vq.top_codebook),
            aux: v(self.aux.total),
            pos: v(self.aux.pos),
            vel: v(self.aux.vel),
            acc: v(self.aux.acc),
            contact: v(self.aux.contact),
            ma: self.ma.map(v).unwrap_or(0.0),
        }
    }
}
