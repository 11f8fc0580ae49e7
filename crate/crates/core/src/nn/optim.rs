//! Adam and Adan optimisers over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adan,
}

/// Moment buffers, exposed so training checkpoints can resume exactly.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub slots: Vec<Vec<Option<Tensor<T>>>>,
}

#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    state: OptimizerState<T>,
}

const EPS: f64 = 1e-8;
// Adam
const B1: f64 = 0.9;
const B2: f64 = 0.999;
// Adan, in the (1 - beta) convention of the reference implementation
const ADAN_B: [f64; 3] = [0.02, 0.08, 0.01];

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        let slots = match kind {
            OptimizerKind::Adam => 2,
            // m, v, n, previous gradient
            OptimizerKind::Adan => 4,
        };
        Self {
            kind,
            lr,
            weight_decay: 0.0,
            clip_norm: None,
            state: OptimizerState {
                step: 0,
                slots: vec![Vec::new(); slots],
            },
        }
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    pub fn restore(&mut self, state: OptimizerState<T>) {
        self.state = state;
    }

    pub fn slot_names(&self) -> &'static [&'static str] {
        match self.kind {
            OptimizerKind::Adam => &["m", "v"],
            OptimizerKind::Adan => &["m", "v", "n", "prev"],
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut [Option<Tensor<T>>]) {
        let n = store.len();
        for s in &mut self.state.slots {
            s.resize(n, None);
        }
        if let Some(max) = self.clip_norm {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.data().iter())
                .map(|&x| x.as_f64() * x.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm > max {
                let s = T::lit(max / norm);
                for g in grads.iter_mut().flatten() {
                    for x in g.data_mut() {
                        *x *= s;
                    }
                }
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        for id in store.ids().collect::<Vec<_>>() {
            let Some(grad) = grads[id.index()].as_ref() else { continue };
            let i = id.index();
            match self.kind {
                OptimizerKind::Adam => self.adam(store.get_mut(id), grad, i, t),
                OptimizerKind::Adan => self.adan(store.get_mut(id), grad, i, t),
            }
        }
    }

    fn slot(&mut self, k: usize, i: usize, like: &Tensor<T>) -> Tensor<T> {
        self.state.slots[k][i]
            .take()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    fn adam(&mut self, p: &mut Tensor<T>, g: &Tensor<T>, i: usize, t: i32) {
        let mut m = self.slot(0, i, g);
        let mut v = self.slot(1, i, g);
        let (b1, b2) = (T::lit(B1), T::lit(B2));
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        let lr = T::lit(self.lr);
        let wd = T::lit(self.weight_decay);
        let one = T::one();
        for k in 0..p.len() {
            let gk = g.data()[k];
            let mk = b1 * m.data()[k] + (one - b1) * gk;
            let vk = b2 * v.data()[k] + (one - b2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let mhat = mk / T::lit(c1);
            let vhat = vk / T::lit(c2);
            let pk = &mut p.data_mut()[k];
            *pk -= lr * (mhat / (vhat.sqrt() + T::lit(EPS)) + wd * *pk);
        }
        self.state.slots[0][i] = Some(m);
        self.state.slots[1][i] = Some(v);
    }

    fn adan(&mut self, p: &mut Tensor<T>, g: &Tensor<T>, i: usize, t: i32) {
        let mut m = self.slot(0, i, g);
        let mut v = self.slot(1, i, g);
        let mut n = self.slot(2, i, g);
        let prev = self.state.slots[3][i].take().unwrap_or_else(|| g.clone());
        let [b1, b2, b3] = ADAN_B;
        let c1 = 1.0 - (1.0 - b1).powi(t);
        let c2 = 1.0 - (1.0 - b2).powi(t);
        let c3 = 1.0 - (1.0 - b3).powi(t);
        let one = T::one();
        let (tb1, tb2, tb3) = (T::lit(b1), T::lit(b2), T::lit(b3));
        let lr = T::lit(self.lr);
        let decay = one + lr * T::lit(self.weight_decay);
        for k in 0..p.len() {
            let gk = g.data()[k];
            let diff = gk - prev.data()[k];
            let mk = (one - tb1) * m.data()[k] + tb1 * gk;
            let vk = (one - tb2) * v.data()[k] + tb2 * diff;
            let u = gk + (one - tb2) * diff;
            let nk = (one - tb3) * n.data()[k] + tb3 * u * u;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            n.data_mut()[k] = nk;
            let step = lr / ((nk / T::lit(c3)).sqrt() + T::lit(EPS));
            let upd = mk / T::lit(c1) + (one - tb2) * vk / T::lit(c2);
            let pk = &mut p.data_mut()[k];
            *pk = (*pk - step * upd) / decay;
        }
        self.state.slots[0][i] = Some(m);
        self.state.slots[1][i] = Some(v);
        self.state.slots[2][i] = Some(n);
        self.state.slots[3][i] = Some(g.clone());
    }
}
