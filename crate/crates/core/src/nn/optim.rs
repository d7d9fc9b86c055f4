//! Adam and AdamW.

use ndarray::Zip;

use super::params::ParamStore;
use super::tape::Mat;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW); zero gives plain Adam.
    pub weight_decay: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_decay(store, lr, 0.0)
    }

    pub fn adamw(store: &ParamStore, lr: f64) -> Self {
        Self::with_decay(store, lr, 0.01)
    }

    pub fn with_decay(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || store.values().iter().map(|v| Mat::zeros(v.dim())).collect::<Vec<_>>();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. Parameters without a gradient keep their moments frozen.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
        for (k, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut store.values_mut()[k];
            Zip::from(p).and(&mut self.m[k]).and(&mut self.v[k]).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let grads = {
                let mut t = Tape::new();
                let x = t.param(&store, id);
                let target = t.constant(array![[1.0, 1.0]]);
                let d = t.sub(x, target);
                let sq = t.square(d);
                let loss = t.sum(sq);
                t.backward(loss).for_store(&store)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(id).iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.add("x", array![[0.0]]);
        let mut opt = Adam::new(&store, 0.5);
        opt.step(&mut store, &[Some(array![[4.0]])]);
        assert!((store.values()[0][[0, 0]] + 0.5).abs() < 1e-6);
    }
}
