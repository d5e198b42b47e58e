use ndarray::ArrayD;

use super::{Parameterized, Real};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<ArrayD<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, grads: &M) {
        let grads = grads.params();
        let mut params = model.params_mut();
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
        }
        assert_eq!(params.len(), self.velocity.len(), "optimizer bound to another model");
        for (((_, p), (_, g)), v) in params.iter_mut().zip(&grads).zip(&mut self.velocity) {
            let (lr, mu) = (self.lr, self.momentum);
            v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
            p.zip_mut_with(v, |p, &v| *p -= lr * v);
        }
    }
}
