use super::{Gradients, Network, Scalar};

/// Stochastic gradient descent with optional classical momentum.
/// Layers flagged frozen are never touched.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    momentum: T,
    velocity: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: T) -> Self {
        Self { momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: T) {
        if self.velocity.len() != grads.layers.len() {
            self.velocity = grads
                .layers
                .iter()
                .map(|g| g.as_ref().map(|(w, b)| (vec![T::zero(); w.len()], vec![T::zero(); b.len()])))
                .collect();
        }
        for ((layer, grad), vel) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            if layer.frozen {
                continue;
            }
            let (Some((gw, gb)), Some((vw, vb)), Some((w, b))) = (grad, vel.as_mut(), layer.params_mut()) else {
                continue;
            };
            for ((p, &g), v) in w.iter_mut().zip(gw).zip(vw.iter_mut()).chain(b.iter_mut().zip(gb).zip(vb.iter_mut())) {
                *v = self.momentum * *v - lr * g;
                *p = *p + *v;
            }
        }
    }
}
