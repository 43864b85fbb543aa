use serde::{Deserialize, Serialize};

use super::Heads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    SgdMomentum,
}

/// SGD, optionally with heavy-ball momentum: `v ← μv + g; θ ← θ - ηv`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    velocity: Option<Heads>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind,
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    /// `grads` has the shape of `params`.
    pub fn step(&mut self, params: &mut Heads, grads: &Heads) {
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.blocks_mut().into_iter().zip(grads.blocks()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = self.momentum;
                let velocity = self.velocity.get_or_insert_with(|| {
                    let mut v = grads.clone();
                    v.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
                    v
                });
                for ((p, v), g) in params
                    .blocks_mut()
                    .into_iter()
                    .zip(velocity.blocks_mut())
                    .zip(grads.blocks())
                {
                    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = mu * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let h = Heads::init(4, 3, 2, Activation::Identity, 5);
        let g = Heads::init(4, 3, 2, Activation::Identity, 6);
        for kind in [OptimizerKind::Sgd, OptimizerKind::SgdMomentum] {
            let mut p = h.clone();
            let mut opt = Optimizer::new(kind, 0.0, 0.9);
            opt.step(&mut p, &g);
            opt.step(&mut p, &g);
            let bits = |h: &Heads| h.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p), bits(&h));
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Heads::init(1, 1, 1, Activation::Identity, 1);
        p.set_flat(&[0.0, 0.0, 0.0, 0.0]);
        let mut g = p.clone();
        g.set_flat(&[1.0, 0.0, 0.0, 0.0]);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum, 0.1, 0.5);
        opt.step(&mut p, &g);
        opt.step(&mut p, &g);
        // v1 = 1, v2 = 1.5; θ = -0.1 - 0.15
        assert!((p.to_flat()[0] + 0.25).abs() < 1e-15);
    }
}
