use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::graph::{BatchNormParams, Conv2dParams, DenseParams, NodeKind};

/// Seeded weight source. Weights are `N(0, 1/fan_in)`, biases `N(0, 0.1²)`.
pub(crate) struct Init {
    pub(crate) rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, std: f64, n: usize) -> Vec<f64> {
        let d = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    pub(crate) fn dense(&mut self, out: usize, inp: usize) -> NodeKind {
        let weight = self.normal((1.0 / inp as f64).sqrt(), out * inp);
        let bias = self.normal(0.1, out);
        NodeKind::Dense(DenseParams::new(out, inp, weight, bias))
    }

    pub(crate) fn conv(&mut self, out: usize, inp: usize, k: usize) -> NodeKind {
        let fan_in = inp * k * k;
        let kernel = self.normal((1.0 / fan_in as f64).sqrt(), out * fan_in);
        let bias = self.normal(0.1, out);
        NodeKind::Conv2d(Conv2dParams {
            out_channels: out,
            in_channels: inp,
            kernel_h: k,
            kernel_w: k,
            kernel,
            bias,
        })
    }

    /// `|gamma|` and `sigma` in `[0.5, 1.5)`, gamma of random sign.
    pub(crate) fn batch_norm(&mut self, c: usize) -> NodeKind {
        let mut gamma = Vec::with_capacity(c);
        let mut sigma = Vec::with_capacity(c);
        for _ in 0..c {
            let g: f64 = self.rng.random_range(0.5..1.5);
            gamma.push(if self.rng.random_bool(0.5) { g } else { -g });
            sigma.push(self.rng.random_range(0.5..1.5));
        }
        let beta = (0..c)
            .map(|_| 0.5 * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mu = (0..c)
            .map(|_| 0.5 * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        NodeKind::BatchNorm(BatchNormParams {
            gamma,
            beta,
            mu,
            sigma,
            epsilon: 1e-3,
        })
    }
}
