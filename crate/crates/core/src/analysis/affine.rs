use crate::graph::BatchNormParams;

/// Per-channel affine map `x_c -> scale_c * x_c + shift_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ChannelAffine {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Self {
        assert_eq!(scale.len(), shift.len(), "scale and shift lengths differ");
        ChannelAffine { scale, shift }
    }

    pub fn identity(channels: usize) -> Self {
        ChannelAffine {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    /// The map computed by an inference-mode batch norm.
    pub fn from_batch_norm(bn: &BatchNormParams) -> Self {
        ChannelAffine {
            scale: bn.scale(),
            shift: bn.shift(),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.shift.iter().all(|&t| t == 0.0)
    }

    pub fn is_invertible(&self) -> bool {
        self.scale.iter().all(|&s| s != 0.0)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &ChannelAffine) -> ChannelAffine {
        assert_eq!(self.channels(), inner.channels());
        let scale = self
            .scale
            .iter()
            .zip(&inner.scale)
            .map(|(a, b)| a * b)
            .collect();
        let shift = (0..self.channels())
            .map(|c| self.scale[c] * inner.shift[c] + self.shift[c])
            .collect();
        ChannelAffine { scale, shift }
    }

    /// `None` when some channel has zero scale.
    pub fn inverse(&self) -> Option<ChannelAffine> {
        if !self.is_invertible() {
            return None;
        }
        let scale = self.scale.iter().map(|s| 1.0 / s).collect();
        let shift = self
            .scale
            .iter()
            .zip(&self.shift)
            .map(|(s, t)| -t / s)
            .collect();
        Some(ChannelAffine { scale, shift })
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        self.scale[channel] * x + self.shift[channel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn affine(len: usize) -> impl Strategy<Value = ChannelAffine> {
        (
            prop::collection::vec(-3.0f64..3.0, len),
            prop::collection::vec(-3.0f64..3.0, len),
        )
            .prop_map(|(s, t)| ChannelAffine::new(s, t))
    }

    proptest! {
        #[test]
        fn composition_matches_sequential_application(
            (a, b, x) in (1usize..6).prop_flat_map(|n| (affine(n), affine(n), prop::collection::vec(-5.0f64..5.0, n)))
        ) {
            let ab = a.compose(&b);
            for c in 0..x.len() {
                let direct = a.apply(c, b.apply(c, x[c]));
                prop_assert!((ab.apply(c, x[c]) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            }
        }

        #[test]
        fn inverse_round_trips(a in affine(4)) {
            prop_assume!(a.scale.iter().all(|s| s.abs() > 1e-3));
            let round = a.inverse().unwrap().compose(&a);
            for c in 0..4 {
                prop_assert!((round.scale[c] - 1.0).abs() < 1e-9);
                prop_assert!(round.shift[c].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_scale_has_no_inverse() {
        let a = ChannelAffine::new(vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!(a.inverse().is_none());
        assert!(!a.is_identity());
        assert!(ChannelAffine::identity(3).is_identity());
    }

    #[test]
    fn batch_norm_affine() {
        let bn = BatchNormParams {
            gamma: vec![3.0],
            beta: vec![0.5],
            mu: vec![1.0],
            sigma: vec![0.999],
            epsilon: 0.001,
        };
        let a = ChannelAffine::from_batch_norm(&bn);
        assert_eq!(a.scale, vec![3.0]);
        assert_eq!(a.shift, vec![-2.5]);
    }
}
