use std::fmt;

/// Fully-connected layer `y = W x + b`, `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub out_features: usize,
    pub in_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(out_features: usize, in_features: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        DenseParams {
            out_features,
            in_features,
            weight,
            bias,
        }
    }

    pub fn w(&self, o: usize, i: usize) -> f64 {
        self.weight[o * self.in_features + i]
    }
}

/// 2-D convolution, stride 1, valid padding. Kernel is `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2dParams {
    pub fn window(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
}

/// Inference-mode batch normalization
/// `y_c = gamma_c (x_c - mu_c) / (sigma_c + epsilon) + beta_c`.
///
/// The denominator is `sigma + epsilon` as written, not `sqrt(var + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel slope `gamma / (sigma + epsilon)`.
    pub fn scale(&self) -> Vec<f64> {
        self.gamma
            .iter()
            .zip(&self.sigma)
            .map(|(g, s)| g / (s + self.epsilon))
            .collect()
    }

    /// Per-channel intercept `beta - gamma mu / (sigma + epsilon)`.
    pub fn shift(&self) -> Vec<f64> {
        (0..self.channels())
            .map(|c| self.beta[c] - self.gamma[c] * self.mu[c] / (self.sigma[c] + self.epsilon))
            .collect()
    }

    /// Rebuild `(gamma, beta)` so that the layer computes `slope x + intercept`
    /// per channel while keeping `mu`, `sigma` and `epsilon`.
    pub fn with_slope_intercept(&self, slope: &[f64], intercept: &[f64]) -> BatchNormParams {
        let mut out = self.clone();
        for c in 0..self.channels() {
            let denom = self.sigma[c] + self.epsilon;
            out.gamma[c] = slope[c] * denom;
            out.beta[c] = intercept[c] + slope[c] * self.mu[c];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NonAffineOp {
    Relu,
    Sigmoid,
    Tanh,
    MaxPool2d { kh: usize, kw: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AffineOp {
    Add,
    /// Concatenation along the channel axis.
    Concat,
    AvgPool2d {
        kh: usize,
        kw: usize,
    },
    Flatten,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Dense(DenseParams),
    Conv2d(Conv2dParams),
    BatchNorm(BatchNormParams),
    NonAffine(NonAffineOp),
    OtherAffine(AffineOp),
}

/// Coarse operator taxonomy used by the folding analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerClass {
    /// Parameterized affine layer (`W x + b`) that can absorb a per-channel affine map.
    Expressive,
    BatchNorm,
    /// Parameterless affine operator.
    OtherAffine,
    NonAffine,
}

impl LayerClass {
    pub fn is_affine(self) -> bool {
        !matches!(self, LayerClass::NonAffine)
    }
}

impl NodeKind {
    pub fn class(&self) -> LayerClass {
        match self {
            NodeKind::Dense(_) | NodeKind::Conv2d(_) => LayerClass::Expressive,
            NodeKind::BatchNorm(_) => LayerClass::BatchNorm,
            NodeKind::NonAffine(_) => LayerClass::NonAffine,
            NodeKind::OtherAffine(_) => LayerClass::OtherAffine,
        }
    }

    /// Operator name as written in graph files.
    pub fn op_name(&self) -> &'static str {
        match self {
            NodeKind::Dense(_) => "Dense",
            NodeKind::Conv2d(_) => "Conv2D",
            NodeKind::BatchNorm(_) => "BatchNorm",
            NodeKind::NonAffine(NonAffineOp::Relu) => "ReLU",
            NodeKind::NonAffine(NonAffineOp::Sigmoid) => "Sigmoid",
            NodeKind::NonAffine(NonAffineOp::Tanh) => "Tanh",
            NodeKind::NonAffine(NonAffineOp::MaxPool2d { .. }) => "MaxPool2D",
            NodeKind::OtherAffine(AffineOp::Add) => "Add",
            NodeKind::OtherAffine(AffineOp::Concat) => "Concat",
            NodeKind::OtherAffine(AffineOp::AvgPool2d { .. }) => "AvgPool2D",
            NodeKind::OtherAffine(AffineOp::Flatten) => "Flatten",
            NodeKind::OtherAffine(AffineOp::Identity) => "Identity",
        }
    }

    /// Minimum number of inputs and whether more are allowed.
    pub(crate) fn arity(&self) -> (usize, bool) {
        match self {
            NodeKind::OtherAffine(AffineOp::Add) | NodeKind::OtherAffine(AffineOp::Concat) => {
                (2, true)
            }
            _ => (1, false),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            NodeKind::Dense(d) => d.out_features * d.in_features + d.out_features,
            NodeKind::Conv2d(c) => c.out_channels * c.in_channels * c.window() + c.out_channels,
            NodeKind::BatchNorm(bn) => 4 * bn.channels(),
            _ => 0,
        }
    }

    pub fn as_batch_norm(&self) -> Option<&BatchNormParams> {
        match self {
            NodeKind::BatchNorm(bn) => Some(bn),
            _ => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.op_name())
    }
}
