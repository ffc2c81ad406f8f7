//! Rewrites a terminal layer `f` into `post ∘ f ∘ pre` for per-channel
//! affine maps `pre` (on its input channels) and `post` (on its output
//! channels). Every folding update is an instance of this.

use crate::graph::{BatchNormParams, Conv2dParams, DenseParams, NodeKind};

use super::ChannelAffine;

/// Replacement parameters for one terminal layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterUpdate {
    Dense(DenseParams),
    Conv2d(Conv2dParams),
    BatchNorm(BatchNormParams),
}

impl ParameterUpdate {
    pub fn into_kind(self) -> NodeKind {
        match self {
            ParameterUpdate::Dense(d) => NodeKind::Dense(d),
            ParameterUpdate::Conv2d(c) => NodeKind::Conv2d(c),
            ParameterUpdate::BatchNorm(b) => NodeKind::BatchNorm(b),
        }
    }
}

pub(crate) fn rewrite_terminal(
    kind: &NodeKind,
    pre: Option<&ChannelAffine>,
    post: Option<&ChannelAffine>,
) -> ParameterUpdate {
    match kind {
        NodeKind::Dense(d) => {
            let mut out = d.clone();
            if let Some(pre) = pre {
                for o in 0..d.out_features {
                    let mut extra = 0.0;
                    for i in 0..d.in_features {
                        let w = d.w(o, i);
                        extra += w * pre.shift[i];
                        out.weight[o * d.in_features + i] = w * pre.scale[i];
                    }
                    out.bias[o] += extra;
                }
            }
            if let Some(post) = post {
                for o in 0..d.out_features {
                    for i in 0..d.in_features {
                        out.weight[o * d.in_features + i] *= post.scale[o];
                    }
                    out.bias[o] = post.scale[o] * out.bias[o] + post.shift[o];
                }
            }
            ParameterUpdate::Dense(out)
        }
        NodeKind::Conv2d(c) => {
            let mut out = c.clone();
            let win = c.window();
            if let Some(pre) = pre {
                for o in 0..c.out_channels {
                    let mut extra = 0.0;
                    for i in 0..c.in_channels {
                        let base = (o * c.in_channels + i) * win;
                        for k in 0..win {
                            let w = c.kernel[base + k];
                            extra += w * pre.shift[i];
                            out.kernel[base + k] = w * pre.scale[i];
                        }
                    }
                    out.bias[o] += extra;
                }
            }
            if let Some(post) = post {
                for o in 0..c.out_channels {
                    let base = o * c.in_channels * win;
                    for k in base..base + c.in_channels * win {
                        out.kernel[k] *= post.scale[o];
                    }
                    out.bias[o] = post.scale[o] * out.bias[o] + post.shift[o];
                }
            }
            ParameterUpdate::Conv2d(out)
        }
        NodeKind::BatchNorm(bn) => {
            let mut slope = bn.scale();
            let mut intercept = bn.shift();
            if let Some(pre) = pre {
                for c in 0..bn.channels() {
                    intercept[c] += slope[c] * pre.shift[c];
                    slope[c] *= pre.scale[c];
                }
            }
            if let Some(post) = post {
                for c in 0..bn.channels() {
                    slope[c] *= post.scale[c];
                    intercept[c] = post.scale[c] * intercept[c] + post.shift[c];
                }
            }
            ParameterUpdate::BatchNorm(bn.with_slope_intercept(&slope, &intercept))
        }
        _ => unreachable!("only expressive layers and batch norms are terminals"),
    }
}
