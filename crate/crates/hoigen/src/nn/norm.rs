//! Group normalization.

use super::{join, Param, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GroupNorm<S> {
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
    pub gamma: Param<S>,
    pub beta: Param<S>,
    cache: Option<NormCache<S>>,
}

#[derive(Debug, Clone)]
struct NormCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>, // per (batch, group)
}

impl<S: Scalar> GroupNorm<S> {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "channels divisible by groups");
        let mut gamma = Param::zeros(&[channels]);
        gamma.data.fill(S::ONE);
        GroupNorm {
            channels,
            groups,
            eps: 1e-5,
            gamma,
            beta: Param::zeros(&[channels]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        let (bsz, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        assert_eq!(c, self.channels);
        let cg = c / self.groups;
        let gsz = cg * h * w;
        let mut y = Tensor::zeros(&x.shape);
        let mut xhat = Tensor::zeros(&x.shape);
        let mut inv_stds = vec![S::ZERO; bsz * self.groups];
        for b in 0..bsz {
            for g in 0..self.groups {
                let start = (b * c + g * cg) * h * w;
                let xs = &x.data[start..start + gsz];
                let mut mean = S::ZERO;
                for v in xs {
                    mean += *v;
                }
                mean *= S::from_f64(1.0 / gsz as f64);
                let mut var = S::ZERO;
                for v in xs {
                    let d = *v - mean;
                    var += d * d;
                }
                var *= S::from_f64(1.0 / gsz as f64);
                let inv_std = S::ONE / (var + S::from_f64(self.eps)).sqrt();
                inv_stds[b * self.groups + g] = inv_std;
                for (i, v) in xs.iter().enumerate() {
                    let ci = g * cg + i / (h * w);
                    let xh = (*v - mean) * inv_std;
                    xhat.data[start + i] = xh;
                    y.data[start + i] = self.gamma.data.data[ci] * xh + self.beta.data.data[ci];
                }
            }
        }
        if train {
            self.cache = Some(NormCache {
                xhat,
                inv_std: inv_stds,
            });
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let cache = self.cache.as_ref().expect("groupnorm backward without forward");
        let (bsz, c, h, w) = (dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3]);
        let cg = c / self.groups;
        let gsz = cg * h * w;
        let mut dx = Tensor::zeros(&dy.shape);
        for b in 0..bsz {
            for g in 0..self.groups {
                let start = (b * c + g * cg) * h * w;
                let inv_std = cache.inv_std[b * self.groups + g];
                // dxhat = dy * gamma; accumulate the two reductions.
                let mut sum_dxhat = S::ZERO;
                let mut sum_dxhat_xhat = S::ZERO;
                for i in 0..gsz {
                    let ci = g * cg + i / (h * w);
                    let dxh = dy.data[start + i] * self.gamma.data.data[ci];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * cache.xhat.data[start + i];
                }
                let n = S::from_f64(gsz as f64);
                for i in 0..gsz {
                    let ci = g * cg + i / (h * w);
                    let dxh = dy.data[start + i] * self.gamma.data.data[ci];
                    let xh = cache.xhat.data[start + i];
                    dx.data[start + i] =
                        inv_std / n * (n * dxh - sum_dxhat - xh * sum_dxhat_xhat);
                }
            }
        }
        // dgamma / dbeta
        for b in 0..bsz {
            for ci in 0..c {
                let start = (b * c + ci) * h * w;
                let mut dg = S::ZERO;
                let mut db = S::ZERO;
                for i in 0..h * w {
                    dg += dy.data[start + i] * cache.xhat.data[start + i];
                    db += dy.data[start + i];
                }
                self.gamma.grad.data[ci] += dg;
                self.beta.grad.data[ci] += db;
            }
        }
        dx
    }
}

impl<S: Scalar> Params<S> for GroupNorm<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
