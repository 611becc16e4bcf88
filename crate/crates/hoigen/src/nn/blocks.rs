//! Residual block with timestep-embedding injection, shared by both
//! denoisers: GN -> SiLU -> conv, then a scale-shift (FiLM) from the
//! embedding on the second normalization, SiLU -> conv, plus a (possibly
//! 1x1-projected) skip.

use rand::Rng;

use super::conv::Conv2d;
use super::linear::Linear;
use super::norm::GroupNorm;
use super::ops::{silu_backward, silu_forward};
use super::{join, Param, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ResBlock<S> {
    pub cin: usize,
    pub cout: usize,
    gn1: GroupNorm<S>,
    conv1: Conv2d<S>,
    temb_proj: Linear<S>, // -> (scale, shift), 2*cout
    gn2: GroupNorm<S>,
    conv2: Conv2d<S>,
    skip: Option<Conv2d<S>>,
    cache: Option<BlockCache<S>>,
}

#[derive(Debug, Clone)]
struct BlockCache<S> {
    gn1_out: Tensor<S>,
    gn2_out: Tensor<S>,
    film: Tensor<S>, // (b, 2*cout)
    modulated: Tensor<S>,
}

fn groups_for(c: usize) -> usize {
    for g in [8, 4, 2, 1] {
        if c % g == 0 {
            return g;
        }
    }
    1
}

impl<S: Scalar> ResBlock<S> {
    pub fn new(cin: usize, cout: usize, temb_dim: usize, rng: &mut impl Rng) -> Self {
        ResBlock {
            cin,
            cout,
            gn1: GroupNorm::new(cin, groups_for(cin)),
            conv1: Conv2d::new(cin, cout, 3, 1, rng),
            temb_proj: Linear::new(temb_dim, 2 * cout, rng),
            gn2: GroupNorm::new(cout, groups_for(cout)),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            skip: if cin == cout {
                None
            } else {
                Some(Conv2d::new(cin, cout, 1, 1, rng))
            },
            cache: None,
        }
    }

    /// x: (b, cin, h, w); temb: (b, temb_dim).
    pub fn forward(&mut self, x: &Tensor<S>, temb: &Tensor<S>, train: bool) -> Tensor<S> {
        let bsz = x.shape[0];
        let a = self.gn1.forward(x, train);
        let s1 = silu_forward(&a);
        let h = self.conv1.forward(&s1, train);
        let film = self.temb_proj.forward(temb, train); // (b, 2*cout)
        let g2 = self.gn2.forward(&h, train);
        let hw = h.shape[2] * h.shape[3];
        let mut modulated = Tensor::zeros(&g2.shape);
        for b in 0..bsz {
            for c in 0..self.cout {
                let scale = S::ONE + film.data[b * 2 * self.cout + c];
                let shift = film.data[b * 2 * self.cout + self.cout + c];
                let base = (b * self.cout + c) * hw;
                for i in 0..hw {
                    modulated.data[base + i] = g2.data[base + i] * scale + shift;
                }
            }
        }
        let s2 = silu_forward(&modulated);
        let h2 = self.conv2.forward(&s2, train);
        let skip_x = match &mut self.skip {
            Some(conv) => conv.forward(x, train),
            None => x.clone(),
        };
        let mut y = h2;
        y.add_assign(&skip_x);
        if train {
            self.cache = Some(BlockCache {
                gn1_out: a,
                gn2_out: g2,
                film,
                modulated,
            });
        }
        y
    }

    /// Returns (dx, dtemb) with dtemb shaped (b, temb_dim).
    pub fn backward(&mut self, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
        let cache = self.cache.take().expect("resblock backward without forward");
        let bsz = dy.shape[0];
        let hw = dy.shape[2] * dy.shape[3];
        let ds2 = self.conv2.backward(dy);
        let dmod = silu_backward(&cache.modulated, &ds2);
        // modulated = gn2_out * (1 + scale) + shift
        let mut dg2 = Tensor::zeros(&dmod.shape);
        let mut dfilm = Tensor::zeros(&[bsz, 2 * self.cout]);
        for b in 0..bsz {
            for c in 0..self.cout {
                let scale = S::ONE + cache.film.data[b * 2 * self.cout + c];
                let base = (b * self.cout + c) * hw;
                let mut dscale = S::ZERO;
                let mut dshift = S::ZERO;
                for i in 0..hw {
                    let d = dmod.data[base + i];
                    dg2.data[base + i] = d * scale;
                    dscale += d * cache.gn2_out.data[base + i];
                    dshift += d;
                }
                dfilm.data[b * 2 * self.cout + c] = dscale;
                dfilm.data[b * 2 * self.cout + self.cout + c] = dshift;
            }
        }
        let dtemb = self.temb_proj.backward(&dfilm);
        let dh = self.gn2.backward(&dg2);
        let ds1 = self.conv1.backward(&dh);
        let da = silu_backward(&cache.gn1_out, &ds1);
        let mut dx = self.gn1.backward(&da);
        match &mut self.skip {
            Some(conv) => {
                let d = conv.backward(dy);
                dx.add_assign(&d);
            }
            None => dx.add_assign(dy),
        }
        (dx, dtemb)
    }
}

impl<S: Scalar> Params<S> for ResBlock<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.gn1.visit(&join(prefix, "gn1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.temb_proj.visit(&join(prefix, "temb_proj"), f);
        self.gn2.visit(&join(prefix, "gn2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(skip) = &mut self.skip {
            skip.visit(&join(prefix, "skip"), f);
        }
    }
}
