//! Single-head cross-attention from spatial positions to a small token set.
//!
//! Queries come from feature-map pixels, keys/values from externally supplied
//! tokens (identity features). Tokens carry no positional encoding, so the
//! layer is invariant to permutations within a token block by construction.

use rand::Rng;

use super::linear::Linear;
use super::{Param, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct CrossAttention<S> {
    pub channels: usize,
    pub d_tok: usize,
    pub d_attn: usize,
    wq: Linear<S>,
    wk: Linear<S>,
    wv: Linear<S>,
    wo: Linear<S>,
    cache: Option<AttnCache<S>>,
}

#[derive(Debug, Clone)]
struct AttnCache<S> {
    q: Tensor<S>,    // (b*hw, d)
    k: Tensor<S>,    // (b*s, d)
    v: Tensor<S>,    // (b*s, d)
    attn: Tensor<S>, // (b, hw, s) softmaxed
    shape: [usize; 4],
    n_tok: usize,
}

impl<S: Scalar> CrossAttention<S> {
    pub fn new(channels: usize, d_tok: usize, d_attn: usize, rng: &mut impl Rng) -> Self {
        CrossAttention {
            channels,
            d_tok,
            d_attn,
            wq: Linear::new(channels, d_attn, rng),
            wk: Linear::new(d_tok, d_attn, rng),
            wv: Linear::new(d_tok, d_attn, rng),
            wo: Linear::new(d_attn, channels, rng),
            cache: None,
        }
    }

    /// x: (b, c, h, w); tokens: (b, s, d_tok). Returns x + attention output.
    pub fn forward(&mut self, x: &Tensor<S>, tokens: &Tensor<S>, train: bool) -> Tensor<S> {
        let (bsz, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let s = tokens.shape[1];
        assert_eq!(c, self.channels);
        assert_eq!(tokens.shape[0], bsz);
        assert_eq!(tokens.shape[2], self.d_tok);
        let hw = h * w;
        let d = self.d_attn;

        // Pixels as rows: (b*hw, c). Feature maps are channel-major, so gather.
        let mut xr = Tensor::zeros(&[bsz * hw, c]);
        for b in 0..bsz {
            for ci in 0..c {
                for p in 0..hw {
                    xr.data[(b * hw + p) * c + ci] = x.data[(b * c + ci) * hw + p];
                }
            }
        }
        let q = self.wq.forward(&xr, train);
        let tok_rows = Tensor::from_vec(&[bsz * s, self.d_tok], tokens.data.clone());
        let k = self.wk.forward(&tok_rows, train);
        let v = self.wv.forward(&tok_rows, train);

        let scale = S::from_f64(1.0 / (d as f64).sqrt());
        let mut attn = Tensor::zeros(&[bsz, hw, s]);
        for b in 0..bsz {
            let qb = &q.data[b * hw * d..(b + 1) * hw * d];
            let kb = &k.data[b * s * d..(b + 1) * s * d];
            let ab = &mut attn.data[b * hw * s..(b + 1) * hw * s];
            // scores = Q (hw x d) * K^T (d x s)
            S::gemm_ex(
                hw, d, s, scale, qb, d as isize, 1, kb, 1, d as isize, S::ZERO, ab,
            );
            for row in ab.chunks_mut(s) {
                let mut mx = row[0];
                for val in row.iter() {
                    mx = mx.max_s(*val);
                }
                let mut z = S::ZERO;
                for val in row.iter_mut() {
                    *val = (*val - mx).exp();
                    z += *val;
                }
                let inv = S::ONE / z;
                for val in row.iter_mut() {
                    *val *= inv;
                }
            }
        }

        let mut o = Tensor::zeros(&[bsz * hw, d]);
        for b in 0..bsz {
            let ab = &attn.data[b * hw * s..(b + 1) * hw * s];
            let vb = &v.data[b * s * d..(b + 1) * s * d];
            let ob = &mut o.data[b * hw * d..(b + 1) * hw * d];
            S::gemm(hw, s, d, S::ONE, ab, vb, S::ZERO, ob);
        }
        let proj = self.wo.forward(&o, train);

        // Residual add, scattering rows back to channel-major.
        let mut y = x.clone();
        for b in 0..bsz {
            for ci in 0..c {
                for p in 0..hw {
                    y.data[(b * c + ci) * hw + p] += proj.data[(b * hw + p) * c + ci];
                }
            }
        }
        if train {
            self.cache = Some(AttnCache {
                q,
                k,
                v,
                attn,
                shape: [bsz, c, h, w],
                n_tok: s,
            });
        }
        y
    }

    /// Returns (dx, dtokens).
    pub fn backward(&mut self, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
        let cache = self.cache.take().expect("attention backward without forward");
        let [bsz, c, h, w] = cache.shape;
        let s = cache.n_tok;
        let hw = h * w;
        let d = self.d_attn;

        // Gradient of the projection path, rows (b*hw, c).
        let mut dproj = Tensor::zeros(&[bsz * hw, c]);
        for b in 0..bsz {
            for ci in 0..c {
                for p in 0..hw {
                    dproj.data[(b * hw + p) * c + ci] = dy.data[(b * c + ci) * hw + p];
                }
            }
        }
        let do_ = self.wo.backward(&dproj); // (b*hw, d)

        let mut dattn = Tensor::zeros(&[bsz, hw, s]);
        let mut dv = Tensor::zeros(&[bsz * s, d]);
        for b in 0..bsz {
            let dob = &do_.data[b * hw * d..(b + 1) * hw * d];
            let vb = &cache.v.data[b * s * d..(b + 1) * s * d];
            let ab = &cache.attn.data[b * hw * s..(b + 1) * hw * s];
            // dA = dO (hw x d) * V^T (d x s)
            S::gemm_ex(
                hw,
                d,
                s,
                S::ONE,
                dob,
                d as isize,
                1,
                vb,
                1,
                d as isize,
                S::ZERO,
                &mut dattn.data[b * hw * s..(b + 1) * hw * s],
            );
            // dV += A^T (s x hw) * dO (hw x d)
            S::gemm_ex(
                s,
                hw,
                d,
                S::ONE,
                ab,
                1,
                s as isize,
                dob,
                d as isize,
                1,
                S::ONE,
                &mut dv.data[b * s * d..(b + 1) * s * d],
            );
        }

        // Softmax backward, rowwise: dS = A .* (dA - rowsum(dA .* A)).
        let scale = S::from_f64(1.0 / (d as f64).sqrt());
        let mut dscores = Tensor::zeros(&[bsz, hw, s]);
        for b in 0..bsz {
            for p in 0..hw {
                let base = (b * hw + p) * s;
                let mut dot = S::ZERO;
                for j in 0..s {
                    dot += dattn.data[base + j] * cache.attn.data[base + j];
                }
                for j in 0..s {
                    dscores.data[base + j] =
                        cache.attn.data[base + j] * (dattn.data[base + j] - dot) * scale;
                }
            }
        }

        let mut dq = Tensor::zeros(&[bsz * hw, d]);
        let mut dk = Tensor::zeros(&[bsz * s, d]);
        for b in 0..bsz {
            let dsb = &dscores.data[b * hw * s..(b + 1) * hw * s];
            let kb = &cache.k.data[b * s * d..(b + 1) * s * d];
            let qb = &cache.q.data[b * hw * d..(b + 1) * hw * d];
            // dQ = dS (hw x s) * K (s x d)
            S::gemm(
                hw,
                s,
                d,
                S::ONE,
                dsb,
                kb,
                S::ZERO,
                &mut dq.data[b * hw * d..(b + 1) * hw * d],
            );
            // dK += dS^T (s x hw) * Q (hw x d)
            S::gemm_ex(
                s,
                hw,
                d,
                S::ONE,
                dsb,
                1,
                s as isize,
                qb,
                d as isize,
                1,
                S::ONE,
                &mut dk.data[b * s * d..(b + 1) * s * d],
            );
        }

        let dxr = self.wq.backward(&dq); // (b*hw, c)
        let dtok_k = self.wk.backward(&dk); // (b*s, d_tok)
        let dtok_v = self.wv.backward(&dv);

        // dx = dy (residual) + scatter(dxr)
        let mut dx = dy.clone();
        for b in 0..bsz {
            for ci in 0..c {
                for p in 0..hw {
                    dx.data[(b * c + ci) * hw + p] += dxr.data[(b * hw + p) * c + ci];
                }
            }
        }
        let mut dtok = Tensor::zeros(&[bsz, s, self.d_tok]);
        for i in 0..bsz * s * self.d_tok {
            dtok.data[i] = dtok_k.data[i] + dtok_v.data[i];
        }
        (dx, dtok)
    }
}

impl<S: Scalar> Params<S> for CrossAttention<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.wq.visit(&super::join(prefix, "wq"), f);
        self.wk.visit(&super::join(prefix, "wk"), f);
        self.wv.visit(&super::join(prefix, "wv"), f);
        self.wo.visit(&super::join(prefix, "wo"), f);
    }
}
