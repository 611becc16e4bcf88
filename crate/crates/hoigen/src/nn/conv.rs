//! 2D convolution via im2col + gemm.

use rand::Rng;

use super::{join, Param, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Param<S>, // (cout, cin*k*k)
    pub b: Param<S>, // (cout)
    // Persistent im2col scratch, reused across calls; doubles as the
    // backward cache after a train-mode forward.
    cols: Vec<S>,
    cache_shape: Option<([usize; 4], (usize, usize))>,
}

impl<S: Scalar> Conv2d<S> {
    /// Kaiming-normal weights (fan-in), zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let pad = k / 2;
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = Tensor::from_vec(
            &[cout, cin * k * k],
            (0..cout * cin * k * k)
                .map(|_| S::from_f64(rng.sample::<f64, _>(rand_distr::StandardNormal) * std))
                .collect(),
        );
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            w: Param::new(w),
            b: Param::zeros(&[cout]),
            cols: Vec::new(),
            cache_shape: None,
        }
    }

    /// Zero-initialized conv; used for output heads so the model starts as
    /// the zero function.
    pub fn new_zeroed(cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
            w: Param::zeros(&[cout, cin * k * k]),
            b: Param::zeros(&[cout]),
            cols: Vec::new(),
            cache_shape: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor<S>, b: usize, cols: &mut [S], oh: usize, ow: usize) {
        let (c, h, w) = (x.shape[1], x.shape[2], x.shape[3]);
        let n = oh * ow;
        let base = b * c * h * w;
        let mut row = 0usize;
        for ci in 0..c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let mut idx = 0usize;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            for _ in 0..ow {
                                dst[idx] = S::ZERO;
                                idx += 1;
                            }
                            continue;
                        }
                        let rowbase = base + ci * h * w + iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[idx] = if ix < 0 || ix >= w as isize {
                                S::ZERO
                            } else {
                                x.data[rowbase + ix as usize]
                            };
                            idx += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im_single(
        &self,
        dcols: &[S],
        dxb: &mut [S],
        c: usize,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) {
        let n = oh * ow;
        let mut row = 0usize;
        for ci in 0..c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &dcols[row * n..(row + 1) * n];
                    let mut idx = 0usize;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            idx += ow;
                            continue;
                        }
                        let rowbase = ci * h * w + iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dxb[rowbase + ix as usize] += src[idx];
                            }
                            idx += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        assert_eq!(x.shape.len(), 4);
        assert_eq!(x.shape[1], self.cin, "conv input channels");
        let (bsz, h, w) = (x.shape[0], x.shape[2], x.shape[3]);
        let (oh, ow) = self.out_hw(h, w);
        let kk = self.cin * self.k * self.k;
        let n = oh * ow;
        let needed = bsz * kk * n;
        if self.cols.len() < needed {
            self.cols.resize(needed, S::ZERO);
        }
        let mut cols = std::mem::take(&mut self.cols);
        let mut y = Tensor::zeros(&[bsz, self.cout, oh, ow]);
        {
            // Batch images are independent: disjoint writes, deterministic.
            use rayon::prelude::*;
            let this = &*self;
            cols[..needed]
                .par_chunks_mut(kk * n)
                .zip(y.data.par_chunks_mut(self.cout * n))
                .enumerate()
                .for_each(|(b, (cb, yb))| {
                    this.im2col(x, b, cb, oh, ow);
                    S::gemm(this.cout, kk, n, S::ONE, &this.w.data.data, cb, S::ZERO, yb);
                    for co in 0..this.cout {
                        let bias = this.b.data.data[co];
                        for v in &mut yb[co * n..(co + 1) * n] {
                            *v += bias;
                        }
                    }
                });
        }
        self.cols = cols;
        self.cache_shape = if train {
            Some(([bsz, self.cin, h, w], (oh, ow)))
        } else {
            None
        };
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let ([bsz, cin, h, w], (oh, ow)) =
            self.cache_shape.expect("conv backward without train forward");
        let kk = cin * self.k * self.k;
        let n = oh * ow;
        assert_eq!(dy.shape, vec![bsz, self.cout, oh, ow]);
        let mut dx = Tensor::zeros(&[bsz, cin, h, w]);
        // Per-image weight-gradient partials are reduced in index order
        // afterwards, keeping accumulation deterministic.
        use rayon::prelude::*;
        let this = &*self;
        let partials: Vec<Vec<S>> = dx
            .data
            .par_chunks_mut(cin * h * w)
            .enumerate()
            .map(|(b, dxb)| {
                let cb = &this.cols[b * kk * n..(b + 1) * kk * n];
                let dyb = &dy.data[b * this.cout * n..(b + 1) * this.cout * n];
                let mut dwb = vec![S::ZERO; this.cout * kk];
                // dW_b = dY_b (cout x n) * cols_b^T (n x kk)
                S::gemm_ex(
                    this.cout,
                    n,
                    kk,
                    S::ONE,
                    dyb,
                    n as isize,
                    1,
                    cb,
                    1,
                    n as isize,
                    S::ZERO,
                    &mut dwb,
                );
                // dcols = W^T (kk x cout) * dY_b (cout x n)
                let mut dcols = vec![S::ZERO; kk * n];
                S::gemm_ex(
                    kk,
                    this.cout,
                    n,
                    S::ONE,
                    &this.w.data.data,
                    1,
                    kk as isize,
                    dyb,
                    n as isize,
                    1,
                    S::ZERO,
                    &mut dcols,
                );
                this.col2im_single(&dcols, dxb, cin, h, w, oh, ow);
                dwb
            })
            .collect();
        for (b, dwb) in partials.iter().enumerate() {
            for (g, v) in self.w.grad.data.iter_mut().zip(dwb) {
                *g += *v;
            }
            let dyb = &dy.data[b * self.cout * n..(b + 1) * self.cout * n];
            for co in 0..self.cout {
                let mut s = S::ZERO;
                for v in &dyb[co * n..(co + 1) * n] {
                    s += *v;
                }
                self.b.grad.data[co] += s;
            }
        }
        dx
    }
}

impl<S: Scalar> Params<S> for Conv2d<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Direct (nested-loop) convolution as the independent oracle.
    fn conv_naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let (bsz, cin, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (oh, ow) = conv.out_hw(h, w);
        let mut y = Tensor::zeros(&[bsz, conv.cout, oh, ow]);
        for b in 0..bsz {
            for co in 0..conv.cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.b.data.data[co];
                        for ci in 0..cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        let xv = x.data[((b * cin + ci) * h + iy as usize) * w
                                            + ix as usize];
                                        let wv = conv.w.data.data
                                            [co * cin * conv.k * conv.k
                                                + (ci * conv.k + ky) * conv.k
                                                + kx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y.data[((b * conv.cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn gemm_conv_matches_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for &(cin, cout, k, stride, h, w) in
            &[(3usize, 4usize, 3usize, 1usize, 7usize, 6usize), (2, 5, 3, 2, 8, 8), (4, 2, 1, 1, 5, 5)]
        {
            let mut conv = Conv2d::<f64>::new(cin, cout, k, stride, &mut rng);
            let x = Tensor::from_vec(
                &[2, cin, h, w],
                (0..2 * cin * h * w)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect(),
            );
            let y = conv.forward(&x, false);
            let y_ref = conv_naive(&x, &conv);
            for (a, b) in y.data.iter().zip(&y_ref.data) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}
