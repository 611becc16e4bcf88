//! Stateless ops: SiLU, nearest-neighbor upsampling, timestep embeddings.

use crate::tensor::{Scalar, Tensor};

/// SiLU / swish: x * sigmoid(x).
pub fn silu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v * sigmoid(v))
}

/// Backward of SiLU given the forward input.
pub fn silu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.shape, dy.shape);
    let mut dx = Tensor::zeros(&x.shape);
    for i in 0..x.len() {
        let s = sigmoid(x.data[i]);
        dx.data[i] = dy.data[i] * (s + x.data[i] * s * (S::ONE - s));
    }
    dx
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::ONE / (S::ONE + (-v).exp())
}

/// Nearest-neighbor 2x upsample; backward is 2x2 sum pooling.
#[derive(Debug, Clone, Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward<S: Scalar>(&self, x: &Tensor<S>) -> Tensor<S> {
        let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let mut y = Tensor::zeros(&[b, c, h * 2, w * 2]);
        for bi in 0..b * c {
            let xs = &x.data[bi * h * w..(bi + 1) * h * w];
            let ys = &mut y.data[bi * 4 * h * w..(bi + 1) * 4 * h * w];
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    ys[yy * 2 * w + xx] = xs[(yy / 2) * w + xx / 2];
                }
            }
        }
        y
    }

    pub fn backward<S: Scalar>(&self, dy: &Tensor<S>) -> Tensor<S> {
        let (b, c, h2, w2) = (dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3]);
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        for bi in 0..b * c {
            let ds = &dy.data[bi * h2 * w2..(bi + 1) * h2 * w2];
            let xs = &mut dx.data[bi * h * w..(bi + 1) * h * w];
            for yy in 0..h2 {
                for xx in 0..w2 {
                    xs[(yy / 2) * w + xx / 2] += ds[yy * w2 + xx];
                }
            }
        }
        dx
    }
}

/// Sinusoidal timestep embedding, (len(ts), dim). Half sine, half cosine with
/// log-spaced frequencies; no learnable state.
pub fn timestep_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut y = Tensor::zeros(&[ts.len(), dim]);
    for (i, &t) in ts.iter().enumerate() {
        for j in 0..half {
            let freq = (-(10000.0f64.ln()) * j as f64 / (half as f64 - 1.0)).exp();
            let arg = t as f64 * freq;
            y.data[i * dim + j] = S::from_f64(arg.sin());
            y.data[i * dim + half + j] = S::from_f64(arg.cos());
        }
    }
    y
}

/// Channel-concatenate two feature maps.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (bs, ca, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
    let cb = b.shape[1];
    assert_eq!(b.shape[0], bs);
    assert_eq!((b.shape[2], b.shape[3]), (h, w));
    let mut y = Tensor::zeros(&[bs, ca + cb, h, w]);
    let hw = h * w;
    for bi in 0..bs {
        y.data[bi * (ca + cb) * hw..bi * (ca + cb) * hw + ca * hw]
            .copy_from_slice(&a.data[bi * ca * hw..(bi + 1) * ca * hw]);
        y.data[bi * (ca + cb) * hw + ca * hw..(bi + 1) * (ca + cb) * hw]
            .copy_from_slice(&b.data[bi * cb * hw..(bi + 1) * cb * hw]);
    }
    y
}

/// Split a gradient back into the two channel blocks of `concat_channels`.
pub fn split_channels<S: Scalar>(dy: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let (bs, c, h, w) = (dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3]);
    let cb = c - ca;
    let hw = h * w;
    let mut da = Tensor::zeros(&[bs, ca, h, w]);
    let mut db = Tensor::zeros(&[bs, cb, h, w]);
    for bi in 0..bs {
        da.data[bi * ca * hw..(bi + 1) * ca * hw]
            .copy_from_slice(&dy.data[bi * c * hw..bi * c * hw + ca * hw]);
        db.data[bi * cb * hw..(bi + 1) * cb * hw]
            .copy_from_slice(&dy.data[bi * c * hw + ca * hw..(bi + 1) * c * hw]);
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_roundtrip_shapes() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let up = Upsample2x;
        let y = up.forward(&x);
        assert_eq!(y.shape, vec![1, 1, 4, 4]);
        assert_eq!(y.data[0], 1.0);
        assert_eq!(y.data[5], 1.0); // (1,1) -> source (0,0)
        assert_eq!(y.data[2], 2.0); // (2,0) -> source (1,0)
        let dx = up.backward(&y);
        assert_eq!(dx.data, vec![4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f32).collect());
        let b = Tensor::<f32>::from_vec(&[1, 1, 2, 2], (8..12).map(|v| v as f32).collect());
        let y = concat_channels(&a, &b);
        let (ra, rb) = split_channels(&y, 2);
        assert_eq!(ra.data, a.data);
        assert_eq!(rb.data, b.data);
    }
}
