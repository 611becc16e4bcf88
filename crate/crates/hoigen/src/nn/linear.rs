//! Fully connected layer and embedding table.

use rand::Rng;

use super::{join, Param, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Param<S>, // (d_out, d_in)
    pub b: Param<S>, // (d_out)
    cache_x: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        let w = Tensor::from_vec(
            &[d_out, d_in],
            (0..d_out * d_in)
                .map(|_| S::from_f64(rng.sample::<f64, _>(rand_distr::StandardNormal) * std))
                .collect(),
        );
        Linear {
            d_in,
            d_out,
            w: Param::new(w),
            b: Param::zeros(&[d_out]),
            cache_x: None,
        }
    }

    /// x: (rows, d_in) -> (rows, d_out)
    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        let rows = x.len() / self.d_in;
        let mut y = Tensor::zeros(&[rows, self.d_out]);
        // y = x (rows x d_in) * W^T (d_in x d_out)
        S::gemm_ex(
            rows,
            self.d_in,
            self.d_out,
            S::ONE,
            &x.data,
            self.d_in as isize,
            1,
            &self.w.data.data,
            1,
            self.d_in as isize,
            S::ZERO,
            &mut y.data,
        );
        for r in 0..rows {
            for o in 0..self.d_out {
                y.data[r * self.d_out + o] += self.b.data.data[o];
            }
        }
        if train {
            self.cache_x = Some(Tensor::from_vec(&[rows, self.d_in], x.data.clone()));
        }
        y
    }

    /// dy: (rows, d_out) -> dx (rows, d_in)
    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let x = self.cache_x.as_ref().expect("linear backward without forward");
        let rows = x.shape[0];
        assert_eq!(dy.len(), rows * self.d_out);
        // dW += dY^T (d_out x rows) * X (rows x d_in)
        S::gemm_ex(
            self.d_out,
            rows,
            self.d_in,
            S::ONE,
            &dy.data,
            1,
            self.d_out as isize,
            &x.data,
            self.d_in as isize,
            1,
            S::ONE,
            &mut self.w.grad.data,
        );
        for r in 0..rows {
            for o in 0..self.d_out {
                self.b.grad.data[o] += dy.data[r * self.d_out + o];
            }
        }
        let mut dx = Tensor::zeros(&[rows, self.d_in]);
        // dX = dY (rows x d_out) * W (d_out x d_in)
        S::gemm(
            rows,
            self.d_out,
            self.d_in,
            S::ONE,
            &dy.data,
            &self.w.data.data,
            S::ZERO,
            &mut dx.data,
        );
        dx
    }
}

impl<S: Scalar> Params<S> for Linear<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Row-lookup embedding table.
#[derive(Debug, Clone)]
pub struct Embedding<S> {
    pub rows: usize,
    pub dim: usize,
    pub w: Param<S>, // (rows, dim)
    cache_ids: Option<Vec<usize>>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new(rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let w = Tensor::from_vec(
            &[rows, dim],
            (0..rows * dim)
                .map(|_| S::from_f64(rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.02))
                .collect(),
        );
        Embedding {
            rows,
            dim,
            w: Param::new(w),
            cache_ids: None,
        }
    }

    pub fn forward(&mut self, ids: &[usize], train: bool) -> Tensor<S> {
        let mut y = Tensor::zeros(&[ids.len(), self.dim]);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < self.rows, "embedding id {id} out of range {}", self.rows);
            y.data[i * self.dim..(i + 1) * self.dim]
                .copy_from_slice(&self.w.data.data[id * self.dim..(id + 1) * self.dim]);
        }
        if train {
            self.cache_ids = Some(ids.to_vec());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) {
        let ids = self.cache_ids.as_ref().expect("embedding backward without forward");
        for (i, &id) in ids.iter().enumerate() {
            for d in 0..self.dim {
                self.w.grad.data[id * self.dim + d] += dy.data[i * self.dim + d];
            }
        }
    }

    pub fn row(&self, id: usize) -> &[S] {
        &self.w.data.data[id * self.dim..(id + 1) * self.dim]
    }
}

impl<S: Scalar> Params<S> for Embedding<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "w"), &mut self.w);
    }
}
