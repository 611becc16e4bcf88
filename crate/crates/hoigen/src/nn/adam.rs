//! AdamW with decoupled weight decay.

use super::Params;
use crate::tensor::Scalar;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over every parameter of `model`, in visit order. Moment
    /// state is kept in f64 regardless of the model scalar type.
    pub fn step<S: Scalar, M: Params<S>>(&mut self, model: &mut M) {
        self.t += 1;
        let t = self.t;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let lr = self.lr;
        let eps = self.eps;
        let wd = self.weight_decay;

        let mut idx = 0usize;
        let m_state = &mut self.m;
        let v_state = &mut self.v;
        model.visit("", &mut |_, p| {
            if idx == m_state.len() {
                m_state.push(vec![0.0; p.len()]);
                v_state.push(vec![0.0; p.len()]);
            }
            let m = &mut m_state[idx];
            let v = &mut v_state[idx];
            assert_eq!(m.len(), p.len(), "optimizer state mismatch");
            for i in 0..p.len() {
                let g = p.grad.data[i].to_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                let x = p.data.data[i].to_f64();
                let upd = x - lr * (mhat / (vhat.sqrt() + eps) + wd * x);
                p.data.data[i] = S::from_f64(upd);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use crate::tensor::Tensor;

    struct One {
        p: Param<f64>,
    }
    impl Params<f64> for One {
        fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&super::super::join(prefix, "p"), &mut self.p);
        }
    }

    #[test]
    fn quadratic_converges() {
        // minimize (x - 3)^2
        let mut model = One {
            p: Param::new(Tensor::from_vec(&[1], vec![0.0])),
        };
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..500 {
            let x = model.p.data.data[0];
            model.p.grad.data[0] = 2.0 * (x - 3.0);
            opt.step(&mut model);
            model.zero_grad();
        }
        assert!((model.p.data.data[0] - 3.0).abs() < 1e-3);
    }
}
