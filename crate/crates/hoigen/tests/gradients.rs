//! Finite-difference verification of every hand-written backward pass, at
//! f64. Each check builds a tiny scalar loss (sum of squares of the output),
//! runs one backward pass, then probes parameter coordinates with central
//! differences.

use hoigen::iamg::{ConditionBundle, MaskModelConfig, MaskUNet};
use hoigen::mgig::{HoiModelConfig, HoiUNet};
use hoigen::nn::gradcheck::{check_gradients, max_rel_error};
use hoigen::nn::{
    silu_backward, silu_forward, Conv2d, CrossAttention, GroupNorm, Linear, Params, ResBlock,
};
use hoigen::rng::{stream, Stream};
use hoigen::tensor::Tensor;
use rand::Rng;

fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data.iter_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    t
}

/// d(sum y^2)/dy = 2y
fn loss_of(y: &Tensor<f64>) -> f64 {
    y.data.iter().map(|v| v * v).sum()
}

fn dloss_of(y: &Tensor<f64>) -> Tensor<f64> {
    y.map(|v| 2.0 * v)
}

#[test]
fn conv_gradients() {
    let mut rng = stream(1, Stream::ParamInit, 0);
    let x = randn(&[2, 3, 8, 8], &mut rng);
    for stride in [1, 2] {
        let mut conv = Conv2d::<f64>::new(3, 4, 3, stride, &mut rng);
        conv.zero_grad();
        let y = conv.forward(&x, true);
        let _dx = conv.backward(&dloss_of(&y));
        let mut probe_rng = stream(2, Stream::Custom(9), stride as u64);
        let results = check_gradients(
            &mut conv,
            |c| {
                let y = c.forward(&x, false);
                loss_of(&y)
            },
            12,
            &mut probe_rng,
        );
        let err = max_rel_error(&results);
        assert!(err < 1e-6, "conv stride {stride} rel err {err}");
    }
}

#[test]
fn conv_input_gradient() {
    // dx check via a probe on the input rather than parameters.
    let mut rng = stream(3, Stream::ParamInit, 0);
    let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, &mut rng);
    let x = randn(&[1, 2, 6, 6], &mut rng);
    conv.zero_grad();
    let y = conv.forward(&x, true);
    let dx = conv.backward(&dloss_of(&y));
    for idx in [0usize, 17, 40, 71] {
        let h = 1e-5;
        let mut xp = x.clone();
        xp.data[idx] += h;
        let lp = loss_of(&conv.forward(&xp, false));
        let mut xm = x.clone();
        xm.data[idx] -= h;
        let lm = loss_of(&conv.forward(&xm, false));
        let num = (lp - lm) / (2.0 * h);
        let rel = (dx.data[idx] - num).abs() / num.abs().max(1e-8);
        assert!(rel < 1e-6, "dx[{idx}] {} vs {num}", dx.data[idx]);
    }
}

#[test]
fn groupnorm_gradients() {
    let mut rng = stream(4, Stream::ParamInit, 0);
    let mut gn = GroupNorm::<f64>::new(8, 4);
    // Nonzero beta/gamma jitter so gradients are informative.
    gn.visit("", &mut |_, p| {
        for v in p.data.data.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    });
    let x = randn(&[2, 8, 5, 5], &mut rng);
    gn.zero_grad();
    let y = gn.forward(&x, true);
    let dx = gn.backward(&dloss_of(&y));
    let mut probe_rng = stream(5, Stream::Custom(9), 0);
    let results = check_gradients(
        &mut gn,
        |g| loss_of(&g.forward(&x, false)),
        12,
        &mut probe_rng,
    );
    assert!(max_rel_error(&results) < 1e-6, "{results:?}");
    // input gradient
    for idx in [3usize, 77, 199] {
        let h = 1e-5;
        let mut xp = x.clone();
        xp.data[idx] += h;
        let lp = loss_of(&gn.forward(&xp, false));
        let mut xm = x.clone();
        xm.data[idx] -= h;
        let lm = loss_of(&gn.forward(&xm, false));
        let num = (lp - lm) / (2.0 * h);
        let rel = (dx.data[idx] - num).abs() / num.abs().max(1e-6);
        assert!(rel < 1e-5, "gn dx[{idx}] {} vs {num}", dx.data[idx]);
    }
}

#[test]
fn linear_and_silu_gradients() {
    let mut rng = stream(6, Stream::ParamInit, 0);
    let mut lin = Linear::<f64>::new(5, 7, &mut rng);
    let x = randn(&[3, 5], &mut rng);
    lin.zero_grad();
    let pre = lin.forward(&x, true);
    let act = silu_forward(&pre);
    let dact = dloss_of(&act);
    let dpre = silu_backward(&pre, &dact);
    let _ = lin.backward(&dpre);
    let mut probe_rng = stream(7, Stream::Custom(9), 0);
    let results = check_gradients(
        &mut lin,
        |l| loss_of(&silu_forward(&l.forward(&x, false))),
        10,
        &mut probe_rng,
    );
    assert!(max_rel_error(&results) < 1e-6, "{results:?}");
}

#[test]
fn attention_gradients() {
    let mut rng = stream(8, Stream::ParamInit, 0);
    let mut attn = CrossAttention::<f64>::new(6, 4, 8, &mut rng);
    let x = randn(&[2, 6, 3, 3], &mut rng);
    let tok = randn(&[2, 5, 4], &mut rng);
    attn.zero_grad();
    let y = attn.forward(&x, &tok, true);
    let (dx, dtok) = attn.backward(&dloss_of(&y));
    let mut probe_rng = stream(9, Stream::Custom(9), 0);
    let results = check_gradients(
        &mut attn,
        |a| loss_of(&a.forward(&x, &tok, false)),
        16,
        &mut probe_rng,
    );
    assert!(max_rel_error(&results) < 1e-5, "{results:?}");
    // Token gradient.
    for idx in [0usize, 13, 29] {
        let h = 1e-5;
        let mut tp = tok.clone();
        tp.data[idx] += h;
        let lp = loss_of(&attn.forward(&x, &tp, false));
        let mut tm = tok.clone();
        tm.data[idx] -= h;
        let lm = loss_of(&attn.forward(&x, &tm, false));
        let num = (lp - lm) / (2.0 * h);
        let rel = (dtok.data[idx] - num).abs() / num.abs().max(1e-6);
        assert!(rel < 1e-5, "dtok[{idx}] {} vs {num}", dtok.data[idx]);
    }
    // Input gradient.
    for idx in [0usize, 31, 80] {
        let h = 1e-5;
        let mut xp = x.clone();
        xp.data[idx] += h;
        let lp = loss_of(&attn.forward(&xp, &tok, false));
        let mut xm = x.clone();
        xm.data[idx] -= h;
        let lm = loss_of(&attn.forward(&xm, &tok, false));
        let num = (lp - lm) / (2.0 * h);
        let rel = (dx.data[idx] - num).abs() / num.abs().max(1e-6);
        assert!(rel < 1e-5, "attn dx[{idx}] {} vs {num}", dx.data[idx]);
    }
}

#[test]
fn resblock_gradients() {
    let mut rng = stream(10, Stream::ParamInit, 0);
    let mut block = ResBlock::<f64>::new(4, 6, 16, &mut rng);
    let x = randn(&[2, 4, 6, 6], &mut rng);
    let temb = randn(&[2, 16], &mut rng);
    block.zero_grad();
    let y = block.forward(&x, &temb, true);
    let (_dx, dtemb) = block.backward(&dloss_of(&y));
    let mut probe_rng = stream(11, Stream::Custom(9), 0);
    let results = check_gradients(
        &mut block,
        |b| loss_of(&b.forward(&x, &temb, false)),
        16,
        &mut probe_rng,
    );
    assert!(max_rel_error(&results) < 1e-5, "{results:?}");
    for idx in [0usize, 9, 31] {
        let h = 1e-5;
        let mut tp = temb.clone();
        tp.data[idx] += h;
        let lp = loss_of(&block.forward(&x, &tp, false));
        let mut tm = temb.clone();
        tm.data[idx] -= h;
        let lm = loss_of(&block.forward(&x, &tm, false));
        let num = (lp - lm) / (2.0 * h);
        let rel = (dtemb.data[idx] - num).abs() / num.abs().max(1e-6);
        assert!(rel < 1e-5, "dtemb[{idx}] {} vs {num}", dtemb.data[idx]);
    }
}

#[test]
fn hoi_unet_full_gradient_check() {
    // The image denoiser with every conditioning path active: detail branch,
    // identity tokens through cross-attention, timestep MLP.
    let mut rng = stream(20, Stream::ParamInit, 0);
    let cfg = HoiModelConfig {
        w0: 8,
        w1: 16,
        w2: 24,
        temb_hidden: 32,
        zero_head: false,
    };
    let mut model = HoiUNet::<f64>::new(cfg, &mut rng);
    let z_t = randn(&[1, 3, 64, 64], &mut rng);
    let f_detail = randn(&[1, 3, 64, 64], &mut rng);
    let crops = randn(&[2, 3, 32, 32], &mut rng);
    let ts = vec![60];
    let eps_target = randn(&[1, 3, 64, 64], &mut rng);

    let loss_fn = |m: &mut HoiUNet<f64>| -> f64 {
        let tok = m.encode_identity(&crops, false);
        let pred = m.predict_noise(&z_t, &f_detail, &tok, &ts, false).unwrap();
        pred.data
            .iter()
            .zip(&eps_target.data)
            .map(|(p, e)| (p - e) * (p - e))
            .sum::<f64>()
            / pred.len() as f64
    };

    model.zero_grad();
    let tok = model.encode_identity(&crops, true);
    let pred = model.predict_noise(&z_t, &f_detail, &tok, &ts, true).unwrap();
    let n = pred.len() as f64;
    let mut d = hoigen::tensor::Tensor::zeros(&pred.shape);
    for i in 0..pred.len() {
        d.data[i] = 2.0 * (pred.data[i] - eps_target.data[i]) / n;
    }
    model.backward(&d);

    let mut probe_rng = stream(21, Stream::Custom(9), 0);
    let results = check_gradients(&mut model, loss_fn, 24, &mut probe_rng);
    let err = max_rel_error(&results);
    assert!(
        err < 1e-3,
        "hoi-unet gradient check failed: max rel err {err}\n{results:#?}"
    );
}

#[test]
fn mask_unet_full_gradient_check() {
    // End-to-end probe through the whole conditional U-Net at f64, with a
    // non-zero head so gradients reach every depth, background branch active.
    let mut rng = stream(12, Stream::ParamInit, 0);
    let cfg = MaskModelConfig {
        base_width: 8,
        temb_hidden: 32,
        bg_channels: 4,
        k: 6,
        zero_head: false,
    };
    let mut model = MaskUNet::<f64>::new(cfg, &mut rng);
    let z_t = randn(&[2, 2, 32, 32], &mut rng);
    let mut cbg = Tensor::<f32>::zeros(&[2, 3, 32, 32]);
    let mut r2 = stream(13, Stream::Custom(1), 0);
    for v in cbg.data.iter_mut() {
        *v = r2.gen_range(0.0..1.0);
    }
    let cond = ConditionBundle {
        category_ids: vec![1, 4],
        inter_null: vec![false, false],
        cbg_feat: Some(cbg),
    };
    let ts = vec![17, 140];

    let eps_target = randn(&[2, 2, 32, 32], &mut rng);
    let loss_fn = |m: &mut MaskUNet<f64>| -> f64 {
        let pred = m.predict_noise(&z_t, &cond, &ts, false).unwrap();
        pred.data
            .iter()
            .zip(&eps_target.data)
            .map(|(p, e)| (p - e) * (p - e))
            .sum::<f64>()
            / pred.len() as f64
    };

    model.zero_grad();
    let pred = model.predict_noise(&z_t, &cond, &ts, true).unwrap();
    let n = pred.len() as f64;
    let mut d = Tensor::zeros(&pred.shape);
    for i in 0..pred.len() {
        d.data[i] = 2.0 * (pred.data[i] - eps_target.data[i]) / n;
    }
    model.backward(&d);

    let mut probe_rng = stream(14, Stream::Custom(9), 0);
    let results = check_gradients(&mut model, loss_fn, 24, &mut probe_rng);
    let err = max_rel_error(&results);
    assert!(
        err < 1e-3,
        "full-model gradient check failed: max rel err {err}\n{results:#?}"
    );
}
