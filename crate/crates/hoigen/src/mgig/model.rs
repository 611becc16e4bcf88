//! The mask-guided image denoiser.
//!
//! Three coupled networks, trained jointly:
//! - a patch encoder turning each 32x32 reference crop into 16 identity
//!   tokens of width 64 (the frozen-image-encoder stand-in);
//! - a U-Net-shaped detail extractor over the condition stack whose
//!   per-resolution features are added into the main encoder;
//! - the main 64x64x3 U-Net, consuming identity tokens through
//!   cross-attention at three sites.
//!
//! Identity tokens carry a learned block embedding (human vs object) but no
//! positional encoding, so within-block token permutations cannot change the
//! output.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::nn::ops::{silu_backward, silu_forward, timestep_embedding, Upsample2x};
use crate::nn::{join, Conv2d, CrossAttention, GroupNorm, Linear, Param, Params, ResBlock};
use crate::tensor::{Scalar, Tensor};

use super::features::{GEN_RES, REF_RES};
use super::MgigError;

pub const IMG_CHANNELS: usize = 3;
pub const N_TOKENS_PER_REF: usize = 16;
pub const TOKEN_DIM: usize = 64;
const SIN_DIM: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoiModelConfig {
    pub w0: usize,
    pub w1: usize,
    pub w2: usize,
    pub temb_hidden: usize,
    pub zero_head: bool,
}

impl Default for HoiModelConfig {
    fn default() -> Self {
        HoiModelConfig {
            w0: 24,
            w1: 48,
            w2: 96,
            temb_hidden: 128,
            zero_head: true,
        }
    }
}

/// Identity features: (2, N_p, C) per sample, human block first.
#[derive(Debug, Clone)]
pub struct IdFeatures {
    pub tokens: Tensor<f32>, // (batch, 2, N_p, C)
}

#[derive(Debug, Clone)]
pub struct PatchEncoder<S> {
    conv1: Conv2d<S>,
    gn1: GroupNorm<S>,
    conv2: Conv2d<S>,
    gn2: GroupNorm<S>,
    conv3: Conv2d<S>,
    gn3: GroupNorm<S>,
    conv4: Conv2d<S>,
    pres: Option<[Tensor<S>; 3]>,
}

impl<S: Scalar> PatchEncoder<S> {
    fn new(rng: &mut ChaCha12Rng) -> Self {
        PatchEncoder {
            conv1: Conv2d::new(3, 16, 3, 2, rng),
            gn1: GroupNorm::new(16, 4),
            conv2: Conv2d::new(16, 32, 3, 2, rng),
            gn2: GroupNorm::new(32, 8),
            conv3: Conv2d::new(32, TOKEN_DIM, 3, 2, rng),
            gn3: GroupNorm::new(TOKEN_DIM, 8),
            conv4: Conv2d::new(TOKEN_DIM, TOKEN_DIM, 3, 1, rng),
            pres: None,
        }
    }

    /// crops: (n, 3, 32, 32) -> features (n, C, 4, 4)
    fn forward(&mut self, crops: &Tensor<S>, train: bool) -> Tensor<S> {
        assert_eq!(&crops.shape[1..], &[3, REF_RES, REF_RES]);
        let h1 = self.conv1.forward(crops, train);
        let g1 = self.gn1.forward(&h1, train);
        let s1 = silu_forward(&g1);
        let h2 = self.conv2.forward(&s1, train);
        let g2 = self.gn2.forward(&h2, train);
        let s2 = silu_forward(&g2);
        let h3 = self.conv3.forward(&s2, train);
        let g3 = self.gn3.forward(&h3, train);
        let s3 = silu_forward(&g3);
        let out = self.conv4.forward(&s3, train);
        if train {
            self.pres = Some([g1, g2, g3]);
        }
        out
    }

    fn backward(&mut self, dy: &Tensor<S>) {
        let [g1, g2, g3] = self.pres.take().expect("patch encoder backward");
        let ds3 = self.conv4.backward(dy);
        let dg3 = silu_backward(&g3, &ds3);
        let dh3 = self.gn3.backward(&dg3);
        let ds2 = self.conv3.backward(&dh3);
        let dg2 = silu_backward(&g2, &ds2);
        let dh2 = self.gn2.backward(&dg2);
        let ds1 = self.conv2.backward(&dh2);
        let dg1 = silu_backward(&g1, &ds1);
        let dh1 = self.gn1.backward(&dg1);
        let _ = self.conv1.backward(&dh1);
    }
}

impl<S: Scalar> Params<S> for PatchEncoder<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.gn1.visit(&join(prefix, "gn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.gn2.visit(&join(prefix, "gn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.gn3.visit(&join(prefix, "gn3"), f);
        self.conv4.visit(&join(prefix, "conv4"), f);
    }
}

/// Encoder-only branch over the condition stack, producing additive feature
/// taps at the main encoder's three resolutions.
#[derive(Debug, Clone)]
pub struct DetailEncoder<S> {
    stem: Conv2d<S>,
    gn0: GroupNorm<S>,
    conv0: Conv2d<S>,
    down0: Conv2d<S>,
    gn1: GroupNorm<S>,
    conv1: Conv2d<S>,
    down1: Conv2d<S>,
    gn2: GroupNorm<S>,
    conv2: Conv2d<S>,
    pres: Option<[Tensor<S>; 3]>,
}

impl<S: Scalar> DetailEncoder<S> {
    fn new(cfg: &HoiModelConfig, rng: &mut ChaCha12Rng) -> Self {
        DetailEncoder {
            stem: Conv2d::new(3, cfg.w0, 3, 1, rng),
            gn0: GroupNorm::new(cfg.w0, 8),
            conv0: Conv2d::new(cfg.w0, cfg.w0, 3, 1, rng),
            down0: Conv2d::new(cfg.w0, cfg.w1, 3, 2, rng),
            gn1: GroupNorm::new(cfg.w1, 8),
            conv1: Conv2d::new(cfg.w1, cfg.w1, 3, 1, rng),
            down1: Conv2d::new(cfg.w1, cfg.w2, 3, 2, rng),
            gn2: GroupNorm::new(cfg.w2, 8),
            conv2: Conv2d::new(cfg.w2, cfg.w2, 3, 1, rng),
            pres: None,
        }
    }

    /// f_detail: (b, 3, 64, 64) -> taps at 64, 32, 16 px.
    fn forward(&mut self, x: &Tensor<S>, train: bool) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let s = self.stem.forward(x, train);
        let g0 = self.gn0.forward(&s, train);
        let a0 = silu_forward(&g0);
        let mut tap0 = self.conv0.forward(&a0, train);
        tap0.add_assign(&s); // residual keeps the tap near-linear early on
        let d0 = self.down0.forward(&tap0, train);
        let g1 = self.gn1.forward(&d0, train);
        let a1 = silu_forward(&g1);
        let mut tap1 = self.conv1.forward(&a1, train);
        tap1.add_assign(&d0);
        let d1 = self.down1.forward(&tap1, train);
        let g2 = self.gn2.forward(&d1, train);
        let a2 = silu_forward(&g2);
        let mut tap2 = self.conv2.forward(&a2, train);
        tap2.add_assign(&d1);
        if train {
            self.pres = Some([g0, g1, g2]);
        }
        (tap0, tap1, tap2)
    }

    fn backward(&mut self, dtap0: &Tensor<S>, dtap1: &Tensor<S>, dtap2: &Tensor<S>) {
        let [g0, g1, g2] = self.pres.take().expect("detail encoder backward");
        // tap2 = conv2(silu(gn2(d1))) + d1
        let da2 = self.conv2.backward(dtap2);
        let dg2 = silu_backward(&g2, &da2);
        let mut dd1 = self.gn2.backward(&dg2);
        dd1.add_assign(dtap2);
        let mut dtap1_total = self.down1.backward(&dd1);
        dtap1_total.add_assign(dtap1);
        let da1 = self.conv1.backward(&dtap1_total);
        let dg1 = silu_backward(&g1, &da1);
        let mut dd0 = self.gn1.backward(&dg1);
        dd0.add_assign(&dtap1_total);
        let mut dtap0_total = self.down0.backward(&dd0);
        dtap0_total.add_assign(dtap0);
        let da0 = self.conv0.backward(&dtap0_total);
        let dg0 = silu_backward(&g0, &da0);
        let mut ds = self.gn0.backward(&dg0);
        ds.add_assign(&dtap0_total);
        let _ = self.stem.backward(&ds);
    }
}

impl<S: Scalar> Params<S> for DetailEncoder<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.gn0.visit(&join(prefix, "gn0"), f);
        self.conv0.visit(&join(prefix, "conv0"), f);
        self.down0.visit(&join(prefix, "down0"), f);
        self.gn1.visit(&join(prefix, "gn1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.down1.visit(&join(prefix, "down1"), f);
        self.gn2.visit(&join(prefix, "gn2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct HoiUNet<S> {
    pub cfg: HoiModelConfig,
    pub patch_enc: PatchEncoder<S>,
    pub detail_enc: DetailEncoder<S>,
    block_embed: Param<S>, // (2, TOKEN_DIM)
    temb_lin1: Linear<S>,
    temb_lin2: Linear<S>,
    stem: Conv2d<S>,
    enc0: ResBlock<S>,
    down0: Conv2d<S>,
    enc1: ResBlock<S>,
    attn1: CrossAttention<S>,
    down1: Conv2d<S>,
    mid: ResBlock<S>,
    attn_m: CrossAttention<S>,
    up1: Conv2d<S>,
    dec1: ResBlock<S>,
    attn_d: CrossAttention<S>,
    up0: Conv2d<S>,
    dec0: ResBlock<S>,
    head_gn: GroupNorm<S>,
    head: Conv2d<S>,
    upsample: Upsample2x,
    cache: Option<HoiCache<S>>,
}

#[derive(Debug, Clone)]
struct HoiCache<S> {
    temb_pre: Tensor<S>,
    head_gn_out: Tensor<S>,
    bsz: usize,
}

impl<S: Scalar> HoiUNet<S> {
    pub fn new(cfg: HoiModelConfig, rng: &mut ChaCha12Rng) -> Self {
        let th = cfg.temb_hidden;
        let head = if cfg.zero_head {
            Conv2d::new_zeroed(cfg.w0, IMG_CHANNELS, 3, 1)
        } else {
            Conv2d::new(cfg.w0, IMG_CHANNELS, 3, 1, rng)
        };
        HoiUNet {
            patch_enc: PatchEncoder::new(rng),
            detail_enc: DetailEncoder::new(&cfg, rng),
            block_embed: Param::zeros(&[2, TOKEN_DIM]),
            temb_lin1: Linear::new(SIN_DIM, th, rng),
            temb_lin2: Linear::new(th, th, rng),
            stem: Conv2d::new(IMG_CHANNELS, cfg.w0, 3, 1, rng),
            enc0: ResBlock::new(cfg.w0, cfg.w0, th, rng),
            down0: Conv2d::new(cfg.w0, cfg.w1, 3, 2, rng),
            enc1: ResBlock::new(cfg.w1, cfg.w1, th, rng),
            attn1: CrossAttention::new(cfg.w1, TOKEN_DIM, TOKEN_DIM, rng),
            down1: Conv2d::new(cfg.w1, cfg.w2, 3, 2, rng),
            mid: ResBlock::new(cfg.w2, cfg.w2, th, rng),
            attn_m: CrossAttention::new(cfg.w2, TOKEN_DIM, TOKEN_DIM, rng),
            up1: Conv2d::new(cfg.w2, cfg.w1, 1, 1, rng),
            dec1: ResBlock::new(cfg.w1, cfg.w1, th, rng),
            attn_d: CrossAttention::new(cfg.w1, TOKEN_DIM, TOKEN_DIM, rng),
            up0: Conv2d::new(cfg.w1, cfg.w0, 1, 1, rng),
            dec0: ResBlock::new(cfg.w0, cfg.w0, th, rng),
            head_gn: GroupNorm::new(cfg.w0, 8),
            head,
            upsample: Upsample2x,
            cache: None,
            cfg,
        }
    }

    /// Identity patch tokens for a batch of reference pairs.
    /// crops: (2*batch, 3, 32, 32), human crop first within each pair.
    /// Returns (batch, 2*N_p, C) with block embeddings added.
    pub fn encode_identity(&mut self, crops: &Tensor<S>, train: bool) -> Tensor<S> {
        let n = crops.shape[0];
        assert!(n % 2 == 0);
        let bsz = n / 2;
        let feats = self.patch_enc.forward(crops, train); // (2b, C, 4, 4)
        let np = N_TOKENS_PER_REF;
        let c = TOKEN_DIM;
        let mut tok = Tensor::zeros(&[bsz, 2 * np, c]);
        for b in 0..bsz {
            for blk in 0..2 {
                let src = (2 * b + blk) * c * np;
                for p in 0..np {
                    for ch in 0..c {
                        // feature layout (C, 16); token layout (16, C)
                        tok.data[((b * 2 + blk) * np + p) * c + ch] =
                            feats.data[src + ch * np + p]
                                + self.block_embed.data.data[blk * c + ch];
                    }
                }
            }
        }
        tok
    }

    fn encode_identity_backward(&mut self, dtok: &Tensor<S>) {
        let bsz = dtok.shape[0];
        let np = N_TOKENS_PER_REF;
        let c = TOKEN_DIM;
        let mut dfeats = Tensor::zeros(&[2 * bsz, c, 4, 4]);
        for b in 0..bsz {
            for blk in 0..2 {
                let dst = (2 * b + blk) * c * np;
                for p in 0..np {
                    for ch in 0..c {
                        let g = dtok.data[((b * 2 + blk) * np + p) * c + ch];
                        dfeats.data[dst + ch * np + p] = g;
                        self.block_embed.grad.data[blk * c + ch] += g;
                    }
                }
            }
        }
        self.patch_enc.backward(&dfeats);
    }

    /// Noise prediction: z_t (b,3,64,64), f_detail (b,3,64,64),
    /// tokens (b, 32, C) from `encode_identity`, per-item steps.
    pub fn predict_noise(
        &mut self,
        z_t: &Tensor<S>,
        f_detail: &Tensor<S>,
        tokens: &Tensor<S>,
        ts: &[usize],
        train: bool,
    ) -> Result<Tensor<S>, MgigError> {
        let bsz = z_t.shape[0];
        assert_eq!(z_t.shape, vec![bsz, IMG_CHANNELS, GEN_RES, GEN_RES]);
        assert_eq!(f_detail.shape, vec![bsz, 3, GEN_RES, GEN_RES]);
        assert_eq!(tokens.shape, vec![bsz, 2 * N_TOKENS_PER_REF, TOKEN_DIM]);
        assert_eq!(ts.len(), bsz);

        let sin = timestep_embedding::<S>(ts, SIN_DIM);
        let pre = self.temb_lin1.forward(&sin, train);
        let act = silu_forward(&pre);
        let temb = self.temb_lin2.forward(&act, train);

        let (tap0, tap1, tap2) = self.detail_enc.forward(f_detail, train);
        let mut s = self.stem.forward(z_t, train);
        s.add_assign(&tap0);
        let e0 = self.enc0.forward(&s, &temb, train);
        let mut d0 = self.down0.forward(&e0, train);
        d0.add_assign(&tap1);
        let e1 = self.enc1.forward(&d0, &temb, train);
        let a1 = self.attn1.forward(&e1, tokens, train);
        let mut d1 = self.down1.forward(&a1, train);
        d1.add_assign(&tap2);
        let m = self.mid.forward(&d1, &temb, train);
        let am = self.attn_m.forward(&m, tokens, train);
        let u1 = self.upsample.forward(&self.up1.forward(&am, train));
        let mut x1 = u1;
        x1.add_assign(&a1);
        let de1 = self.dec1.forward(&x1, &temb, train);
        let ad = self.attn_d.forward(&de1, tokens, train);
        let u0 = self.upsample.forward(&self.up0.forward(&ad, train));
        let mut x0 = u0;
        x0.add_assign(&e0);
        let de0 = self.dec0.forward(&x0, &temb, train);
        let hg = self.head_gn.forward(&de0, train);
        let ha = silu_forward(&hg);
        let out = self.head.forward(&ha, train);

        if !out.all_finite() {
            let stage = [
                ("stem", &s),
                ("enc0", &e0),
                ("enc1", &e1),
                ("attn1", &a1),
                ("mid", &m),
                ("dec1", &de1),
                ("dec0", &de0),
                ("head", &out),
            ]
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| (*n).to_string())
            .unwrap_or_else(|| "head".to_string());
            return Err(MgigError::NonFinite { stage });
        }
        if train {
            self.cache = Some(HoiCache {
                temb_pre: pre,
                head_gn_out: hg,
                bsz,
            });
        }
        Ok(out)
    }

    /// Backward through the main U-Net, detail branch and token path.
    /// Returns nothing: all gradients land in parameters (inputs are leaves).
    pub fn backward(&mut self, d_out: &Tensor<S>) {
        let cache = self.cache.take().expect("backward without train forward");
        let _ = cache.bsz;
        let dha = self.head.backward(d_out);
        let dhg = silu_backward(&cache.head_gn_out, &dha);
        let dde0 = self.head_gn.backward(&dhg);
        let (dx0, dt_dec0) = self.dec0.backward(&dde0);
        let du0 = self.upsample.backward(&dx0);
        let dad = self.up0.backward(&du0);
        let (dde1, dtok_d) = self.attn_d.backward(&dad);
        let (dx1, dt_dec1) = self.dec1.backward(&dde1);
        let du1 = self.upsample.backward(&dx1);
        let dam = self.up1.backward(&du1);
        let (dm, dtok_m) = self.attn_m.backward(&dam);
        let (dd1, dt_mid) = self.mid.backward(&dm);
        // d1 = down1(a1) + tap2
        let da1_from_down = self.down1.backward(&dd1);
        let mut da1 = da1_from_down;
        da1.add_assign(&dx1); // skip into the decoder
        let (de1_grad, dtok_1) = self.attn1.backward(&da1);
        let (dd0, dt_enc1) = self.enc1.backward(&de1_grad);
        // d0 = down0(e0) + tap1
        let de0_grad = self.down0.backward(&dd0);
        let mut de0_total = de0_grad;
        de0_total.add_assign(&dx0); // skip into the decoder
        let (ds, dt_enc0) = self.enc0.backward(&de0_total);
        // s = stem(z_t) + tap0
        let _dz = self.stem.backward(&ds);

        self.detail_enc.backward(&ds, &dd0, &dd1);

        let mut dtok = dtok_1;
        dtok.add_assign(&dtok_m);
        dtok.add_assign(&dtok_d);
        self.encode_identity_backward(&dtok);

        let mut dtemb = dt_enc0;
        dtemb.add_assign(&dt_enc1);
        dtemb.add_assign(&dt_mid);
        dtemb.add_assign(&dt_dec1);
        dtemb.add_assign(&dt_dec0);
        let dact = self.temb_lin2.backward(&dtemb);
        let dpre = silu_backward(&cache.temb_pre, &dact);
        let _ = self.temb_lin1.backward(&dpre);
    }
}

impl<S: Scalar> Params<S> for HoiUNet<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.patch_enc.visit(&join(prefix, "patch_enc"), f);
        self.detail_enc.visit(&join(prefix, "detail_enc"), f);
        f(&join(prefix, "block_embed"), &mut self.block_embed);
        self.temb_lin1.visit(&join(prefix, "temb_lin1"), f);
        self.temb_lin2.visit(&join(prefix, "temb_lin2"), f);
        self.stem.visit(&join(prefix, "stem"), f);
        self.enc0.visit(&join(prefix, "enc0"), f);
        self.down0.visit(&join(prefix, "down0"), f);
        self.enc1.visit(&join(prefix, "enc1"), f);
        self.attn1.visit(&join(prefix, "attn1"), f);
        self.down1.visit(&join(prefix, "down1"), f);
        self.mid.visit(&join(prefix, "mid"), f);
        self.attn_m.visit(&join(prefix, "attn_m"), f);
        self.up1.visit(&join(prefix, "up1"), f);
        self.dec1.visit(&join(prefix, "dec1"), f);
        self.attn_d.visit(&join(prefix, "attn_d"), f);
        self.up0.visit(&join(prefix, "up0"), f);
        self.dec0.visit(&join(prefix, "dec0"), f);
        self.head_gn.visit(&join(prefix, "head_gn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
