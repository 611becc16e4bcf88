//! The conditional mask denoiser: a three-level U-Net over 32x32x2 latents.
//!
//! Conditioning enters two ways: the interaction embedding (a (K+1)-row
//! table; row K is the learned null) is added to the sinusoidal timestep
//! embedding before the shared MLP, and the encoded background condition is
//! refined by a two-stage conv encoder and concatenated channel-wise onto
//! the latent (a learned null plane substitutes when absent).

use rand_chacha::ChaCha12Rng;

use crate::nn::ops::{concat_channels, silu_backward, silu_forward, split_channels, timestep_embedding, Upsample2x};
use crate::nn::{join, AdamW, Conv2d, Embedding, GroupNorm, Linear, Param, Params, ResBlock};
use crate::tensor::{Scalar, Tensor};

use super::{ConditionBundle, IamgError};

pub const LATENT_CHANNELS: usize = 2;
pub const LATENT_RES: usize = 32;
/// Interaction-embedding width (the text-encoder stand-in dimension).
pub const INTER_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MaskModelConfig {
    pub base_width: usize,
    pub temb_hidden: usize,
    pub bg_channels: usize,
    pub k: usize,
    /// Zero-init the output head (production) or not (gradient checks).
    pub zero_head: bool,
}

impl Default for MaskModelConfig {
    fn default() -> Self {
        MaskModelConfig {
            base_width: 32,
            temb_hidden: 128,
            bg_channels: 4,
            k: 6,
            zero_head: true,
        }
    }
}

/// Channels of the learned per-category spatial prior map.
pub const CLASS_MAP_CHANNELS: usize = 2;

#[derive(Debug, Clone)]
pub struct MaskUNet<S> {
    pub cfg: MaskModelConfig,
    // conditioning
    inter_embed: Embedding<S>,
    /// Learned spatial prior per category (row k+1 is the null); gives the
    /// interaction condition a direct layout channel, since the
    /// timestep-embedding route alone carries no spatial information.
    class_map: Param<S>, // (k+1, CLASS_MAP_CHANNELS * 32 * 32)
    temb_lin1: Linear<S>,
    temb_lin2: Linear<S>,
    bg_conv1: Conv2d<S>,
    bg_conv2: Conv2d<S>,
    bg_null: Param<S>, // per-channel learned null plane values
    // encoder
    stem: Conv2d<S>,
    enc0: ResBlock<S>,
    down0: Conv2d<S>,
    enc1: ResBlock<S>,
    down1: Conv2d<S>,
    mid: ResBlock<S>,
    // decoder
    up1: Conv2d<S>,
    dec1: ResBlock<S>,
    up0: Conv2d<S>,
    dec0: ResBlock<S>,
    head_gn: GroupNorm<S>,
    head: Conv2d<S>,
    upsample: Upsample2x,
    // training caches
    cache: Option<ForwardCache<S>>,
    bg_pre: Option<Tensor<S>>,
}

#[derive(Debug, Clone)]
struct ForwardCache<S> {
    temb_pre: Tensor<S>,    // before silu, (b, hidden)
    head_gn_out: Tensor<S>, // before final silu
    bg_present: bool,
    bsz: usize,
    ids: Vec<usize>,
}

impl<S: Scalar> MaskUNet<S> {
    pub fn new(cfg: MaskModelConfig, rng: &mut ChaCha12Rng) -> Self {
        let cfg = cfg;
        let w = cfg.base_width;
        let th = cfg.temb_hidden;
        let cin = LATENT_CHANNELS + cfg.bg_channels + CLASS_MAP_CHANNELS;
        let head = if cfg.zero_head {
            Conv2d::new_zeroed(w, LATENT_CHANNELS, 3, 1)
        } else {
            Conv2d::new(w, LATENT_CHANNELS, 3, 1, rng)
        };
        MaskUNet {
            cfg: cfg.clone(),
            inter_embed: Embedding::new(cfg.k + 1, INTER_EMBED_DIM, rng),
            class_map: Param::zeros(&[
                cfg.k + 1,
                CLASS_MAP_CHANNELS * LATENT_RES * LATENT_RES,
            ]),
            temb_lin1: Linear::new(INTER_EMBED_DIM, th, rng),
            temb_lin2: Linear::new(th, th, rng),
            bg_conv1: Conv2d::new(3, 8, 3, 1, rng),
            bg_conv2: Conv2d::new(8, cfg.bg_channels, 3, 1, rng),
            bg_null: Param::zeros(&[cfg.bg_channels]),
            stem: Conv2d::new(cin, w, 3, 1, rng),
            enc0: ResBlock::new(w, w, th, rng),
            down0: Conv2d::new(w, 2 * w, 3, 2, rng),
            enc1: ResBlock::new(2 * w, 2 * w, th, rng),
            down1: Conv2d::new(2 * w, 4 * w, 3, 2, rng),
            mid: ResBlock::new(4 * w, 4 * w, th, rng),
            up1: Conv2d::new(4 * w, 2 * w, 1, 1, rng),
            dec1: ResBlock::new(2 * w, 2 * w, th, rng),
            up0: Conv2d::new(2 * w, w, 1, 1, rng),
            dec0: ResBlock::new(w, w, th, rng),
            head_gn: GroupNorm::new(w, 8),
            head,
            upsample: Upsample2x,
            cache: None,
            bg_pre: None,
        }
    }

    /// Null-row id in the interaction table.
    pub fn null_id(&self) -> usize {
        self.cfg.k
    }

    /// The frozen-text-encoder stand-in: one embedding row per category id.
    pub fn encode_interaction_id(&self, id: usize) -> Vec<f64> {
        self.inter_embed.row(id).iter().map(|v| v.to_f64()).collect()
    }

    /// Conditional noise prediction. `ts` are 1-based schedule steps.
    pub fn predict_noise(
        &mut self,
        z_t: &Tensor<S>,
        cond: &ConditionBundle,
        ts: &[usize],
        train: bool,
    ) -> Result<Tensor<S>, IamgError> {
        let bsz = z_t.shape[0];
        assert_eq!(z_t.shape, vec![bsz, LATENT_CHANNELS, LATENT_RES, LATENT_RES]);
        assert_eq!(cond.category_ids.len(), bsz);
        assert_eq!(ts.len(), bsz);

        // temb = lin2(silu(lin1(sin(t) + inter_embed)))
        let sin = timestep_embedding::<S>(ts, INTER_EMBED_DIM);
        let ids: Vec<usize> = cond
            .category_ids
            .iter()
            .zip(&cond.inter_null)
            .map(|(&id, &null)| if null { self.null_id() } else { id })
            .collect();
        let emb = self.inter_embed.forward(&ids, train);
        let mut mix = sin.clone();
        mix.add_assign(&emb);
        let pre = self.temb_lin1.forward(&mix, train);
        let act = silu_forward(&pre);
        let temb = self.temb_lin2.forward(&act, train);

        // Background feature plane: encoded condition or the learned null.
        let (bgf, bg_present) = match &cond.cbg_feat {
            Some(c) => {
                assert_eq!(c.shape, vec![bsz, 3, LATENT_RES, LATENT_RES]);
                let cs = Tensor::from_vec(
                    &c.shape,
                    c.data.iter().map(|v| S::from_f64(*v as f64)).collect(),
                );
                let pre = self.bg_conv1.forward(&cs, train);
                let h = silu_forward(&pre);
                if train {
                    self.bg_pre = Some(pre);
                }
                let f = self.bg_conv2.forward(&h, train);
                (f, true)
            }
            None => {
                let mut f = Tensor::zeros(&[bsz, self.cfg.bg_channels, LATENT_RES, LATENT_RES]);
                let hw = LATENT_RES * LATENT_RES;
                for b in 0..bsz {
                    for c in 0..self.cfg.bg_channels {
                        let v = self.bg_null.data.data[c];
                        let base = (b * self.cfg.bg_channels + c) * hw;
                        for x in &mut f.data[base..base + hw] {
                            *x = v;
                        }
                    }
                }
                (f, false)
            }
        };

        // Per-category spatial prior rows gathered for the batch.
        let mut cmap = Tensor::zeros(&[bsz, CLASS_MAP_CHANNELS, LATENT_RES, LATENT_RES]);
        let row_len = CLASS_MAP_CHANNELS * LATENT_RES * LATENT_RES;
        for (b, &id) in ids.iter().enumerate() {
            cmap.data[b * row_len..(b + 1) * row_len]
                .copy_from_slice(&self.class_map.data.data[id * row_len..(id + 1) * row_len]);
        }
        let x = concat_channels(&concat_channels(z_t, &bgf), &cmap);
        let s = self.stem.forward(&x, train);
        let e0 = self.enc0.forward(&s, &temb, train);
        let d0 = self.down0.forward(&e0, train);
        let e1 = self.enc1.forward(&d0, &temb, train);
        let d1 = self.down1.forward(&e1, train);
        let m = self.mid.forward(&d1, &temb, train);
        let u1 = self.upsample.forward(&self.up1.forward(&m, train));
        let mut x1 = u1;
        x1.add_assign(&e1);
        let de1 = self.dec1.forward(&x1, &temb, train);
        let u0 = self.upsample.forward(&self.up0.forward(&de1, train));
        let mut x0 = u0;
        x0.add_assign(&e0);
        let de0 = self.dec0.forward(&x0, &temb, train);
        let hg = self.head_gn.forward(&de0, train);
        let ha = silu_forward(&hg);
        let out = self.head.forward(&ha, train);

        if !out.all_finite() {
            return Err(IamgError::NonFinite {
                stage: self.locate_non_finite(&[
                    ("stem", &s),
                    ("enc0", &e0),
                    ("enc1", &e1),
                    ("mid", &m),
                    ("dec1", &de1),
                    ("dec0", &de0),
                    ("head", &out),
                ]),
            });
        }
        if train {
            self.cache = Some(ForwardCache {
                temb_pre: pre,
                head_gn_out: hg,
                bg_present,
                bsz,
                ids,
            });
        }
        Ok(out)
    }

    fn locate_non_finite(&self, stages: &[(&str, &Tensor<S>)]) -> String {
        for (name, t) in stages {
            if !t.all_finite() {
                return (*name).to_string();
            }
        }
        "head".to_string()
    }

    /// Backward for the training loss; call right after a train-mode forward.
    pub fn backward(&mut self, d_out: &Tensor<S>) {
        let cache = self.cache.take().expect("backward without train forward");
        let dha = self.head.backward(d_out);
        let dhg = silu_backward(&cache.head_gn_out, &dha);
        let dde0 = self.head_gn.backward(&dhg);

        let (dx0, dt_dec0) = self.dec0.backward(&dde0);
        // dx0 feeds both the upsampled path and the enc0 skip.
        let du0 = self.upsample.backward(&dx0);
        let dde1 = self.up0.backward(&du0);
        let (dx1, dt_dec1) = self.dec1.backward(&dde1);
        let du1 = self.upsample.backward(&dx1);
        let dm = self.up1.backward(&du1);
        let (dd1, dt_mid) = self.mid.backward(&dm);
        let de1_grad = self.down1.backward(&dd1);
        // enc1 receives gradient from down1 and from the dec1 skip add.
        let mut de1_total = de1_grad;
        de1_total.add_assign(&dx1);
        let (dd0, dt_enc1) = self.enc1.backward(&de1_total);
        let de0_grad = self.down0.backward(&dd0);
        let mut de0_total = de0_grad;
        de0_total.add_assign(&dx0);
        let (ds, dt_enc0) = self.enc0.backward(&de0_total);
        let dx = self.stem.backward(&ds);
        let (dzbg, dcmap) = split_channels(&dx, LATENT_CHANNELS + self.cfg.bg_channels);
        let (_dz, dbgf) = split_channels(&dzbg, LATENT_CHANNELS);
        let row_len = CLASS_MAP_CHANNELS * LATENT_RES * LATENT_RES;
        for (b, &id) in cache.ids.iter().enumerate() {
            for i in 0..row_len {
                self.class_map.grad.data[id * row_len + i] += dcmap.data[b * row_len + i];
            }
        }

        if cache.bg_present {
            let dh = self.bg_conv2.backward(&dbgf);
            // bg_conv2's cached input is silu(bg_conv1 out); recover silu
            // backward from bg_conv1's own cache via its stored columns is
            // not possible, so bg_conv1 caches pre-activation separately.
            let dpre = self.bg_silu_backward(&dh);
            let _ = self.bg_conv1.backward(&dpre);
        } else {
            let hw = LATENT_RES * LATENT_RES;
            for b in 0..cache.bsz {
                for c in 0..self.cfg.bg_channels {
                    let base = (b * self.cfg.bg_channels + c) * hw;
                    let mut s = S::ZERO;
                    for v in &dbgf.data[base..base + hw] {
                        s += *v;
                    }
                    self.bg_null.grad.data[c] += s;
                }
            }
        }

        // Timestep/conditioning path: sum block contributions.
        let mut dtemb = dt_enc0;
        dtemb.add_assign(&dt_enc1);
        dtemb.add_assign(&dt_mid);
        dtemb.add_assign(&dt_dec1);
        dtemb.add_assign(&dt_dec0);
        let dact = self.temb_lin2.backward(&dtemb);
        let dpre = silu_backward(&cache.temb_pre, &dact);
        let dmix = self.temb_lin1.backward(&dpre);
        self.inter_embed.backward(&dmix);
    }

    fn bg_silu_backward(&mut self, dh: &Tensor<S>) -> Tensor<S> {
        let pre = self
            .bg_pre
            .take()
            .expect("bg encoder backward without forward");
        silu_backward(&pre, dh)
    }

    pub fn parameter_count(&mut self) -> usize {
        self.param_count()
    }
}

impl<S: Scalar> Params<S> for MaskUNet<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.inter_embed.visit(&join(prefix, "inter_embed"), f);
        f(&join(prefix, "class_map"), &mut self.class_map);
        self.temb_lin1.visit(&join(prefix, "temb_lin1"), f);
        self.temb_lin2.visit(&join(prefix, "temb_lin2"), f);
        self.bg_conv1.visit(&join(prefix, "bg_conv1"), f);
        self.bg_conv2.visit(&join(prefix, "bg_conv2"), f);
        f(&join(prefix, "bg_null"), &mut self.bg_null);
        self.stem.visit(&join(prefix, "stem"), f);
        self.enc0.visit(&join(prefix, "enc0"), f);
        self.down0.visit(&join(prefix, "down0"), f);
        self.enc1.visit(&join(prefix, "enc1"), f);
        self.down1.visit(&join(prefix, "down1"), f);
        self.mid.visit(&join(prefix, "mid"), f);
        self.up1.visit(&join(prefix, "up1"), f);
        self.dec1.visit(&join(prefix, "dec1"), f);
        self.up0.visit(&join(prefix, "up0"), f);
        self.dec0.visit(&join(prefix, "dec0"), f);
        self.head_gn.visit(&join(prefix, "head_gn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Adam over the mask model with the crate's defaults.
pub fn default_optimizer(lr: f64) -> AdamW {
    AdamW::new(lr, 1e-4)
}
