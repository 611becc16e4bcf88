//! Identity-detail features: Sobel high-frequency maps of the reference
//! crops and the composed detail/condition stack for the image denoiser.

use crate::raster::{luma, BoxPx, ImageRgb, Mask, Plane};
use crate::tensor::Tensor;

use super::MgigError;

/// Side length reference crops are resized to before feature extraction.
pub const REF_RES: usize = 32;
/// Generation resolution.
pub const GEN_RES: usize = 64;

/// Sobel gradient magnitude of the two crops concatenated side by side
/// (each resized to 32x32, luma-converted): a 32x64 map, edge-replicated
/// borders, standard 3x3 kernels.
pub fn sobel_high_freq(human_ref: &ImageRgb, object_ref: &ImageRgb) -> Plane {
    let a = human_ref.resize_bilinear(REF_RES, REF_RES);
    let b = object_ref.resize_bilinear(REF_RES, REF_RES);
    let mut lum = Plane::zeros(2 * REF_RES, REF_RES);
    for y in 0..REF_RES {
        for x in 0..REF_RES {
            lum.put(x, y, luma(a.get(x, y)));
            lum.put(REF_RES + x, y, luma(b.get(x, y)));
        }
    }
    sobel_magnitude(&lum)
}

/// Gradient magnitude with edge replication; exposed for the unit oracles.
pub fn sobel_magnitude(lum: &Plane) -> Plane {
    let (w, h) = (lum.w, lum.h);
    let clamp_get = |x: isize, y: isize| -> f32 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        lum.get(xc, yc)
    };
    let mut out = Plane::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = -clamp_get(x - 1, y - 1) + clamp_get(x + 1, y - 1)
                - 2.0 * clamp_get(x - 1, y)
                + 2.0 * clamp_get(x + 1, y)
                - clamp_get(x - 1, y + 1)
                + clamp_get(x + 1, y + 1);
            let gy = -clamp_get(x - 1, y - 1) - 2.0 * clamp_get(x, y - 1) - clamp_get(x + 1, y - 1)
                + clamp_get(x - 1, y + 1)
                + 2.0 * clamp_get(x, y + 1)
                + clamp_get(x + 1, y + 1);
            out.put(x as usize, y as usize, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// The condition stack for the image denoiser: nearest-upsampled mask
/// channels plus one detail plane, (3, 64, 64).
///
/// With a (background, box) pair the detail plane is the background's luma
/// with the high-frequency map resampled into the box and added, clamped to
/// [0, 4]; without it, the map is resampled over the full frame onto zeros.
pub fn compose_detail(
    mask_human: &Mask,
    mask_object: &Mask,
    f_high: &Plane,
    bg_box: Option<(&ImageRgb, BoxPx)>,
) -> Result<Tensor<f32>, MgigError> {
    let mut detail = Plane::zeros(GEN_RES, GEN_RES);
    match bg_box {
        Some((bg, b)) => {
            if bg.w != GEN_RES || bg.h != GEN_RES {
                return Err(MgigError::BadBackground(GEN_RES));
            }
            if !b.valid_for(bg.w, bg.h) {
                return Err(MgigError::BadBox {
                    b,
                    w: bg.w,
                    h: bg.h,
                });
            }
            for y in 0..GEN_RES {
                for x in 0..GEN_RES {
                    detail.put(x, y, luma(bg.get(x, y)));
                }
            }
            let patch = f_high.resize_bilinear(b.width() as usize, b.height() as usize);
            for y in 0..patch.h {
                for x in 0..patch.w {
                    let (tx, ty) = (b.x0 as usize + x, b.y0 as usize + y);
                    let v = (detail.get(tx, ty) + patch.get(x, y)).clamp(0.0, 4.0);
                    detail.put(tx, ty, v);
                }
            }
        }
        None => {
            detail = f_high.resize_bilinear(GEN_RES, GEN_RES);
        }
    }
    let mh = mask_human.upsample_nearest(GEN_RES, GEN_RES);
    let mo = mask_object.upsample_nearest(GEN_RES, GEN_RES);
    let mut t = Tensor::zeros(&[3, GEN_RES, GEN_RES]);
    let n = GEN_RES * GEN_RES;
    for y in 0..GEN_RES {
        for x in 0..GEN_RES {
            t.data[y * GEN_RES + x] = f32::from(mh.get(x, y));
            t.data[n + y * GEN_RES + x] = f32::from(mo.get(x, y));
            t.data[2 * n + y * GEN_RES + x] = detail.get(x, y);
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::quantize;

    #[test]
    fn sobel_zero_on_constant() {
        let img = ImageRgb::filled(32, 32, [0.3, 0.3, 0.3]);
        let f = sobel_high_freq(&img, &img);
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobel_ramp_interior_is_eight() {
        // Luma ramp I(x, y) = x in unit steps: interior magnitude exactly 8.
        let mut lum = Plane::zeros(16, 12);
        for y in 0..12 {
            for x in 0..16 {
                lum.put(x, y, x as f32);
            }
        }
        let m = sobel_magnitude(&lum);
        for y in 1..11 {
            for x in 1..15 {
                assert!((m.get(x, y) - 8.0).abs() < 1e-5, "at ({x},{y}): {}", m.get(x, y));
            }
        }
        // Rotated 90 degrees: the magnitude field matches (isotropy).
        let mut lum_t = Plane::zeros(12, 16);
        for y in 0..16 {
            for x in 0..12 {
                lum_t.put(x, y, y as f32);
            }
        }
        let mt = sobel_magnitude(&lum_t);
        for y in 1..15 {
            for x in 1..11 {
                assert!((mt.get(x, y) - 8.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn compose_detail_region_arithmetic() {
        let mh = Mask::zeros(32, 32);
        let mut mo = Mask::zeros(32, 32);
        mo.set(0, 0, true);
        // Constant f_high = 1 everywhere.
        let mut fh = Plane::zeros(64, 32);
        fh.data.iter_mut().for_each(|v| *v = 1.0);
        // Background with known luma.
        let g = quantize(0.5);
        let bg = ImageRgb::filled(64, 64, [g, g, g]);
        let b = BoxPx {
            x0: 8,
            y0: 8,
            x1: 23,
            y1: 23,
        };
        let t = compose_detail(&mh, &mo, &fh, Some((&bg, b))).unwrap();
        let n = 64 * 64;
        let lum_bg = luma([g, g, g]);
        for y in 0..64usize {
            for x in 0..64usize {
                let v = t.data[2 * n + y * 64 + x];
                if (8..=23).contains(&x) && (8..=23).contains(&y) {
                    assert!((v - (lum_bg + 1.0)).abs() < 1e-6, "inside box at ({x},{y}): {v}");
                } else {
                    assert!((v - lum_bg).abs() < 1e-6, "outside box at ({x},{y}): {v}");
                }
            }
        }
        // Zero f_high with background: detail plane equals the luma exactly.
        let fz = Plane::zeros(64, 32);
        let t2 = compose_detail(&mh, &mo, &fz, Some((&bg, b))).unwrap();
        for i in 0..n {
            assert!((t2.data[2 * n + i] - lum_bg).abs() < 1e-7);
        }
        // No background: plane is the resampled map over zeros; a zero map
        // stays zero.
        let t3 = compose_detail(&mh, &mo, &fz, None).unwrap();
        assert!(t3.data[2 * n..].iter().all(|v| *v == 0.0));
        // Mask channels upsampled nearest: object pixel (0,0) covers 2x2.
        assert_eq!(t3.data[n], 1.0);
        assert_eq!(t3.data[n + 1], 1.0);
        assert_eq!(t3.data[n + 64], 1.0);
        assert_eq!(t3.data[n + 2], 0.0);
    }
}
