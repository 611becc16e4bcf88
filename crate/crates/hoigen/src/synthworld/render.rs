//! Scene rasterization: capsule-stroked stick figure, shape objects, gray
//! backgrounds. No anti-aliasing, so palette segmentation is exact.

use crate::raster::{quantize_rgb, ImageRgb, Mask, Rgb};

use super::{Facing, HumanIdentity, ObjectIdentity, ObjectShape, Pose, Scene, SynthError};

/// Joint positions for a figure, in canvas pixels.
#[derive(Debug, Clone, Copy)]
pub struct FigureGeometry {
    pub root: (f32, f32),
    pub shoulder: (f32, f32),
    pub head_center: (f32, f32),
    pub head_radius: f32,
    pub elbows: [(f32, f32); 2],
    pub wrists: [(f32, f32); 2],
    pub knees: [(f32, f32); 2],
    pub feet: [(f32, f32); 2],
    pub stroke_radius: f32,
}

impl FigureGeometry {
    /// Conservative bounds over every joint, padded by stroke/head radius.
    pub fn extent(&self) -> (f32, f32, f32, f32) {
        let pts = [
            self.root,
            self.shoulder,
            self.elbows[0],
            self.elbows[1],
            self.wrists[0],
            self.wrists[1],
            self.knees[0],
            self.knees[1],
            self.feet[0],
            self.feet[1],
        ];
        let mut x0 = f32::INFINITY;
        let mut y0 = f32::INFINITY;
        let mut x1 = f32::NEG_INFINITY;
        let mut y1 = f32::NEG_INFINITY;
        for (x, y) in pts {
            x0 = x0.min(x - self.stroke_radius);
            y0 = y0.min(y - self.stroke_radius);
            x1 = x1.max(x + self.stroke_radius);
            y1 = y1.max(y + self.stroke_radius);
        }
        let hr = self.head_radius;
        x0 = x0.min(self.head_center.0 - hr);
        y0 = y0.min(self.head_center.1 - hr);
        x1 = x1.max(self.head_center.0 + hr);
        y1 = y1.max(self.head_center.1 + hr);
        (x0, y0, x1, y1)
    }
}

// Body plan in torso_scale units.
const TORSO_LEN: f32 = 13.0;
const NECK_LEN: f32 = 3.0;
const HEAD_R: f32 = 3.2;
const UPPER_ARM: f32 = 7.0;
const FOREARM: f32 = 6.5;
const THIGH: f32 = 8.5;
const SHIN: f32 = 8.0;
const ARM_SPLAY: f32 = 0.10;
const LEG_SPLAY: f32 = 0.12;

fn dir(angle: f32) -> (f32, f32) {
    // angle measured from straight-down; positive swings toward +x
    (angle.sin(), angle.cos())
}

/// Compute joint positions from identity and pose.
pub fn figure_geometry(id: &HumanIdentity, pose: &Pose) -> FigureGeometry {
    let ts = id.torso_scale;
    let (rx, ry) = pose.root;
    let shoulder = (rx, ry - TORSO_LEN * ts);
    let head_center = (rx, shoulder.1 - NECK_LEN * ts - HEAD_R * ts);

    // Limbs computed facing-right, then mirrored around the root axis.
    let limb = |origin: (f32, f32), len: f32, angle: f32| -> (f32, f32) {
        let d = dir(angle);
        (origin.0 + len * ts * d.0, origin.1 + len * ts * d.1)
    };
    let arm = |splay: f32, sh: f32, el: f32| -> ((f32, f32), (f32, f32)) {
        let a1 = splay + sh;
        let elbow = limb(shoulder, UPPER_ARM, a1);
        let wrist = limb(elbow, FOREARM, a1 + el);
        (elbow, wrist)
    };
    let leg = |splay: f32, hip: f32, knee: f32| -> ((f32, f32), (f32, f32)) {
        let a1 = splay + hip;
        let k = limb((rx, ry), THIGH, a1);
        let f = limb(k, SHIN, a1 + knee);
        (k, f)
    };
    let (el_l, wr_l) = arm(-ARM_SPLAY, pose.shoulder_l, pose.elbow_l);
    let (el_r, wr_r) = arm(ARM_SPLAY, pose.shoulder_r, pose.elbow_r);
    let (kn_l, ft_l) = leg(-LEG_SPLAY, pose.hip_l, pose.knee_l);
    let (kn_r, ft_r) = leg(LEG_SPLAY, pose.hip_r, pose.knee_r);

    let mirror = |p: (f32, f32)| -> (f32, f32) {
        match pose.facing {
            Facing::Right => p,
            Facing::Left => (2.0 * rx - p.0, p.1),
        }
    };
    FigureGeometry {
        root: (rx, ry),
        shoulder,
        head_center,
        head_radius: HEAD_R * ts,
        elbows: [mirror(el_l), mirror(el_r)],
        wrists: [mirror(wr_l), mirror(wr_r)],
        knees: [mirror(kn_l), mirror(kn_r)],
        feet: [mirror(ft_l), mirror(ft_r)],
        stroke_radius: id.limb_thickness as f32 * 0.5 + 0.25,
    }
}

fn stamp_capsule(mask: &mut Mask, p0: (f32, f32), p1: (f32, f32), r: f32) {
    let x0 = (p0.0.min(p1.0) - r).floor().max(0.0) as usize;
    let y0 = (p0.1.min(p1.1) - r).floor().max(0.0) as usize;
    let x1 = (p0.0.max(p1.0) + r).ceil().min(mask.w as f32 - 1.0) as usize;
    let y1 = (p0.1.max(p1.1) + r).ceil().min(mask.h as f32 - 1.0) as usize;
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f32, y as f32);
            let t = if len2 > 0.0 {
                (((px - p0.0) * dx + (py - p0.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (p0.0 + t * dx, p0.1 + t * dy);
            let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
            if d2 <= r * r {
                mask.set(x, y, true);
            }
        }
    }
}

fn stamp_disc(mask: &mut Mask, c: (f32, f32), r: f32) {
    stamp_capsule(mask, c, c, r);
}

/// Rasterize the figure into (body mask, head mask).
pub fn render_figure(id: &HumanIdentity, pose: &Pose, w: usize, h: usize) -> (Mask, Mask) {
    let g = figure_geometry(id, pose);
    let mut body = Mask::zeros(w, h);
    let r = g.stroke_radius;
    stamp_capsule(&mut body, g.root, g.shoulder, r); // torso
    let neck_base = (g.head_center.0, g.head_center.1 + g.head_radius);
    stamp_capsule(&mut body, g.shoulder, neck_base, r); // neck
    stamp_capsule(&mut body, g.shoulder, g.elbows[0], r);
    stamp_capsule(&mut body, g.elbows[0], g.wrists[0], r);
    stamp_capsule(&mut body, g.shoulder, g.elbows[1], r);
    stamp_capsule(&mut body, g.elbows[1], g.wrists[1], r);
    stamp_capsule(&mut body, g.root, g.knees[0], r);
    stamp_capsule(&mut body, g.knees[0], g.feet[0], r);
    stamp_capsule(&mut body, g.root, g.knees[1], r);
    stamp_capsule(&mut body, g.knees[1], g.feet[1], r);
    let mut head = Mask::zeros(w, h);
    stamp_disc(&mut head, g.head_center, g.head_radius);
    (body, head)
}

/// Rasterize the object.
pub fn render_object_mask(obj: &ObjectIdentity, pos: (f32, f32), w: usize, h: usize) -> Mask {
    let mut mask = Mask::zeros(w, h);
    let s = obj.size as f32;
    let half = s / 2.0;
    let (cx, cy) = pos;
    let x0 = (cx - half).floor().max(0.0) as usize;
    let y0 = (cy - half).floor().max(0.0) as usize;
    let x1 = (cx + half).ceil().min(w as f32 - 1.0) as usize;
    let y1 = (cy + half).ceil().min(h as f32 - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let inside = match obj.shape {
                ObjectShape::Circle => dx * dx + dy * dy <= half * half,
                ObjectShape::Square => dx.abs() <= half && dy.abs() <= half,
                ObjectShape::Triangle => {
                    // Upward isoceles triangle inscribed in the size box.
                    if dy < -half || dy > half {
                        false
                    } else {
                        let t = (dy + half) / s; // 0 at apex row, 1 at base
                        dx.abs() <= half * t
                    }
                }
                ObjectShape::Bar => dx.abs() <= half && dy.abs() <= (s / 6.0).max(1.0),
            };
            if inside {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Render a scene. Draw order: background, human, object; overlap pixels
/// belong to the object mask only.
pub fn render_scene(
    scene: &Scene,
    resolution: (usize, usize),
) -> Result<(ImageRgb, Mask, Mask), SynthError> {
    let (h, w) = resolution;
    if h < 32 || w < 32 {
        return Err(SynthError::BadResolution(h, w));
    }
    let mut img = ImageRgb::zeros(w, h);
    for y in 0..h {
        let c = scene.background.color_at(y, h);
        for x in 0..w {
            img.put(x, y, c);
        }
    }
    let (body, head) = render_figure(&scene.human, &scene.pose, w, h);
    let omask = render_object_mask(&scene.object, scene.object_pos, w, h);
    let body_c = quantize_rgb(scene.human.body_color);
    let head_c = quantize_rgb(scene.human.head_color);
    let obj_c = quantize_rgb(scene.object.fill_color);
    let mut human = Mask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if omask.get(x, y) {
                img.put(x, y, obj_c);
            } else if head.get(x, y) {
                img.put(x, y, head_c);
                human.set(x, y, true);
            } else if body.get(x, y) {
                img.put(x, y, body_c);
                human.set(x, y, true);
            }
        }
    }
    Ok((img, human, omask))
}

/// Render just the human (for reference crops) on a neutral background.
pub fn render_single_human(
    id: &HumanIdentity,
    pose: &Pose,
    resolution: (usize, usize),
    neutral: Rgb,
) -> Result<(ImageRgb, Mask), SynthError> {
    let (h, w) = resolution;
    if h < 32 || w < 32 {
        return Err(SynthError::BadResolution(h, w));
    }
    let mut img = ImageRgb::filled(w, h, quantize_rgb(neutral));
    let (body, head) = render_figure(id, pose, w, h);
    let body_c = quantize_rgb(id.body_color);
    let head_c = quantize_rgb(id.head_color);
    let mut mask = Mask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if head.get(x, y) {
                img.put(x, y, head_c);
                mask.set(x, y, true);
            } else if body.get(x, y) {
                img.put(x, y, body_c);
                mask.set(x, y, true);
            }
        }
    }
    Ok((img, mask))
}

/// Render just the object on a neutral background.
pub fn render_object_only(
    obj: &ObjectIdentity,
    pos: (f32, f32),
    resolution: (usize, usize),
    neutral: Rgb,
) -> (ImageRgb, Mask) {
    let (h, w) = resolution;
    let mut img = ImageRgb::filled(w, h, quantize_rgb(neutral));
    let mask = render_object_mask(obj, pos, w, h);
    let c = quantize_rgb(obj.fill_color);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                img.put(x, y, c);
            }
        }
    }
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{Background, Facing};

    fn test_identity() -> HumanIdentity {
        HumanIdentity {
            body_color: [1.0, 0.0, 0.0],
            head_color: [0.0, 0.0, 1.0],
            limb_thickness: 2,
            torso_scale: 1.0,
        }
    }

    fn neutral_pose() -> Pose {
        Pose {
            shoulder_l: 0.0,
            elbow_l: 0.0,
            shoulder_r: 0.0,
            elbow_r: 0.0,
            hip_l: 0.0,
            knee_l: 0.0,
            hip_r: 0.0,
            knee_r: 0.0,
            root: (32.0, 36.0),
            facing: Facing::Right,
        }
    }

    #[test]
    fn masks_disjoint_and_values_in_range() {
        let scene = Scene {
            human: test_identity(),
            pose: neutral_pose(),
            object: ObjectIdentity {
                shape: ObjectShape::Circle,
                fill_color: [0.0, 1.0, 0.0],
                size: 10,
            },
            object_pos: (10.0, 10.0),
            background: Background::Solid { gray: 0.5 },
            category_id: 0,
        };
        let (img, hm, om) = render_scene(&scene, (64, 64)).unwrap();
        assert_eq!(hm.intersect_count(&om), 0);
        assert!(hm.count() > 0 && om.count() > 0);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn object_occludes_human() {
        let mut scene = Scene {
            human: test_identity(),
            pose: neutral_pose(),
            object: ObjectIdentity {
                shape: ObjectShape::Square,
                fill_color: [0.0, 1.0, 0.0],
                size: 8,
            },
            object_pos: (32.0, 30.0), // on the torso
            background: Background::Solid { gray: 0.5 },
            category_id: 0,
        };
        let (img, hm, om) = render_scene(&scene, (64, 64)).unwrap();
        // Torso pixel under the object belongs to the object mask only.
        assert!(om.get(32, 30));
        assert!(!hm.get(32, 30));
        assert_eq!(img.get(32, 30), [0.0, 1.0, 0.0]);
        // Moving the object away restores the torso pixel.
        scene.object_pos = (8.0, 8.0);
        let (_, hm2, _) = render_scene(&scene, (64, 64)).unwrap();
        assert!(hm2.get(32, 30));
    }

    #[test]
    fn facing_mirrors_around_root() {
        let id = test_identity();
        let mut pose = neutral_pose();
        pose.shoulder_r = 1.0;
        let g_right = figure_geometry(&id, &pose);
        pose.facing = Facing::Left;
        let g_left = figure_geometry(&id, &pose);
        assert!((g_right.wrists[1].0 - 32.0 + (g_left.wrists[1].0 - 32.0)).abs() < 1e-4);
        assert_eq!(g_right.wrists[1].1, g_left.wrists[1].1);
    }
}
