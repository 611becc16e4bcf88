//! Procedural synthetic human-object-interaction world.
//!
//! Scenes put a 10-segment articulated stick figure (with a head disc) and a
//! flat-colored shape object on a gray background. Interaction semantics are
//! decided by analytic geometric rules over the rendered masks, so every
//! generated sample is machine-checkable.

pub mod render;
pub mod rules;
pub mod sample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{figure_geometry, render_object_only, render_scene, render_single_human, FigureGeometry};
pub use rules::{
    check_interaction, pair_features, InteractionCategory, PairFeatures, RuleConfig, RuleError,
};
pub use sample::{
    repose_human, sample_human_identity, sample_object_identity, sample_scene, Split,
};

use crate::raster::Rgb;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("no valid scene for category '{verb}' after {attempts} attempts (unsatisfiable rule?)")]
    Unsatisfiable { verb: String, attempts: u32 },
    #[error("pose out of bounds: {0}")]
    BadPose(String),
    #[error("resolution {0}x{1} below the 32px minimum")]
    BadResolution(usize, usize),
}

/// Who a human is, independent of how they stand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanIdentity {
    pub body_color: Rgb,
    pub head_color: Rgb,
    pub limb_thickness: u8, // 1..=4 pixels
    pub torso_scale: f32,   // 0.7..=1.3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectShape {
    Circle,
    Square,
    Triangle,
    Bar,
}

impl ObjectShape {
    pub const ALL: [ObjectShape; 4] = [
        ObjectShape::Circle,
        ObjectShape::Square,
        ObjectShape::Triangle,
        ObjectShape::Bar,
    ];

    pub fn word(&self) -> &'static str {
        match self {
            ObjectShape::Circle => "circle",
            ObjectShape::Square => "square",
            ObjectShape::Triangle => "triangle",
            ObjectShape::Bar => "bar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectIdentity {
    pub shape: ObjectShape,
    pub fill_color: Rgb,
    pub size: u8, // 6..=20 pixels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    Left,
    Right,
}

/// Joint angles in radians relative to the rest pose; all within
/// [-pi/2, pi/2]. Positive swings toward the figure's facing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub shoulder_l: f32,
    pub elbow_l: f32,
    pub shoulder_r: f32,
    pub elbow_r: f32,
    pub hip_l: f32,
    pub knee_l: f32,
    pub hip_r: f32,
    pub knee_r: f32,
    pub root: (f32, f32),
    pub facing: Facing,
}

impl Pose {
    pub fn angles(&self) -> [f32; 8] {
        [
            self.shoulder_l,
            self.elbow_l,
            self.shoulder_r,
            self.elbow_r,
            self.hip_l,
            self.knee_l,
            self.hip_r,
            self.knee_r,
        ]
    }

    pub fn with_angles(&self, a: [f32; 8]) -> Pose {
        Pose {
            shoulder_l: a[0],
            elbow_l: a[1],
            shoulder_r: a[2],
            elbow_r: a[3],
            hip_l: a[4],
            knee_l: a[5],
            hip_r: a[6],
            knee_r: a[7],
            ..*self
        }
    }

    pub fn angles_in_bounds(&self) -> bool {
        let lim = std::f32::consts::FRAC_PI_2;
        self.angles().iter().all(|a| a.abs() <= lim + 1e-6)
    }

    /// L1 distance over joint angles; the pose-disentanglement metrics use it.
    pub fn l1_distance(&self, other: &Pose) -> f32 {
        self.angles()
            .iter()
            .zip(other.angles().iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Background {
    Solid { gray: f32 },
    VGradient { top: f32, bottom: f32 },
}

impl Background {
    /// Background color at row y (of `h` rows), on the 1/255 grid.
    pub fn color_at(&self, y: usize, h: usize) -> Rgb {
        let g = match self {
            Background::Solid { gray } => *gray,
            Background::VGradient { top, bottom } => {
                let t = if h <= 1 { 0.0 } else { y as f32 / (h - 1) as f32 };
                top + (bottom - top) * t
            }
        };
        let q = crate::raster::quantize(g);
        [q, q, q]
    }
}

/// One parametric scene; rendering it is a pure function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub human: HumanIdentity,
    pub pose: Pose,
    pub object: ObjectIdentity,
    pub object_pos: (f32, f32),
    pub background: Background,
    pub category_id: usize,
}
