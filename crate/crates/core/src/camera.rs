//! Ideal pinhole camera and the target models it observes.
//!
//! Camera frame: +Z along the optical axis, +X to the right (+u), +Y down (+v).

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, ServoError};
use crate::geometry::Pose;

/// Points closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 350.0,
            fy: 350.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ServoError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie inside the image");
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie inside the image");
        }
        Ok(())
    }

    /// Pixel to normalized image coordinates `((u - cx) / fx, (v - cy) / fy)`.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }
}

/// Ordered 3D feature points in the object frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    pub name: String,
    pub points: Vec<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TargetModelRepr {
    name: String,
    points: Vec<[f64; 3]>,
}

impl Serialize for TargetModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TargetModelRepr {
            name: self.name.clone(),
            points: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TargetModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TargetModelRepr::deserialize(deserializer)?;
        TargetModel::new(repr.name, repr.points.into_iter().map(Vector3::from).collect())
            .map_err(serde::de::Error::custom)
    }
}

impl TargetModel {
    pub fn new(name: impl Into<String>, points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() < 3 {
            return Err(ServoError::InvalidModel(format!(
                "6-DOF control needs at least 3 feature points, got {}",
                points.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const BUILTIN_MODELS: [&str; 3] = ["apriltag", "charging_port", "toy_horse"];

/// Feature-point tables of the bundled objects (meters, object frame).
pub fn builtin_model(name: &str) -> Result<TargetModel> {
    let rows: &[[f64; 3]] = match name {
        "apriltag" => &[
            [-0.03, -0.03, 0.0],
            [0.03, -0.03, 0.0],
            [0.03, 0.03, 0.0],
            [-0.03, 0.03, 0.0],
        ],
        "charging_port" => &[
            [0.0, 0.0, 0.0],
            [0.016, 0.0, 0.0],
            [0.0325, 0.0, 0.0],
            [0.075, -0.015, 0.0],
            [0.024, -0.015, 0.0],
        ],
        "toy_horse" => &[
            [0.032, 0.003, 0.025],
            [0.09, 0.003, 0.025],
            [0.114, 0.085, 0.035],
            [0.041, 0.068, 0.023],
        ],
        other => return Err(ServoError::UnknownModel(other.to_string())),
    };
    TargetModel::new(name, rows.iter().copied().map(Vector3::from).collect())
}

/// Ordered pixel coordinates, one per model point.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub pixels: Vec<Vector2<f64>>,
}

impl Serialize for KeypointSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 2]> = self.pixels.iter().map(|p| [p.x, p.y]).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KeypointSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<[f64; 2]>::deserialize(deserializer)?;
        Ok(KeypointSet {
            pixels: rows.into_iter().map(Vector2::from).collect(),
        })
    }
}

impl KeypointSet {
    pub fn new(pixels: Vec<Vector2<f64>>) -> Self {
        Self { pixels }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// `[u0, v0, u1, v1, ...]`
    pub fn flatten(&self) -> Vec<f64> {
        self.pixels.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Network input scaling: `((u - cx) / cx, (v - cy) / cy)` per point, interleaved.
    pub fn to_network_input(&self, k: &Intrinsics) -> Vec<f64> {
        self.pixels
            .iter()
            .flat_map(|p| [(p.x - k.cx) / k.cx, (p.y - k.cy) / k.cy])
            .collect()
    }

    /// `Σ |u_k − u_k*| + |v_k − v_k*|` in pixels.
    pub fn l1_error(&self, other: &KeypointSet) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
            .sum()
    }
}

/// Projects every model point into the camera at `camera_in_object` (`^oT_c`)
/// and returns the pixels with the per-point depths.
pub fn project_with_depth(
    model: &TargetModel,
    camera_in_object: &Pose,
    k: &Intrinsics,
) -> Result<(KeypointSet, Vec<f64>)> {
    let object_in_camera = camera_in_object.inverse();
    let mut pixels = Vec::with_capacity(model.len());
    let mut depths = Vec::with_capacity(model.len());
    for (index, p) in model.points.iter().enumerate() {
        let pc = object_in_camera.transform_point(p);
        if pc.z <= MIN_DEPTH {
            return Err(ServoError::NonPositiveDepth { index, depth: pc.z });
        }
        pixels.push(Vector2::new(
            k.fx * pc.x / pc.z + k.cx,
            k.fy * pc.y / pc.z + k.cy,
        ));
        depths.push(pc.z);
    }
    Ok((KeypointSet { pixels }, depths))
}

pub fn project(model: &TargetModel, camera_in_object: &Pose, k: &Intrinsics) -> Result<KeypointSet> {
    project_with_depth(model, camera_in_object, k).map(|(kp, _)| kp)
}

/// Half-open bounds: `0 ≤ u < width` and `0 ≤ v < height`.
pub fn in_fov(kp: &KeypointSet, k: &Intrinsics) -> bool {
    let (w, h) = (k.width as f64, k.height as f64);
    kp.pixels
        .iter()
        .all(|p| p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_x;
    use std::f64::consts::PI;

    fn looking_down(height: f64) -> Pose {
        Pose::new(rot_x(PI), Vector3::new(0.0, 0.0, height))
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let k = Intrinsics::default();
        let model = TargetModel::new(
            "pt",
            vec![Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 0.01, 0.0)],
        )
        .unwrap();
        let kp = project(&model, &looking_down(0.15), &k).unwrap();
        assert!((kp.pixels[0] - Vector2::new(320.0, 240.0)).norm() < 1e-12);
    }

    #[test]
    fn apriltag_corner_with_aligned_axes() {
        // Camera axes aligned with the object axes, tag plane 0.15 m ahead.
        let k = Intrinsics { fx: 600.0, fy: 600.0, ..Intrinsics::default() };
        let model = builtin_model("apriltag").unwrap();
        let cam = Pose::from_translation(Vector3::new(0.0, 0.0, -0.15));
        let kp = project(&model, &cam, &k).unwrap();
        assert!((kp.pixels[0] - Vector2::new(200.0, 120.0)).norm() < 1e-9);
        assert!((kp.pixels[2] - Vector2::new(440.0, 360.0)).norm() < 1e-9);
    }

    #[test]
    fn apriltag_corner_looking_down() {
        // Looking down from +z flips the v axis relative to object y.
        let k = Intrinsics { fx: 600.0, fy: 600.0, ..Intrinsics::default() };
        let model = builtin_model("apriltag").unwrap();
        let kp = project(&model, &looking_down(0.15), &k).unwrap();
        assert!((kp.pixels[0] - Vector2::new(200.0, 360.0)).norm() < 1e-9);
        let kp = project(&model, &looking_down(0.15), &Intrinsics::default()).unwrap();
        assert!((kp.pixels[0] - Vector2::new(250.0, 310.0)).norm() < 1e-9);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let k = Intrinsics::default();
        let model = builtin_model("apriltag").unwrap();
        let cam = Pose::from_translation(Vector3::new(0.0, 0.0, 0.15));
        match project(&model, &cam, &k) {
            Err(ServoError::NonPositiveDepth { index: 0, depth }) => assert!(depth < 0.0),
            other => panic!("expected NonPositiveDepth, got {other:?}"),
        }
    }

    #[test]
    fn focal_scaling_doubles_offsets() {
        let k = Intrinsics::default();
        let k2 = Intrinsics {
            fx: 2.0 * k.fx,
            fy: 2.0 * k.fy,
            ..k
        };
        let model = builtin_model("toy_horse").unwrap();
        let cam = looking_down(0.3);
        let a = project(&model, &cam, &k).unwrap();
        let b = project(&model, &cam, &k2).unwrap();
        for (p, q) in a.pixels.iter().zip(&b.pixels) {
            assert!(((q.x - k.cx) - 2.0 * (p.x - k.cx)).abs() < 1e-9);
            assert!(((q.y - k.cy) - 2.0 * (p.y - k.cy)).abs() < 1e-9);
        }
    }

    #[test]
    fn fov_half_open_bounds() {
        let k = Intrinsics::default();
        let kp = |u: f64, v: f64| KeypointSet::new(vec![Vector2::new(u, v)]);
        assert!(in_fov(&kp(320.0, 240.0), &k));
        assert!(!in_fov(&kp(-1.0, 100.0), &k));
        assert!(in_fov(&kp(639.0, 479.0), &k));
        assert!(!in_fov(&kp(640.0, 479.0), &k));
        assert!(!in_fov(&kp(0.0, 480.0), &k));
    }

    #[test]
    fn builtin_tables() {
        let tag = builtin_model("apriltag").unwrap();
        assert_eq!(tag.len(), 4);
        assert_eq!(tag.points[0], Vector3::new(-0.03, -0.03, 0.0));
        assert_eq!(tag.points[3], Vector3::new(-0.03, 0.03, 0.0));
        let port = builtin_model("charging_port").unwrap();
        assert_eq!(port.len(), 5);
        assert!(port.points.contains(&Vector3::zeros()));
        assert!(port.points.contains(&Vector3::new(0.075, -0.015, 0.0)));
        let horse = builtin_model("toy_horse").unwrap();
        assert_eq!(horse.len(), 4);
        assert!(horse.points.contains(&Vector3::new(0.032, 0.003, 0.025)));
        assert!(matches!(builtin_model("teapot"), Err(ServoError::UnknownModel(_))));
    }

    #[test]
    fn model_json_and_minimum_size() {
        let json = r#"{"name": "tri", "points": [[0,0,0],[0.01,0,0],[0,0.01,0.002]]}"#;
        let m: TargetModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.points[2].z, 0.002);
        let two = r#"{"name": "pair", "points": [[0,0,0],[0.01,0,0]]}"#;
        assert!(serde_json::from_str::<TargetModel>(two).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::default().validate().is_ok());
        let bad = Intrinsics {
            cx: 700.0,
            ..Intrinsics::default()
        };
        assert!(bad.validate().is_err());
    }
}
