use serde::{Deserialize, Serialize};

use super::{HypothesisSource, PoseHypothesis};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Image, KdTree3, Mat3, PointCloud, RigidTransform, Vec3};

/// A 3-D feature with a full local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedFeature {
    pub position: Vec3,
    pub normal: Vec3,
    /// In-plane direction, orthogonal to `normal`.
    pub orientation: Vec3,
    pub descriptor: Vec<f64>,
}

/// An image feature; its position comes from the observed depth at `pixel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFeature {
    pub pixel: [f64; 2],
    pub normal: Vec3,
    pub orientation: Vec3,
    pub descriptor: Vec<f64>,
}

impl ObservedFeature {
    /// Image feature at the projection of a camera-frame feature.
    pub fn from_camera_feature(f: &OrientedFeature, k: &CameraIntrinsics) -> Option<Self> {
        let p = k.project(&f.position)?;
        Some(Self {
            pixel: [p.u, p.v],
            normal: f.normal,
            orientation: f.orientation,
            descriptor: f.descriptor.clone(),
        })
    }
}

fn frame(normal: &Vec3, orientation: &Vec3) -> Result<Mat3> {
    let n = normal.normalize();
    let o = orientation - n * n.dot(orientation);
    if !(o.norm() > 1e-9 && n.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("feature orientation is parallel to its normal".into()));
    }
    let o = o.normalize();
    Ok(Mat3::from_columns(&[o, n.cross(&o), n]))
}

/// The rigid transform aligning the model feature's frame with the observed one.
pub fn pose_from_oriented_pair(
    model: &OrientedFeature,
    obs: &ObservedFeature,
    k: &CameraIntrinsics,
    depth: &Image<f64>,
) -> Result<PoseHypothesis> {
    let (x, y) = k
        .pixel_of(obs.pixel[0], obs.pixel[1])
        .ok_or_else(|| Error::InvalidInput("feature pixel outside the image".into()))?;
    let z = *depth.get(x, y);
    if !(z > 0.0) {
        return Err(Error::InvalidInput(format!("no valid depth at feature pixel ({x}, {y})")));
    }
    let p_obs = k.back_project(obs.pixel[0], obs.pixel[1], z);
    let r = frame(&obs.normal, &obs.orientation)? * frame(&model.normal, &model.orientation)?.transpose();
    Ok(PoseHypothesis::new(
        RigidTransform::new(r, p_obs - r * model.position),
        HypothesisSource::OrientedPair,
        0.0,
    ))
}

/// Toy local descriptor: saturation-weighted hue histogram plus value
/// histogram over a ball; orientation is the value gradient in the tangent plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub radius: f64,
    pub hue_bins: usize,
    pub value_bins: usize,
    pub min_neighbors: usize,
    /// Minimum value-gradient magnitude, per meter.
    pub min_gradient: f64,
    /// Keypoints are every `stride`-th cloud point.
    pub stride: usize,
    pub ratio: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            radius: 0.015,
            hue_bins: 8,
            value_bins: 4,
            min_neighbors: 8,
            min_gradient: 2.0,
            stride: 4,
            ratio: 0.8,
        }
    }
}

pub fn extract_features(cloud: &PointCloud, cfg: &FeatureConfig) -> Vec<OrientedFeature> {
    let tree = KdTree3::new(&cloud.positions);
    let mut out = Vec::new();
    for i in (0..cloud.len()).step_by(cfg.stride.max(1)) {
        let (p, n) = (cloud.positions[i], cloud.normals[i]);
        let nb = tree.within(&p, cfg.radius);
        if nb.len() < cfg.min_neighbors {
            continue;
        }
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = n.cross(&helper).normalize();
        let e2 = n.cross(&e1);
        let v0 = cloud.colors_hsv[i][2];
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut desc = vec![0.0; cfg.hue_bins + cfg.value_bins];
        for &j in &nb {
            let d = cloud.positions[j] - p;
            let (x, y) = (d.dot(&e1), d.dot(&e2));
            let dv = cloud.colors_hsv[j][2] - v0;
            a11 += x * x;
            a12 += x * y;
            a22 += y * y;
            b1 += x * dv;
            b2 += y * dv;
            let [h, s, v] = cloud.colors_hsv[j];
            let hb = ((h * cfg.hue_bins as f64) as usize).min(cfg.hue_bins - 1);
            desc[hb] += s * v;
            let vb = ((v * cfg.value_bins as f64) as usize).min(cfg.value_bins - 1);
            desc[cfg.hue_bins + vb] += 1.0;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-18 {
            continue;
        }
        let g1 = (a22 * b1 - a12 * b2) / det;
        let g2 = (a11 * b2 - a12 * b1) / det;
        if g1.hypot(g2) < cfg.min_gradient {
            continue;
        }
        let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            desc.iter_mut().for_each(|v| *v /= norm);
        }
        out.push(OrientedFeature {
            position: p,
            normal: n,
            orientation: (e1 * g1 + e2 * g2).normalize(),
            descriptor: desc,
        });
    }
    out
}

/// Nearest-neighbor matching with the ratio test. Returns
/// `(model index, observed index, 1 − d1/d2)`.
pub fn match_features(model: &[OrientedFeature], obs: &[ObservedFeature], ratio: f64) -> Vec<(usize, usize, f64)> {
    if model.len() < 2 {
        return Vec::new();
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    obs.iter()
        .enumerate()
        .filter_map(|(oi, o)| {
            let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
            for (mi, m) in model.iter().enumerate() {
                let d = dist(&m.descriptor, &o.descriptor);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    best = mi;
                } else if d < d2 {
                    d2 = d;
                }
            }
            (d1 < ratio * d2).then(|| (best, oi, 1.0 - d1 / d2.max(1e-12)))
        })
        .collect()
}
