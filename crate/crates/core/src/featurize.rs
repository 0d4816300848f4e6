//! Projection of a posed model into an observation and the per-point
//! difference sets the scorer consumes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_hue_difference, CameraIntrinsics, PointCloud, RigidTransform, Vec3};
use crate::hypo::PoseHypothesis;
use crate::net::{Container, Matrix, Real, Tensor};
use crate::render::Observation;

/// Per-point feature channels, in column order.
pub const CHANNELS: [&str; 7] = ["u", "v", "dh", "ds", "dv", "dd", "cn"];

/// Sets smaller than this are not scored.
pub const MIN_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionFilter {
    /// Drop points whose transformed normal faces away from the camera.
    #[default]
    Backface,
    None,
}

impl std::str::FromStr for OcclusionFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backface" => Ok(Self::Backface),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidInput(format!("occlusion filter must be backface or none, got `{s}`"))),
        }
    }
}

/// Where the `u`, `v` normalization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoordNormalization {
    #[default]
    PerHypothesis,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub occlusion_filter: OcclusionFilter,
    pub normalization: CoordNormalization,
    pub min_points: usize,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            occlusion_filter: OcclusionFilter::Backface,
            normalization: CoordNormalization::PerHypothesis,
            min_points: MIN_POINTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Real-valued image coordinates.
    pub pixel: [f64; 2],
    pub depth: f64,
    pub normal: Vec3,
    pub hsv: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectedModel {
    pub points: Vec<ProjectedPoint>,
}

impl ProjectedModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Poses every model point and keeps those in front of the camera, inside
/// the image and (with the backface filter) facing the camera.
pub fn project_model(cloud: &PointCloud, pose: &RigidTransform, k: &CameraIntrinsics, filter: OcclusionFilter) -> ProjectedModel {
    let mut points = Vec::new();
    for i in 0..cloud.len() {
        let n = pose.apply_vector(&cloud.normals[i]);
        if filter == OcclusionFilter::Backface && n.z >= 0.0 {
            continue;
        }
        let Some(p) = k.project(&pose.apply(&cloud.positions[i])) else {
            continue;
        };
        if k.pixel_of(p.u, p.v).is_none() {
            continue;
        }
        points.push(ProjectedPoint {
            pixel: [p.u, p.v],
            depth: p.z,
            normal: n,
            hsv: cloud.colors_hsv[i],
        });
    }
    ProjectedModel { points }
}

/// Feature rows of one hypothesis, channel order [`CHANNELS`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointDifferenceSet {
    /// Index of the hypothesis in its batch.
    pub hypothesis: usize,
    pub rows: Vec<[f64; 7]>,
}

impl PointDifferenceSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Whether the set has enough points to be scored.
    pub fn is_scorable(&self, min_points: usize) -> bool {
        self.rows.len() >= min_points.max(1)
    }

    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        Matrix::from_vec(self.rows.len(), 7, self.rows.iter().flatten().map(|&v| T::of(v)).collect())
    }
}

/// Un-normalized differences: `u`, `v` hold pixel coordinates.
fn raw_differences(proj: &ProjectedModel, obs: &Observation) -> Vec<[f64; 7]> {
    let k = &obs.intrinsics;
    proj.points
        .iter()
        .filter_map(|p| {
            let (x, y) = k.pixel_of(p.pixel[0], p.pixel[1])?;
            let d = *obs.depth.get(x, y);
            if !(d > 0.0) {
                return None;
            }
            let o = obs.hsv.get(x, y);
            // Depth edges carry no normal estimate; treat them as orthogonal.
            let cn = obs.normals.get(x, y).map_or(0.0, |n| p.normal.dot(&n).clamp(-1.0, 1.0));
            Some([
                p.pixel[0],
                p.pixel[1],
                wrap_hue_difference(p.hsv[0], o[0]),
                p.hsv[1] - o[1],
                p.hsv[2] - o[2],
                p.depth - d,
                cn,
            ])
        })
        .collect()
}

/// Mean and population standard deviation of `u` and `v`.
fn coord_stats<'a>(rows: impl Iterator<Item = &'a [f64; 7]> + Clone) -> ([f64; 2], [f64; 2]) {
    let mut n = 0.0;
    let mut mean = [0.0; 2];
    for r in rows.clone() {
        n += 1.0;
        mean[0] += r[0];
        mean[1] += r[1];
    }
    if n == 0.0 {
        return ([0.0; 2], [0.0; 2]);
    }
    mean = mean.map(|m| m / n);
    let mut var = [0.0; 2];
    for r in rows {
        var[0] += (r[0] - mean[0]).powi(2);
        var[1] += (r[1] - mean[1]).powi(2);
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

fn normalize(rows: &mut [[f64; 7]], mean: [f64; 2], std: [f64; 2]) {
    for r in rows {
        for c in 0..2 {
            r[c] = if std[c] > 1e-12 { (r[c] - mean[c]) / std[c] } else { 0.0 };
        }
    }
}

/// Samples the observation at each projected point and returns the set
/// with per-set normalized coordinates.
pub fn point_differences(proj: &ProjectedModel, obs: &Observation, hypothesis: usize) -> PointDifferenceSet {
    let mut rows = raw_differences(proj, obs);
    let (mean, std) = coord_stats(rows.iter());
    normalize(&mut rows, mean, std);
    PointDifferenceSet { hypothesis, rows }
}

/// One set per hypothesis, in order. Sets below `cfg.min_points` are kept
/// but fail [`PointDifferenceSet::is_scorable`].
pub fn featurize_batch(
    cloud: &PointCloud,
    hypotheses: &[PoseHypothesis],
    obs: &Observation,
    cfg: &FeaturizeConfig,
) -> Vec<PointDifferenceSet> {
    let raw: Vec<Vec<[f64; 7]>> = hypotheses
        .par_iter()
        .map(|h| raw_differences(&project_model(cloud, &h.transform, &obs.intrinsics, cfg.occlusion_filter), obs))
        .collect();
    let image_stats = match cfg.normalization {
        CoordNormalization::PerImage => Some(coord_stats(raw.iter().flatten())),
        CoordNormalization::PerHypothesis => None,
    };
    raw.into_iter()
        .enumerate()
        .map(|(i, mut rows)| {
            let (mean, std) = image_stats.unwrap_or_else(|| coord_stats(rows.iter()));
            normalize(&mut rows, mean, std);
            PointDifferenceSet { hypothesis: i, rows }
        })
        .collect()
}

/// A featurized hypothesis with its pose and training target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub set: PointDifferenceSet,
    pub pose: RigidTransform,
    pub error: f64,
}

const DUMP_TAG: &str = "features";

/// Packs records into a tensor container: per record `h<i>.features`
/// (N×7), `h<i>.pose` (R row-major then t) and `h<i>.error`.
pub fn feature_dump(records: &[FeatureRecord]) -> Container {
    let mut tensors = Vec::with_capacity(records.len() * 3);
    for (i, r) in records.iter().enumerate() {
        let f: Vec<f32> = r.set.rows.iter().flatten().map(|&v| v as f32).collect();
        tensors.push((format!("h{i}.features"), Tensor { shape: vec![r.set.len(), 7], data: f }));
        let mut pose: Vec<f32> = r.pose.rotation_row_major().iter().map(|&v| v as f32).collect();
        pose.extend(r.pose.translation.iter().map(|&v| v as f32));
        tensors.push((format!("h{i}.pose"), Tensor { shape: vec![12], data: pose }));
        tensors.push((format!("h{i}.error"), Tensor { shape: vec![1], data: vec![r.error as f32] }));
    }
    Container { tag: DUMP_TAG.into(), tensors }
}

pub fn read_feature_dump(c: &Container) -> Result<Vec<FeatureRecord>> {
    if c.tag != DUMP_TAG {
        return Err(Error::Container(format!("expected a feature dump, found tag `{}`", c.tag)));
    }
    if c.tensors.len() % 3 != 0 {
        return Err(Error::Container("feature dump tensor count is not a multiple of 3".into()));
    }
    (0..c.tensors.len() / 3)
        .map(|i| {
            let get = |s: &str| {
                c.get(&format!("h{i}.{s}"))
                    .ok_or_else(|| Error::Container(format!("feature dump lacks `h{i}.{s}`")))
            };
            let f = get("features")?;
            if f.shape.len() != 2 || f.shape[1] != 7 {
                return Err(Error::Container(format!("`h{i}.features` has shape {:?}", f.shape)));
            }
            let rows = f
                .data
                .chunks_exact(7)
                .map(|c| std::array::from_fn(|j| c[j] as f64))
                .collect();
            let p: Vec<f64> = get("pose")?.data.iter().map(|&v| v as f64).collect();
            if p.len() != 12 {
                return Err(Error::Container(format!("`h{i}.pose` needs 12 values")));
            }
            let pose = RigidTransform::from_row_major(&p[..9], &p[9..])?.orthonormalized();
            let error = get("error")?.data.first().copied().unwrap_or(f32::NAN) as f64;
            Ok(FeatureRecord { set: PointDifferenceSet { hypothesis: i, rows }, pose, error })
        })
        .collect()
}
