//! Pose hypotheses: point-pair-feature voting with clustering, poses from
//! single oriented-feature matches, ICP refinement and the JSONL dump.

mod cluster;
mod icp;
mod pair;
mod ppf;

pub use cluster::cluster_poses;
pub use icp::{icp_refine, icp_refine_colored, median_spacing, IcpResult};
pub use pair::{
    extract_features, match_features, pose_from_oriented_pair, FeatureConfig, ObservedFeature,
    OrientedFeature,
};
pub use ppf::{build_ppf_table, ppf_angles, ppf_feature, ppf_vote, PpfKey, PpfTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rand::SeedableRng;

use crate::geom::{dominant_plane, remove_plane, voxel_downsample, KdTree3, PointCloud, RigidTransform, Vec3};
use crate::objmodel::ObjectModel;
use crate::render::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HypothesisSource {
    #[serde(rename = "ppf")]
    Ppf,
    #[serde(rename = "pair")]
    OrientedPair,
    #[serde(rename = "gt")]
    InjectedGt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    pub transform: RigidTransform,
    pub source: HypothesisSource,
    /// Votes or match quality; informational only.
    pub prior_score: f64,
}

impl PoseHypothesis {
    pub fn new(transform: RigidTransform, source: HypothesisSource, prior_score: f64) -> Self {
        Self {
            transform,
            source,
            prior_score,
        }
    }
}

/// Hypothesis generation knobs. Distances are fractions of the object diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypoConfig {
    pub dist_step: f64,
    pub angle_step_deg: f64,
    pub model_sd: f64,
    pub scene_sd: f64,
    pub ref_rate: f64,
    pub cluster_trans: f64,
    pub cluster_rot_deg: f64,
    pub top_k: usize,
    pub oriented_pair: bool,
    pub pair_max: usize,
    /// Keys holding more than this fraction of all table entries are
    /// dropped; such near-coplanar pairs cost most of the voting time and
    /// carry little pose information. 0 keeps everything.
    pub bucket_cap: f64,
    /// Drop the dominant plane (the support surface) before voting.
    pub remove_plane: bool,
    /// Plane inlier distance, meters.
    pub plane_threshold: f64,
    /// Fine ICP stage sampling, fraction of the diameter; the coarse stage
    /// uses `scene_sd`.
    pub icp_sd: f64,
    /// Voxel leaf (meters) of the model surface sample ICP aligns.
    pub icp_model_leaf: f64,
    pub icp_max_iter: usize,
    pub icp_tol: f64,
    /// Meters per unit of color-cone distance when matching; 0 is plain
    /// nearest-neighbor ICP.
    pub icp_color_weight: f64,
}

impl Default for HypoConfig {
    fn default() -> Self {
        Self {
            dist_step: 0.05,
            angle_step_deg: 12.0,
            model_sd: 0.05,
            scene_sd: 0.05,
            ref_rate: 0.2,
            cluster_trans: 0.1,
            cluster_rot_deg: 12.0,
            top_k: 100,
            oriented_pair: false,
            pair_max: 100,
            bucket_cap: 0.005,
            remove_plane: true,
            plane_threshold: 0.005,
            icp_sd: 0.01,
            icp_model_leaf: 0.003,
            icp_max_iter: 30,
            icp_tol: 1e-7,
            icp_color_weight: 0.02,
        }
    }
}

impl HypoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dist_step,
            self.angle_step_deg,
            self.model_sd,
            self.scene_sd,
            self.cluster_trans,
            self.cluster_rot_deg,
            self.plane_threshold,
            self.icp_sd,
            self.icp_model_leaf,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(0.0..=1.0).contains(&self.ref_rate)
            || !(0.0..=1.0).contains(&self.bucket_cap)
            || self.top_k == 0
            || !(self.icp_color_weight >= 0.0 && self.icp_tol >= 0.0)
        {
            return Err(Error::InvalidInput(
                "hypothesis config: steps and thresholds must be positive, ref_rate and bucket_cap in [0, 1], top_k >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Back-projects every pixel with valid depth and normal.
pub fn observation_cloud(obs: &Observation) -> PointCloud {
    let k = &obs.intrinsics;
    let mut cloud = PointCloud::default();
    for y in 0..obs.height() {
        for x in 0..obs.width() {
            let z = *obs.depth.get(x, y);
            if let (true, Some(n)) = (z > 0.0, obs.normals.get(x, y)) {
                cloud.push(k.back_project(x as f64, y as f64, z), *n, *obs.hsv.get(x, y));
            }
        }
    }
    cloud
}

/// Observation cloud voxelized at `scene_sd · diameter`, without the
/// dominant plane when `cfg.remove_plane` is set and a plane holds at
/// least a fifth of the points. Deterministic per observation.
pub fn scene_cloud(obs: &Observation, diameter: f64, cfg: &HypoConfig) -> Result<PointCloud> {
    let cloud = voxel_downsample(&observation_cloud(obs), cfg.scene_sd * diameter)?;
    if !cfg.remove_plane {
        return Ok(cloud);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    Ok(match dominant_plane(&cloud, cfg.plane_threshold, 200, cloud.len() / 5, &mut rng) {
        Some(plane) => remove_plane(&cloud, plane, cfg.plane_threshold),
        None => cloud,
    })
}

/// A model's voting table, built once and reused for every frame.
#[derive(Debug, Clone)]
pub struct PpfModel {
    pub cloud: PointCloud,
    pub table: PpfTable,
    pub diameter: f64,
}

/// Voxelizes the model at `model_sd · diameter` and hashes its pairs.
pub fn build_ppf_model(model: &ObjectModel, cfg: &HypoConfig) -> Result<PpfModel> {
    cfg.validate()?;
    let cloud = voxel_downsample(&model.cloud, cfg.model_sd * model.diameter)?;
    let mut table = build_ppf_table(&cloud, model.diameter, cfg.dist_step, cfg.angle_step_deg.to_radians())?;
    if cfg.bucket_cap > 0.0 {
        let cap = (cfg.bucket_cap * table.len() as f64).ceil() as usize;
        table.map.retain(|_, v| v.len() <= cap);
    }
    Ok(PpfModel { cloud, table, diameter: model.diameter })
}

/// Votes in `scene` and returns the top `cfg.top_k` clustered poses.
pub fn ppf_hypotheses(pm: &PpfModel, scene: &PointCloud, cfg: &HypoConfig, rng: &mut impl rand::Rng) -> Result<Vec<PoseHypothesis>> {
    let raw = ppf_vote(scene, &pm.table, cfg.ref_rate, rng);
    cluster_poses(&raw, cfg.cluster_trans * pm.diameter, cfg.cluster_rot_deg.to_radians(), cfg.top_k)
}

/// Poses from single descriptor matches between model and observation
/// features, best matches first, at most `max`.
pub fn oriented_pair_hypotheses(
    model_features: &[OrientedFeature],
    obs: &Observation,
    fcfg: &FeatureConfig,
    max: usize,
) -> Vec<PoseHypothesis> {
    let k = &obs.intrinsics;
    let observed: Vec<ObservedFeature> = extract_features(&observation_cloud(obs), fcfg)
        .iter()
        .filter_map(|f| ObservedFeature::from_camera_feature(f, k))
        .collect();
    let mut matches = match_features(model_features, &observed, fcfg.ratio);
    matches.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    matches
        .iter()
        .filter_map(|&(mi, oi, q)| {
            pose_from_oriented_pair(&model_features[mi], &observed[oi], k, &obs.depth)
                .ok()
                .map(|h| PoseHypothesis { prior_score: q, ..h })
        })
        .take(max)
        .collect()
}

/// A refinement target: scene points, their index and median spacing.
#[derive(Debug, Clone)]
pub struct IcpScene {
    pub cloud: PointCloud,
    pub tree: KdTree3,
    pub spacing: f64,
}

impl IcpScene {
    pub fn new(cloud: PointCloud) -> Self {
        let tree = KdTree3::new(&cloud.positions);
        let spacing = median_spacing(&cloud, &tree);
        Self { cloud, tree, spacing }
    }
}

/// Coarse (`scene_sd`) and fine (`icp_sd`) refinement targets.
pub fn icp_stages(obs: &Observation, diameter: f64, cfg: &HypoConfig) -> Result<[IcpScene; 2]> {
    let coarse = scene_cloud(obs, diameter, cfg)?;
    let fine = scene_cloud(obs, diameter, &HypoConfig { scene_sd: cfg.icp_sd, ..cfg.clone() })?;
    Ok([IcpScene::new(coarse), IcpScene::new(fine)])
}

/// Model points whose normals face the camera under `pose`.
pub fn facing_camera(model: &PointCloud, pose: &RigidTransform) -> PointCloud {
    let keep: Vec<usize> = (0..model.len())
        .filter(|&i| pose.apply_vector(&model.normals[i]).dot(&pose.apply(&model.positions[i])) < 0.0)
        .collect();
    model.select(&keep)
}

/// ICP through a coarse-to-fine sequence of scenes, each stage using the
/// model points that face the camera at its starting pose.
pub fn refine_pose(model: &PointCloud, stages: &[IcpScene], init: &PoseHypothesis, max_iter: usize, tol: f64, color_weight: f64) -> PoseHypothesis {
    let mut h = *init;
    for s in stages {
        let visible = facing_camera(model, &h.transform);
        h = icp_refine_colored(&visible, &s.cloud, &s.tree, s.spacing, &h, max_iter, tol, color_weight).hypothesis;
    }
    h
}

/// One line of the hypothesis dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub frame: u32,
    pub obj_id: u32,
    pub source: HypothesisSource,
    pub score: f64,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub t_mm: Vec<f64>,
}

impl HypothesisRecord {
    pub fn new(frame: u32, obj_id: u32, h: &PoseHypothesis) -> Self {
        Self {
            frame,
            obj_id,
            source: h.source,
            score: h.prior_score,
            r: h.transform.rotation_row_major().to_vec(),
            t_mm: (h.transform.translation * 1000.0).iter().copied().collect(),
        }
    }

    pub fn hypothesis(&self) -> Result<PoseHypothesis> {
        let t: Vec<f64> = self.t_mm.iter().map(|v| v / 1000.0).collect();
        Ok(PoseHypothesis::new(
            RigidTransform::from_row_major(&self.r, &t)?,
            self.source,
            self.score,
        ))
    }
}

pub fn write_jsonl(records: &[HypothesisRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(text: &str) -> Result<Vec<HypothesisRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string())))
        .collect()
}

/// Symmetry-aware rotation and translation distance of `est` to `gt`.
pub fn pose_distance(est: &RigidTransform, gt: &RigidTransform, symmetries: &[RigidTransform]) -> (f64, f64) {
    symmetries
        .iter()
        .map(|s| {
            let g = gt.compose(s);
            (
                crate::geom::rotation_geodesic(&est.rotation, &g.rotation),
                (est.translation - g.translation).norm(),
            )
        })
        .fold((f64::INFINITY, f64::INFINITY), |acc, v| if v.0 < acc.0 { v } else { acc })
}

/// Kabsch: rotation and translation minimizing `Σ w‖R·a + t − b‖²`.
pub(crate) fn fit_rigid(a: &[Vec3], b: &[Vec3]) -> Option<RigidTransform> {
    if a.len() < 3 || a.len() != b.len() {
        return None;
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vec3>() / n;
    let cb = b.iter().sum::<Vec3>() / n;
    let mut h = crate::geom::Mat3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = crate::geom::Mat3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    Some(RigidTransform::new(r, cb - r * ca))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let t = RigidTransform::rot_x(0.4).compose(&RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.6)));
        let recs = vec![
            HypothesisRecord::new(3, 5, &PoseHypothesis::new(t, HypothesisSource::Ppf, 17.0)),
            HypothesisRecord::new(3, 5, &PoseHypothesis::new(t, HypothesisSource::InjectedGt, 0.0)),
        ];
        let text = write_jsonl(&recs).unwrap();
        assert!(text.lines().next().unwrap().contains("\"source\":\"ppf\""));
        assert!(text.contains("\"t_mm\""));
        let back = read_jsonl(&text).unwrap();
        assert_eq!(back, recs);
        let h = back[1].hypothesis().unwrap();
        assert_eq!(h.source, HypothesisSource::InjectedGt);
        assert!((h.transform.translation - t.translation).norm() < 1e-12);
        assert!(read_jsonl("{\"frame\":1}\n").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn kabsch_recovers_transform() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0).normalize(), 2.0)
            .compose(&RigidTransform::from_translation(Vec3::new(0.1, -0.3, 0.5)));
        let a: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new((i as f64).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.1))
            .collect();
        let b: Vec<Vec3> = a.iter().map(|p| t.apply(p)).collect();
        let f = fit_rigid(&a, &b).unwrap();
        assert!((f.rotation - t.rotation).norm() < 1e-12);
        assert!((f.translation - t.translation).norm() < 1e-12);
    }
}
