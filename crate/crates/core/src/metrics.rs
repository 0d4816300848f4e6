//! Pose error metrics (visible surface discrepancy, maximum symmetry-aware
//! surface and projection distances) and average recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Image, RigidTransform, Vec3};
use crate::objmodel::TriangleMesh;
use crate::render::{rasterize_layer, visibility_mask, DistanceMap};

fn grid(step: f64, n: usize) -> Vec<f64> {
    // Via decimal text so 3·0.05 is 0.15 and not 0.15000000000000002.
    (1..=n).map(|i| format!("{:.4}", i as f64 * step).parse().expect("decimal")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricThresholds {
    /// VSD misalignment tolerances, fractions of the object diameter.
    pub vsd_taus: Vec<f64>,
    pub vsd_thetas: Vec<f64>,
    /// Fractions of the object diameter.
    pub mssd_thetas: Vec<f64>,
    /// Multiples of `image_width / 640` pixels.
    pub mspd_thetas: Vec<f64>,
    /// Visibility tolerance, meters.
    pub delta: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            vsd_taus: grid(0.05, 10),
            vsd_thetas: grid(0.05, 10),
            mssd_thetas: grid(0.05, 10),
            mspd_thetas: grid(5.0, 10),
            delta: 0.015,
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        let lists = [&self.vsd_taus, &self.vsd_thetas, &self.mssd_thetas, &self.mspd_thetas];
        if lists.iter().any(|l| l.is_empty() || l.iter().any(|v| !(*v > 0.0)))
            || self.vsd_thetas.iter().any(|&t| t > 1.0)
            || !(self.delta > 0.0)
        {
            return Err(Error::InvalidInput("metric thresholds must be nonempty and positive, VSD thetas <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VsdResult {
    /// One error per tolerance.
    pub errors: Vec<f64>,
    /// Neither pose is visible; errors are reported as 1.
    pub undefined: bool,
}

/// Visible surface discrepancy for each tolerance in `taus_m` (meters).
/// The estimate's visible region also includes pixels visible under the
/// ground truth where the estimate has surface.
pub fn vsd(d_est: &DistanceMap, d_gt: &DistanceMap, depth_obs: &Image<f64>, taus_m: &[f64], delta: f64) -> Result<VsdResult> {
    if !d_est.same_size(d_gt) {
        return Err(Error::InvalidInput("distance maps differ in size".into()));
    }
    let v_gt = visibility_mask(d_gt, depth_obs, delta)?;
    let mut v_est = visibility_mask(d_est, depth_obs, delta)?;
    for ((ve, vg), de) in v_est.iter_mut().zip(&v_gt).zip(&d_est.data) {
        *ve |= *vg && *de > 0.0;
    }
    let mut union = 0usize;
    let mut bad = vec![0usize; taus_m.len()];
    for i in 0..v_gt.len() {
        if !(v_gt[i] || v_est[i]) {
            continue;
        }
        union += 1;
        let both = v_gt[i] && v_est[i];
        let diff = (d_est.data[i] - d_gt.data[i]).abs();
        for (b, &tau) in bad.iter_mut().zip(taus_m) {
            if !(both && diff < tau) {
                *b += 1;
            }
        }
    }
    if union == 0 {
        return Ok(VsdResult { errors: vec![1.0; taus_m.len()], undefined: true });
    }
    Ok(VsdResult {
        errors: bad.iter().map(|&b| b as f64 / union as f64).collect(),
        undefined: false,
    })
}

/// Renders both poses of `mesh` and evaluates [`vsd`].
pub fn vsd_for_poses(
    mesh: &TriangleMesh,
    est: &RigidTransform,
    gt: &RigidTransform,
    k: &CameraIntrinsics,
    depth_obs: &Image<f64>,
    taus_m: &[f64],
    delta: f64,
) -> Result<VsdResult> {
    let de = rasterize_layer(mesh, est, k, None).depth;
    let dg = rasterize_layer(mesh, gt, k, None).depth;
    vsd(&de, &dg, depth_obs, taus_m, delta)
}

/// `min_T max_x ‖est(x) − gt(T(x))‖` in meters.
pub fn mssd(est: &RigidTransform, gt: &RigidTransform, points: &[Vec3], symmetries: &[RigidTransform]) -> f64 {
    let mut best = f64::INFINITY;
    for s in symmetries {
        let mut worst: f64 = 0.0;
        for x in points {
            worst = worst.max((est.apply(x) - gt.apply(&s.apply(x))).norm());
        }
        best = best.min(worst);
    }
    best
}

/// `min_T max_x` image distance in pixels between the projections of
/// `est(x)` and `gt(T(x))`; infinite when any point is behind the camera.
pub fn mspd(est: &RigidTransform, gt: &RigidTransform, points: &[Vec3], symmetries: &[RigidTransform], k: &CameraIntrinsics) -> f64 {
    let mut best = f64::INFINITY;
    for s in symmetries {
        let mut worst: f64 = 0.0;
        for x in points {
            let (Some(a), Some(b)) = (k.project(&est.apply(x)), k.project(&gt.apply(&s.apply(x)))) else {
                return f64::INFINITY;
            };
            worst = worst.max((a.u - b.u).hypot(a.v - b.v));
        }
        best = best.min(worst);
    }
    best
}

/// Errors of one estimate; infinite (VSD 1) when there is none.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub frame: u32,
    pub obj_id: u32,
    pub e_mssd: f64,
    pub e_mspd: f64,
    /// One per VSD tolerance.
    pub e_vsd: Vec<f64>,
    pub gt: Option<RigidTransform>,
    pub est: Option<RigidTransform>,
}

impl EvalRecord {
    pub fn missing(frame: u32, obj_id: u32, gt: Option<RigidTransform>, n_taus: usize) -> Self {
        Self {
            frame,
            obj_id,
            e_mssd: f64::INFINITY,
            e_mspd: f64::INFINITY,
            e_vsd: vec![1.0; n_taus],
            gt,
            est: None,
        }
    }
}

/// Everything needed to score one estimate.
pub struct EvalInput<'a> {
    pub mesh: &'a TriangleMesh,
    pub points: &'a [Vec3],
    pub symmetries: &'a [RigidTransform],
    pub diameter: f64,
    pub intrinsics: &'a CameraIntrinsics,
    pub depth_obs: &'a Image<f64>,
}

pub fn evaluate(
    frame: u32,
    obj_id: u32,
    est: Option<&RigidTransform>,
    gt: &RigidTransform,
    input: &EvalInput,
    th: &MetricThresholds,
) -> Result<EvalRecord> {
    let Some(est) = est else {
        return Ok(EvalRecord::missing(frame, obj_id, Some(*gt), th.vsd_taus.len()));
    };
    let taus_m: Vec<f64> = th.vsd_taus.iter().map(|t| t * input.diameter).collect();
    let v = vsd_for_poses(input.mesh, est, gt, input.intrinsics, input.depth_obs, &taus_m, th.delta)?;
    Ok(EvalRecord {
        frame,
        obj_id,
        e_mssd: mssd(est, gt, input.points, input.symmetries),
        e_mspd: mspd(est, gt, input.points, input.symmetries, input.intrinsics),
        e_vsd: v.errors,
        gt: Some(*gt),
        est: Some(*est),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArSummary {
    #[serde(rename = "AR_vsd")]
    pub ar_vsd: f64,
    #[serde(rename = "AR_mssd")]
    pub ar_mssd: f64,
    #[serde(rename = "AR_mspd")]
    pub ar_mspd: f64,
    #[serde(rename = "AR")]
    pub ar: f64,
}

/// Recall averaged over each metric's threshold grid, then over metrics.
/// An error counts as correct when strictly below the threshold.
pub fn average_recall(
    records: &[EvalRecord],
    th: &MetricThresholds,
    diameters: &BTreeMap<u32, f64>,
    image_width: usize,
) -> Result<ArSummary> {
    th.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to average".into()));
    }
    let n = records.len() as f64;
    let mut diam = Vec::with_capacity(records.len());
    for r in records {
        if r.e_vsd.len() != th.vsd_taus.len() {
            return Err(Error::InvalidInput(format!(
                "record ({}, {}) has {} VSD errors, expected {}",
                r.frame,
                r.obj_id,
                r.e_vsd.len(),
                th.vsd_taus.len()
            )));
        }
        diam.push(*diameters.get(&r.obj_id).ok_or_else(|| Error::Data(format!("no diameter for object {}", r.obj_id)))?);
    }
    let mut vsd_sum = 0.0;
    for t in 0..th.vsd_taus.len() {
        for &theta in &th.vsd_thetas {
            vsd_sum += records.iter().filter(|r| r.e_vsd[t] < theta).count() as f64 / n;
        }
    }
    let ar_vsd = vsd_sum / (th.vsd_taus.len() * th.vsd_thetas.len()) as f64;
    let ar_mssd = th
        .mssd_thetas
        .iter()
        .map(|&theta| records.iter().zip(&diam).filter(|(r, d)| r.e_mssd < theta * **d).count() as f64 / n)
        .sum::<f64>()
        / th.mssd_thetas.len() as f64;
    let px = image_width as f64 / 640.0;
    let ar_mspd = th
        .mspd_thetas
        .iter()
        .map(|&theta| records.iter().filter(|r| r.e_mspd < theta * px).count() as f64 / n)
        .sum::<f64>()
        / th.mspd_thetas.len() as f64;
    Ok(ArSummary { ar_vsd, ar_mssd, ar_mspd, ar: (ar_vsd + ar_mssd + ar_mspd) / 3.0 })
}

fn tau_column(tau: f64) -> String {
    format!("e_vsd_tau{:02}", (tau * 100.0).round() as i64)
}

pub fn results_header(taus: &[f64]) -> String {
    let mut h = String::from("frame,obj_id,e_mssd_m,e_mspd_px");
    for &t in taus {
        h.push(',');
        h.push_str(&tau_column(t));
    }
    h
}

pub fn write_results_csv(records: &[EvalRecord], taus: &[f64]) -> String {
    let mut s = results_header(taus);
    s.push('\n');
    for r in records {
        s.push_str(&format!("{},{},{},{}", r.frame, r.obj_id, r.e_mssd, r.e_mspd));
        for e in &r.e_vsd {
            s.push_str(&format!(",{e}"));
        }
        s.push('\n');
    }
    s
}

/// Parses a results file written for `taus`; poses are not stored.
pub fn read_results_csv(text: &str, taus: &[f64]) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    let header = results_header(taus);
    if lines.next() != Some(header.as_str()) {
        return Err(Error::parse("results line 1", format!("expected header `{header}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::parse(format!("results line {}", i + 2), format!("cannot parse `{l}`"));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 + taus.len() {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EvalRecord {
                frame: f[0].parse().map_err(|_| bad())?,
                obj_id: f[1].parse().map_err(|_| bad())?,
                e_mssd: num(f[2])?,
                e_mspd: num(f[3])?,
                e_vsd: f[4..].iter().map(|s| num(s)).collect::<Result<_>>()?,
                gt: None,
                est: None,
            })
        })
        .collect()
}

pub fn summary_json(s: &ArSummary) -> String {
    serde_json::to_string_pretty(s).expect("plain floats serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objmodel::{prepare_model, PrepareConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let t = Vec3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.06..0.06), rng.random_range(0.4..0.7));
        RigidTransform::from_translation(t).compose(&RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..3.1)))
    }

    #[test]
    fn default_grids() {
        let th = MetricThresholds::default();
        assert_eq!(th.vsd_taus, vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]);
        assert_eq!(th.mspd_thetas, vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]);
        assert_eq!(th.delta, 0.015);
        assert_eq!(
            results_header(&th.vsd_taus),
            "frame,obj_id,e_mssd_m,e_mspd_px,e_vsd_tau05,e_vsd_tau10,e_vsd_tau15,e_vsd_tau20,e_vsd_tau25,e_vsd_tau30,e_vsd_tau35,e_vsd_tau40,e_vsd_tau45,e_vsd_tau50"
        );
    }

    /// Pixel loop straight from the definition.
    fn vsd_oracle(de: &DistanceMap, dg: &DistanceMap, obs: &Image<f64>, tau: f64, delta: f64) -> f64 {
        let mut union = 0;
        let mut good = 0;
        for y in 0..obs.height {
            for x in 0..obs.width {
                let (e, g, o) = (*de.get(x, y), *dg.get(x, y), *obs.get(x, y));
                let vis_g = g > 0.0 && (o <= 0.0 || g - o <= delta);
                let vis_e = e > 0.0 && ((o <= 0.0 || e - o <= delta) || vis_g);
                if vis_g || vis_e {
                    union += 1;
                    if vis_g && vis_e && (e - g).abs() < tau {
                        good += 1;
                    }
                }
            }
        }
        if union == 0 {
            1.0
        } else {
            (union - good) as f64 / union as f64
        }
    }

    #[test]
    fn vsd_cases() {
        let cat = crate::shapes::catalog();
        let mesh = &cat[4].mesh;
        let k = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_pose(&mut rng);
        let dg = rasterize_layer(mesh, &gt, &k, None).depth;
        let taus = [0.005, 0.02, 0.05];
        assert_eq!(vsd(&dg, &dg, &dg, &taus, 0.015).unwrap().errors, vec![0.0; 3]);
        let away = RigidTransform::from_translation(Vec3::new(0.4, 0.0, 0.0)).compose(&gt);
        let r = vsd_for_poses(mesh, &away, &gt, &k, &dg, &taus, 0.015).unwrap();
        assert_eq!(r.errors, vec![1.0; 3]);
        let empty = Image::filled(k.width, k.height, 0.0);
        let r = vsd(&empty, &empty, &dg, &taus, 0.015).unwrap();
        assert!(r.undefined && r.errors == vec![1.0; 3]);
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let est = RigidTransform::from_translation(Vec3::new(rng.random_range(-0.02..0.02), 0.0, rng.random_range(-0.03..0.03)))
                .compose(&gt)
                .compose(&RigidTransform::rot_z(rng.random_range(-0.4..0.4)));
            let dg = rasterize_layer(mesh, &gt, &k, None).depth;
            let de = rasterize_layer(mesh, &est, &k, None).depth;
            // Observation: the ground truth with a slab occluding the left part.
            let mut obs = dg.clone();
            for y in 0..k.height {
                for x in 0..150 {
                    *obs.get_mut(x, y) = 0.3;
                }
            }
            let r = vsd(&de, &dg, &obs, &taus, 0.015).unwrap();
            for (e, &t) in r.errors.iter().zip(&taus) {
                assert_eq!(*e, vsd_oracle(&de, &dg, &obs, t, 0.015));
            }
        }
    }

    #[test]
    fn vsd_ignores_color() {
        let cat = crate::shapes::catalog();
        let k = camera();
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.5));
        let est = RigidTransform::from_translation(Vec3::new(0.01, 0.0, 0.51));
        let mut recolored = cat[0].mesh.clone();
        recolored.vertex_colors_rgb.iter_mut().for_each(|c| *c = Vec3::new(0.1, 0.9, 0.3));
        let obs = rasterize_layer(&cat[0].mesh, &gt, &k, None).depth;
        let a = vsd_for_poses(&cat[0].mesh, &est, &gt, &k, &obs, &[0.01, 0.03], 0.015).unwrap();
        let b = vsd_for_poses(&recolored, &est, &gt, &k, &obs, &[0.01, 0.03], 0.015).unwrap();
        assert_eq!(a, b);
    }

    fn mssd_oracle(est: &RigidTransform, gt: &RigidTransform, pts: &[Vec3], syms: &[RigidTransform]) -> f64 {
        let mut out = f64::INFINITY;
        for s in syms {
            let mut m: f64 = 0.0;
            for x in pts {
                let a = est.apply(x);
                let b = gt.apply(&s.apply(x));
                let d = ((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z)).sqrt();
                if d > m {
                    m = d;
                }
            }
            if m < out {
                out = m;
            }
        }
        out
    }

    fn mspd_oracle(est: &RigidTransform, gt: &RigidTransform, pts: &[Vec3], syms: &[RigidTransform], k: &CameraIntrinsics) -> f64 {
        let mut out = f64::INFINITY;
        for s in syms {
            let mut m: f64 = 0.0;
            for x in pts {
                let a = est.apply(x);
                let b = gt.apply(&s.apply(x));
                if a.z <= 0.0 || b.z <= 0.0 {
                    return f64::INFINITY;
                }
                let du = (k.fx * a.x / a.z + k.cx) - (k.fx * b.x / b.z + k.cx);
                let dv = (k.fy * a.y / a.z + k.cy) - (k.fy * b.y / b.z + k.cy);
                m = m.max(du.hypot(dv));
            }
            out = out.min(m);
        }
        out
    }

    #[test]
    fn mssd_and_mspd() {
        let cat = crate::shapes::catalog();
        let pyr = &cat[3];
        let m = prepare_model(4, &pyr.mesh, &pyr.symmetry, &PrepareConfig { max_points: 500, ..Default::default() }).unwrap();
        assert_eq!(m.symmetry.len(), 4);
        let k = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = &m.cloud.positions;
        for _ in 0..30 {
            let gt = random_pose(&mut rng);
            let est = random_pose(&mut rng);
            assert_eq!(mssd(&gt, &gt, pts, &m.symmetry), 0.0);
            assert_eq!(mspd(&gt, &gt, pts, &m.symmetry, &k), 0.0);
            assert_eq!(mssd(&est, &gt, pts, &m.symmetry).to_bits(), mssd_oracle(&est, &gt, pts, &m.symmetry).to_bits());
            assert_eq!(mspd(&est, &gt, pts, &m.symmetry, &k).to_bits(), mspd_oracle(&est, &gt, pts, &m.symmetry, &k).to_bits());
            let quarter = gt.compose(&m.symmetry[1]);
            assert!(mssd(&quarter, &gt, pts, &m.symmetry) < 1e-12);
            assert!(mspd(&quarter, &gt, pts, &m.symmetry, &k) < 1e-9);
        }
        // Two points on the optical axis plane, pushed back along z.
        let pts2 = [Vec3::new(0.05, 0.0, 0.0), Vec3::new(-0.05, 0.0, 0.0)];
        let id = [RigidTransform::identity()];
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.5));
        let est = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.6));
        let analytic = 300.0 * 0.05 / 0.5 - 300.0 * 0.05 / 0.6;
        assert!((mspd(&est, &gt, &pts2, &id, &k) - analytic).abs() < 1e-9);
        let behind = RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.6));
        assert_eq!(mspd(&behind, &gt, &pts2, &id, &k), f64::INFINITY);
    }

    #[test]
    fn symmetric_pose_is_perfect_everywhere() {
        let cat = crate::shapes::catalog();
        let pyr = &cat[3];
        let m = prepare_model(4, &pyr.mesh, &pyr.symmetry, &PrepareConfig { max_points: 500, ..Default::default() }).unwrap();
        let k = camera();
        let gt = RigidTransform::from_translation(Vec3::new(0.01, 0.0, 0.5)).compose(&RigidTransform::rot_x(2.2));
        let est = gt.compose(&m.symmetry[2]);
        let obs = rasterize_layer(&pyr.mesh, &gt, &k, None).depth;
        let input = EvalInput {
            mesh: &pyr.mesh,
            points: &m.cloud.positions,
            symmetries: &m.symmetry,
            diameter: m.diameter,
            intrinsics: &k,
            depth_obs: &obs,
        };
        let r = evaluate(0, 4, Some(&est), &gt, &input, &MetricThresholds::default()).unwrap();
        assert!(r.e_mssd < 1e-12 && r.e_mspd < 1e-9);
        assert!(r.e_vsd.iter().all(|&e| e < 1e-3), "{:?}", r.e_vsd);
        let miss = evaluate(0, 4, None, &gt, &input, &MetricThresholds::default()).unwrap();
        assert_eq!(miss.e_mssd, f64::INFINITY);
    }

    fn record(e_mssd: f64, e_mspd: f64, e_vsd: Vec<f64>) -> EvalRecord {
        EvalRecord { frame: 0, obj_id: 1, e_mssd, e_mspd, e_vsd, gt: None, est: None }
    }

    #[test]
    fn recall_by_hand() {
        let th = MetricThresholds::default();
        let d = BTreeMap::from([(1, 0.2)]);
        let perfect = vec![record(0.0, 0.0, vec![0.0; 10]); 3];
        let s = average_recall(&perfect, &th, &d, 640).unwrap();
        assert_eq!((s.ar_vsd, s.ar_mssd, s.ar_mspd, s.ar), (1.0, 1.0, 1.0, 1.0));
        let miss = vec![EvalRecord::missing(0, 1, None, 10); 2];
        let s = average_recall(&miss, &th, &d, 640).unwrap();
        assert_eq!(s.ar, 0.0);

        // mssd 0.021 passes theta >= 0.15 (0.03 m): 8 of 10 thresholds.
        // mspd 12 px at width 320 (r = 0.5): passes theta·0.5 > 12, i.e. theta >= 25: 6 of 10.
        // vsd: 0.12 everywhere passes thetas 0.15..0.5: 8 of 10 per tau.
        let one = record(0.021, 12.0, vec![0.12; 10]);
        let s = average_recall(&[one.clone(), EvalRecord::missing(1, 1, None, 10)], &th, &d, 320).unwrap();
        assert!((s.ar_mssd - 0.4).abs() < 1e-15);
        assert!((s.ar_mspd - 0.3).abs() < 1e-15);
        assert!((s.ar_vsd - 0.4).abs() < 1e-15);
        assert!((s.ar - 1.1 / 3.0).abs() < 1e-15);
        // Exactly at a threshold is a miss.
        let edge = record(0.05, 2.5, vec![0.05; 10]);
        let s = average_recall(&[edge], &th, &BTreeMap::from([(1, 1.0)]), 320).unwrap();
        assert!((s.ar_mssd - 0.9).abs() < 1e-15 && (s.ar_mspd - 0.9).abs() < 1e-15 && (s.ar_vsd - 0.9).abs() < 1e-15);
        assert!(average_recall(&[], &th, &d, 640).is_err());
        assert!(average_recall(&[record(0.0, 0.0, vec![0.0; 3])], &th, &d, 640).is_err());
    }

    #[test]
    fn csv_and_json() {
        let th = MetricThresholds::default();
        let recs = vec![record(0.01, 3.5, (0..10).map(|i| i as f64 / 10.0).collect()), EvalRecord::missing(4, 2, None, 10)];
        let text = write_results_csv(&recs, &th.vsd_taus);
        let back = read_results_csv(&text, &th.vsd_taus).unwrap();
        assert_eq!(back, recs);
        assert!(text.lines().nth(2).unwrap().starts_with("4,2,inf,inf,1,"));
        let j = summary_json(&ArSummary { ar_vsd: 0.5, ar_mssd: 0.25, ar_mspd: 0.75, ar: 0.5 });
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["AR_vsd"], 0.5);
        assert_eq!(v["AR"], 0.5);
        assert_eq!(v.as_object().unwrap().len(), 4);
    }

    proptest! {
        #[test]
        fn lowering_an_error_never_lowers_recall(
            errs in prop::collection::vec((0.0f64..0.15, 0.0f64..60.0, 0.0f64..1.0), 1..12),
            pick in any::<prop::sample::Index>(),
            factor in 0.0f64..1.0,
        ) {
            let th = MetricThresholds::default();
            let d = BTreeMap::from([(1, 0.2)]);
            let recs: Vec<EvalRecord> = errs.iter().map(|&(a, b, c)| record(a, b, vec![c; 10])).collect();
            let before = average_recall(&recs, &th, &d, 640).unwrap();
            let mut lowered = recs.clone();
            let i = pick.index(lowered.len());
            lowered[i].e_mssd *= factor;
            lowered[i].e_mspd *= factor;
            lowered[i].e_vsd.iter_mut().for_each(|e| *e *= factor);
            let after = average_recall(&lowered, &th, &d, 640).unwrap();
            prop_assert!(after.ar >= before.ar && after.ar_vsd >= before.ar_vsd);
            prop_assert!(after.ar_mssd >= before.ar_mssd && after.ar_mspd >= before.ar_mspd);
        }
    }
}
