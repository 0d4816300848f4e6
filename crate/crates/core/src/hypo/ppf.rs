use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Rotation3;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{KdTree3, PointCloud, RigidTransform, Vec3};

pub type PpfKey = [u32; 4];

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Continuous pair feature `(‖d‖, ∠(n1,d), ∠(n2,d), ∠(n1,n2))`; `None` for coincident points.
pub fn ppf_angles(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<[f64; 4]> {
    let d = p2 - p1;
    let len = d.norm();
    if len < 1e-12 {
        return None;
    }
    Some([len, angle_between(n1, &d), angle_between(n2, &d), angle_between(n1, n2)])
}

/// Quantized pair feature.
pub fn ppf_feature(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3, dist_step: f64, angle_step: f64) -> Option<PpfKey> {
    let f = ppf_angles(p1, n1, p2, n2)?;
    Some([
        (f[0] / dist_step) as u32,
        (f[1] / angle_step) as u32,
        (f[2] / angle_step) as u32,
        (f[3] / angle_step) as u32,
    ])
}

/// Transform taking `p` to the origin and `n` onto `+x`.
fn canonical_frame(p: &Vec3, n: &Vec3) -> RigidTransform {
    let r = Rotation3::rotation_between(n, &Vec3::x())
        .map(|r| r.into_inner())
        .unwrap_or_else(|| *Rotation3::from_axis_angle(&Vec3::z_axis(), PI).matrix());
    RigidTransform::new(r, -(r * p))
}

/// Angle of `q` about `+x` after canonicalization, in `[−π, π)`.
fn planar_angle(frame: &RigidTransform, q: &Vec3) -> f64 {
    let c = frame.apply(q);
    wrap_angle(c.z.atan2(c.y))
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpfEntry {
    pub reference: u32,
    pub paired: u32,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct PpfTable {
    pub map: HashMap<PpfKey, Vec<PpfEntry>>,
    pub dist_step: f64,
    pub angle_step: f64,
    pub diameter: f64,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl PpfTable {
    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup(&self, key: &PpfKey) -> &[PpfEntry] {
        self.map.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    fn key(&self, p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<PpfKey> {
        ppf_feature(p1, n1, p2, n2, self.dist_step, self.angle_step)
    }
}

/// Hashes all ordered pairs of `cloud`. `dist_step` is a fraction of `diameter`.
pub fn build_ppf_table(cloud: &PointCloud, diameter: f64, dist_step: f64, angle_step: f64) -> Result<PpfTable> {
    if !(dist_step > 0.0 && angle_step > 0.0 && diameter > 0.0) {
        return Err(Error::InvalidInput("ppf steps and diameter must be positive".into()));
    }
    let pts = &cloud.positions;
    let nrm = &cloud.normals;
    let step = dist_step * diameter;
    let rows: Vec<Vec<(PpfKey, PpfEntry)>> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let frame = canonical_frame(&pts[i], &nrm[i]);
            (0..pts.len())
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let key = ppf_feature(&pts[i], &nrm[i], &pts[j], &nrm[j], step, angle_step)?;
                    Some((
                        key,
                        PpfEntry {
                            reference: i as u32,
                            paired: j as u32,
                            alpha: planar_angle(&frame, &pts[j]),
                        },
                    ))
                })
                .collect()
        })
        .collect();
    let mut map: HashMap<PpfKey, Vec<PpfEntry>> = HashMap::new();
    for row in rows {
        for (k, e) in row {
            map.entry(k).or_default().push(e);
        }
    }
    Ok(PpfTable {
        map,
        dist_step: step,
        angle_step,
        diameter,
        points: pts.clone(),
        normals: nrm.clone(),
    })
}

/// Votes over (model reference point, rotation about the normal) for a
/// sampled subset of scene reference points; emits each reference point's
/// peak and every bin within 90% of it.
pub fn ppf_vote(
    scene: &PointCloud,
    table: &PpfTable,
    ref_rate: f64,
    rng: &mut impl Rng,
) -> Vec<(RigidTransform, f64)> {
    if scene.is_empty() || table.points.is_empty() || ref_rate <= 0.0 {
        return Vec::new();
    }
    let n_ref = ((scene.len() as f64 * ref_rate.min(1.0)).round() as usize).clamp(1, scene.len());
    let mut refs = if n_ref == scene.len() {
        (0..n_ref).collect()
    } else {
        rand::seq::index::sample(rng, scene.len(), n_ref).into_vec()
    };
    refs.sort_unstable();
    let tree = KdTree3::new(&scene.positions);
    let n_alpha = (2.0 * PI / table.angle_step).ceil() as usize;
    let alpha_step = 2.0 * PI / n_alpha as f64;
    let n_model = table.points.len();
    let model_frames: Vec<RigidTransform> = (0..n_model)
        .map(|i| canonical_frame(&table.points[i], &table.normals[i]))
        .collect();

    let per_ref: Vec<Vec<(RigidTransform, f64)>> = refs
        .par_iter()
        .map(|&r| {
            let (pr, nr) = (scene.positions[r], scene.normals[r]);
            let frame = canonical_frame(&pr, &nr);
            let mut acc = vec![0u32; n_model * n_alpha];
            for j in tree.within(&pr, table.diameter) {
                if j == r {
                    continue;
                }
                let Some(key) = table.key(&pr, &nr, &scene.positions[j], &scene.normals[j]) else {
                    continue;
                };
                let entries = table.lookup(&key);
                if entries.is_empty() {
                    continue;
                }
                let alpha_s = planar_angle(&frame, &scene.positions[j]);
                for e in entries {
                    let a = wrap_angle(alpha_s - e.alpha);
                    let bin = (((a + PI) / alpha_step) as usize).min(n_alpha - 1);
                    acc[e.reference as usize * n_alpha + bin] += 1;
                }
            }
            let max = acc.iter().copied().max().unwrap_or(0);
            if max == 0 {
                return Vec::new();
            }
            let floor = 0.9 * max as f64;
            let frame_inv = frame.inverse();
            acc.iter()
                .enumerate()
                .filter(|(_, &v)| v as f64 >= floor)
                .map(|(idx, &v)| {
                    let (m, bin) = (idx / n_alpha, idx % n_alpha);
                    let alpha = -PI + (bin as f64 + 0.5) * alpha_step;
                    let rx = RigidTransform::rot_x(alpha);
                    let pose = frame_inv.compose(&rx).compose(&model_frames[m]);
                    (pose, v as f64)
                })
                .collect()
        })
        .collect();
    per_ref.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_geodesic;
    use crate::objmodel::{discretize_symmetries, prepare_model, PrepareConfig, SymmetrySpec};
    use crate::shapes;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn acos_oracle(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> [f64; 4] {
        let d = p2 - p1;
        let l = d.norm();
        let ang = |a: &Vec3, b: &Vec3| (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos();
        [l, ang(n1, &d), ang(n2, &d), ang(n1, n2)]
    }

    #[test]
    fn feature_examples() {
        let z = Vec3::z();
        let f = ppf_angles(&Vec3::zeros(), &z, &Vec3::x(), &z).unwrap();
        assert!((f[1] - PI / 2.0).abs() < 1e-15 && (f[2] - PI / 2.0).abs() < 1e-15 && f[3] == 0.0);
        let f = ppf_angles(&Vec3::zeros(), &Vec3::x(), &Vec3::x(), &-Vec3::x()).unwrap();
        assert!(f[1].abs() < 1e-15 && (f[2] - PI).abs() < 1e-15 && (f[3] - PI).abs() < 1e-15);
        assert!(ppf_feature(&Vec3::x(), &z, &Vec3::x(), &z, 0.01, 0.2).is_none());
    }

    proptest! {
        #[test]
        fn feature_matches_acos(v in prop::array::uniform12(-1.0f64..1.0)) {
            let p1 = Vec3::new(v[0], v[1], v[2]);
            let p2 = Vec3::new(v[3], v[4], v[5]);
            let n1 = Vec3::new(v[6], v[7], v[8]);
            let n2 = Vec3::new(v[9], v[10], v[11]);
            prop_assume!((p2 - p1).norm() > 1e-3 && n1.norm() > 0.1 && n2.norm() > 0.1);
            let (n1, n2) = (n1.normalize(), n2.normalize());
            let f = ppf_angles(&p1, &n1, &p2, &n2).unwrap();
            let o = acos_oracle(&p1, &n1, &p2, &n2);
            for k in 0..4 {
                prop_assert!((f[k] - o[k]).abs() < 1e-7, "{k}: {} vs {}", f[k], o[k]);
                prop_assert!(k == 0 || (0.0..=PI).contains(&f[k]));
            }
        }
    }

    fn tiny_cloud() -> PointCloud {
        let mut c = PointCloud::default();
        c.push(Vec3::zeros(), Vec3::z(), [0.0; 3]);
        c.push(Vec3::new(0.05, 0.0, 0.0), Vec3::y(), [0.0; 3]);
        c.push(Vec3::new(0.0, 0.07, 0.01), Vec3::x(), [0.0; 3]);
        c
    }

    #[test]
    fn three_points_give_six_entries() {
        let t = build_ppf_table(&tiny_cloud(), 0.1, 0.05, PI / 15.0).unwrap();
        assert_eq!(t.len(), 6);
        for e in t.map.values().flatten() {
            assert!((e.reference as usize) < 3 && (e.paired as usize) < 3);
            assert!((-PI..PI).contains(&e.alpha));
        }
    }

    #[test]
    fn own_pair_is_found() {
        let cat = shapes::catalog();
        let m = prepare_model(5, &cat[4].mesh, &SymmetrySpec::none(), &PrepareConfig { max_points: 300, ..Default::default() }).unwrap();
        let t = build_ppf_table(&m.cloud, m.diameter, 0.05, PI / 15.0).unwrap();
        let c = &m.cloud;
        for (i, j) in [(0usize, 1usize), (10, 200), (299, 3)] {
            let k = t.key(&c.positions[i], &c.normals[i], &c.positions[j], &c.normals[j]).unwrap();
            assert!(t.lookup(&k).iter().any(|e| e.reference as usize == i && e.paired as usize == j));
        }
    }

    #[test]
    fn symmetric_model_feature_multiset_is_invariant() {
        let cat = shapes::catalog();
        let spec = cat[3].symmetry.clone();
        let m = prepare_model(4, &cat[3].mesh, &spec, &PrepareConfig { max_points: 200, ..Default::default() }).unwrap();
        // Quarter turn of a square pyramid is exact for a cloud symmetrized by the same turn.
        let syms = discretize_symmetries(&spec).unwrap();
        let mut base = m.cloud.clone();
        for s in &syms[1..] {
            for i in 0..m.cloud.len() {
                base.push(s.apply(&m.cloud.positions[i]), s.apply_vector(&m.cloud.normals[i]), m.cloud.colors_hsv[i]);
            }
        }
        let histogram = |c: &PointCloud| {
            let t = build_ppf_table(c, m.diameter, 0.05, PI / 15.0).unwrap();
            let mut h: Vec<(PpfKey, usize)> = t.map.iter().map(|(k, v)| (*k, v.len())).collect();
            h.sort();
            h
        };
        let h0 = histogram(&base);
        for s in &syms {
            let mut moved = PointCloud::default();
            for i in 0..base.len() {
                moved.push(s.apply(&base.positions[i]), s.apply_vector(&base.normals[i]), base.colors_hsv[i]);
            }
            let h1 = histogram(&moved);
            // Bin edges may flip a handful of pairs under floating-point rotation.
            let total: usize = h0.iter().map(|x| x.1).sum();
            let m0: HashMap<_, _> = h0.iter().copied().collect();
            let m1: HashMap<_, _> = h1.iter().copied().collect();
            let diff: usize = m0
                .keys()
                .chain(m1.keys())
                .collect::<std::collections::HashSet<_>>()
                .into_iter()
                .map(|k| m0.get(k).copied().unwrap_or(0).abs_diff(m1.get(k).copied().unwrap_or(0)))
                .sum();
            assert!(diff as f64 <= 1e-3 * total as f64, "{diff} of {total}");
        }
    }

    fn self_scene(model: &PointCloud, t: &RigidTransform) -> PointCloud {
        let mut s = PointCloud::default();
        for i in 0..model.len() {
            s.push(t.apply(&model.positions[i]), t.apply_vector(&model.normals[i]), model.colors_hsv[i]);
        }
        s
    }

    #[test]
    fn self_scene_recovers_pose() {
        let cat = shapes::catalog();
        let m = prepare_model(1, &cat[0].mesh, &SymmetrySpec::none(), &PrepareConfig { max_points: 400, ..Default::default() }).unwrap();
        let table = build_ppf_table(&m.cloud, m.diameter, 0.05, PI / 15.0).unwrap();
        let t = RigidTransform::from_axis_angle(&Vec3::new(0.3, -1.0, 0.4).normalize(), 1.1)
            .compose(&RigidTransform::from_translation(Vec3::new(0.02, 0.01, 0.5)));
        let scene = self_scene(&m.cloud, &t);
        let raw = ppf_vote(&scene, &table, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let best = raw
            .iter()
            .map(|(p, _)| (rotation_geodesic(&p.rotation, &t.rotation), (p.translation - t.translation).norm()))
            .filter(|(r, d)| *r < 5f64.to_radians() && *d < 0.05 * m.diameter)
            .count();
        assert!(best > 0);
        let self_peak = raw.iter().map(|r| r.1).fold(0.0, f64::max);

        // A bare plane matches far fewer pairs.
        let mut plane = PointCloud::default();
        for i in 0..30 {
            for j in 0..30 {
                plane.push(Vec3::new(i as f64 * 0.005, j as f64 * 0.005, 0.5), -Vec3::z(), [0.0; 3]);
            }
        }
        let mug = prepare_model(6, &cat[5].mesh, &SymmetrySpec::none(), &PrepareConfig { max_points: 400, ..Default::default() }).unwrap();
        let mug_table = build_ppf_table(&mug.cloud, mug.diameter, 0.05, PI / 15.0).unwrap();
        let mug_scene = self_scene(&mug.cloud, &t);
        let mug_self = ppf_vote(&mug_scene, &mug_table, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let mug_peak = mug_self.iter().map(|r| r.1).fold(0.0, f64::max);
        let plane_raw = ppf_vote(&plane, &mug_table, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let plane_peak = plane_raw.iter().map(|r| r.1).fold(0.0, f64::max);
        assert!(plane_peak < 0.5 * mug_peak, "{plane_peak} vs {mug_peak}");
        assert!(self_peak > 0.0);

        assert!(ppf_vote(&scene, &table, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    #[test]
    fn canonical_frame_handles_antiparallel_normal() {
        let f = canonical_frame(&Vec3::new(1.0, 2.0, 3.0), &-Vec3::x());
        assert!((f.apply_vector(&-Vec3::x()) - Vec3::x()).norm() < 1e-12);
        assert!(f.apply(&Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        let g = canonical_frame(&Vec3::zeros(), &Vec3::new(0.2, -0.5, 0.7).normalize());
        assert!((g.apply_vector(&Vec3::new(0.2, -0.5, 0.7).normalize()) - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
