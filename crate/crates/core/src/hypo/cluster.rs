use nalgebra::{Quaternion, UnitQuaternion};

use super::{HypothesisSource, PoseHypothesis};
use crate::error::{Error, Result};
use crate::geom::{rotation_geodesic, RigidTransform, Vec3};

struct Cluster {
    seed: RigidTransform,
    members: Vec<usize>,
    votes: f64,
}

/// Greedy agglomeration in descending vote order: each raw pose joins the
/// first cluster whose seed is within both thresholds. Returns the top `k`
/// clusters by summed votes with vote-weighted mean poses.
pub fn cluster_poses(
    raw: &[(RigidTransform, f64)],
    trans_thresh: f64,
    rot_thresh: f64,
    k: usize,
) -> Result<Vec<PoseHypothesis>> {
    if !(trans_thresh > 0.0 && rot_thresh > 0.0) {
        return Err(Error::InvalidInput("cluster thresholds must be positive".into()));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].1.total_cmp(&raw[a].1).then(a.cmp(&b)));
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in order {
        let (pose, votes) = &raw[i];
        let hit = clusters.iter_mut().find(|c| {
            (c.seed.translation - pose.translation).norm() < trans_thresh
                && rotation_geodesic(&c.seed.rotation, &pose.rotation) < rot_thresh
        });
        match hit {
            Some(c) => {
                c.members.push(i);
                c.votes += votes;
            }
            None => clusters.push(Cluster {
                seed: *pose,
                members: vec![i],
                votes: *votes,
            }),
        }
    }
    // Stable: ties keep creation order.
    clusters.sort_by(|a, b| b.votes.total_cmp(&a.votes));
    Ok(clusters
        .iter()
        .take(k)
        .map(|c| PoseHypothesis::new(average_pose(raw, c), HypothesisSource::Ppf, c.votes))
        .collect())
}

fn average_pose(raw: &[(RigidTransform, f64)], c: &Cluster) -> RigidTransform {
    let q0 = c.seed.quaternion();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut t = Vec3::zeros();
    let mut w_sum = 0.0;
    for &m in &c.members {
        let (pose, votes) = &raw[m];
        // Equal weights when every member has zero votes.
        let w = if c.votes > 0.0 { *votes } else { 1.0 };
        let mut qm = *pose.quaternion().quaternion();
        if qm.dot(q0.quaternion()) < 0.0 {
            qm = -qm;
        }
        q += qm * w;
        t += pose.translation * w;
        w_sum += w;
    }
    if w_sum <= 0.0 || q.norm() < 1e-12 {
        return c.seed;
    }
    RigidTransform::from_quaternion(&UnitQuaternion::from_quaternion(q), t / w_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(n²) restatement: scan sorted poses, compare to every earlier
    /// seed, assign to the first that is close enough.
    fn reference_assignment(raw: &[(RigidTransform, f64)], tt: f64, rt: f64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..raw.len()).collect();
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                let (x, y) = (idx[a], idx[b]);
                if raw[y].1 > raw[x].1 || (raw[y].1 == raw[x].1 && y < x) {
                    idx.swap(a, b);
                }
            }
        }
        let mut seeds: Vec<usize> = Vec::new();
        let mut label = vec![usize::MAX; raw.len()];
        for &i in &idx {
            let mut found = None;
            for (s, &seed) in seeds.iter().enumerate() {
                let dt = (raw[seed].0.translation - raw[i].0.translation).norm();
                let r = raw[seed].0.rotation.transpose() * raw[i].0.rotation;
                let dr = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
                if dt < tt && dr < rt {
                    found = Some(s);
                    break;
                }
            }
            label[i] = match found {
                Some(s) => s,
                None => {
                    seeds.push(i);
                    seeds.len() - 1
                }
            };
        }
        label
    }

    #[test]
    fn identical_poses_merge() {
        let p = RigidTransform::rot_y(0.3);
        let out = cluster_poses(&[(p, 2.0), (p, 3.0)], 0.01, 0.2, 100).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].prior_score, 5.0);
        assert!((out[0].transform.rotation - p.rotation).norm() < 1e-12);
    }

    #[test]
    fn opposite_poses_stay_apart() {
        let out = cluster_poses(
            &[(RigidTransform::identity(), 1.0), (RigidTransform::rot_z(std::f64::consts::PI), 1.0)],
            0.01,
            0.2,
            100,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(cluster_poses(&[], 0.0, 0.2, 1).is_err());
    }

    #[test]
    fn matches_reference_clustering() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<(RigidTransform, f64)> = (0..500)
            .map(|_| {
                let axis = Vec3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1).normalize();
                let t = Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.5);
                let votes = rng.random_range(1..20) as f64;
                (
                    RigidTransform::new(RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..1.0)).rotation, t),
                    votes,
                )
            })
            .collect();
        let (tt, rt) = (0.03, 0.3);
        let labels = reference_assignment(&raw, tt, rt);
        let n_clusters = labels.iter().max().unwrap() + 1;
        let out = cluster_poses(&raw, tt, rt, usize::MAX).unwrap();
        assert_eq!(out.len(), n_clusters);
        let mut sums = vec![0.0; n_clusters];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += raw[i].1;
        }
        let mut sums_sorted = sums.clone();
        sums_sorted.sort_by(|a, b| b.total_cmp(a));
        let got: Vec<f64> = out.iter().map(|h| h.prior_score).collect();
        assert_eq!(got, sums_sorted);
        let capped = cluster_poses(&raw, tt, rt, 7).unwrap();
        assert_eq!(capped.len(), 7.min(n_clusters));
        for h in &out {
            assert!(h.transform.is_valid(1e-9));
        }
    }
}
