//! Pose-error targets, the selection loss, Adam, color jitter and the
//! training loop.

mod adam;
mod fit;
mod jitter;

pub use adam::{Adam, AdamConfig};
pub use fit::{fit, read_log, write_log, FitOutput, LogRow, ObservationSource, TrainConfig, TrainSample};
pub use jitter::{color_jitter, ColorPerturbation, JitterFactors};

use rayon::prelude::*;

use crate::geom::{KdTree3, RigidTransform, Vec3};
use crate::hypo::PoseHypothesis;
use crate::objmodel::ObjectModel;

/// Floor inside the log so a perfect pose has a finite target (meters).
pub const EPS0: f64 = 1e-4;

/// Mean distance between corresponding model points under the two poses.
pub fn add_error(est: &RigidTransform, gt: &RigidTransform, points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| (est.apply(p) - gt.apply(p)).norm()).sum::<f64>() / points.len() as f64
}

/// Ground-truth-posed points in a tree, for repeated ADD-S queries.
pub struct AddSIndex {
    tree: KdTree3,
}

impl AddSIndex {
    pub fn new(gt: &RigidTransform, points: &[Vec3]) -> Self {
        let posed: Vec<Vec3> = points.iter().map(|p| gt.apply(p)).collect();
        Self { tree: KdTree3::new(&posed) }
    }

    pub fn error(&self, est: &RigidTransform, points: &[Vec3]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        points
            .iter()
            .map(|p| self.tree.nearest(&est.apply(p)).map_or(0.0, |(_, d)| d))
            .sum::<f64>()
            / points.len() as f64
    }
}

/// Mean distance from each estimated point to the nearest ground-truth point.
pub fn add_s_error(est: &RigidTransform, gt: &RigidTransform, points: &[Vec3]) -> f64 {
    AddSIndex::new(gt, points).error(est, points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisError {
    pub add: f64,
    /// `ln(add + EPS0)`, the training target.
    pub eps: f64,
    pub symmetric_used: bool,
}

/// ADD-S for symmetric models, ADD otherwise, with the log target.
pub fn hypothesis_errors(hyps: &[PoseHypothesis], gt: &RigidTransform, model: &ObjectModel) -> Vec<HypothesisError> {
    let pts = &model.cloud.positions;
    let index = model.is_symmetric.then(|| AddSIndex::new(gt, pts));
    hyps.par_iter()
        .map(|h| {
            let add = match &index {
                Some(ix) => ix.error(&h.transform, pts),
                None => add_error(&h.transform, gt, pts),
            };
            HypothesisError {
                add,
                eps: (add + EPS0).ln(),
                symmetric_used: index.is_some(),
            }
        })
        .collect()
}

/// Expected error under `softmax(scores)` and its gradient
/// `p_i (eps_i − L)`. Entries scored `−∞` get probability and gradient 0;
/// `None` when nothing is scorable.
pub fn selection_loss(scores: &[f64], errors: &[f64]) -> Option<(f64, Vec<f64>)> {
    assert_eq!(scores.len(), errors.len(), "one error per score");
    let max = scores.iter().copied().filter(|s| s.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / z).collect();
    let loss: f64 = p.iter().zip(errors).filter(|(q, _)| **q > 0.0).map(|(q, e)| q * e).sum();
    let grad = p.iter().zip(errors).map(|(q, e)| if *q > 0.0 { q * (e - loss) } else { 0.0 }).collect();
    Some((loss, grad))
}

/// `softmax` over finite scores; `−∞` entries get 0.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().filter(|s| s.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let w: Vec<f64> = scores.iter().map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypo::HypothesisSource;
    use crate::objmodel::{prepare_model, PrepareConfig, SymmetrySpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let t = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.3..0.9));
        RigidTransform::from_translation(t).compose(&RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..3.1)))
    }

    fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))).collect()
    }

    #[test]
    fn add_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = points(&mut rng, 300);
        let gt = random_pose(&mut rng);
        assert_eq!(add_error(&gt, &gt, &pts), 0.0);
        let shifted = RigidTransform::from_translation(Vec3::new(0.01, 0.0, 0.0)).compose(&gt);
        assert!((add_error(&shifted, &gt, &pts) - 0.01).abs() < 1e-15);
        for _ in 0..20 {
            let est = random_pose(&mut rng);
            let mut sum = 0.0;
            for p in &pts {
                let a = est.rotation * p + est.translation;
                let b = gt.rotation * p + gt.translation;
                sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
            }
            assert!((add_error(&est, &gt, &pts) - sum / 300.0).abs() < 1e-12);
        }
    }

    #[test]
    fn add_s_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = points(&mut rng, 200);
        let gt = random_pose(&mut rng);
        assert_eq!(add_s_error(&gt, &gt, &pts), 0.0);
        for _ in 0..1000 {
            let est = random_pose(&mut rng);
            assert!(add_s_error(&est, &gt, &pts) <= add_error(&est, &gt, &pts) + 1e-15);
        }
        // Brute-force nearest neighbor oracle.
        let est = random_pose(&mut rng);
        let posed: Vec<Vec3> = pts.iter().map(|p| gt.apply(p)).collect();
        let brute = pts
            .iter()
            .map(|p| posed.iter().map(|q| (est.apply(p) - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / pts.len() as f64;
        assert!((add_s_error(&est, &gt, &pts) - brute).abs() < 1e-12);
    }

    #[test]
    fn cylinder_spin_is_invisible_to_add_s() {
        let cat = crate::shapes::catalog();
        let cyl = cat.iter().find(|c| c.name == "bottle").unwrap();
        let m = prepare_model(1, &cyl.mesh, &cyl.symmetry, &PrepareConfig::default()).unwrap();
        let axis = Vec3::from(cyl.symmetry.axis);
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.6));
        let est = gt.compose(&RigidTransform::from_axis_angle(&axis.normalize(), 0.9));
        let adds = add_s_error(&est, &gt, &m.cloud.positions);
        assert!(adds < 0.007, "{adds}");
        assert!(add_error(&est, &gt, &m.cloud.positions) > 5.0 * adds);
    }

    #[test]
    fn errors_follow_symmetry_flag() {
        let cat = crate::shapes::catalog();
        let m = prepare_model(2, &cat[1].mesh, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_pose(&mut rng);
        let hyps: Vec<PoseHypothesis> = std::iter::once(gt)
            .chain((0..10).map(|_| random_pose(&mut rng)))
            .map(|t| PoseHypothesis::new(t, HypothesisSource::Ppf, 0.0))
            .collect();
        let e = hypothesis_errors(&hyps, &gt, &m);
        assert_eq!(e[0].eps, EPS0.ln());
        for (h, err) in hyps.iter().zip(&e) {
            let add = add_error(&h.transform, &gt, &m.cloud.positions);
            assert_eq!(err.add, add);
            assert_eq!(err.eps, (add + EPS0).ln());
            assert!(!err.symmetric_used);
            assert!(err.eps >= e[0].eps);
        }
        let mut sym = m.clone();
        sym.is_symmetric = true;
        let e = hypothesis_errors(&hyps, &gt, &sym);
        assert!(e.iter().all(|x| x.symmetric_used));
        assert_eq!(e[1].add, add_s_error(&hyps[1].transform, &gt, &m.cloud.positions));
    }

    #[test]
    fn loss_special_cases() {
        let (l, g) = selection_loss(&[0.3; 4], &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((l - 3.0).abs() < 1e-15);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        let (l, g) = selection_loss(&[7.0], &[-2.5]).unwrap();
        assert_eq!((l, g), (-2.5, vec![0.0]));
        assert!(selection_loss(&[f64::NEG_INFINITY; 2], &[1.0, 2.0]).is_none());
        let (l, g) = selection_loss(&[0.0, f64::NEG_INFINITY], &[1.0, 9.0]).unwrap();
        assert_eq!((l, g), (1.0, vec![0.0, 0.0]));
    }

    /// Direct softmax expectation without max subtraction.
    fn naive_loss(s: &[f64], e: &[f64]) -> f64 {
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        s.iter().zip(e).map(|(v, x)| v.exp() / z * x).sum()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let e: Vec<f64> = (0..10).map(|_| rng.random_range(-9.0..0.0)).collect();
            let (l, g) = selection_loss(&s, &e).unwrap();
            assert!((l - naive_loss(&s, &e)).abs() < 1e-12);
            for i in 0..10 {
                let central = |h: f64| {
                    let mut sp = s.clone();
                    sp[i] += h;
                    let mut sm = s.clone();
                    sm[i] -= h;
                    (naive_loss(&sp, &e) - naive_loss(&sm, &e)) / (2.0 * h)
                };
                // Richardson extrapolation removes the O(h²) term.
                let num = (4.0 * central(5e-5) - central(1e-4)) / 3.0;
                assert!((num - g[i]).abs() < 1e-9, "{num} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn loss_is_bounded_and_shift_invariant(
            s in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Vec<f64> = s.iter().map(|_| rng.random_range(-10.0..2.0)).collect();
            let (l, g) = selection_loss(&s, &e).unwrap();
            let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= l && l <= hi + 1e-12);
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let (l2, g2) = selection_loss(&shifted, &e).unwrap();
            prop_assert!((l - l2).abs() < 1e-9);
            for (a, b) in g.iter().zip(&g2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            prop_assert_eq!(argmax(&s), argmax(&shifted));
        }

        #[test]
        fn add_triangle_inequality(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = points(&mut rng, 50);
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            prop_assert!(add_error(&a, &b, &pts) <= add_error(&a, &c, &pts) + add_error(&c, &b, &pts) + 1e-12);
        }
    }
}
