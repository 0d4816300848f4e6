use super::{fit_rigid, PoseHypothesis};
use crate::geom::{KdTree3, PointCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub hypothesis: PoseHypothesis,
    /// Trimmed RMS of the returned pose.
    pub rms: f64,
    pub iterations: usize,
    /// Set when there were too few correspondences to do anything.
    pub insufficient: bool,
}

const MIN_CORRESPONDENCES: usize = 10;

/// Median nearest-neighbor distance within `cloud`.
pub fn median_spacing(cloud: &PointCloud, tree: &KdTree3) -> f64 {
    let mut d: Vec<f64> = cloud
        .positions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            // Nearest other point: search a small neighborhood, skip self.
            let mut r = 1e-3;
            loop {
                let nb = tree.within(p, r);
                if let Some(m) = nb
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (cloud.positions[j] - p).norm())
                    .min_by(f64::total_cmp)
                {
                    return Some(m);
                }
                if r > 10.0 || nb.len() == cloud.len() {
                    return None;
                }
                r *= 2.0;
            }
        })
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, f64::total_cmp).1
}

struct Matches {
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    rms: f64,
}

/// HSV as a point in the color cone, so hue distance is circular and
/// fades with saturation.
fn cone(hsv: &[f64; 3]) -> Vec3 {
    let a = hsv[0] * std::f64::consts::TAU;
    Vec3::new(hsv[1] * a.cos(), hsv[1] * a.sin(), hsv[2])
}

/// Nearest scene point within `max_dist`; with a color weight, the point
/// within `max_dist` minimizing `d² + (w·Δc)²`. `rms` is over that cost.
fn correspond(model: &PointCloud, pose: &RigidTransform, scene: &PointCloud, tree: &KdTree3, max_dist: f64, color_weight: f64) -> Matches {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut sq = 0.0;
    for (i, p) in model.positions.iter().enumerate() {
        let q = pose.apply(p);
        let hit = if color_weight > 0.0 {
            let c = cone(&model.colors_hsv[i]);
            tree.within(&q, max_dist)
                .into_iter()
                .map(|j| {
                    let dc = (cone(&scene.colors_hsv[j]) - c).norm() * color_weight;
                    (j, (scene.positions[j] - q).norm_squared() + dc * dc)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        } else {
            tree.nearest_within(&q, max_dist).filter(|(_, d)| *d <= max_dist).map(|(j, d)| (j, d * d))
        };
        if let Some((j, cost)) = hit {
            src.push(*p);
            dst.push(scene.positions[j]);
            sq += cost;
        }
    }
    let rms = if src.is_empty() { f64::INFINITY } else { (sq / src.len() as f64).sqrt() };
    Matches { src, dst, rms }
}

/// Point-to-point ICP. Correspondences farther than `2.5 ×` the scene's
/// median spacing are dropped; a step that would raise the trimmed RMS is
/// rejected and ends the loop.
pub fn icp_refine(
    model: &PointCloud,
    scene: &PointCloud,
    scene_tree: &KdTree3,
    scene_spacing: f64,
    init: &PoseHypothesis,
    max_iter: usize,
    tol: f64,
) -> IcpResult {
    icp_refine_colored(model, scene, scene_tree, scene_spacing, init, max_iter, tol, 0.0)
}

/// [`icp_refine`] with correspondences chosen by distance plus
/// `color_weight` (meters per unit of color-cone distance) times color
/// difference; the RMS then includes the color term.
#[allow(clippy::too_many_arguments)]
pub fn icp_refine_colored(
    model: &PointCloud,
    scene: &PointCloud,
    scene_tree: &KdTree3,
    scene_spacing: f64,
    init: &PoseHypothesis,
    max_iter: usize,
    tol: f64,
    color_weight: f64,
) -> IcpResult {
    let max_dist = 2.5 * scene_spacing;
    let mut pose = init.transform;
    let mut cur = correspond(model, &pose, scene, scene_tree, max_dist, color_weight);
    if cur.src.len() < MIN_CORRESPONDENCES {
        return IcpResult {
            hypothesis: *init,
            rms: cur.rms,
            iterations: 0,
            insufficient: true,
        };
    }
    let mut iterations = 0;
    for _ in 0..max_iter {
        let Some(next_pose) = fit_rigid(&cur.src, &cur.dst) else {
            break;
        };
        let next = correspond(model, &next_pose, scene, scene_tree, max_dist, color_weight);
        if next.src.len() < MIN_CORRESPONDENCES || next.rms > cur.rms {
            break;
        }
        iterations += 1;
        let change = cur.rms - next.rms;
        pose = next_pose;
        cur = next;
        if change < tol {
            break;
        }
    }
    IcpResult {
        hypothesis: PoseHypothesis {
            transform: pose,
            ..*init
        },
        rms: cur.rms,
        iterations,
        insufficient: false,
    }
}
