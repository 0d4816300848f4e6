use std::collections::HashMap;

use rand::Rng;

use super::{circular_hue_mean, Vec3};
use crate::error::{Error, Result};

/// Oriented, colored point cloud. Colors are HSV in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors_hsv: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>, colors_hsv: Vec<[f64; 3]>) -> Result<Self> {
        let cloud = Self {
            positions,
            normals,
            colors_hsv,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.normals.len() != n || self.colors_hsv.len() != n {
            return Err(Error::InvalidInput(format!(
                "point cloud arrays disagree: {} positions, {} normals, {} colors",
                n,
                self.normals.len(),
                self.colors_hsv.len()
            )));
        }
        if let Some(i) = self.normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-5) {
            return Err(Error::InvalidInput(format!("normal {i} is not unit length")));
        }
        if let Some(i) = self
            .colors_hsv
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidInput(format!("color {i} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn push(&mut self, p: Vec3, n: Vec3, hsv: [f64; 3]) {
        self.positions.push(p);
        self.normals.push(n);
        self.colors_hsv.push(hsv);
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
            colors_hsv: indices.iter().map(|&i| self.colors_hsv[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        if self.is_empty() {
            return Vec3::zeros();
        }
        self.positions.iter().sum::<Vec3>() / self.len() as f64
    }
}

#[derive(Default)]
struct VoxelAcc {
    first: usize,
    count: usize,
    position: Vec3,
    normal: Vec3,
    sat: f64,
    val: f64,
}

fn voxel_key(p: &Vec3, leaf: f64) -> (i64, i64, i64) {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Keeps one point per occupied voxel of edge `leaf`: the centroid of the
/// voxel's points with their renormalized mean normal and mean color (hue
/// averaged on the circle). Output follows first-occupancy order.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0) {
        return Err(Error::InvalidInput(format!("voxel leaf must be positive, got {leaf}")));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut accs: Vec<VoxelAcc> = Vec::new();
    let mut members: Vec<usize> = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions.iter().enumerate() {
        let slot = *slots.entry(voxel_key(p, leaf)).or_insert_with(|| {
            accs.push(VoxelAcc {
                first: i,
                ..Default::default()
            });
            accs.len() - 1
        });
        let acc = &mut accs[slot];
        acc.count += 1;
        acc.position += p;
        acc.normal += cloud.normals[i];
        acc.sat += cloud.colors_hsv[i][1];
        acc.val += cloud.colors_hsv[i][2];
        members.push(slot);
    }
    // Hue needs all members of a voxel at once.
    let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); accs.len()];
    for (i, &s) in members.iter().enumerate() {
        by_slot[s].push(i);
    }
    let mut out = PointCloud::default();
    for (acc, idx) in accs.iter().zip(&by_slot) {
        let n = acc.count as f64;
        let normal = if acc.normal.norm() > 1e-12 {
            acc.normal.normalize()
        } else {
            cloud.normals[acc.first]
        };
        let hue = circular_hue_mean(idx.iter().map(|&i| (cloud.colors_hsv[i][0], 1.0)))
            .unwrap_or(cloud.colors_hsv[acc.first][0]);
        out.push(
            acc.position / n,
            normal,
            [hue, (acc.sat / n).clamp(0.0, 1.0), (acc.val / n).clamp(0.0, 1.0)],
        );
    }
    Ok(out)
}

/// RANSAC fit of the plane with the most points within `threshold`;
/// `None` when fewer than `min_inliers` points support any sampled plane.
pub fn dominant_plane(cloud: &PointCloud, threshold: f64, iterations: usize, min_inliers: usize, rng: &mut impl Rng) -> Option<(Vec3, f64)> {
    if cloud.len() < 3 {
        return None;
    }
    let mut best: Option<(Vec3, f64, usize)> = None;
    for _ in 0..iterations {
        let idx = rand::seq::index::sample(rng, cloud.len(), 3);
        let [a, b, c] = [0, 1, 2].map(|i| cloud.positions[idx.index(i)]);
        let n = (b - a).cross(&(c - a));
        if n.norm() < 1e-12 {
            continue;
        }
        let n = n.normalize();
        let d = -n.dot(&a);
        let count = cloud.positions.iter().filter(|p| (n.dot(p) + d).abs() < threshold).count();
        if best.is_none_or(|(_, _, c)| count > c) {
            best = Some((n, d, count));
        }
    }
    best.filter(|b| b.2 >= min_inliers).map(|(n, d, _)| (n, d))
}

/// Points farther than `threshold` from the plane `n·p + d = 0`.
pub fn remove_plane(cloud: &PointCloud, plane: (Vec3, f64), threshold: f64) -> PointCloud {
    let (n, d) = plane;
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (n.dot(&cloud.positions[i]) + d).abs() >= threshold)
        .collect();
    cloud.select(&keep)
}
