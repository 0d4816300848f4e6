use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{observation_from_rgbd, rasterize, DistanceMap, Lighting, Observation, RenderItem};
use crate::error::{Error, Result};
use crate::geom::{hsv_to_rgb, CameraIntrinsics, Mat3, RigidTransform, Vec3};
use crate::objmodel::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Table with randomly colored checker cells.
    Checkerboard,
    /// Uniform gray table.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Camera distance to the look-at point, meters.
    pub camera_distance: [f64; 2],
    /// Camera elevation above the table, degrees.
    pub elevation_deg: [f64; 2],
    /// Objects are dropped within this radius of the table center.
    pub placement_radius: f64,
    /// Probability that an object stands on its base instead of a random orientation.
    pub upright_prob: f64,
    /// Extra gap between bounding spheres, meters; negative values allow overlap.
    pub clearance: f64,
    pub max_attempts: usize,
    pub depth_noise: f64,
    pub color_noise: f64,
    pub lighting: bool,
    pub background: Background,
    pub table_size: f64,
    pub table_cell: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 159.5,
                cy: 119.5,
                width: 320,
                height: 240,
            },
            min_objects: 3,
            max_objects: 3,
            camera_distance: [0.45, 0.6],
            elevation_deg: [35.0, 70.0],
            placement_radius: 0.1,
            upright_prob: 0.6,
            clearance: -0.02,
            max_attempts: 50,
            depth_noise: 0.001,
            color_noise: 0.01,
            lighting: true,
            background: Background::Checkerboard,
            table_size: 1.2,
            table_cell: 0.04,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let bad = |m: &str| Err(Error::InvalidInput(format!("scene config: {m}")));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("need 1 <= min_objects <= max_objects");
        }
        if !(self.camera_distance[0] > 0.0 && self.camera_distance[0] <= self.camera_distance[1]) {
            return bad("camera_distance must be an increasing positive range");
        }
        if !(self.elevation_deg[0] > 0.0 && self.elevation_deg[0] <= self.elevation_deg[1] && self.elevation_deg[1] <= 90.0) {
            return bad("elevation_deg must be an increasing range within (0, 90]");
        }
        if !(0.0..=1.0).contains(&self.upright_prob) || self.depth_noise < 0.0 || self.color_noise < 0.0 {
            return bad("probabilities and noise levels must be non-negative");
        }
        if !(self.table_size > 0.0 && self.table_cell > 0.0) {
            return bad("table dimensions must be positive");
        }
        Ok(())
    }
}

/// A placed object with its camera-frame pose.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub object_id: u32,
    pub pose: RigidTransform,
    /// Share of the isolated footprint that is the nearest surface.
    pub visible_fraction: f64,
    pub isolated: DistanceMap,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub observation: Observation,
    pub objects: Vec<SceneObject>,
    /// Camera from world (table) frame.
    pub camera_pose: RigidTransform,
}

fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    // Uniform on SO(3) via a random unit quaternion.
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Camera placed on a sphere around `target`, looking at it with the image
/// `y` axis pointing down the table's `z`.
pub fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let f = (target - eye).normalize();
    let mut r = f.cross(&Vec3::z());
    if r.norm() < 1e-9 {
        r = Vec3::x();
    }
    let r = r.normalize();
    let d = f.cross(&r);
    let world_from_cam = Mat3::from_columns(&[r, d, f]);
    let rot = world_from_cam.transpose();
    RigidTransform::new(rot, -(rot * eye))
}

fn table_mesh(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<TriangleMesh> {
    let n = (cfg.table_size / cfg.table_cell).ceil() as usize;
    let half = n as f64 * cfg.table_cell / 2.0;
    let mut vertices = Vec::with_capacity(n * n * 4);
    let mut colors = Vec::with_capacity(n * n * 4);
    let mut faces = Vec::with_capacity(n * n * 2);
    for j in 0..n {
        for i in 0..n {
            let color = match cfg.background {
                Background::Checkerboard => {
                    let dark = (i + j) % 2 == 0;
                    let v = if dark { rng.random_range(0.25..0.45) } else { rng.random_range(0.55..0.8) };
                    hsv_to_rgb([rng.random(), rng.random_range(0.1..0.6), v])
                }
                Background::Plain => [0.5; 3],
            };
            let x0 = i as f64 * cfg.table_cell - half;
            let y0 = j as f64 * cfg.table_cell - half;
            let base = vertices.len() as u32;
            for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
                vertices.push(Vec3::new(x0 + dx * cfg.table_cell, y0 + dy * cfg.table_cell, 0.0));
                colors.push(Vec3::from(color));
            }
            faces.push([base, base + 1, base + 2]);
            faces.push([base, base + 2, base + 3]);
        }
    }
    let normals = vec![Vec3::z(); vertices.len()];
    TriangleMesh::new(vertices, Some(colors), faces, Some(normals))
}

/// Drops a random subset of `models` on a table, renders the frame and
/// records ground truth.
pub fn synthesize_scene(
    models: &[(u32, &TriangleMesh)],
    cfg: &SceneConfig,
    rng: &mut impl Rng,
) -> Result<SyntheticScene> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidInput("no models to place".into()));
    }
    let want = rng.random_range(cfg.min_objects..=cfg.max_objects).min(models.len());
    let chosen = rand::seq::index::sample(rng, models.len(), want).into_vec();

    // Placement in the table frame.
    let mut placed: Vec<(usize, RigidTransform, Vec3, f64)> = Vec::new();
    for &mi in &chosen {
        let mesh = models[mi].1;
        for _ in 0..cfg.max_attempts {
            let rot = if rng.random::<f64>() < cfg.upright_prob {
                RigidTransform::rot_z(rng.random_range(0.0..std::f64::consts::TAU)).rotation
            } else {
                random_rotation(rng)
            };
            let rotated: Vec<Vec3> = mesh.vertices.iter().map(|v| rot * v).collect();
            let min_z = rotated.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
            let r = cfg.placement_radius * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            let t = Vec3::new(r * th.cos(), r * th.sin(), -min_z);
            let center = rotated.iter().sum::<Vec3>() / rotated.len() as f64 + t;
            let radius = rotated
                .iter()
                .map(|v| (v + t - center).norm())
                .fold(0.0, f64::max);
            let free = placed
                .iter()
                .all(|(_, _, c, rad)| (center - c).norm() > radius + rad + cfg.clearance);
            if free {
                placed.push((mi, RigidTransform::new(rot, t), center, radius));
                break;
            }
        }
    }

    let dist = rng.random_range(cfg.camera_distance[0]..=cfg.camera_distance[1]);
    let elev = rng
        .random_range(cfg.elevation_deg[0]..=cfg.elevation_deg[1])
        .to_radians();
    let azim = rng.random_range(0.0..std::f64::consts::TAU);
    let target = Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), 0.02);
    let eye = target + Vec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin()) * dist;
    let cam = look_at(eye, target);

    let table = table_mesh(cfg, rng)?;
    let mut items = vec![RenderItem {
        mesh: &table,
        pose: cam,
        object_id: None,
    }];
    for (mi, pose, _, _) in &placed {
        items.push(RenderItem {
            mesh: models[*mi].1,
            pose: cam.compose(pose),
            object_id: Some(models[*mi].0),
        });
    }
    let light_dir: Vec3 = {
        let s: [f64; 3] = UnitSphere.sample(rng);
        // Keep the light roughly behind the camera.
        let v = Vec3::from(s) * 0.5 + Vec3::z();
        v.normalize()
    };
    let lighting = Lighting {
        direction: light_dir,
        ambient: 0.45,
    };
    let out = rasterize(&items, &cfg.intrinsics, cfg.lighting.then_some(&lighting));

    let mut depth = out.depth.clone();
    let mut rgb = out.rgb.clone();
    if cfg.depth_noise > 0.0 {
        let n = Normal::new(0.0, cfg.depth_noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + n.sample(rng)).max(1e-4);
        }
    }
    if cfg.color_noise > 0.0 {
        let n = Normal::new(0.0, cfg.color_noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for c in rgb.data.iter_mut() {
            for v in c.iter_mut() {
                *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    let observation = observation_from_rgbd(rgb, depth, &cfg.intrinsics)?;

    let objects = items
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, it)| {
            let footprint = out.layers[i].footprint();
            let nearest = out.label.data.iter().filter(|&&l| l == i as i32).count();
            SceneObject {
                object_id: it.object_id.unwrap_or_default(),
                pose: it.pose,
                visible_fraction: if footprint == 0 { 0.0 } else { nearest as f64 / footprint as f64 },
                isolated: out.layers[i].depth.clone(),
            }
        })
        .collect();
    Ok(SyntheticScene {
        observation,
        objects,
        camera_pose: cam,
    })
}
