//! Software RGB-D rasterizer, observations, visibility masks, synthetic
//! scenes and the on-disk dataset layout.

pub mod dataset;
mod scene;

pub use scene::{synthesize_scene, Background, SceneConfig, SceneObject, SyntheticScene};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{normals_from_depth, rgb_to_hsv, CameraIntrinsics, Image, RigidTransform, Vec3};
use crate::objmodel::TriangleMesh;

/// Depth (camera-frame `z`, meters) of one object rendered alone; `0` = no surface.
pub type DistanceMap = Image<f64>;

/// A registered RGB-D frame with derived HSV and normal maps.
#[derive(Debug, Clone)]
pub struct Observation {
    pub rgb: Image<[f64; 3]>,
    pub hsv: Image<[f64; 3]>,
    pub depth: Image<f64>,
    pub normals: Image<Option<Vec3>>,
    pub intrinsics: CameraIntrinsics,
}

impl Observation {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    /// Recomputes RGB from the (possibly edited) HSV map.
    pub fn sync_rgb_from_hsv(&mut self) {
        for (rgb, hsv) in self.rgb.data.iter_mut().zip(&self.hsv.data) {
            *rgb = crate::geom::hsv_to_rgb(*hsv);
        }
    }
}

/// Builds an observation from registered color and depth images.
pub fn observation_from_rgbd(
    rgb: Image<[f64; 3]>,
    depth: Image<f64>,
    k: &CameraIntrinsics,
) -> Result<Observation> {
    if !rgb.same_size(&depth) || depth.width != k.width || depth.height != k.height {
        return Err(Error::InvalidInput(format!(
            "rgb {}x{}, depth {}x{} and intrinsics {}x{} disagree",
            rgb.width, rgb.height, depth.width, depth.height, k.width, k.height
        )));
    }
    let hsv = rgb.map(|c| rgb_to_hsv(c.map(|v| v.clamp(0.0, 1.0))));
    let normals = normals_from_depth(&depth, k);
    Ok(Observation {
        rgb,
        hsv,
        depth,
        normals,
        intrinsics: *k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    /// Direction the light travels, camera frame.
    pub direction: Vec3,
    pub ambient: f64,
}

impl Lighting {
    fn shade(&self, albedo: [f64; 3], normal: &Vec3) -> [f64; 3] {
        let lambert = (-normal.dot(&self.direction.normalize())).max(0.0);
        let f = self.ambient + (1.0 - self.ambient) * lambert;
        albedo.map(|c| (c * f).clamp(0.0, 1.0))
    }
}

/// A mesh placed in the camera frame; `object_id` is `None` for background.
#[derive(Debug, Clone, Copy)]
pub struct RenderItem<'a> {
    pub mesh: &'a TriangleMesh,
    pub pose: RigidTransform,
    pub object_id: Option<u32>,
}

/// One item rendered alone.
#[derive(Debug, Clone)]
pub struct Layer {
    pub depth: DistanceMap,
    pub rgb: Image<[f64; 3]>,
    pub normals: Image<Option<Vec3>>,
}

impl Layer {
    pub fn footprint(&self) -> usize {
        self.depth.data.iter().filter(|&&d| d > 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: Image<[f64; 3]>,
    pub depth: Image<f64>,
    /// Interpolated mesh normals of the nearest surface.
    pub normals: Image<Option<Vec3>>,
    /// Index into the item list of the nearest surface, `-1` where empty.
    pub label: Image<i32>,
    /// Isolated depth per item, in item order.
    pub layers: Vec<Layer>,
}

impl RenderOutput {
    /// Isolated distance map of the item with this object id.
    pub fn object_map(&self, items: &[RenderItem], object_id: u32) -> Option<&DistanceMap> {
        items
            .iter()
            .position(|it| it.object_id == Some(object_id))
            .map(|i| &self.layers[i].depth)
    }

    /// Pixels where item `index` is the nearest surface.
    pub fn object_mask(&self, index: usize) -> Vec<bool> {
        self.label.data.iter().map(|&l| l == index as i32).collect()
    }
}

const NEAR_PLANE: f64 = 1e-3;

/// Z-buffers one mesh at `pose` into its own layer.
pub fn rasterize_layer(
    mesh: &TriangleMesh,
    pose: &RigidTransform,
    k: &CameraIntrinsics,
    light: Option<&Lighting>,
) -> Layer {
    let (w, h) = (k.width, k.height);
    let mut depth = Image::filled(w, h, 0.0);
    let mut rgb = Image::filled(w, h, [0.0; 3]);
    let mut normals = Image::filled(w, h, None);
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply(v)).collect();
    let nrm: Vec<Vec3> = mesh.vertex_normals.iter().map(|n| pose.apply_vector(n)).collect();
    for f in &mesh.faces {
        let idx = f.map(|i| i as usize);
        let p = idx.map(|i| cam[i]);
        if p.iter().any(|q| q.z <= NEAR_PLANE) {
            continue;
        }
        let s = p.map(|q| (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy));
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = s.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = s.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = s.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = s.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let inv_z = p.map(|q| 1.0 / q.z);
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let (px, py) = (x as f64, y as f64);
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let b0 = edge(s[1], s[2]) / area;
                let b1 = edge(s[2], s[0]) / area;
                let b2 = edge(s[0], s[1]) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                let cur = depth.get_mut(x, y);
                if *cur > 0.0 && *cur <= z {
                    continue;
                }
                *cur = z;
                // Perspective-correct weights.
                let wts = [b0 * inv_z[0] * z, b1 * inv_z[1] * z, b2 * inv_z[2] * z];
                let mut n = nrm[idx[0]] * wts[0] + nrm[idx[1]] * wts[1] + nrm[idx[2]] * wts[2];
                if n.norm() < 1e-12 {
                    n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                }
                let n = n.normalize();
                let c = mesh.vertex_colors_rgb[idx[0]] * wts[0]
                    + mesh.vertex_colors_rgb[idx[1]] * wts[1]
                    + mesh.vertex_colors_rgb[idx[2]] * wts[2];
                let albedo = [c.x, c.y, c.z].map(|v| v.clamp(0.0, 1.0));
                *rgb.get_mut(x, y) = match light {
                    Some(l) => l.shade(albedo, &n),
                    None => albedo,
                };
                *normals.get_mut(x, y) = Some(n);
            }
        }
    }
    Layer { depth, rgb, normals }
}

/// Renders every item in isolation, then composites them by depth.
pub fn rasterize(items: &[RenderItem], k: &CameraIntrinsics, light: Option<&Lighting>) -> RenderOutput {
    let layers: Vec<Layer> = items
        .par_iter()
        .map(|it| rasterize_layer(it.mesh, &it.pose, k, light))
        .collect();
    let (w, h) = (k.width, k.height);
    let mut depth = Image::filled(w, h, 0.0);
    let mut rgb = Image::filled(w, h, [0.0; 3]);
    let mut normals = Image::filled(w, h, None);
    let mut label = Image::filled(w, h, -1i32);
    for (li, layer) in layers.iter().enumerate() {
        for i in 0..w * h {
            let z = layer.depth.data[i];
            if z > 0.0 && (depth.data[i] == 0.0 || z < depth.data[i]) {
                depth.data[i] = z;
                rgb.data[i] = layer.rgb.data[i];
                normals.data[i] = layer.normals.data[i];
                label.data[i] = li as i32;
            }
        }
    }
    RenderOutput {
        rgb,
        depth,
        normals,
        label,
        layers,
    }
}

/// Pixels where the isolated render is not behind the observed surface by
/// more than `delta`, or where the render has surface but nothing was
/// observed.
pub fn visibility_mask(isolated: &DistanceMap, observed: &Image<f64>, delta: f64) -> Result<Vec<bool>> {
    if !isolated.same_size(observed) {
        return Err(Error::InvalidInput("visibility maps differ in size".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("visibility tolerance must be positive".into()));
    }
    Ok(isolated
        .data
        .iter()
        .zip(&observed.data)
        .map(|(&d, &o)| d > 0.0 && (o <= 0.0 || d - o <= delta))
        .collect())
}
