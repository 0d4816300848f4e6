//! Estimated poses rendered over the observed color image.

use image::{ImageBuffer, Rgb, RgbImage};
use zephyr::geom::{Image, RigidTransform, Vec3};
use zephyr::objmodel::TriangleMesh;
use zephyr::render::{rasterize, Lighting, RenderItem};

const TINT: [f64; 3] = [0.1, 0.9, 0.2];

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Blends each object's shaded render into `rgb` and outlines its silhouette.
pub fn overlay(rgb: &Image<[f64; 3]>, k: &zephyr::geom::CameraIntrinsics, objects: &[(&TriangleMesh, RigidTransform)]) -> RgbImage {
    let items: Vec<RenderItem> = objects
        .iter()
        .enumerate()
        .map(|(i, (mesh, pose))| RenderItem { mesh, pose: *pose, object_id: Some(i as u32) })
        .collect();
    let light = Lighting { direction: Vec3::new(0.3, 0.5, 1.0), ambient: 0.4 };
    let render = rasterize(&items, k, Some(&light));
    let (w, h) = (rgb.width, rgb.height);
    let hit = |x: usize, y: usize| *render.label.get(x, y) >= 0;
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let base = *rgb.get(x, y);
        if !hit(x, y) {
            return Rgb(base.map(to_u8));
        }
        let edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h || !hit(x - 1, y) || !hit(x + 1, y) || !hit(x, y - 1) || !hit(x, y + 1);
        if edge {
            return Rgb(TINT.map(to_u8));
        }
        let r = render.rgb.get(x, y);
        Rgb([0, 1, 2].map(|c| to_u8(0.4 * base[c] + 0.4 * r[c] + 0.2 * TINT[c])))
    })
}
