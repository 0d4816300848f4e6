//! On-disk frames: `scenes/<id>/rgb/<frame>.png`, `scenes/<id>/depth/<frame>.png`
//! (16-bit, depth_scale mm per unit), `scene_camera.json`, `scene_gt.json`
//! (translations in mm) and `scene_gt_info.json` (visible fractions).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{observation_from_rgbd, Observation};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Image, RigidTransform, Vec3};

/// Depth PNG units in millimeters.
pub const DEPTH_SCALE_MM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_scale: f64,
}

impl CameraEntry {
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            depth_scale: DEPTH_SCALE_MM,
        }
    }

    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GtJson {
    obj_id: u32,
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GtInfoJson {
    obj_id: u32,
    visib_fract: f64,
}

/// A ground-truth object instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub obj_id: u32,
    pub pose: RigidTransform,
    pub visible_fraction: Option<f64>,
}

/// Everything needed to write one frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub rgb: Image<[f64; 3]>,
    pub depth: Image<f64>,
    pub intrinsics: CameraIntrinsics,
    pub gt: Vec<GtEntry>,
}

pub fn scene_dir(root: &Path, scene_id: u32) -> PathBuf {
    root.join("scenes").join(format!("{scene_id:06}"))
}

fn frame_file(scene: &Path, kind: &str, frame_id: u32) -> PathBuf {
    scene.join(kind).join(format!("{frame_id:06}.png"))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the frames of one scene, replacing its json files.
pub fn write_scene(scene: &Path, frames: &[FrameRecord]) -> Result<()> {
    std::fs::create_dir_all(scene.join("rgb"))?;
    std::fs::create_dir_all(scene.join("depth"))?;
    let mut cams = BTreeMap::new();
    let mut gts = BTreeMap::new();
    let mut infos = BTreeMap::new();
    for f in frames {
        let (w, h) = (f.rgb.width as u32, f.rgb.height as u32);
        if !f.rgb.same_size(&f.depth) {
            return Err(Error::InvalidInput("rgb and depth differ in size".into()));
        }
        let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
            Rgb(f.rgb.get(x as usize, y as usize).map(to_u8))
        });
        rgb.save(frame_file(scene, "rgb", f.frame_id))?;
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
            let mm = f.depth.get(x as usize, y as usize) * 1000.0;
            Luma([(mm / DEPTH_SCALE_MM).round().clamp(0.0, u16::MAX as f64) as u16])
        });
        depth.save(frame_file(scene, "depth", f.frame_id))?;
        let key = f.frame_id.to_string();
        cams.insert(key.clone(), CameraEntry::from_intrinsics(&f.intrinsics));
        gts.insert(
            key.clone(),
            f.gt.iter()
                .map(|g| GtJson {
                    obj_id: g.obj_id,
                    r: g.pose.rotation_row_major().to_vec(),
                    t: (g.pose.translation * 1000.0).iter().copied().collect(),
                })
                .collect::<Vec<_>>(),
        );
        infos.insert(
            key,
            f.gt.iter()
                .map(|g| GtInfoJson {
                    obj_id: g.obj_id,
                    visib_fract: g.visible_fraction.unwrap_or(1.0),
                })
                .collect::<Vec<_>>(),
        );
    }
    std::fs::write(scene.join("scene_camera.json"), serde_json::to_vec_pretty(&cams)?)?;
    std::fs::write(scene.join("scene_gt.json"), serde_json::to_vec_pretty(&gts)?)?;
    std::fs::write(scene.join("scene_gt_info.json"), serde_json::to_vec_pretty(&infos)?)?;
    Ok(())
}

fn parse_frame_keys<T>(map: BTreeMap<String, T>, file: &Path) -> Result<BTreeMap<u32, T>> {
    map.into_iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|id| (id, v))
                .map_err(|_| Error::Data(format!("{}: frame key `{k}` is not an integer", file.display())))
        })
        .collect()
}

/// Reads dataset files and remembers every path it touched.
#[derive(Debug)]
pub struct DatasetReader {
    root: PathBuf,
    log: Mutex<Vec<PathBuf>>,
}

impl DatasetReader {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Paths read so far, in order.
    pub fn accessed(&self) -> Vec<PathBuf> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }

    pub fn read(&self, path: &Path) -> Result<Vec<u8>> {
        if let Ok(mut l) = self.log.lock() {
            l.push(path.to_path_buf());
        }
        std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<T> {
        serde_json::from_slice(&self.read(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Scene ids present under `scenes/`, ascending.
    pub fn scene_ids(&self) -> Result<Vec<u32>> {
        let dir = self.root.join("scenes");
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|s| s.parse::<u32>().ok()) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn cameras(&self, scene_id: u32) -> Result<BTreeMap<u32, CameraEntry>> {
        let path = scene_dir(&self.root, scene_id).join("scene_camera.json");
        parse_frame_keys(self.read_json(&path)?, &path)
    }

    pub fn ground_truth(&self, scene_id: u32) -> Result<BTreeMap<u32, Vec<GtEntry>>> {
        let dir = scene_dir(&self.root, scene_id);
        let path = dir.join("scene_gt.json");
        let raw: BTreeMap<u32, Vec<GtJson>> = parse_frame_keys(self.read_json(&path)?, &path)?;
        let info_path = dir.join("scene_gt_info.json");
        let info: BTreeMap<u32, Vec<GtInfoJson>> = if info_path.exists() {
            parse_frame_keys(self.read_json(&info_path)?, &info_path)?
        } else {
            BTreeMap::new()
        };
        raw.into_iter()
            .map(|(frame, entries)| {
                let vis = info.get(&frame);
                let gt = entries
                    .into_iter()
                    .enumerate()
                    .map(|(i, g)| {
                        if g.t.len() != 3 {
                            return Err(Error::Data(format!("{}: t needs 3 values", path.display())));
                        }
                        let t: Vec<f64> = g.t.iter().map(|v| v / 1000.0).collect();
                        let pose = RigidTransform::from_row_major(&g.r, &t)
                            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                        let visible_fraction = vis
                            .and_then(|v| v.get(i))
                            .filter(|v| v.obj_id == g.obj_id)
                            .map(|v| v.visib_fract);
                        Ok(GtEntry {
                            obj_id: g.obj_id,
                            pose,
                            visible_fraction,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((frame, gt))
            })
            .collect()
    }

    /// Loads one registered frame.
    pub fn observation(&self, scene_id: u32, frame_id: u32, cam: &CameraEntry) -> Result<Observation> {
        let dir = scene_dir(&self.root, scene_id);
        let rgb_path = frame_file(&dir, "rgb", frame_id);
        let depth_path = frame_file(&dir, "depth", frame_id);
        let rgb = image::load_from_memory(&self.read(&rgb_path)?)?.to_rgb8();
        let depth = image::load_from_memory(&self.read(&depth_path)?)?.to_luma16();
        if rgb.dimensions() != depth.dimensions() {
            return Err(Error::Data(format!(
                "scene {scene_id} frame {frame_id}: rgb {:?} and depth {:?} differ",
                rgb.dimensions(),
                depth.dimensions()
            )));
        }
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let rgb = Image::from_vec(w, h, rgb.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect());
        let depth = Image::from_vec(
            w,
            h,
            depth
                .pixels()
                .map(|p| p.0[0] as f64 * cam.depth_scale / 1000.0)
                .collect(),
        );
        observation_from_rgbd(rgb, depth, &cam.intrinsics(w, h)?)
    }
}

/// Pose with translation expressed in millimeters, for reporting.
pub fn translation_mm(pose: &RigidTransform) -> Vec3 {
    pose.translation * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = CameraIntrinsics::new(50.0, 50.0, 7.5, 5.5, 16, 12).unwrap();
        let mut depth = Image::filled(16, 12, 0.0);
        for (i, d) in depth.data.iter_mut().enumerate() {
            *d = if i % 7 == 0 { 0.0 } else { 0.3 + i as f64 * 1e-3 };
        }
        let rgb = Image::filled(16, 12, [0.2, 0.5, 0.9]);
        let pose = RigidTransform::rot_z(0.3).compose(&RigidTransform::from_translation(Vec3::new(0.01, -0.02, 0.5)));
        let rec = FrameRecord {
            frame_id: 4,
            rgb,
            depth: depth.clone(),
            intrinsics: k,
            gt: vec![GtEntry { obj_id: 3, pose, visible_fraction: Some(0.75) }],
        };
        let scene = scene_dir(dir.path(), 7);
        write_scene(&scene, &[rec]).unwrap();
        let reader = DatasetReader::new(dir.path());
        assert_eq!(reader.scene_ids().unwrap(), vec![7]);
        let cams = reader.cameras(7).unwrap();
        let obs = reader.observation(7, 4, &cams[&4]).unwrap();
        for (a, b) in obs.depth.data.iter().zip(&depth.data) {
            assert!((a - b).abs() <= 0.5e-4 + 1e-12);
        }
        assert!((obs.rgb.get(0, 0)[2] - 230.0 / 255.0).abs() < 1e-12);
        let gt = reader.ground_truth(7).unwrap();
        let g = &gt[&4][0];
        assert_eq!(g.obj_id, 3);
        assert_eq!(g.visible_fraction, Some(0.75));
        assert!((g.pose.translation - pose.translation).norm() < 1e-12);
        assert!((g.pose.rotation - pose.rotation).norm() < 1e-9);
        assert_eq!(reader.accessed().len(), 5);

        let text = std::fs::read_to_string(scene.join("scene_gt.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["4"][0]["t"][2].as_f64().unwrap() - 500.0).abs() < 1e-9);
        assert_eq!(v["4"][0]["R"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let scene = scene_dir(dir.path(), 1);
        std::fs::create_dir_all(scene.join("rgb")).unwrap();
        std::fs::create_dir_all(scene.join("depth")).unwrap();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::new(4, 4).save(frame_file(&scene, "rgb", 0)).unwrap();
        ImageBuffer::<Luma<u16>, Vec<u16>>::new(5, 4).save(frame_file(&scene, "depth", 0)).unwrap();
        let cam = CameraEntry { fx: 1.0, fy: 1.0, cx: 2.0, cy: 2.0, depth_scale: 0.1 };
        let err = DatasetReader::new(dir.path()).observation(1, 0, &cam).unwrap_err();
        assert!(err.to_string().contains("differ"));
    }
}
