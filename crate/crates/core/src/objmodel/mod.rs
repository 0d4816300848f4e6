//! Object meshes, surface sampling, prepared model clouds and symmetry sets.

mod obj;
mod ply;

pub use ply::write_ply;

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rgb_to_hsv, voxel_downsample, PointCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(MeshFormat::Ply),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

#[derive(Debug, Default)]
struct RawMesh {
    vertices: Vec<Vec3>,
    colors: Vec<Vec3>,
    normals: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// Triangle mesh with per-vertex colors (RGB in `[0, 1]`) and unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub vertex_colors_rgb: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vec3>,
}

fn face_cross(v: &[Vec3], f: &[u32; 3]) -> Vec3 {
    let (a, b, c) = (v[f[0] as usize], v[f[1] as usize], v[f[2] as usize]);
    (b - a).cross(&(c - a))
}

impl TriangleMesh {
    /// Builds a mesh, dropping zero-area faces and filling in missing
    /// colors (mid gray) and normals (area-weighted face normals).
    pub fn new(
        vertices: Vec<Vec3>,
        colors: Option<Vec<Vec3>>,
        faces: Vec<[u32; 3]>,
        normals: Option<Vec<Vec3>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::parse("faces", format!("face {f:?} indexes past {n} vertices")));
        }
        let faces: Vec<[u32; 3]> = faces
            .into_iter()
            .filter(|f| {
                f[0] != f[1]
                    && f[1] != f[2]
                    && f[0] != f[2]
                    && face_cross(&vertices, f).norm() > 1e-14
            })
            .collect();
        if faces.is_empty() {
            return Err(Error::DegenerateMesh);
        }
        let colors = colors.unwrap_or_else(|| vec![Vec3::repeat(0.5); n]);
        if colors.len() != n {
            return Err(Error::InvalidInput("color count differs from vertex count".into()));
        }
        let mut area_normals = vec![Vec3::zeros(); n];
        for f in &faces {
            let c = face_cross(&vertices, f);
            for &i in f {
                area_normals[i as usize] += c;
            }
        }
        let given = normals.unwrap_or_else(|| vec![Vec3::zeros(); n]);
        if given.len() != n {
            return Err(Error::InvalidInput("normal count differs from vertex count".into()));
        }
        let vertex_normals = given
            .iter()
            .zip(&area_normals)
            .map(|(g, a)| {
                if g.norm() > 1e-12 {
                    g.normalize()
                } else if a.norm() > 1e-12 {
                    a.normalize()
                } else {
                    Vec3::z()
                }
            })
            .collect();
        Ok(Self {
            vertices,
            vertex_colors_rgb: colors,
            faces,
            vertex_normals,
        })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * face_cross(&self.vertices, &self.faces[f]).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.vertices {
            *v *= s;
        }
        self
    }

    pub fn to_ply_bytes(&self) -> Vec<u8> {
        write_ply(&self.vertices, &self.vertex_normals, &self.vertex_colors_rgb, &self.faces)
    }
}

/// Parses a PLY or OBJ file.
pub fn load_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh> {
    let raw = match format {
        MeshFormat::Ply => ply::read_ply(bytes)?,
        MeshFormat::Obj => obj::read_obj(bytes)?,
    };
    let faces = raw
        .faces
        .iter()
        .map(|f| [f[0] as u32, f[1] as u32, f[2] as u32])
        .collect();
    TriangleMesh::new(
        raw.vertices,
        (!raw.colors.is_empty()).then_some(raw.colors),
        faces,
        (!raw.normals.is_empty()).then_some(raw.normals),
    )
}

/// Draws `n` points uniformly over the surface (faces picked by area).
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> PointCloud {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    let mut cloud = PointCloud::default();
    for _ in 0..n {
        let r = rng.random::<f64>() * total;
        let fi = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let f = mesh.faces[fi].map(|i| i as usize);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let interp = |a: &[Vec3]| a[f[0]] * w[0] + a[f[1]] * w[1] + a[f[2]] * w[2];
        let p = interp(&mesh.vertices);
        let mut nrm = interp(&mesh.vertex_normals);
        if nrm.norm() < 1e-9 {
            nrm = face_cross(&mesh.vertices, &mesh.faces[fi]);
        }
        let rgb = interp(&mesh.vertex_colors_rgb);
        let hsv = rgb_to_hsv([rgb.x, rgb.y, rgb.z].map(|c| c.clamp(0.0, 1.0)));
        cloud.push(p, nrm.normalize(), hsv);
    }
    cloud
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryKind {
    #[default]
    None,
    Discrete,
    Axis,
}

/// Where the set of pose-indistinguishing rotations comes from. For
/// `discrete` the count is the cyclic order; for `axis` it is the number
/// of samples of the continuous symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub kind: SymmetryKind,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_order() -> usize {
    64
}

impl SymmetrySpec {
    pub fn none() -> Self {
        Self {
            kind: SymmetryKind::None,
            axis: default_axis(),
            order: 1,
        }
    }

    pub fn discrete(axis: [f64; 3], order: usize) -> Self {
        Self {
            kind: SymmetryKind::Discrete,
            axis,
            order,
        }
    }

    pub fn continuous(axis: [f64; 3], samples: usize) -> Self {
        Self {
            kind: SymmetryKind::Axis,
            axis,
            order: samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SymmetryKind::None {
            return Ok(());
        }
        let a = Vec3::from(self.axis);
        if (a.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("symmetry axis must be a unit vector".into()));
        }
        if self.order < 2 {
            return Err(Error::InvalidInput("symmetry order must be at least 2".into()));
        }
        Ok(())
    }
}

/// Rotations about the model origin that leave the object unchanged;
/// always starts with the identity.
pub fn discretize_symmetries(spec: &SymmetrySpec) -> Result<Vec<RigidTransform>> {
    spec.validate()?;
    if spec.kind == SymmetryKind::None {
        return Ok(vec![RigidTransform::identity()]);
    }
    let axis = Vec3::from(spec.axis);
    Ok((0..spec.order)
        .map(|k| {
            if k == 0 {
                RigidTransform::identity()
            } else {
                RigidTransform::from_axis_angle(&axis, std::f64::consts::TAU * k as f64 / spec.order as f64)
            }
        })
        .collect())
}

/// Prepared object: at most `max_points` oriented colored points in the
/// model frame, its exact diameter and its symmetry set.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub object_id: u32,
    pub cloud: PointCloud,
    pub diameter: f64,
    pub symmetry: Vec<RigidTransform>,
    pub is_symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub leaf: f64,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            leaf: 0.007,
            max_points: 2000,
            seed: 0,
        }
    }
}

/// Largest pairwise distance, by exhaustive search.
pub fn cloud_diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Dense surface sample → voxel grid at `leaf` → random subsample to the
/// point cap; deterministic for a fixed seed.
fn dense_voxel_sample(mesh: &TriangleMesh, leaf: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let area = mesh.surface_area();
    let dense = ((30.0 * area / (leaf * leaf)).ceil() as usize).clamp(20_000, 300_000);
    voxel_downsample(&sample_surface(mesh, dense, rng), leaf)
}

/// Surface points voxelized at `leaf` with no cap on the count. ICP uses
/// this finer cloud: centroids of 7 mm voxels sit measurably inside curved
/// surfaces and bias point-to-point fits by a few millimeters.
pub fn surface_cloud(object_id: u32, mesh: &TriangleMesh, leaf: f64, seed: u64) -> Result<PointCloud> {
    if !(leaf > 0.0) {
        return Err(Error::InvalidInput("voxel leaf must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((object_id as u64) << 32) ^ 0x1cf);
    let cloud = dense_voxel_sample(mesh, leaf, &mut rng)?;
    if cloud.is_empty() {
        return Err(Error::DegenerateMesh);
    }
    Ok(cloud)
}

pub fn prepare_model(
    object_id: u32,
    mesh: &TriangleMesh,
    spec: &SymmetrySpec,
    cfg: &PrepareConfig,
) -> Result<ObjectModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((object_id as u64) << 32));
    let mut cloud = dense_voxel_sample(mesh, cfg.leaf, &mut rng)?;
    if cloud.len() > cfg.max_points {
        let mut keep = index::sample(&mut rng, cloud.len(), cfg.max_points).into_vec();
        keep.sort_unstable();
        cloud = cloud.select(&keep);
    }
    if cloud.is_empty() {
        return Err(Error::DegenerateMesh);
    }
    let diameter = cloud_diameter(&cloud.positions);
    if !(diameter > 0.0) {
        return Err(Error::InvalidInput("model collapses to a single point".into()));
    }
    let symmetry = discretize_symmetries(spec)?;
    Ok(ObjectModel {
        object_id,
        is_symmetric: symmetry.len() > 1,
        cloud,
        diameter,
        symmetry,
    })
}

/// Object metadata file: `{"object_id", "mesh", "symmetry", "units"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: u32,
    pub mesh: String,
    pub symmetry: SymmetrySpec,
    #[serde(default = "default_units")]
    pub units: String,
}

fn default_units() -> String {
    "m".into()
}

impl ObjectMeta {
    pub fn scale(&self) -> Result<f64> {
        match self.units.as_str() {
            "m" => Ok(1.0),
            "mm" => Ok(1e-3),
            u => Err(Error::InvalidInput(format!("unknown units `{u}`"))),
        }
    }

    pub fn mesh_path(&self, meta_path: &Path) -> PathBuf {
        let p = Path::new(&self.mesh);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            meta_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

/// Reads a metadata file and its mesh, converted to meters.
pub fn load_object(meta_path: &Path) -> Result<(ObjectMeta, TriangleMesh)> {
    let meta: ObjectMeta = serde_json::from_slice(&std::fs::read(meta_path)?)?;
    let mesh_path = meta.mesh_path(meta_path);
    let format = MeshFormat::from_path(&mesh_path)
        .ok_or_else(|| Error::InvalidInput(format!("unknown mesh format {}", mesh_path.display())))?;
    let mesh = load_mesh(&std::fs::read(&mesh_path)?, format)?.scaled(meta.scale()?);
    Ok((meta, mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use approx::assert_abs_diff_eq;

    const CUBE_PLY: &str = "ply
format ascii 1.0
comment unit cube
element vertex 8
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
element face 12
property list uchar int vertex_indices
end_header
0 0 0 255 0 0
1 0 0 255 0 0
1 1 0 255 0 0
0 1 0 255 0 0
0 0 1 0 0 255
1 0 1 0 0 255
1 1 1 0 0 255
0 1 1 0 0 255
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 1 2 6
3 1 6 5
3 2 3 7
3 2 7 6
3 3 0 4
3 3 4 7
";

    #[test]
    fn ascii_cube() {
        let m = load_mesh(CUBE_PLY.as_bytes(), MeshFormat::Ply).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert_eq!(m.vertex_colors_rgb[0], Vec3::new(1.0, 0.0, 0.0));
        assert!(m.vertex_normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        assert_abs_diff_eq!(m.surface_area(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let m = load_mesh(CUBE_PLY.as_bytes(), MeshFormat::Ply).unwrap();
        let bytes = m.to_ply_bytes();
        let back = load_mesh(&bytes, MeshFormat::Ply).unwrap();
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.vertices, m.vertices);
        let cut = &bytes[..bytes.len() - 7];
        let err = load_mesh(cut, MeshFormat::Ply).unwrap_err().to_string();
        assert!(err.contains("byte"), "{err}");
    }

    #[test]
    fn obj_without_normals() {
        let src = "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nv 0 0 1\nf 1 2 3\nf 1 3 4\nf 1 4 2\n";
        let m = load_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(m.faces.len(), 3);
        assert!(m.vertex_normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        assert_eq!(m.vertex_colors_rgb[3], Vec3::repeat(0.5));
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let err = load_mesh(quad.as_bytes(), MeshFormat::Obj).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn degenerate_only_mesh() {
        let src = "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n";
        assert!(matches!(load_mesh(src.as_bytes(), MeshFormat::Obj), Err(Error::DegenerateMesh)));
    }

    fn triangle_mesh(pts: [[f64; 3]; 3]) -> TriangleMesh {
        TriangleMesh::new(pts.iter().map(|p| Vec3::from(*p)).collect(), None, vec![[0, 1, 2]], None)
            .unwrap()
    }

    #[test]
    fn samples_stay_inside_triangle() {
        let m = triangle_mesh([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let c = sample_surface(&m, 1000, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(c.len(), 1000);
        for p in &c.positions {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
    }

    #[test]
    fn area_proportional_face_choice() {
        // Areas 0.9·k and 0.1·k.
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.9, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(5.1, 0.0, 0.0),
            Vec3::new(5.0, 1.0, 0.0),
        ];
        let m = TriangleMesh::new(v, None, vec![[0, 1, 2], [3, 4, 5]], None).unwrap();
        let n = 10_000;
        let c = sample_surface(&m, n, &mut ChaCha8Rng::seed_from_u64(9));
        let first = c.positions.iter().filter(|p| p.x < 2.0).count() as f64;
        let (mean, sd) = (0.9 * n as f64, (n as f64 * 0.9 * 0.1).sqrt());
        assert!((first - mean).abs() < 3.0 * sd, "{first} vs {mean}±{sd}");
    }

    #[test]
    fn sphere_normals_point_outward() {
        let m = shapes::uv_sphere(0.05, 24, 48, |_, _| Vec3::repeat(0.5));
        let c = sample_surface(&m, 2000, &mut ChaCha8Rng::seed_from_u64(2));
        for (p, n) in c.positions.iter().zip(&c.normals) {
            assert!(n.dot(&p.normalize()) > 0.99);
        }
    }

    #[test]
    fn cube_diameter_and_caps() {
        let cube = shapes::boxed([0.02, 0.02, 0.02], 0.004, |_, _| Vec3::repeat(0.5));
        let model = prepare_model(1, &cube, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        assert!(model.cloud.len() <= 2000);
        // Brute-force oracle on the cloud itself, plus the analytic bound.
        let mut brute = 0.0f64;
        for a in &model.cloud.positions {
            for b in &model.cloud.positions {
                brute = brute.max((a - b).norm());
            }
        }
        assert_eq!(model.diameter, brute);
        assert!(model.diameter <= 0.02 * 3f64.sqrt() + 1e-12);

        // Exact corner-to-corner diameter on the mesh vertices.
        assert_abs_diff_eq!(cloud_diameter(&cube.vertices), 0.02 * 3f64.sqrt(), epsilon = 1e-6);

        let big = shapes::boxed([0.3, 0.3, 0.3], 0.05, |_, _| Vec3::repeat(0.5));
        let model = prepare_model(2, &big, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        assert_eq!(model.cloud.len(), 2000);
        let again = prepare_model(2, &big, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        assert_eq!(again.cloud, model.cloud);
        let sub: Vec<Vec3> = model.cloud.positions.iter().step_by(7).copied().collect();
        assert!(cloud_diameter(&sub) <= model.diameter);
    }

    #[test]
    fn small_mesh_is_not_subsampled() {
        let tiny = shapes::boxed([0.03, 0.03, 0.01], 0.01, |_, _| Vec3::repeat(0.5));
        let model = prepare_model(3, &tiny, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        assert!(model.cloud.len() < 2000 && model.cloud.len() > 20);
        let dense = sample_surface(&tiny, 60_000, &mut ChaCha8Rng::seed_from_u64(0));
        let vox = voxel_downsample(&dense, 0.007).unwrap();
        assert!((model.cloud.len() as f64 - vox.len() as f64).abs() <= 0.05 * vox.len() as f64);
    }

    #[test]
    fn symmetry_sets() {
        let none = discretize_symmetries(&SymmetrySpec::none()).unwrap();
        assert_eq!(none, vec![RigidTransform::identity()]);
        let four = discretize_symmetries(&SymmetrySpec::discrete([0.0, 0.0, 1.0], 4)).unwrap();
        assert_eq!(four.len(), 4);
        for (k, t) in four.iter().enumerate() {
            let expect = RigidTransform::rot_z(std::f64::consts::FRAC_PI_2 * k as f64);
            assert!((t.rotation - expect.rotation).abs().max() < 1e-12);
        }
        assert!(discretize_symmetries(&SymmetrySpec::discrete([0.0, 0.0, 2.0], 4)).is_err());
        assert!(discretize_symmetries(&SymmetrySpec::continuous([0.0, 0.0, 1.0], 1)).is_err());
    }

    #[test]
    fn continuous_symmetry_preserves_cylinder() {
        let cyl = shapes::cylinder(0.03, 0.08, 48, 0.005, |_, _| Vec3::repeat(0.5));
        let spec = SymmetrySpec::continuous([0.0, 0.0, 1.0], 64);
        let model = prepare_model(4, &cyl, &spec, &PrepareConfig::default()).unwrap();
        assert_eq!(model.symmetry.len(), 64);
        let tree = crate::geom::KdTree3::new(&model.cloud.positions);
        // Rotating the cloud only moves points within the voxel leaf plus the
        // facet chord error.
        let bound = 0.007 * 3f64.sqrt();
        for t in &model.symmetry {
            let worst = model
                .cloud
                .positions
                .iter()
                .map(|p| tree.nearest(&t.apply(p)).unwrap().1)
                .fold(0.0, f64::max);
            assert!(worst < bound, "{worst}");
        }
    }

    #[test]
    fn metadata_parses() {
        let m: ObjectMeta = serde_json::from_str(
            r#"{"object_id":3,"mesh":"obj_000003.ply","symmetry":{"kind":"axis","axis":[0,0,1],"order":64},"units":"mm"}"#,
        )
        .unwrap();
        assert_eq!(m.symmetry.kind, SymmetryKind::Axis);
        assert_eq!(m.scale().unwrap(), 1e-3);
    }
}
