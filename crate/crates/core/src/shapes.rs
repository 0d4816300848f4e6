//! Procedural object meshes and the synthetic object catalog.
//!
//! Faces are tessellated to roughly `cell` meters so that per-vertex color
//! patterns survive barycentric interpolation. Planar facets do not share
//! vertices with their neighbors, which keeps their normals exact.

use std::f64::consts::{PI, TAU};

use crate::geom::{hsv_to_rgb, RigidTransform, Vec3};
use crate::objmodel::{SymmetrySpec, TriangleMesh};

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    normals: Vec<Vec3>,
    colors: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Builder {
    fn vertex(&mut self, p: Vec3, n: Vec3, color: &dyn Fn(&Vec3, &Vec3) -> Vec3) -> u32 {
        self.vertices.push(p);
        self.normals.push(n);
        self.colors.push(color(&p, &n));
        (self.vertices.len() - 1) as u32
    }

    /// Parallelogram `o + s·a + t·b`, `s, t ∈ [0, 1]`, facing `a × b`.
    fn quad(&mut self, o: Vec3, a: Vec3, b: Vec3, cell: f64, color: &dyn Fn(&Vec3, &Vec3) -> Vec3) {
        let n = a.cross(&b).normalize();
        let nu = (a.norm() / cell).ceil().max(1.0) as usize;
        let nv = (b.norm() / cell).ceil().max(1.0) as usize;
        let base = self.vertices.len() as u32;
        for j in 0..=nv {
            for i in 0..=nu {
                let p = o + a * (i as f64 / nu as f64) + b * (j as f64 / nv as f64);
                self.vertex(p, n, color);
            }
        }
        let id = |i: usize, j: usize| base + (j * (nu + 1) + i) as u32;
        for j in 0..nv {
            for i in 0..nu {
                self.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                self.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }

    /// Flat triangle `a, b, c` (counter-clockwise about its normal), subdivided.
    fn triangle(&mut self, a: Vec3, b: Vec3, c: Vec3, cell: f64, color: &dyn Fn(&Vec3, &Vec3) -> Vec3) {
        let n = (b - a).cross(&(c - a)).normalize();
        let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
        let k = (longest / cell).ceil().max(1.0) as usize;
        let base = self.vertices.len() as u32;
        // Row j has k - j + 1 vertices.
        let mut row_start = Vec::with_capacity(k + 1);
        for j in 0..=k {
            row_start.push(self.vertices.len() as u32 - base);
            for i in 0..=(k - j) {
                let p = a + (b - a) * (i as f64 / k as f64) + (c - a) * (j as f64 / k as f64);
                self.vertex(p, n, color);
            }
        }
        let id = |i: usize, j: usize| base + row_start[j] + i as u32;
        for j in 0..k {
            for i in 0..(k - j) {
                self.faces.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                if i + 1 < k - j {
                    self.faces.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
    }

    /// Disc of radius `r` at height `z`, facing `+z` when `up`.
    fn disc(&mut self, r: f64, z: f64, up: bool, segments: usize, cell: f64, color: &dyn Fn(&Vec3, &Vec3) -> Vec3) {
        let n = if up { Vec3::z() } else { -Vec3::z() };
        let rings = (r / cell).ceil().max(1.0) as usize;
        let center = self.vertex(Vec3::new(0.0, 0.0, z), n, color);
        let mut prev: Vec<u32> = vec![center; segments];
        for k in 1..=rings {
            let rr = r * k as f64 / rings as f64;
            let ring: Vec<u32> = (0..segments)
                .map(|i| {
                    let t = TAU * i as f64 / segments as f64;
                    self.vertex(Vec3::new(rr * t.cos(), rr * t.sin(), z), n, color)
                })
                .collect();
            for i in 0..segments {
                let i2 = (i + 1) % segments;
                let (a, b, c, d) = (prev[i], prev[i2], ring[i], ring[i2]);
                let mut push = |f: [u32; 3]| {
                    self.faces.push(if up { f } else { [f[0], f[2], f[1]] });
                };
                if k == 1 {
                    push([a, c, d]);
                } else {
                    push([a, c, d]);
                    push([a, d, b]);
                }
            }
            prev = ring;
        }
    }

    /// Surface of revolution about `z` through the profile `(radius, z)`
    /// sampled along `t ∈ [0, 1]`, with smooth outward normals.
    fn revolve(
        &mut self,
        profile: &dyn Fn(f64) -> (f64, f64),
        normal: &dyn Fn(f64, f64) -> Vec3,
        rows: usize,
        segments: usize,
        color: &dyn Fn(&Vec3, &Vec3) -> Vec3,
    ) {
        let base = self.vertices.len() as u32;
        for j in 0..=rows {
            let t = j as f64 / rows as f64;
            let (r, z) = profile(t);
            for i in 0..segments {
                let th = TAU * i as f64 / segments as f64;
                let p = Vec3::new(r * th.cos(), r * th.sin(), z);
                self.vertex(p, normal(th, t), color);
            }
        }
        let id = |i: usize, j: usize| base + (j * segments + i % segments) as u32;
        for j in 0..rows {
            for i in 0..segments {
                self.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                self.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }

    fn append(&mut self, mesh: &TriangleMesh, t: &RigidTransform) {
        let base = self.vertices.len() as u32;
        for i in 0..mesh.vertices.len() {
            self.vertices.push(t.apply(&mesh.vertices[i]));
            self.normals.push(t.apply_vector(&mesh.vertex_normals[i]));
            self.colors.push(mesh.vertex_colors_rgb[i]);
        }
        for f in &mesh.faces {
            self.faces.push(f.map(|i| i + base));
        }
    }

    fn finish(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, Some(self.colors), self.faces, Some(self.normals))
            .expect("procedural mesh is well formed")
    }
}

/// Axis-aligned box centered at the origin.
pub fn boxed(size: [f64; 3], cell: f64, color: impl Fn(&Vec3, &Vec3) -> Vec3) -> TriangleMesh {
    let [hx, hy, hz] = size.map(|s| s / 2.0);
    let (sx, sy, sz) = (size[0], size[1], size[2]);
    let mut b = Builder::default();
    let c: &dyn Fn(&Vec3, &Vec3) -> Vec3 = &color;
    b.quad(Vec3::new(hx, -hy, -hz), Vec3::new(0.0, sy, 0.0), Vec3::new(0.0, 0.0, sz), cell, c);
    b.quad(Vec3::new(-hx, -hy, -hz), Vec3::new(0.0, 0.0, sz), Vec3::new(0.0, sy, 0.0), cell, c);
    b.quad(Vec3::new(-hx, hy, -hz), Vec3::new(0.0, 0.0, sz), Vec3::new(sx, 0.0, 0.0), cell, c);
    b.quad(Vec3::new(-hx, -hy, -hz), Vec3::new(sx, 0.0, 0.0), Vec3::new(0.0, 0.0, sz), cell, c);
    b.quad(Vec3::new(-hx, -hy, hz), Vec3::new(sx, 0.0, 0.0), Vec3::new(0.0, sy, 0.0), cell, c);
    b.quad(Vec3::new(-hx, -hy, -hz), Vec3::new(0.0, sy, 0.0), Vec3::new(sx, 0.0, 0.0), cell, c);
    b.finish()
}

/// Closed cylinder about `z`, centered at the origin.
pub fn cylinder(
    radius: f64,
    height: f64,
    segments: usize,
    cell: f64,
    color: impl Fn(&Vec3, &Vec3) -> Vec3,
) -> TriangleMesh {
    let mut b = Builder::default();
    let c: &dyn Fn(&Vec3, &Vec3) -> Vec3 = &color;
    let rows = (height / cell).ceil().max(1.0) as usize;
    b.revolve(
        &|t| (radius, -height / 2.0 + height * t),
        &|th, _| Vec3::new(th.cos(), th.sin(), 0.0),
        rows,
        segments,
        c,
    );
    b.disc(radius, height / 2.0, true, segments, cell, c);
    b.disc(radius, -height / 2.0, false, segments, cell, c);
    b.finish()
}

/// Cone about `z`: base of `radius` at `-height/2`, apex at `+height/2`.
pub fn cone(radius: f64, height: f64, segments: usize, cell: f64, color: impl Fn(&Vec3, &Vec3) -> Vec3) -> TriangleMesh {
    let mut b = Builder::default();
    let c: &dyn Fn(&Vec3, &Vec3) -> Vec3 = &color;
    let slant = radius.hypot(height);
    let rows = (slant / cell).ceil().max(1.0) as usize;
    b.revolve(
        // Stop just short of the apex so the top row does not collapse.
        &|t| {
            let t = t * 0.999;
            (radius * (1.0 - t), -height / 2.0 + height * t)
        },
        &|th, _| Vec3::new(height * th.cos(), height * th.sin(), radius).normalize(),
        rows,
        segments,
        c,
    );
    b.disc(radius, -height / 2.0, false, segments, cell, c);
    b.finish()
}

/// Square pyramid about `z`: base side `base` at `-height/2`, apex above.
pub fn pyramid(base: f64, height: f64, cell: f64, color: impl Fn(&Vec3, &Vec3) -> Vec3) -> TriangleMesh {
    let mut b = Builder::default();
    let c: &dyn Fn(&Vec3, &Vec3) -> Vec3 = &color;
    let h = base / 2.0;
    let z0 = -height / 2.0;
    let corners = [
        Vec3::new(h, -h, z0),
        Vec3::new(h, h, z0),
        Vec3::new(-h, h, z0),
        Vec3::new(-h, -h, z0),
    ];
    let apex = Vec3::new(0.0, 0.0, height / 2.0);
    for i in 0..4 {
        b.triangle(corners[i], corners[(i + 1) % 4], apex, cell, c);
    }
    b.quad(corners[3], Vec3::new(0.0, base, 0.0), Vec3::new(base, 0.0, 0.0), cell, c);
    b.finish()
}

pub fn uv_sphere(radius: f64, rings: usize, segments: usize, color: impl Fn(&Vec3, &Vec3) -> Vec3) -> TriangleMesh {
    let mut b = Builder::default();
    let c: &dyn Fn(&Vec3, &Vec3) -> Vec3 = &color;
    b.revolve(
        &|t| {
            let phi = PI * (0.0005 + 0.999 * t);
            (radius * phi.sin(), -radius * phi.cos())
        },
        &|th, t| {
            let phi = PI * (0.0005 + 0.999 * t);
            Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), -phi.cos())
        },
        rings,
        segments,
        c,
    );
    b.finish()
}

/// Concatenates meshes after placing each with its transform.
pub fn merge(parts: &[(TriangleMesh, RigidTransform)]) -> TriangleMesh {
    let mut b = Builder::default();
    for (m, t) in parts {
        b.append(m, t);
    }
    b.finish()
}

/// A catalog entry: mesh in meters, its symmetry, and whether its color
/// pattern carries pose information.
#[derive(Debug, Clone)]
pub struct CatalogObject {
    pub object_id: u32,
    pub name: &'static str,
    pub mesh: TriangleMesh,
    pub symmetry: SymmetrySpec,
    pub textured: bool,
}

fn hsv(h: f64, s: f64, v: f64) -> Vec3 {
    Vec3::from(hsv_to_rgb([h, s, v]))
}

fn plain(h: f64, s: f64, v: f64) -> impl Fn(&Vec3, &Vec3) -> Vec3 {
    move |_, _| hsv(h, s, v)
}

/// Eight procedural objects mixing symmetric/asymmetric geometry with
/// textured/plain coloring. Odd ids and even ids each contain one of every
/// kind, so either parity class can serve as the unseen set.
pub fn catalog() -> Vec<CatalogObject> {
    let cell = 0.006;
    let z = [0.0, 0.0, 1.0];
    let mut out = Vec::new();

    // 1: textured box; each face a different hue with a bright band.
    let crate_color = |p: &Vec3, n: &Vec3| {
        let face = n.iamax() * 2 + usize::from(n[n.iamax()] < 0.0);
        let band = ((p.x + p.y + p.z) * 40.0).rem_euclid(1.0) < 0.35;
        hsv(face as f64 / 6.0, 0.8, if band { 0.95 } else { 0.55 })
    };
    out.push(CatalogObject {
        object_id: 1,
        name: "crate",
        mesh: boxed([0.10, 0.07, 0.05], cell, crate_color),
        symmetry: SymmetrySpec::none(),
        textured: true,
    });

    // 2: can; round geometry, label colored by angle.
    let can_color = |p: &Vec3, _: &Vec3| {
        let th = p.y.atan2(p.x).rem_euclid(TAU) / TAU;
        if p.z > 0.04 || p.z < -0.04 {
            hsv(0.0, 0.0, 0.75)
        } else if th < 0.5 {
            hsv(0.0, 0.85, 0.85)
        } else {
            hsv(0.6 + 0.2 * (th - 0.5), 0.8, 0.7)
        }
    };
    out.push(CatalogObject {
        object_id: 2,
        name: "can",
        mesh: cylinder(0.035, 0.10, 48, cell, can_color),
        symmetry: SymmetrySpec::none(),
        textured: true,
    });

    // 3: plain bottle; continuous symmetry about z.
    let body = cylinder(0.035, 0.08, 48, cell, plain(0.33, 0.5, 0.6));
    let neck = cylinder(0.015, 0.04, 32, cell, plain(0.33, 0.5, 0.6));
    out.push(CatalogObject {
        object_id: 3,
        name: "bottle",
        mesh: merge(&[
            (body, RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.02))),
            (neck, RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.04))),
        ]),
        symmetry: SymmetrySpec::continuous(z, 64),
        textured: false,
    });

    // 4: plain square pyramid; four-fold symmetry about z.
    out.push(CatalogObject {
        object_id: 4,
        name: "pyramid",
        mesh: pyramid(0.09, 0.08, cell, plain(0.12, 0.6, 0.8)),
        symmetry: SymmetrySpec::discrete(z, 4),
        textured: false,
    });

    // 5: plain L bracket.
    let leg = boxed([0.10, 0.03, 0.03], cell, plain(0.58, 0.3, 0.5));
    let upright = boxed([0.03, 0.03, 0.07], cell, plain(0.58, 0.3, 0.5));
    out.push(CatalogObject {
        object_id: 5,
        name: "bracket",
        mesh: merge(&[
            (leg, RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.025))),
            (upright, RigidTransform::from_translation(Vec3::new(-0.035, 0.0, 0.025))),
        ]),
        symmetry: SymmetrySpec::none(),
        textured: false,
    });

    // 6: two-tone mug with a handle.
    let mug_color = |p: &Vec3, _: &Vec3| {
        if p.z > 0.0 {
            hsv(0.08, 0.85, 0.9)
        } else if p.x > 0.0 {
            hsv(0.5, 0.7, 0.7)
        } else {
            hsv(0.75, 0.6, 0.6)
        }
    };
    let cup = cylinder(0.04, 0.09, 48, cell, mug_color);
    let handle = boxed([0.03, 0.015, 0.06], cell, |_, _| hsv(0.95, 0.8, 0.8));
    out.push(CatalogObject {
        object_id: 6,
        name: "mug",
        mesh: merge(&[
            (cup, RigidTransform::identity()),
            (handle, RigidTransform::from_translation(Vec3::new(0.054, 0.0, 0.0))),
        ]),
        symmetry: SymmetrySpec::none(),
        textured: true,
    });

    // 7: cone with colored sectors.
    let cone_color = |p: &Vec3, n: &Vec3| {
        if n.z < -0.9 {
            return hsv(0.0, 0.0, 0.4);
        }
        let sector = (p.y.atan2(p.x).rem_euclid(TAU) / TAU * 3.0).floor();
        hsv(0.15 + 0.3 * sector, 0.8, 0.85)
    };
    out.push(CatalogObject {
        object_id: 7,
        name: "cone",
        mesh: cone(0.045, 0.10, 48, cell, cone_color),
        symmetry: SymmetrySpec::none(),
        textured: true,
    });

    // 8: plain stepped tower.
    let base = boxed([0.08, 0.06, 0.04], cell, plain(0.0, 0.05, 0.7));
    let top = boxed([0.04, 0.03, 0.05], cell, plain(0.0, 0.05, 0.7));
    out.push(CatalogObject {
        object_id: 8,
        name: "tower",
        mesh: merge(&[
            (base, RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.025))),
            (top, RigidTransform::from_translation(Vec3::new(0.015, 0.01, 0.02))),
        ]),
        symmetry: SymmetrySpec::none(),
        textured: false,
    });
    out
}
