use super::{CameraIntrinsics, Vec3};

/// Row-major `height × width` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn same_size<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Per-pixel surface normals of a depth map (meters, `0` = missing).
///
/// Central differences over the back-projected point map; the normal is the
/// cross product of the horizontal and vertical tangents, flipped to face the
/// camera. A pixel gets `None` if it sits on the border or any pixel of its
/// 3×3 neighborhood lacks depth.
pub fn normals_from_depth(depth: &Image<f64>, k: &CameraIntrinsics) -> Image<Option<Vec3>> {
    let (w, h) = (depth.width, depth.height);
    let mut out = Image::filled(w, h, None);
    if w < 3 || h < 3 {
        return out;
    }
    let point = |x: usize, y: usize| k.back_project(x as f64, y as f64, *depth.get(x, y));
    for y in 1..h - 1 {
        'px: for x in 1..w - 1 {
            for dy in 0..3 {
                for dx in 0..3 {
                    if !(*depth.get(x + dx - 1, y + dy - 1) > 0.0) {
                        continue 'px;
                    }
                }
            }
            let tu = point(x + 1, y) - point(x - 1, y);
            let tv = point(x, y + 1) - point(x, y - 1);
            let n = tu.cross(&tv);
            let norm = n.norm();
            if norm <= 1e-15 {
                continue;
            }
            let mut n = n / norm;
            if n.dot(&point(x, y)) > 0.0 {
                n = -n;
            }
            *out.get_mut(x, y) = Some(n);
        }
    }
    out
}
