use super::Real;

fn dist2<T: Real>(a: &[T; 2], b: &[T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Farthest-point sampling from index 0. Ties go to the lowest index; when
/// `k > coords.len()` the selection cycles.
pub fn farthest_point_sample<T: Real>(coords: &[[T; 2]], k: usize) -> Vec<usize> {
    let n = coords.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(k);
    let mut best = vec![T::infinity(); n];
    let mut cur = 0;
    for _ in 0..k.min(n) {
        out.push(cur);
        let mut next = 0;
        let mut far = T::neg_infinity();
        for i in 0..n {
            let d = dist2(&coords[i], &coords[cur]);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > far {
                far = best[i];
                next = i;
            }
        }
        cur = next;
    }
    for i in n..k {
        out.push(out[i % n]);
    }
    out
}

/// Up to `max_n` neighbors strictly within `r` of each centroid, in index
/// order; short regions repeat their first member, empty ones hold the
/// nearest point.
pub fn ball_query<T: Real>(centroids: &[[T; 2]], coords: &[[T; 2]], r: T, max_n: usize) -> Vec<Vec<usize>> {
    let r2 = r * r;
    centroids
        .iter()
        .map(|c| {
            let mut found: Vec<usize> = Vec::with_capacity(max_n);
            for (i, p) in coords.iter().enumerate() {
                if dist2(c, p) < r2 {
                    found.push(i);
                    if found.len() == max_n {
                        break;
                    }
                }
            }
            let fill = match found.first() {
                Some(&f) => f,
                None => {
                    let mut best = (0, T::infinity());
                    for (i, p) in coords.iter().enumerate() {
                        let d = dist2(c, p);
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    best.0
                }
            };
            found.resize(max_n, fill);
            found
        })
        .collect()
}
