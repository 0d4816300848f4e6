//! Layer forward/backward kernels on row-major batches.

use rand::Rng;

use super::{Matrix, Real};

pub const BN_EPS: f64 = 1e-5;

/// `y = x·wᵀ + b` with `w` of shape `out × in`.
pub fn linear_forward<T: Real>(x: &Matrix<T>, w: &[T], b: &[T]) -> Matrix<T> {
    let out = b.len();
    let mut y = x.mul_transposed(w, out);
    for r in 0..y.rows {
        for (v, bias) in y.row_mut(r).iter_mut().zip(b) {
            *v += *bias;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Real>(x: &Matrix<T>, w: &[T], dy: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let dw = dy.transposed_mul(x).data;
    let mut db = vec![T::zero(); dy.cols];
    for r in 0..dy.rows {
        for (acc, v) in db.iter_mut().zip(dy.row(r)) {
            *acc += *v;
        }
    }
    let dx = dy.mul(w, x.cols);
    (dx, dw, db)
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

/// Batch statistics over rows.
pub fn batchnorm_train<T: Real>(x: &Matrix<T>, gamma: &[T], beta: &[T]) -> (Matrix<T>, BnCache<T>) {
    let (n, c) = (x.rows, x.cols);
    let nf = T::of(n as f64);
    let mut mean = vec![T::zero(); c];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += *v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / nf);
    let mut var = vec![T::zero(); c];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = *v - *m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s / nf);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + T::of(BN_EPS)).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, c);
    let mut y = Matrix::zeros(n, c);
    for r in 0..n {
        for j in 0..c {
            let h = (x.data[r * c + j] - mean[j]) * inv_std[j];
            xhat.data[r * c + j] = h;
            y.data[r * c + j] = gamma[j] * h + beta[j];
        }
    }
    (y, BnCache { xhat, inv_std, mean, var })
}

pub fn batchnorm_eval<T: Real>(x: &Matrix<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Matrix<T> {
    let c = x.cols;
    let scale: Vec<T> = (0..c).map(|j| gamma[j] / (var[j] + T::of(BN_EPS)).sqrt()).collect();
    let mut y = x.clone();
    for r in 0..x.rows {
        for j in 0..c {
            let v = &mut y.data[r * c + j];
            *v = (*v - mean[j]) * scale[j] + beta[j];
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], dy: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (n, c) = (dy.rows, dy.cols);
    let nf = T::of(n as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for r in 0..n {
        for j in 0..c {
            let g = dy.data[r * c + j];
            dbeta[j] += g;
            dgamma[j] += g * cache.xhat.data[r * c + j];
        }
    }
    let mut dx = Matrix::zeros(n, c);
    for r in 0..n {
        for j in 0..c {
            let g = dy.data[r * c + j];
            dx.data[r * c + j] = gamma[j] * cache.inv_std[j] / nf
                * (nf * g - dbeta[j] - cache.xhat.data[r * c + j] * dgamma[j]);
        }
    }
    (dx, dgamma, dbeta)
}

/// In place; returns the pass-through mask.
pub fn relu_forward<T: Real>(x: &mut Matrix<T>) -> Vec<bool> {
    x.data
        .iter_mut()
        .map(|v| {
            let on = *v > T::zero();
            if !on {
                *v = T::zero();
            }
            on
        })
        .collect()
}

pub fn relu_backward<T: Real>(mask: &[bool], dy: &mut Matrix<T>) {
    for (g, &on) in dy.data.iter_mut().zip(mask) {
        if !on {
            *g = T::zero();
        }
    }
}

/// Inverted dropout; returns the per-element scale (0 or `1/(1−p)`).
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(x: &mut Matrix<T>, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    x.data
        .iter_mut()
        .map(|v| {
            let s = if rng.random::<f64>() < p { T::zero() } else { keep };
            *v = *v * s;
            s
        })
        .collect()
}

pub fn dropout_backward<T: Real>(scale: &[T], dy: &mut Matrix<T>) {
    for (g, s) in dy.data.iter_mut().zip(scale) {
        *g = *g * *s;
    }
}

/// Column-wise max over consecutive row segments of the given lengths.
/// Returns the pooled rows and the winning source row per output element
/// (first maximum wins).
pub fn maxpool_forward<T: Real>(x: &Matrix<T>, segments: &[usize]) -> (Matrix<T>, Vec<usize>) {
    let c = x.cols;
    let mut out = Matrix::zeros(segments.len(), c);
    let mut arg = vec![0usize; segments.len() * c];
    let mut start = 0;
    for (s, &len) in segments.iter().enumerate() {
        assert!(len > 0, "empty pooling segment");
        for j in 0..c {
            let mut best = start;
            let mut v = x.data[start * c + j];
            for r in start + 1..start + len {
                let cand = x.data[r * c + j];
                if cand > v {
                    v = cand;
                    best = r;
                }
            }
            out.data[s * c + j] = v;
            arg[s * c + j] = best;
        }
        start += len;
    }
    assert_eq!(start, x.rows, "segments must cover the input");
    (out, arg)
}

pub fn maxpool_backward<T: Real>(arg: &[usize], rows: usize, dy: &Matrix<T>) -> Matrix<T> {
    let c = dy.cols;
    let mut dx = Matrix::zeros(rows, c);
    for s in 0..dy.rows {
        for j in 0..c {
            dx.data[arg[s * c + j] * c + j] += dy.data[s * c + j];
        }
    }
    dx
}

/// Rows of `x` at `idx`.
pub fn gather_rows<T: Real>(x: &Matrix<T>, idx: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(idx.len(), x.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

/// Adjoint of [`gather_rows`]: scatter-adds the first `cols` columns.
pub fn scatter_rows<T: Real>(dy: &Matrix<T>, idx: &[usize], rows: usize, cols: usize) -> Matrix<T> {
    let mut dx = Matrix::zeros(rows, cols);
    for (r, &i) in idx.iter().enumerate() {
        for j in 0..cols {
            dx.data[i * cols + j] += dy.data[r * dy.cols + j];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::{check_fn, GradcheckReport};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Scalar objective `Σ y ⊙ proj` turns any layer into a gradient check.
    fn objective(y: &Matrix<f64>, proj: &Matrix<f64>) -> f64 {
        y.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
    }

    fn assert_ok(rep: GradcheckReport) {
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        assert!(rep.checked > 0, "{rep:?}");
    }

    #[test]
    fn linear_gradients() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_matrix(&mut rng, 6, 5);
            let w = rand_matrix(&mut rng, 4, 5).data;
            let b = rand_matrix(&mut rng, 1, 4).data;
            let proj = rand_matrix(&mut rng, 6, 4);
            let (dx, dw, db) = linear_backward(&x, &w, &proj);
            let mut params = vec![x.data.clone(), w.clone(), b.clone()];
            let analytic = vec![dx.data, dw, db];
            let f = |p: &[Vec<f64>]| objective(&linear_forward(&Matrix::from_vec(6, 5, p[0].clone()), &p[1], &p[2]), &proj);
            assert_ok(check_fn(&mut params, &analytic, f, usize::MAX, &mut rng));
        }
    }

    #[test]
    fn batchnorm_gradients() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = rand_matrix(&mut rng, 7, 3);
            let gamma = rand_matrix(&mut rng, 1, 3).data;
            let beta = rand_matrix(&mut rng, 1, 3).data;
            let proj = rand_matrix(&mut rng, 7, 3);
            let (_, cache) = batchnorm_train(&x, &gamma, &beta);
            let (dx, dg, db) = batchnorm_backward(&cache, &gamma, &proj);
            let mut params = vec![x.data.clone(), gamma.clone(), beta.clone()];
            let f = |p: &[Vec<f64>]| objective(&batchnorm_train(&Matrix::from_vec(7, 3, p[0].clone()), &p[1], &p[2]).0, &proj);
            assert_ok(check_fn(&mut params, &[dx.data, dg, db], f, usize::MAX, &mut rng));
        }
    }

    #[test]
    fn relu_dropout_pool_gather_gradients() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = rand_matrix(&mut rng, 8, 3);
            let proj_pool = rand_matrix(&mut rng, 3, 3);
            let segs = [2usize, 5, 1];
            let idx = [3usize, 0, 3, 7, 1, 1, 6, 2];
            let drop_seed = rng.random::<u64>();
            let run = |x: &Matrix<f64>| {
                let mut h = gather_rows(x, &idx);
                let mask = relu_forward(&mut h);
                let scale = dropout_forward(&mut h, 0.3, &mut ChaCha8Rng::seed_from_u64(drop_seed));
                let (p, arg) = maxpool_forward(&h, &segs);
                (p, mask, scale, arg)
            };
            let (_, mask, scale, arg) = run(&x);
            let mut d = maxpool_backward(&arg, 8, &proj_pool);
            dropout_backward(&scale, &mut d);
            relu_backward(&mask, &mut d);
            let dx = scatter_rows(&d, &idx, 8, 3);
            let mut params = vec![x.data.clone()];
            let f = |p: &[Vec<f64>]| objective(&run(&Matrix::from_vec(8, 3, p[0].clone())).0, &proj_pool);
            assert_ok(check_fn(&mut params, &[dx.data], f, usize::MAX, &mut rng));
        }
    }

    #[test]
    fn dead_relu_passes_nothing() {
        let mut x = Matrix::from_vec(2, 2, vec![-1.0, 2.0, -0.5, -3.0]);
        let mask = relu_forward(&mut x);
        let mut d = Matrix::from_vec(2, 2, vec![1.0; 4]);
        relu_backward(&mask, &mut d);
        assert_eq!(d.data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_keeps_expectation() {
        // Inverted dropout followed by a linear unit is unbiased.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Matrix::from_vec(1, 16, (0..16).map(|i| (i as f64 * 0.7).sin() + 1.0).collect());
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();
        let eval = linear_forward(&h, &w, &[0.2]).data[0];
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = h.clone();
                dropout_forward(&mut x, 0.4, &mut rng);
                linear_forward(&x, &w, &[0.2]).data[0]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - eval).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {eval}");
    }

    #[test]
    fn eval_matches_train_with_frozen_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_matrix(&mut rng, 9, 4);
        let gamma = rand_matrix(&mut rng, 1, 4).data;
        let beta = rand_matrix(&mut rng, 1, 4).data;
        let (y, cache) = batchnorm_train(&x, &gamma, &beta);
        let ye = batchnorm_eval(&x, &gamma, &beta, &cache.mean, &cache.var);
        for (a, b) in y.data.iter().zip(&ye.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
