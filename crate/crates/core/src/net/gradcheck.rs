//! Central finite-difference checks in double precision.

use rand::Rng;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Coordinates skipped because forward and backward differences disagree
    /// (a ReLU or max-pool switch lies within one step).
    pub kinks: usize,
    pub max_rel_err: f64,
    /// `(tensor, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradcheckReport {
    pub fn merge(&mut self, other: &GradcheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares `analytic[t][i]` with central differences of `f` for up to
/// `per_tensor` randomly chosen coordinates of every tensor.
pub fn check_fn(
    params: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    f: impl Fn(&[Vec<f64>]) -> f64,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> GradcheckReport {
    let mut rep = GradcheckReport::default();
    let f0 = f(params);
    for t in 0..params.len() {
        let n = params[t].len();
        let coords: Vec<usize> = if per_tensor >= n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, per_tensor).into_vec()
        };
        for i in coords {
            let orig = params[t][i];
            params[t][i] = orig + STEP;
            let fp = f(params);
            params[t][i] = orig - STEP;
            let fm = f(params);
            params[t][i] = orig;
            let fwd = (fp - f0) / STEP;
            let bwd = (f0 - fm) / STEP;
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-6 {
                rep.kinks += 1;
                continue;
            }
            let num = (fp - fm) / (2.0 * STEP);
            // Differences below the cancellation noise of `f` carry no signal.
            let noise = 1e-8 * f0.abs().max(1.0);
            let err = if (analytic[t][i] - num).abs() <= noise {
                0.0
            } else {
                relative_error(analytic[t][i], num)
            };
            rep.checked += 1;
            if err >= rep.max_rel_err {
                rep.max_rel_err = err;
                rep.worst = Some((t, i, analytic[t][i], num));
            }
        }
    }
    rep
}
