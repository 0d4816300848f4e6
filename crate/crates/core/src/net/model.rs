use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{is_trainable, Arch, ArchSpec, NetworkWeights};
use super::container::Tensor;
use super::layers::*;
use super::sampling::{ball_query, farthest_point_sample};
use super::{Matrix, Real};
use crate::error::{Error, Result};
use crate::featurize::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout optional so gradients can be checked.
    Train { dropout: bool },
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone)]
struct Dense<T> {
    param: usize,
    input: Matrix<T>,
    bn: Option<BnCache<T>>,
    relu: Option<Vec<bool>>,
    drop: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
struct Level<T> {
    gather: Vec<usize>,
    prev_rows: usize,
    prev_cols: usize,
    mlp: Vec<Dense<T>>,
    pool_arg: Vec<usize>,
    pool_rows: usize,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub scores: Vec<T>,
    mode: Mode,
    levels: Vec<Level<T>>,
    head: Vec<Dense<T>>,
}

/// One gradient per parameter tensor, in layout order; running statistics
/// get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

#[derive(Clone, Copy)]
enum Grouping {
    Ball { k: usize, radius: f64, max_n: usize },
    Global { coords: bool },
}

/// A point-set scorer over featurized hypothesis sets.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchSpec,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<T>>,
    index: HashMap<String, usize>,
    columns: Vec<usize>,
}

impl<T: Real> Network<T> {
    pub fn from_weights(w: &NetworkWeights) -> Result<Self> {
        w.spec.validate()?;
        let layout = w.spec.param_layout();
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in layout {
            let t = w
                .get(&name)
                .ok_or_else(|| Error::Container(format!("missing tensor `{name}`")))?;
            if t.shape != shape {
                return Err(Error::Container(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape)));
            }
            params.push(t.data.iter().map(|&v| T::of(v as f64)).collect());
            names.push(name);
            shapes.push(shape);
        }
        let columns = w
            .spec
            .inputs
            .iter()
            .map(|c| CHANNELS.iter().position(|k| k == c).ok_or_else(|| Error::UnknownChannel(c.clone())))
            .collect::<Result<_>>()?;
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            spec: w.spec.clone(),
            names,
            shapes,
            params,
            index,
            columns,
        })
    }

    pub fn to_weights(&self) -> NetworkWeights {
        NetworkWeights {
            spec: self.spec.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.shapes)
                .zip(&self.params)
                .map(|((n, s), p)| {
                    (n.clone(), Tensor { shape: s.clone(), data: p.iter().map(|v| v.as_f64() as f32).collect() })
                })
                .collect(),
        }
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        is_trainable(&self.names[i])
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.index.get(name).map(|&i| self.params[i].as_slice())
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    fn idx(&self, name: &str) -> usize {
        self.index[name]
    }

    /// Selects this network's input channels from a full featurized set and
    /// sorts the rows so the result does not depend on point order.
    pub fn prepare(&self, set: &Matrix<T>) -> Result<Matrix<T>> {
        if set.cols != CHANNELS.len() {
            return Err(Error::InvalidInput(format!(
                "feature set has {} channels, expected {}",
                set.cols,
                CHANNELS.len()
            )));
        }
        if set.rows == 0 {
            return Err(Error::InvalidInput("empty feature set".into()));
        }
        if set.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut rows: Vec<Vec<T>> = (0..set.rows)
            .map(|r| self.columns.iter().map(|&c| set.data[r * set.cols + c]).collect())
            .collect();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(Matrix::from_vec(set.rows, self.columns.len(), rows.concat()))
    }

    fn dense_forward<R: Rng + ?Sized>(
        &self,
        x: Matrix<T>,
        prefix: &str,
        act: bool,
        dropout: f64,
        mode: Mode,
        rng: &mut R,
    ) -> (Matrix<T>, Dense<T>) {
        let param = self.idx(&format!("{prefix}.weight"));
        let mut y = linear_forward(&x, &self.params[param], &self.params[param + 1]);
        let mut bn = None;
        let mut relu = None;
        let mut drop = None;
        if act {
            let (g, b, rm, rv) = (
                &self.params[param + 2],
                &self.params[param + 3],
                &self.params[param + 4],
                &self.params[param + 5],
            );
            y = match mode {
                Mode::Train { .. } => {
                    let (y, c) = batchnorm_train(&y, g, b);
                    bn = Some(c);
                    y
                }
                Mode::Eval => batchnorm_eval(&y, g, b, rm, rv),
            };
            relu = Some(relu_forward(&mut y));
            if dropout > 0.0 && mode == (Mode::Train { dropout: true }) {
                drop = Some(dropout_forward(&mut y, dropout, rng));
            }
        }
        (y, Dense { param, input: x, bn, relu, drop })
    }

    fn dense_backward(&self, d: &Dense<T>, mut dy: Matrix<T>, grads: &mut Gradients<T>) -> Matrix<T> {
        if let Some(s) = &d.drop {
            dropout_backward(s, &mut dy);
        }
        if let Some(m) = &d.relu {
            relu_backward(m, &mut dy);
        }
        if let Some(c) = &d.bn {
            let (dx, dg, db) = batchnorm_backward(c, &self.params[d.param + 2], &dy);
            add_into(&mut grads.tensors[d.param + 2], &dg);
            add_into(&mut grads.tensors[d.param + 3], &db);
            dy = dx;
        }
        let (dx, dw, db) = linear_backward(&d.input, &self.params[d.param], &dy);
        add_into(&mut grads.tensors[d.param], &dw);
        add_into(&mut grads.tensors[d.param + 1], &db);
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn level_forward<R: Rng + ?Sized>(
        &self,
        feats: &Matrix<T>,
        coords: &[[T; 2]],
        sizes: &[usize],
        grouping: Grouping,
        prefix: &str,
        widths: usize,
        mode: Mode,
        rng: &mut R,
    ) -> (Matrix<T>, Vec<[T; 2]>, Vec<usize>, Level<T>) {
        let c = feats.cols;
        let mut gather = Vec::new();
        let mut rel: Vec<[T; 2]> = Vec::new();
        let mut segments = Vec::new();
        let mut new_coords = Vec::new();
        let mut new_sizes = Vec::new();
        let mut offset = 0;
        for &n in sizes {
            let local = &coords[offset..offset + n];
            match grouping {
                Grouping::Ball { k, radius, max_n } => {
                    let cents = farthest_point_sample(local, k);
                    let cc: Vec<[T; 2]> = cents.iter().map(|&i| local[i]).collect();
                    for (ci, g) in ball_query(&cc, local, T::of(radius), max_n).into_iter().enumerate() {
                        for j in g {
                            gather.push(offset + j);
                            rel.push([local[j][0] - cc[ci][0], local[j][1] - cc[ci][1]]);
                        }
                        segments.push(max_n);
                    }
                    new_coords.extend(cc);
                    new_sizes.push(k);
                }
                Grouping::Global { .. } => {
                    gather.extend(offset..offset + n);
                    rel.extend_from_slice(local);
                    segments.push(n);
                    new_coords.push([T::zero(); 2]);
                    new_sizes.push(1);
                }
            }
            offset += n;
        }
        let extra = match grouping {
            Grouping::Global { coords: false } => 0,
            _ => 2,
        };
        let mut x = Matrix::zeros(gather.len(), c + extra);
        for (r, &g) in gather.iter().enumerate() {
            let row = x.row_mut(r);
            row[..c].copy_from_slice(feats.row(g));
            if extra == 2 {
                row[c] = rel[r][0];
                row[c + 1] = rel[r][1];
            }
        }
        let mut mlp = Vec::with_capacity(widths);
        for j in 0..widths {
            let (y, d) = self.dense_forward(x, &format!("{prefix}{}", j + 1), true, 0.0, mode, rng);
            mlp.push(d);
            x = y;
        }
        let (pooled, pool_arg) = maxpool_forward(&x, &segments);
        let level = Level {
            gather,
            prev_rows: feats.rows,
            prev_cols: c,
            mlp,
            pool_arg,
            pool_rows: x.rows,
        };
        (pooled, new_coords, new_sizes, level)
    }

    /// Scores a batch of full-channel feature sets. In train mode the
    /// normalization statistics span every row of the batch.
    pub fn forward<R: Rng + ?Sized>(&self, sets: &[Matrix<T>], mode: Mode, rng: &mut R) -> Result<ForwardCache<T>> {
        if sets.is_empty() {
            return Ok(ForwardCache { scores: Vec::new(), mode, levels: Vec::new(), head: Vec::new() });
        }
        let prepared = sets.iter().map(|s| self.prepare(s)).collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = prepared.iter().map(|s| s.rows).collect();
        let cols = self.columns.len();
        let mut feats = Matrix::from_vec(sizes.iter().sum(), cols, prepared.into_iter().flat_map(|s| s.data).collect());
        let mut levels = Vec::new();
        let mut head = Vec::new();
        match &self.spec.arch {
            Arch::PointNetPP { sa, fc, max_n } => {
                let [cu, cv] = self.spec.coord_columns().expect("validated");
                let mut coords: Vec<[T; 2]> = (0..feats.rows).map(|r| [feats.data[r * cols + cu], feats.data[r * cols + cv]]).collect();
                let mut sizes = sizes;
                for (l, level) in sa.iter().enumerate() {
                    let grouping = match level.centroids {
                        Some(k) => Grouping::Ball { k, radius: level.radius, max_n: *max_n },
                        None => Grouping::Global { coords: true },
                    };
                    let (f, c, s, cache) =
                        self.level_forward(&feats, &coords, &sizes, grouping, &format!("sa{}.mlp", l + 1), level.mlp.len(), mode, rng);
                    feats = f;
                    coords = c;
                    sizes = s;
                    levels.push(cache);
                }
                for (j, &(_, p)) in fc.iter().enumerate() {
                    let (y, d) = self.dense_forward(feats, &format!("fc{}", j + 1), true, p, mode, rng);
                    head.push(d);
                    feats = y;
                }
            }
            Arch::PointNet { mlp, fc } => {
                let coords = vec![[T::zero(); 2]; feats.rows];
                let (f, _, _, cache) =
                    self.level_forward(&feats, &coords, &sizes, Grouping::Global { coords: false }, "mlp", mlp.len(), mode, rng);
                feats = f;
                levels.push(cache);
                for j in 0..fc.len() {
                    let (y, d) = self.dense_forward(feats, &format!("fc{}", j + 1), true, 0.0, mode, rng);
                    head.push(d);
                    feats = y;
                }
            }
        }
        let (y, d) = self.dense_forward(feats, "out", false, 0.0, mode, rng);
        head.push(d);
        if y.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network produced a non-finite score".into()));
        }
        Ok(ForwardCache { scores: y.data, mode, levels, head })
    }

    /// Eval-mode score of a single set.
    pub fn score(&self, set: &Matrix<T>) -> Result<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = self.forward(std::slice::from_ref(set), Mode::Eval, &mut rng)?;
        Ok(c.scores[0])
    }

    /// Eval-mode scores, one set at a time, in parallel.
    pub fn score_sets(&self, sets: &[Matrix<T>]) -> Result<Vec<T>> {
        sets.par_iter().map(|s| self.score(s)).collect()
    }

    /// Gradients of `Σ dscores[i] · scores[i]` with respect to every
    /// parameter. Needs a train-mode cache.
    pub fn backward(&self, cache: &ForwardCache<T>, dscores: &[T]) -> Result<Gradients<T>> {
        if cache.mode == Mode::Eval {
            return Err(Error::InvalidInput("backward needs a train-mode forward pass".into()));
        }
        if dscores.len() != cache.scores.len() {
            return Err(Error::InvalidInput(format!(
                "{} upstream gradients for {} scores",
                dscores.len(),
                cache.scores.len()
            )));
        }
        let mut grads = Gradients {
            tensors: self.params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        };
        if cache.scores.is_empty() {
            return Ok(grads);
        }
        let mut dy = Matrix::from_vec(dscores.len(), 1, dscores.to_vec());
        for d in cache.head.iter().rev() {
            dy = self.dense_backward(d, dy, &mut grads);
        }
        for (i, level) in cache.levels.iter().enumerate().rev() {
            let mut d = maxpool_backward(&level.pool_arg, level.pool_rows, &dy);
            for dense in level.mlp.iter().rev() {
                d = self.dense_backward(dense, d, &mut grads);
            }
            if i > 0 {
                dy = scatter_rows(&d, &level.gather, level.prev_rows, level.prev_cols);
            }
        }
        Ok(grads)
    }

    /// `running ← (1 − momentum)·running + momentum·batch` for every
    /// normalization layer seen in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>, momentum: f64) {
        let m = T::of(momentum);
        let denses: Vec<&Dense<T>> = cache.levels.iter().flat_map(|l| l.mlp.iter()).chain(cache.head.iter()).collect();
        for d in denses {
            if let Some(bn) = &d.bn {
                for (r, b) in self.params[d.param + 4].iter_mut().zip(&bn.mean) {
                    *r = (T::one() - m) * *r + m * *b;
                }
                for (r, b) in self.params[d.param + 5].iter_mut().zip(&bn.var) {
                    *r = (T::one() - m) * *r + m * *b;
                }
            }
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += *b;
    }
}
