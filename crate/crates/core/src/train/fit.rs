use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::jitter::{color_jitter, JitterFactors};
use super::{hypothesis_errors, selection_loss, EPS0};
use crate::error::{Error, Result};
use crate::featurize::{featurize_batch, FeaturizeConfig, PointDifferenceSet};
use crate::geom::RigidTransform;
use crate::hypo::{HypothesisSource, PoseHypothesis};
use crate::net::{read_container, write_container, Matrix, Mode, Network, NetworkWeights};
use crate::objmodel::ObjectModel;
use crate::render::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// The learning rate is multiplied by `drop_factor` once each of these
    /// epochs has completed.
    pub lr_drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub adam: AdamConfig,
    pub jitter: JitterFactors,
    pub joint_jitter: JitterFactors,
    pub val_fraction: f64,
    pub seed: u64,
    /// Add the ground-truth pose to every training hypothesis set.
    pub inject_gt: bool,
    /// Hypotheses featurized per step, ground truth included.
    pub hypotheses_per_step: usize,
    /// Objects visited per frame and epoch; 0 visits all.
    pub objects_per_frame: usize,
    /// Hypotheses per validation sample (a fixed subset).
    pub val_hypotheses: usize,
    pub bn_momentum: f64,
    /// Continue from the last checkpoint in the output directory.
    pub resume: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            epochs: 100,
            lr_drop_epochs: vec![30, 80],
            drop_factor: 0.1,
            adam: AdamConfig::default(),
            jitter: JitterFactors::observation(),
            joint_jitter: JitterFactors::joint(),
            val_fraction: 0.1,
            seed: 0,
            inject_gt: true,
            hypotheses_per_step: 16,
            objects_per_frame: 0,
            val_hypotheses: 32,
            bn_momentum: 0.1,
            resume: false,
        }
    }
}

/// Rounds to 12 significant digits so repeated decimal factors land on
/// the nearest clean value (`3e-4 · 0.1` is exactly `3e-5`).
fn clean(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap_or(v)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.jitter.validate()?;
        self.joint_jitter.validate()?;
        let ok = self.lr > 0.0
            && self.epochs > 0
            && self.drop_factor > 0.0
            && self.val_fraction > 0.0
            && self.val_fraction < 1.0
            && self.hypotheses_per_step >= 2
            && self.val_hypotheses >= 1
            && (0.0..=1.0).contains(&self.bn_momentum);
        if !ok {
            return Err(Error::InvalidInput(
                "train config: lr, epochs, drop_factor > 0; val_fraction in (0, 1); hypotheses_per_step >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| epoch > d).count();
        clean(self.lr * self.drop_factor.powi(drops as i32))
    }
}

/// One object instance in one frame with its candidate poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub scene: u32,
    pub frame: u32,
    pub obj_id: u32,
    pub gt: RigidTransform,
    pub hypotheses: Vec<PoseHypothesis>,
}

pub trait ObservationSource: Sync {
    fn observation(&self, scene: u32, frame: u32) -> Result<Observation>;
}

impl<F: Fn(u32, u32) -> Result<Observation> + Sync> ObservationSource for F {
    fn observation(&self, scene: u32, frame: u32) -> Result<Observation> {
        self(scene, frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_log(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    s
}

pub fn read_log(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_loss,lr") {
        return Err(Error::parse("log line 1", "expected header `epoch,train_loss,val_loss,lr`"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::parse(format!("log line {}", i + 2), format!("cannot parse `{l}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LogRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                val_loss: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Weights with the lowest validation loss (training loss without a
    /// validation split).
    pub best: NetworkWeights,
    pub best_epoch: usize,
    pub last: NetworkWeights,
    pub log: Vec<LogRow>,
}

struct Prepared<'a> {
    sample: &'a TrainSample,
    /// Targets for `sample.hypotheses`, then the ground truth.
    eps: Vec<f64>,
}

fn to_matrices(sets: &[PointDifferenceSet], min_points: usize) -> (Vec<usize>, Vec<Matrix<f32>>) {
    sets.iter()
        .enumerate()
        .filter(|(_, s)| s.is_scorable(min_points))
        .map(|(i, s)| (i, s.to_matrix::<f32>()))
        .unzip()
}

fn frame_seed(seed: u64, salt: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.rotate_left(17) ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn group_by_frame(idx: &[usize], samples: &[Prepared]) -> BTreeMap<(u32, u32), Vec<usize>> {
    let mut m: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for &i in idx {
        m.entry((samples[i].sample.scene, samples[i].sample.frame)).or_default().push(i);
    }
    m
}

/// Selection-loss training, one (frame, object) hypothesis set per step.
/// Writes `epoch_<k>.zphw`, `epoch_<k>.adam`, `best.zphw` and `log.csv`
/// into `out_dir` when given.
pub fn fit(
    samples: &[TrainSample],
    models: &BTreeMap<u32, ObjectModel>,
    source: &dyn ObservationSource,
    init: NetworkWeights,
    cfg: &TrainConfig,
    fcfg: &FeaturizeConfig,
    out_dir: Option<&Path>,
) -> Result<FitOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if !cfg.inject_gt && samples.iter().all(|s| s.hypotheses.is_empty()) {
        return Err(Error::Data("every training hypothesis set is empty".into()));
    }
    let prepared: Vec<Prepared> = samples
        .iter()
        .map(|s| {
            let model = models
                .get(&s.obj_id)
                .ok_or_else(|| Error::Data(format!("no model for object {}", s.obj_id)))?;
            let mut eps: Vec<f64> = hypothesis_errors(&s.hypotheses, &s.gt, model).iter().map(|e| e.eps).collect();
            eps.push(EPS0.ln());
            Ok(Prepared { sample: s, eps })
        })
        .collect::<Result<_>>()?;

    // Frame-level split.
    let keys: Vec<(u32, u32)> = samples.iter().map(|s| (s.scene, s.frame)).collect::<BTreeSet<_>>().into_iter().collect();
    let mut shuffled = keys.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, 1, 0)));
    let n_val = if keys.len() >= 2 {
        ((cfg.val_fraction * keys.len() as f64).round() as usize).clamp(1, keys.len() - 1)
    } else {
        0
    };
    let val_keys: BTreeSet<(u32, u32)> = shuffled[..n_val].iter().copied().collect();
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..prepared.len()).partition(|&i| val_keys.contains(&(samples[i].scene, samples[i].frame)));
    let train_frames = group_by_frame(&train_idx, &prepared);
    let val_frames = group_by_frame(&val_idx, &prepared);
    let mut subset_rng = ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, 2, 0));
    let val_subsets: BTreeMap<usize, Vec<usize>> = val_idx
        .iter()
        .map(|&i| {
            let n = prepared[i].sample.hypotheses.len();
            let mut pick = rand::seq::index::sample(&mut subset_rng, n, cfg.val_hypotheses.min(n)).into_vec();
            pick.sort_unstable();
            (i, pick)
        })
        .collect();

    let mut net = Network::<f32>::from_weights(&init)?;
    let sizes: Vec<usize> = net.params().iter().map(Vec::len).collect();
    let mut adam = Adam::<f32>::new(cfg.adam, &sizes);
    let mut log: Vec<LogRow> = Vec::new();
    let mut best: Option<(f64, usize, NetworkWeights)> = None;
    let mut start = 1;

    if let (true, Some(dir)) = (cfg.resume, out_dir) {
        if let Ok(text) = std::fs::read_to_string(dir.join("log.csv")) {
            log = read_log(&text)?;
            if let Some(last) = log.last().copied() {
                let w = NetworkWeights::load(&dir.join(format!("epoch_{}.zphw", last.epoch)))?;
                net = Network::from_weights(&w)?;
                let state = read_container(&std::fs::read(dir.join(format!("epoch_{}.adam", last.epoch)))?)?;
                adam = Adam::from_container(cfg.adam, net.names(), &state)?;
                let b = log
                    .iter()
                    .min_by(|a, b| select_key(a).total_cmp(&select_key(b)))
                    .copied()
                    .expect("nonempty log");
                best = Some((select_key(&b), b.epoch, NetworkWeights::load(&dir.join("best.zphw"))?));
                start = last.epoch + 1;
            }
        }
    }

    for epoch in start..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, 3, epoch));
        let mut order: Vec<(&(u32, u32), &Vec<usize>)> = train_frames.iter().collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for ((scene, frame), members) in order {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            if cfg.objects_per_frame > 0 {
                members.truncate(cfg.objects_per_frame);
            }
            let obs = source.observation(*scene, *frame)?;
            for i in members {
                let p = &prepared[i];
                let model = &models[&p.sample.obj_id];
                let (jobs, jcloud) = color_jitter(&obs, Some(&model.cloud), &cfg.jitter, &cfg.joint_jitter, &mut rng);
                let cloud = jcloud.expect("model given");
                let n = p.sample.hypotheses.len();
                let want = cfg.hypotheses_per_step - usize::from(cfg.inject_gt);
                let mut pick = rand::seq::index::sample(&mut rng, n, want.min(n)).into_vec();
                pick.sort_unstable();
                if cfg.inject_gt {
                    pick.push(n);
                }
                let hyps: Vec<PoseHypothesis> = pick
                    .iter()
                    .map(|&j| {
                        if j == n {
                            PoseHypothesis::new(p.sample.gt, HypothesisSource::InjectedGt, 0.0)
                        } else {
                            p.sample.hypotheses[j]
                        }
                    })
                    .collect();
                let sets = featurize_batch(&cloud, &hyps, &jobs, fcfg);
                let (keep, mats) = to_matrices(&sets, fcfg.min_points);
                if mats.len() < 2 {
                    continue;
                }
                let eps: Vec<f64> = keep.iter().map(|&k| p.eps[pick[k]]).collect();
                let cache = net.forward(&mats, Mode::Train { dropout: true }, &mut rng)?;
                let scores: Vec<f64> = cache.scores.iter().map(|&s| s as f64).collect();
                let Some((loss, grad)) = selection_loss(&scores, &eps) else {
                    continue;
                };
                let grad: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
                let grads = net.backward(&cache, &grad)?;
                let trainable: Vec<bool> = (0..net.names().len()).map(|k| net.is_trainable(k)).collect();
                adam.step(net.params_mut(), &grads.tensors, lr, |k| trainable[k]);
                net.update_running_stats(&cache, cfg.bn_momentum);
                total += loss;
                steps += 1;
            }
        }
        if steps == 0 {
            return Err(Error::Data("no training sample produced two scorable hypotheses".into()));
        }
        let train_loss = total / steps as f64;
        if !train_loss.is_finite() || net.params().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
        let val_loss = validation_loss(&net, &prepared, &val_frames, &val_subsets, models, source, fcfg)?;
        let row = LogRow { epoch, train_loss, val_loss, lr };
        log.push(row);
        let weights = net.to_weights();
        let key = select_key(&row);
        let improved = best.as_ref().is_none_or(|(b, _, _)| key < *b);
        if improved {
            best = Some((key, epoch, weights.clone()));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            weights.save(&dir.join(format!("epoch_{epoch}.zphw")))?;
            std::fs::write(dir.join(format!("epoch_{epoch}.adam")), write_container(&adam.to_container(net.names()))?)?;
            if improved {
                weights.save(&dir.join("best.zphw"))?;
            }
            std::fs::write(dir.join("log.csv"), write_log(&log))?;
        }
    }
    let (_, best_epoch, best) = best.ok_or_else(|| Error::InvalidInput("no epochs to run".into()))?;
    Ok(FitOutput { best, best_epoch, last: net.to_weights(), log })
}

/// Validation loss when there is a split, training loss otherwise.
fn select_key(r: &LogRow) -> f64 {
    if r.val_loss.is_nan() {
        r.train_loss
    } else {
        r.val_loss
    }
}

fn validation_loss(
    net: &Network<f32>,
    prepared: &[Prepared],
    frames: &BTreeMap<(u32, u32), Vec<usize>>,
    subsets: &BTreeMap<usize, Vec<usize>>,
    models: &BTreeMap<u32, ObjectModel>,
    source: &dyn ObservationSource,
    fcfg: &FeaturizeConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((scene, frame), members) in frames {
        let obs = source.observation(*scene, *frame)?;
        for &i in members {
            let p = &prepared[i];
            let pick = &subsets[&i];
            let hyps: Vec<PoseHypothesis> = pick.iter().map(|&j| p.sample.hypotheses[j]).collect();
            let sets = featurize_batch(&models[&p.sample.obj_id].cloud, &hyps, &obs, fcfg);
            let (keep, mats) = to_matrices(&sets, fcfg.min_points);
            if mats.is_empty() {
                continue;
            }
            let scores: Vec<f64> = net.score_sets(&mats)?.iter().map(|&s| s as f64).collect();
            let eps: Vec<f64> = keep.iter().map(|&k| p.eps[pick[k]]).collect();
            if let Some((loss, _)) = selection_loss(&scores, &eps) {
                total += loss;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}
