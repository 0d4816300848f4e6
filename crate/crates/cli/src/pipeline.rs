//! The pipeline stages. Each reads its inputs from the configured paths and
//! writes its outputs next to them, so stages can run separately.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use zephyr::featurize::featurize_batch;
use zephyr::geom::{PointCloud, RigidTransform};
use zephyr::objmodel::surface_cloud;
use zephyr::hypo::{
    build_ppf_model, extract_features, icp_stages, oriented_pair_hypotheses, ppf_hypotheses, read_jsonl, refine_pose,
    scene_cloud, write_jsonl, HypothesisRecord, HypothesisSource, OrientedFeature, PoseHypothesis, PpfModel,
};
use zephyr::metrics::{average_recall, evaluate, summary_json, write_results_csv, ArSummary, EvalInput, EvalRecord};
use zephyr::net::{Matrix, Network, NetworkWeights};
use zephyr::render::dataset::{scene_dir, write_scene, CameraEntry, DatasetReader, FrameRecord, GtEntry};
use zephyr::render::{synthesize_scene, Observation};
use zephyr::train::{fit, TrainConfig, TrainSample};

use crate::config::{PipelineConfig, ScoreMethod};
use crate::error::{CliError, CliResult};
use crate::models::{self, LoadedObject, ModelStore};
use crate::overlay::overlay;

const STREAM_SCENE: u64 = 1;
const STREAM_HYPO: u64 = 2;
const STREAM_NET: u64 = 3;
const STREAM_TRAIN: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of a named stream.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(stream.wrapping_mul(0x1000_0000_01B3) ^ splitmix(index)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

/// Objects and scenes of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub objects: Vec<u32>,
    pub scenes: Vec<u32>,
}

/// One object instance to estimate.
#[derive(Debug, Clone)]
pub struct Target {
    pub scene: u32,
    pub frame: u32,
    pub obj_id: u32,
    pub gt: RigidTransform,
    pub camera: CameraEntry,
}

/// A line of `estimates.jsonl`; pose fields are null when no hypothesis
/// could be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub frame: u32,
    pub obj_id: u32,
    pub source: Option<HypothesisSource>,
    pub score: Option<f64>,
    /// Position of the selected hypothesis in its input set.
    pub hypothesis: Option<usize>,
    #[serde(rename = "R")]
    pub r: Option<Vec<f64>>,
    pub t_mm: Option<Vec<f64>>,
}

impl EstimateRecord {
    pub fn none(frame: u32, obj_id: u32) -> Self {
        Self { frame, obj_id, source: None, score: None, hypothesis: None, r: None, t_mm: None }
    }

    pub fn pose(&self) -> CliResult<Option<RigidTransform>> {
        match (&self.r, &self.t_mm) {
            (Some(r), Some(t)) => {
                let t: Vec<f64> = t.iter().map(|v| v / 1000.0).collect();
                Ok(Some(RigidTransform::from_row_major(r, &t)?))
            }
            (None, None) => Ok(None),
            _ => Err(CliError::Data(format!("estimate ({}, {}) has only half a pose", self.frame, self.obj_id))),
        }
    }
}

pub fn write_estimates(records: &[EstimateRecord]) -> CliResult<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(zephyr::Error::from)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_estimates(text: &str) -> CliResult<Vec<EstimateRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("estimates line {}: {e}", i + 1))))
        .collect()
}

/// What `score` produced for one target, with the scores of every
/// hypothesis (`None` where the set was not scorable).
#[derive(Debug, Clone)]
pub struct Selection {
    pub record: EstimateRecord,
    pub scores: Vec<Option<f64>>,
}

/// Lengths of the access logs at some point in time.
#[derive(Debug, Clone, Copy, Default)]
pub struct AccessMark {
    dataset: usize,
    other: usize,
}

/// Configured stages plus a log of every input file they opened.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    reader: DatasetReader,
    log: Arc<Mutex<Vec<PathBuf>>>,
    store: ModelStore,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        cfg.validate()?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let store = ModelStore::new(&cfg.paths.models, cfg.prepare, log.clone());
        Ok(Self { reader: DatasetReader::new(&cfg.paths.dataset), cfg, log, store })
    }

    /// Dataset, model, hypothesis, estimate and weight files read so far.
    pub fn accessed(&self) -> Vec<PathBuf> {
        self.accessed_since(AccessMark::default())
    }

    pub fn access_mark(&self) -> AccessMark {
        AccessMark {
            dataset: self.reader.accessed().len(),
            other: self.log.lock().map(|l| l.len()).unwrap_or(0),
        }
    }

    /// Files read after `mark` was taken.
    pub fn accessed_since(&self, mark: AccessMark) -> Vec<PathBuf> {
        let mut all: Vec<PathBuf> = self.reader.accessed().into_iter().skip(mark.dataset).collect();
        if let Ok(l) = self.log.lock() {
            all.extend(l.iter().skip(mark.other).cloned());
        }
        all
    }

    fn read_text(&self, path: &Path) -> CliResult<String> {
        if let Ok(mut l) = self.log.lock() {
            l.push(path.to_path_buf());
        }
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn manifest_path(&self, split: SplitName) -> PathBuf {
        self.cfg.paths.dataset.join(format!("{}.json", split.as_str()))
    }

    pub fn manifest(&self, split: SplitName) -> CliResult<Manifest> {
        let path = self.manifest_path(split);
        serde_json::from_str(&self.read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn split_objects(&self, split: SplitName) -> &[u32] {
        match split {
            SplitName::Train => &self.cfg.split.seen,
            SplitName::Test => &self.cfg.split.unseen,
        }
    }

    /// Writes the procedural object catalog into the models directory.
    pub fn gen_models(&self) -> CliResult<Vec<u32>> {
        let ids = models::write_catalog(&self.cfg.paths.models)?;
        info!("wrote {} models to {}", ids.len(), self.cfg.paths.models.display());
        Ok(ids)
    }

    /// Synthesizes train scenes from seen objects and test scenes from
    /// unseen ones, one frame per scene, plus the split manifests.
    pub fn gen_data(&self) -> CliResult<()> {
        let t0 = Instant::now();
        let available = models::available(&self.cfg.paths.models)?;
        if available.is_empty() {
            return Err(CliError::Data(format!("no models in {}", self.cfg.paths.models.display())));
        }
        let root = &self.cfg.paths.dataset;
        let scenes = root.join("scenes");
        if scenes.exists() {
            std::fs::remove_dir_all(&scenes)?;
        }
        std::fs::create_dir_all(&scenes)?;
        let n_train = self.cfg.data.train_scenes;
        let n_test = self.cfg.data.test_scenes;
        for (split, range) in [(SplitName::Train, 0..n_train), (SplitName::Test, n_train..n_train + n_test)] {
            let ids = self.split_objects(split);
            let meshes: Vec<(u32, _)> = ids
                .iter()
                .map(|&id| self.store.mesh(id).map(|(_, m)| (id, m)))
                .collect::<CliResult<_>>()?;
            let refs: Vec<(u32, &_)> = meshes.iter().map(|(id, m)| (*id, m)).collect();
            let scene_ids: Vec<u32> = range.collect();
            scene_ids.par_iter().try_for_each(|&sid| -> CliResult<()> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_SCENE, sid as u64));
                let s = synthesize_scene(&refs, &self.cfg.scene, &mut rng)?;
                let rec = FrameRecord {
                    frame_id: sid,
                    rgb: s.observation.rgb,
                    depth: s.observation.depth,
                    intrinsics: s.observation.intrinsics,
                    gt: s
                        .objects
                        .iter()
                        .map(|o| GtEntry { obj_id: o.object_id, pose: o.pose, visible_fraction: Some(o.visible_fraction) })
                        .collect(),
                };
                write_scene(&scene_dir(root, sid), &[rec])?;
                Ok(())
            })?;
            let manifest = Manifest { objects: ids.to_vec(), scenes: scene_ids };
            let json = serde_json::to_string_pretty(&manifest).map_err(zephyr::Error::from)?;
            std::fs::write(self.manifest_path(split), json + "\n")?;
            info!("{}: {} scenes", split.as_str(), manifest.scenes.len());
        }
        info!("gen-data done in {:.1}s", t0.elapsed().as_secs_f64());
        Ok(())
    }

    /// Ground-truth instances of manifest objects that are visible enough,
    /// sorted by (frame, object). Frame ids must be unique dataset-wide.
    pub fn targets(&self, split: SplitName) -> CliResult<(Manifest, Vec<Target>)> {
        let m = self.manifest(split)?;
        let objects: BTreeSet<u32> = m.objects.iter().copied().collect();
        let mut out = Vec::new();
        let mut frame_scene: BTreeMap<u32, u32> = BTreeMap::new();
        for &scene in &m.scenes {
            let cams = self.reader.cameras(scene)?;
            for (frame, entries) in self.reader.ground_truth(scene)? {
                if let Some(prev) = frame_scene.insert(frame, scene) {
                    return Err(CliError::Data(format!("frame {frame} appears in scenes {prev} and {scene}")));
                }
                let camera = *cams
                    .get(&frame)
                    .ok_or_else(|| CliError::Data(format!("scene {scene} frame {frame} has no camera")))?;
                let mut seen = BTreeSet::new();
                for g in entries {
                    if !objects.contains(&g.obj_id) {
                        return Err(CliError::Data(format!(
                            "scene {scene} holds object {} outside the {} manifest",
                            g.obj_id,
                            split.as_str()
                        )));
                    }
                    if g.visible_fraction.is_some_and(|v| v < self.cfg.data.min_visible) {
                        continue;
                    }
                    if !seen.insert(g.obj_id) {
                        warn!("frame {frame}: object {} appears twice; keeping the first", g.obj_id);
                        continue;
                    }
                    out.push(Target { scene, frame, obj_id: g.obj_id, gt: g.pose, camera });
                }
            }
        }
        out.sort_by_key(|t| (t.frame, t.obj_id));
        Ok((m, out))
    }

    fn observation(&self, t: &Target) -> CliResult<Observation> {
        Ok(self.reader.observation(t.scene, t.frame, &t.camera)?)
    }

    /// Hypotheses for every target of `split`, written to
    /// `<output>/hypotheses/<split>.jsonl`.
    pub fn hypo(&self, split: SplitName) -> CliResult<Vec<HypothesisRecord>> {
        let t0 = Instant::now();
        let (m, targets) = self.targets(split)?;
        let objects = self.store.load_all(&m.objects)?;
        let hc = &self.cfg.hypo.ppf;
        let ppf: BTreeMap<u32, PpfModel> = objects
            .par_iter()
            .map(|(&id, o)| build_ppf_model(&o.model, hc).map(|p| (id, p)))
            .collect::<Result<_, _>>()?;
        let features: BTreeMap<u32, Vec<OrientedFeature>> = if hc.oriented_pair {
            objects.iter().map(|(&id, o)| (id, extract_features(&o.model.cloud, &self.cfg.pair))).collect()
        } else {
            BTreeMap::new()
        };
        let frames = group_by_frame(&targets);
        let per_frame: Vec<Vec<HypothesisRecord>> = frames
            .par_iter()
            .map(|group| -> CliResult<Vec<HypothesisRecord>> {
                let obs = match self.observation(group[0]) {
                    Ok(o) => o,
                    Err(e) => {
                        warn!("frame {} skipped: {e}", group[0].frame);
                        return Ok(Vec::new());
                    }
                };
                let mut out = Vec::new();
                for t in group {
                    let pm = &ppf[&t.obj_id];
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        self.cfg.seed,
                        STREAM_HYPO,
                        ((t.frame as u64) << 32) | t.obj_id as u64,
                    ));
                    let scene = scene_cloud(&obs, pm.diameter, hc)?;
                    let mut hyps = ppf_hypotheses(pm, &scene, hc, &mut rng)?;
                    if hc.oriented_pair {
                        hyps.extend(oriented_pair_hypotheses(&features[&t.obj_id], &obs, &self.cfg.pair, hc.pair_max));
                    }
                    if self.cfg.hypo.inject_gt {
                        hyps.push(PoseHypothesis::new(t.gt, HypothesisSource::InjectedGt, 0.0));
                    }
                    out.extend(hyps.iter().map(|h| HypothesisRecord::new(t.frame, t.obj_id, h)));
                }
                Ok(out)
            })
            .collect::<CliResult<_>>()?;
        let records: Vec<HypothesisRecord> = per_frame.into_iter().flatten().collect();
        let path = self.cfg.hypotheses_path(split.as_str());
        std::fs::create_dir_all(path.parent().expect("hypotheses file has a parent"))?;
        std::fs::write(&path, write_jsonl(&records)?)?;
        info!(
            "hypo {}: {} hypotheses for {} targets in {:.1}s",
            split.as_str(),
            records.len(),
            targets.len(),
            t0.elapsed().as_secs_f64()
        );
        Ok(records)
    }

    /// Hypothesis sets keyed by (frame, object); ids that are not targets
    /// of the split are an error.
    pub fn hypothesis_sets(
        &self,
        split: SplitName,
        targets: &[Target],
    ) -> CliResult<BTreeMap<(u32, u32), Vec<PoseHypothesis>>> {
        let path = self.cfg.hypotheses_path(split.as_str());
        let records = read_jsonl(&self.read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let keys: BTreeSet<(u32, u32)> = targets.iter().map(|t| (t.frame, t.obj_id)).collect();
        let mut sets: BTreeMap<(u32, u32), Vec<PoseHypothesis>> = BTreeMap::new();
        for r in records {
            if !keys.contains(&(r.frame, r.obj_id)) {
                return Err(CliError::Data(format!(
                    "{}: hypothesis for frame {} object {} matches no {} target",
                    path.display(),
                    r.frame,
                    r.obj_id,
                    split.as_str()
                )));
            }
            sets.entry((r.frame, r.obj_id)).or_default().push(r.hypothesis()?);
        }
        Ok(sets)
    }

    /// Trains the scorer on the train split; returns the best weights.
    pub fn train(&self) -> CliResult<NetworkWeights> {
        let t0 = Instant::now();
        let (m, targets) = self.targets(SplitName::Train)?;
        if let Some(id) = m.objects.iter().find(|id| !self.cfg.split.seen.contains(id)) {
            return Err(CliError::Data(format!("train manifest lists object {id}, which is not in the seen split")));
        }
        let sets = self.hypothesis_sets(SplitName::Train, &targets)?;
        let samples: Vec<TrainSample> = targets
            .iter()
            .filter_map(|t| {
                let hyps: Vec<PoseHypothesis> = sets
                    .get(&(t.frame, t.obj_id))?
                    .iter()
                    .filter(|h| h.source != HypothesisSource::InjectedGt)
                    .copied()
                    .collect();
                Some(TrainSample { scene: t.scene, frame: t.frame, obj_id: t.obj_id, gt: t.gt, hypotheses: hyps })
            })
            .collect();
        if samples.is_empty() {
            return Err(CliError::Data("train split has no hypothesis sets".into()));
        }
        let objects = self.store.load_all(&m.objects)?;
        let models: BTreeMap<u32, _> = objects.into_iter().map(|(id, o)| (id, o.model)).collect();
        let cams: BTreeMap<(u32, u32), CameraEntry> = targets.iter().map(|t| ((t.scene, t.frame), t.camera)).collect();
        let source = |scene: u32, frame: u32| -> zephyr::Result<Observation> {
            let cam = cams
                .get(&(scene, frame))
                .ok_or_else(|| zephyr::Error::Data(format!("no camera for scene {scene} frame {frame}")))?;
            self.reader.observation(scene, frame, cam)
        };
        let spec = self.cfg.net.spec()?;
        let init = NetworkWeights::init(spec, derive_seed(self.cfg.seed, STREAM_NET, 0))?;
        let tcfg = TrainConfig {
            seed: derive_seed(self.cfg.seed, STREAM_TRAIN, self.cfg.train.seed),
            ..self.cfg.train.clone()
        };
        let dir = self.cfg.train_dir();
        std::fs::create_dir_all(&dir)?;
        info!("training {} on {} samples from {} frames", self.cfg.net.arch, samples.len(), cams.len());
        let out = fit(&samples, &models, &source, init, &tcfg, &self.cfg.featurize, Some(&dir))?;
        if let Some(w) = &self.cfg.paths.weights {
            if *w != dir.join("best.zphw") {
                if let Some(p) = w.parent() {
                    std::fs::create_dir_all(p)?;
                }
                out.best.save(w)?;
            }
        }
        if let Some(last) = out.log.last() {
            info!(
                "train done in {:.1}s: best epoch {}, last train loss {:.4}, val loss {:.4}",
                t0.elapsed().as_secs_f64(),
                out.best_epoch,
                last.train_loss,
                last.val_loss
            );
        }
        Ok(out.best)
    }

    fn load_weights(&self) -> CliResult<NetworkWeights> {
        let path = self.cfg.weights_path();
        let bytes = std::fs::read(&path).map_err(|e| CliError::Data(format!("weights {}: {e}", path.display())))?;
        if let Ok(mut l) = self.log.lock() {
            l.push(path.clone());
        }
        Ok(NetworkWeights::from_bytes_expecting(&bytes, &self.cfg.net.arch)?)
    }

    /// Selects one hypothesis per test target and writes `estimates.jsonl`.
    pub fn score(&self) -> CliResult<Vec<Selection>> {
        let t0 = Instant::now();
        let (m, targets) = self.targets(SplitName::Test)?;
        let sets = self.hypothesis_sets(SplitName::Test, &targets)?;
        let net = match self.cfg.score.method {
            ScoreMethod::Network => Some(Network::<f32>::from_weights(&self.load_weights()?)?),
            ScoreMethod::PpfTop => None,
        };
        let objects = self.store.load_all(&m.objects)?;
        let mut icp_clouds = BTreeMap::new();
        if self.cfg.score.icp {
            for (&id, o) in &objects {
                icp_clouds.insert(id, surface_cloud(id, &o.mesh, self.cfg.hypo.ppf.icp_model_leaf, self.cfg.prepare.seed)?);
            }
        }
        let frames = group_by_frame(&targets);
        let per_frame: Vec<Vec<Selection>> = frames
            .par_iter()
            .map(|group| self.score_frame(group, &sets, net.as_ref(), &objects, &icp_clouds))
            .collect::<CliResult<_>>()?;
        let selections: Vec<Selection> = per_frame.into_iter().flatten().collect();
        let records: Vec<EstimateRecord> = selections.iter().map(|s| s.record.clone()).collect();
        std::fs::create_dir_all(&self.cfg.paths.output)?;
        std::fs::write(self.cfg.estimates_path(), write_estimates(&records)?)?;
        let missing = records.iter().filter(|r| r.r.is_none()).count();
        info!(
            "score: {} estimates ({} without a pose) in {:.1}s",
            records.len(),
            missing,
            t0.elapsed().as_secs_f64()
        );
        Ok(selections)
    }

    fn score_frame(
        &self,
        group: &[&Target],
        sets: &BTreeMap<(u32, u32), Vec<PoseHypothesis>>,
        net: Option<&Network<f32>>,
        objects: &BTreeMap<u32, LoadedObject>,
        icp_clouds: &BTreeMap<u32, PointCloud>,
    ) -> CliResult<Vec<Selection>> {
        let mut obs: Option<Observation> = None;
        let mut out = Vec::new();
        for t in group {
            let empty = Vec::new();
            let hyps = sets.get(&(t.frame, t.obj_id)).unwrap_or(&empty);
            if hyps.is_empty() {
                out.push(Selection { record: EstimateRecord::none(t.frame, t.obj_id), scores: Vec::new() });
                continue;
            }
            if obs.is_none() {
                obs = Some(self.observation(t)?);
            }
            let obs = obs.as_ref().expect("loaded above");
            let model = &objects[&t.obj_id].model;
            let (scores, pick) = match net {
                Some(net) => {
                    let feats = featurize_batch(&model.cloud, hyps, obs, &self.cfg.featurize);
                    let (keep, mats): (Vec<usize>, Vec<Matrix<f32>>) = feats
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.is_scorable(self.cfg.featurize.min_points))
                        .map(|(i, s)| (i, s.to_matrix::<f32>()))
                        .unzip();
                    let raw = net.score_sets(&mats)?;
                    if raw.iter().any(|s| !s.is_finite()) {
                        return Err(CliError::Numeric(format!("non-finite score for frame {} object {}", t.frame, t.obj_id)));
                    }
                    let mut scores = vec![None; hyps.len()];
                    for (&i, &s) in keep.iter().zip(&raw) {
                        scores[i] = Some(s as f64);
                    }
                    (scores, argmax(&raw).map(|j| keep[j]))
                }
                None => {
                    let prior: Vec<f64> = hyps
                        .iter()
                        .map(|h| if h.source == HypothesisSource::Ppf { h.prior_score } else { f64::NEG_INFINITY })
                        .collect();
                    (prior.iter().map(|&p| Some(p)).collect(), argmax(&prior))
                }
            };
            let Some(i) = pick else {
                out.push(Selection { record: EstimateRecord::none(t.frame, t.obj_id), scores });
                continue;
            };
            let mut chosen = hyps[i];
            if let Some(cloud) = icp_clouds.get(&t.obj_id) {
                let hc = &self.cfg.hypo.ppf;
                let stages = icp_stages(obs, model.diameter, hc)?;
                chosen = refine_pose(cloud, &stages, &chosen, hc.icp_max_iter, hc.icp_tol, hc.icp_color_weight);
            }
            let rec = HypothesisRecord::new(t.frame, t.obj_id, &chosen);
            out.push(Selection {
                record: EstimateRecord {
                    frame: t.frame,
                    obj_id: t.obj_id,
                    source: Some(chosen.source),
                    score: scores[i],
                    hypothesis: Some(i),
                    r: Some(rec.r),
                    t_mm: Some(rec.t_mm),
                },
                scores,
            });
        }
        Ok(out)
    }

    /// Evaluates `estimates.jsonl` against the test ground truth; writes
    /// `results.csv`, `summary.json` and, if enabled, `overlays/`.
    pub fn eval(&self) -> CliResult<(Vec<EvalRecord>, ArSummary)> {
        let t0 = Instant::now();
        let (m, targets) = self.targets(SplitName::Test)?;
        let estimates = read_estimates(&self.read_text(&self.cfg.estimates_path())?)?;
        let keys: BTreeSet<(u32, u32)> = targets.iter().map(|t| (t.frame, t.obj_id)).collect();
        let mut by_key: BTreeMap<(u32, u32), Option<RigidTransform>> = BTreeMap::new();
        let mut unknown = Vec::new();
        for e in &estimates {
            if !keys.contains(&(e.frame, e.obj_id)) {
                unknown.push(format!("({}, {})", e.frame, e.obj_id));
                continue;
            }
            if by_key.insert((e.frame, e.obj_id), e.pose()?).is_some() {
                return Err(CliError::Data(format!("duplicate estimate for frame {} object {}", e.frame, e.obj_id)));
            }
        }
        if !unknown.is_empty() {
            return Err(CliError::Data(format!(
                "{} estimates match no test target: {}",
                unknown.len(),
                unknown.join(", ")
            )));
        }
        let absent = keys.iter().filter(|k| !by_key.contains_key(k)).count();
        if absent > 0 {
            warn!("{absent} test targets have no estimate; counted as misses");
        }
        let objects = self.store.load_all(&m.objects)?;
        let overlays = self.cfg.paths.output.join("overlays");
        if self.cfg.eval.overlays {
            std::fs::create_dir_all(&overlays)?;
        }
        let frames = group_by_frame(&targets);
        let per_frame: Vec<(usize, Vec<EvalRecord>)> = frames
            .par_iter()
            .map(|group| -> CliResult<(usize, Vec<EvalRecord>)> {
                let obs = self.observation(group[0])?;
                let mut recs = Vec::new();
                let mut drawn = Vec::new();
                for t in group {
                    let o = &objects[&t.obj_id];
                    let est = by_key.get(&(t.frame, t.obj_id)).copied().flatten();
                    let input = EvalInput {
                        mesh: &o.mesh,
                        points: &o.model.cloud.positions,
                        symmetries: &o.model.symmetry,
                        diameter: o.model.diameter,
                        intrinsics: &obs.intrinsics,
                        depth_obs: &obs.depth,
                    };
                    recs.push(evaluate(t.frame, t.obj_id, est.as_ref(), &t.gt, &input, &self.cfg.metrics)?);
                    if let Some(p) = est {
                        drawn.push((&o.mesh, p));
                    }
                }
                if self.cfg.eval.overlays {
                    overlay(&obs.rgb, &obs.intrinsics, &drawn)
                        .save(overlays.join(format!("{:06}.png", group[0].frame)))
                        .map_err(zephyr::Error::from)?;
                }
                Ok((obs.width(), recs))
            })
            .collect::<CliResult<_>>()?;
        let widths: BTreeSet<usize> = per_frame.iter().map(|(w, _)| *w).collect();
        if widths.len() > 1 {
            return Err(CliError::Data(format!("test frames differ in width: {widths:?}")));
        }
        let width = widths.into_iter().next().ok_or_else(|| CliError::Data("test split has no targets".into()))?;
        let records: Vec<EvalRecord> = per_frame.into_iter().flat_map(|(_, r)| r).collect();
        let diameters: BTreeMap<u32, f64> = objects.iter().map(|(&id, o)| (id, o.model.diameter)).collect();
        let summary = average_recall(&records, &self.cfg.metrics, &diameters, width)?;
        std::fs::create_dir_all(&self.cfg.paths.output)?;
        std::fs::write(
            self.cfg.paths.output.join("results.csv"),
            write_results_csv(&records, &self.cfg.metrics.vsd_taus),
        )?;
        std::fs::write(self.cfg.paths.output.join("summary.json"), summary_json(&summary))?;
        info!(
            "eval: AR {:.4} (VSD {:.4}, MSSD {:.4}, MSPD {:.4}) over {} targets in {:.1}s",
            summary.ar,
            summary.ar_vsd,
            summary.ar_mssd,
            summary.ar_mspd,
            records.len(),
            t0.elapsed().as_secs_f64()
        );
        Ok((records, summary))
    }

    /// Every stage in order; models are generated when the directory has none.
    pub fn all(&self) -> CliResult<ArSummary> {
        let have = models::available(&self.cfg.paths.models).unwrap_or_default();
        let wanted = self.cfg.split.seen.iter().chain(&self.cfg.split.unseen);
        if have.is_empty() || wanted.clone().any(|id| !have.contains(id)) {
            self.gen_models()?;
        }
        self.gen_data()?;
        self.hypo(SplitName::Train)?;
        self.hypo(SplitName::Test)?;
        if self.cfg.score.method == ScoreMethod::Network {
            self.train()?;
        }
        self.score()?;
        Ok(self.eval()?.1)
    }
}

fn group_by_frame(targets: &[Target]) -> Vec<Vec<&Target>> {
    let mut out: Vec<Vec<&Target>> = Vec::new();
    for t in targets {
        match out.last_mut() {
            Some(g) if g[0].frame == t.frame => g.push(t),
            _ => out.push(vec![t]),
        }
    }
    out
}

/// Index of the largest value; the first one wins ties. `None` if empty
/// or no value exceeds negative infinity.
pub fn argmax<T: Copy + PartialOrd + Into<f64>>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        let x: f64 = x.into();
        if x > f64::NEG_INFINITY && best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_the_first_of_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
        assert_eq!(argmax(&[f64::NEG_INFINITY]), None);
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(7, STREAM_SCENE, 0);
        assert_eq!(a, derive_seed(7, STREAM_SCENE, 0));
        assert_ne!(a, derive_seed(7, STREAM_SCENE, 1));
        assert_ne!(a, derive_seed(7, STREAM_HYPO, 0));
        assert_ne!(a, derive_seed(8, STREAM_SCENE, 0));
    }

    #[test]
    fn estimate_lines_round_trip() {
        let pose = RigidTransform::rot_z(0.4).compose(&RigidTransform::from_translation([0.01, 0.02, 0.5].into()));
        let h = HypothesisRecord::new(3, 2, &PoseHypothesis::new(pose, HypothesisSource::Ppf, 5.0));
        let recs = vec![
            EstimateRecord {
                frame: 3,
                obj_id: 2,
                source: Some(HypothesisSource::Ppf),
                score: Some(0.25),
                hypothesis: Some(4),
                r: Some(h.r),
                t_mm: Some(h.t_mm),
            },
            EstimateRecord::none(3, 4),
        ];
        let text = write_estimates(&recs).unwrap();
        let back = read_estimates(&text).unwrap();
        assert_eq!(back, recs);
        let p = back[0].pose().unwrap().unwrap();
        assert!((p.translation - pose.translation).norm() < 1e-12);
        assert!(back[1].pose().unwrap().is_none());
        let half = EstimateRecord { r: None, ..recs[0].clone() };
        assert!(matches!(half.pose(), Err(CliError::Data(_))));
    }
}
