use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use zephyr::hypo::{read_jsonl, HypothesisSource};
use zephyr::metrics::{average_recall, read_results_csv, ArSummary};
use zephyr::net::{ArchSpec, NetworkWeights};
use zephyr::render::dataset::translation_mm;
use zephyr_cli::config::ScoreMethod;
use zephyr_cli::{CliError, EstimateRecord, Pipeline, PipelineConfig, SplitName};

fn small_config(root: &Path) -> PipelineConfig {
    let text = r#"
seed = 5
[data]
train_scenes = 4
test_scenes = 3
[scene]
depth_noise = 0.0
color_noise = 0.0
[scene.intrinsics]
fx = 200.0
fy = 200.0
cx = 99.5
cy = 74.5
width = 200
height = 150
[hypo]
top_k = 12
[train]
epochs = 2
hypotheses_per_step = 6
val_hypotheses = 6
"#;
    let path = root.join("config.toml");
    std::fs::write(&path, text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

fn with_data(tweak: impl FnOnce(&mut PipelineConfig)) -> (tempfile::TempDir, Pipeline) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    tweak(&mut cfg);
    let p = Pipeline::new(cfg).unwrap();
    p.gen_models().unwrap();
    p.gen_data().unwrap();
    (dir, p)
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn perfect_estimates(p: &Pipeline) -> Vec<EstimateRecord> {
    let (_, targets) = p.targets(SplitName::Test).unwrap();
    targets
        .iter()
        .map(|t| EstimateRecord {
            frame: t.frame,
            obj_id: t.obj_id,
            source: Some(HypothesisSource::InjectedGt),
            score: Some(0.0),
            hypothesis: Some(0),
            r: Some(t.gt.rotation_row_major().to_vec()),
            t_mm: Some(translation_mm(&t.gt).iter().copied().collect()),
        })
        .collect()
}

fn write_estimates(p: &Pipeline, recs: &[EstimateRecord]) {
    std::fs::create_dir_all(&p.cfg.paths.output).unwrap();
    std::fs::write(p.cfg.estimates_path(), zephyr_cli::pipeline::write_estimates(recs).unwrap()).unwrap();
}

#[test]
fn gen_data_writes_scenes_and_disjoint_manifests() {
    let (_dir, p) = with_data(|_| {});
    let root = &p.cfg.paths.dataset;
    for sid in 0..7u32 {
        let scene = root.join("scenes").join(format!("{sid:06}"));
        assert!(scene.join("rgb").join(format!("{sid:06}.png")).exists());
        assert!(scene.join("depth").join(format!("{sid:06}.png")).exists());
        assert!(scene.join("scene_gt.json").exists());
        assert!(scene.join("scene_camera.json").exists());
    }
    let train = p.manifest(SplitName::Train).unwrap();
    let test = p.manifest(SplitName::Test).unwrap();
    assert_eq!(train.scenes, vec![0, 1, 2, 3]);
    assert_eq!(test.scenes, vec![4, 5, 6]);
    assert!(train.objects.iter().all(|id| !test.objects.contains(id)));
    let (_, targets) = p.targets(SplitName::Train).unwrap();
    assert!(targets.iter().all(|t| train.objects.contains(&t.obj_id)));
}

#[test]
fn regeneration_is_byte_identical() {
    let (_dir, p) = with_data(|_| {});
    let first = files_under(&p.cfg.paths.dataset);
    p.gen_data().unwrap();
    assert_eq!(first, files_under(&p.cfg.paths.dataset));
    assert!(first.len() >= 7 * 5);
}

#[test]
fn hypothesis_cap_and_gt_injection() {
    let (_dir, p) = with_data(|c| {
        c.hypo.ppf.top_k = 7;
        c.hypo.inject_gt = true;
    });
    let recs = p.hypo(SplitName::Test).unwrap();
    let (_, targets) = p.targets(SplitName::Test).unwrap();
    for t in &targets {
        let mine: Vec<_> = recs.iter().filter(|r| r.frame == t.frame && r.obj_id == t.obj_id).collect();
        let gt = mine.iter().filter(|r| r.source == HypothesisSource::InjectedGt).count();
        let ppf = mine.iter().filter(|r| r.source == HypothesisSource::Ppf).count();
        assert_eq!(gt, 1);
        assert!(ppf <= 7 && ppf >= 1);
    }
    let on_disk = read_jsonl(&std::fs::read_to_string(p.cfg.hypotheses_path("test")).unwrap()).unwrap();
    assert_eq!(on_disk, recs);
}

#[test]
fn perfect_estimates_score_full_recall_and_match_the_oracle() {
    let (_dir, p) = with_data(|_| {});
    write_estimates(&p, &perfect_estimates(&p));
    let (records, summary) = p.eval().unwrap();
    assert_eq!(summary, ArSummary { ar_vsd: 1.0, ar_mssd: 1.0, ar_mspd: 1.0, ar: 1.0 });
    // Poses pass through millimeter text, so allow rounding.
    assert!(records.iter().all(|r| r.e_mssd < 1e-9 && r.e_mspd < 1e-6 && r.e_vsd.iter().all(|&e| e < 0.01)));

    let csv = std::fs::read_to_string(p.cfg.paths.output.join("results.csv")).unwrap();
    let back = read_results_csv(&csv, &p.cfg.metrics.vsd_taus).unwrap();
    let (m, _) = p.targets(SplitName::Test).unwrap();
    let diameters: BTreeMap<u32, f64> = m
        .objects
        .iter()
        .map(|&id| {
            let (meta, mesh) = zephyr::objmodel::load_object(&p.cfg.paths.models.join(format!("obj_{id:06}.json"))).unwrap();
            let model = zephyr::objmodel::prepare_model(id, &mesh, &meta.symmetry, &p.cfg.prepare).unwrap();
            (id, model.diameter)
        })
        .collect();
    let again = average_recall(&back, &p.cfg.metrics, &diameters, 200).unwrap();
    let written: ArSummary = serde_json::from_str(&std::fs::read_to_string(p.cfg.paths.output.join("summary.json")).unwrap()).unwrap();
    assert_eq!(again, written);

    for f in m.scenes {
        let img = image::open(p.cfg.paths.output.join("overlays").join(format!("{f:06}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (200, 150));
    }
}

#[test]
fn eval_reports_id_mismatches_and_counts_misses() {
    let (_dir, p) = with_data(|_| {});
    let mut recs = perfect_estimates(&p);
    let dropped = recs.pop().unwrap();
    write_estimates(&p, &recs);
    let (records, summary) = p.eval().unwrap();
    let n = records.len() as f64;
    assert!(records.iter().any(|r| r.frame == dropped.frame && r.obj_id == dropped.obj_id && r.e_mssd.is_infinite()));
    assert!((summary.ar - (n - 1.0) / n).abs() < 1e-12);

    recs.push(EstimateRecord { obj_id: 1, ..dropped });
    write_estimates(&p, &recs);
    let err = p.eval().unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn score_and_eval_never_touch_seen_objects() {
    let (_dir, p) = with_data(|c| c.score.method = ScoreMethod::PpfTop);
    p.hypo(SplitName::Test).unwrap();
    let mark = p.access_mark();
    p.score().unwrap();
    p.eval().unwrap();
    let touched = &p.accessed_since(mark);
    let train = p.manifest(SplitName::Train).unwrap();
    assert!(!touched.is_empty());
    for path in touched {
        let s = path.to_string_lossy();
        for id in &train.objects {
            assert!(!s.contains(&format!("obj_{id:06}")), "touched {s}");
        }
        for sid in &train.scenes {
            assert!(!s.contains(&format!("scenes/{sid:06}")), "touched {s}");
        }
    }
}

#[test]
fn training_reads_only_seen_objects_and_resumes_on_schedule() {
    let (dir, p) = with_data(|_| {});
    p.hypo(SplitName::Train).unwrap();
    let mark = p.access_mark();
    let best = p.train().unwrap();
    let test = p.manifest(SplitName::Test).unwrap();
    for path in &p.accessed_since(mark) {
        let s = path.to_string_lossy();
        for id in &test.objects {
            assert!(!s.contains(&format!("obj_{id:06}")), "touched {s}");
        }
        for sid in &test.scenes {
            assert!(!s.contains(&format!("scenes/{sid:06}")), "touched {s}");
        }
    }
    let train_dir = p.cfg.train_dir();
    assert_eq!(NetworkWeights::load(&train_dir.join("best.zphw")).unwrap(), best);
    let full_log = std::fs::read_to_string(train_dir.join("log.csv")).unwrap();
    let full_last = std::fs::read(train_dir.join("epoch_2.zphw")).unwrap();

    // Stop after one epoch, then resume to two.
    let mut one = small_config(dir.path());
    one.paths.output = dir.path().join("resumed");
    one.train.epochs = 1;
    Pipeline::new(one.clone()).unwrap().hypo(SplitName::Train).unwrap();
    Pipeline::new(one.clone()).unwrap().train().unwrap();
    one.train.epochs = 2;
    one.train.resume = true;
    Pipeline::new(one.clone()).unwrap().train().unwrap();
    assert_eq!(std::fs::read_to_string(one.train_dir().join("log.csv")).unwrap(), full_log);
    assert_eq!(std::fs::read(one.train_dir().join("epoch_2.zphw")).unwrap(), full_last);
}

#[test]
fn icp_changes_the_pose_but_not_the_selection() {
    let (dir, p) = with_data(|c| c.score.method = ScoreMethod::PpfTop);
    p.hypo(SplitName::Test).unwrap();
    let plain = p.score().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.score.method = ScoreMethod::PpfTop;
    cfg.score.icp = true;
    cfg.paths.output = p.cfg.paths.output.clone();
    let refined = Pipeline::new(cfg).unwrap().score().unwrap();
    assert_eq!(plain.len(), refined.len());
    let mut moved = 0;
    for (a, b) in plain.iter().zip(&refined) {
        assert_eq!(a.record.hypothesis, b.record.hypothesis);
        assert_eq!(a.scores, b.scores);
        moved += usize::from(a.record.t_mm != b.record.t_mm);
    }
    assert!(moved > 0);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zephyr"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, "[paths]\nmodels = \"m\"\n").unwrap();
    let code = |args: &[&str]| bin().args(args).env("RUST_LOG", "off").status().unwrap().code();

    assert_eq!(code(&["eval"]), Some(1));
    assert_eq!(code(&["--config", cfg.to_str().unwrap(), "frobnicate"]), Some(1));
    assert_eq!(code(&["--config", cfg.to_str().unwrap(), "--arch", "resnet", "eval"]), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(code(&["--config", bad.to_str().unwrap(), "eval"]), Some(1));

    // Data errors: empty models dir, then missing manifests.
    std::fs::create_dir_all(dir.path().join("m")).unwrap();
    assert_eq!(code(&["--config", cfg.to_str().unwrap(), "gen-data"]), Some(2));
    assert_eq!(code(&["--config", cfg.to_str().unwrap(), "eval"]), Some(2));
}

#[test]
fn weights_for_another_architecture_are_a_data_error() {
    let (_dir, p) = with_data(|_| {});
    p.hypo(SplitName::Test).unwrap();
    let w = NetworkWeights::init(ArchSpec::pointnet(), 1).unwrap();
    std::fs::create_dir_all(p.cfg.train_dir()).unwrap();
    w.save(&p.cfg.weights_path()).unwrap();
    let err = p.score().unwrap_err();
    assert!(matches!(err, CliError::Core(zephyr::Error::ArchitectureMismatch { .. })), "{err}");
    assert_eq!(err.exit_code(), 2);
}
