use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zephyr::hypo::{build_ppf_model, icp_stages, pose_distance, ppf_hypotheses, refine_pose, scene_cloud, HypoConfig};
use zephyr::objmodel::{prepare_model, surface_cloud, PrepareConfig};
use zephyr::render::{synthesize_scene, SceneConfig};
use zephyr::shapes::catalog;
use zephyr::train::{add_error, add_s_error};

// Noiseless single-object scenes cycling through the catalog.
#[test]
fn ppf_and_icp_recover_single_objects() {
    let cat = catalog();
    let cfg = HypoConfig::default();
    let scfg = SceneConfig { min_objects: 1, max_objects: 1, depth_noise: 0.0, color_noise: 0.0, ..Default::default() };
    let models: Vec<_> = cat
        .iter()
        .map(|o| prepare_model(o.object_id, &o.mesh, &o.symmetry, &PrepareConfig::default()).unwrap())
        .collect();
    let dense: Vec<_> = cat
        .iter()
        .map(|o| surface_cloud(o.object_id, &o.mesh, cfg.icp_model_leaf, 0))
        .collect::<zephyr::Result<Vec<_>>>()
        .unwrap();
    let ppf: Vec<_> = models.iter().map(|m| build_ppf_model(m, &cfg).unwrap()).collect();
    let (mut hits, mut refined) = (0, 0);
    let n = 50;
    for seed in 0..n {
        let i = seed as usize % cat.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = synthesize_scene(&[(cat[i].object_id, &cat[i].mesh)], &scfg, &mut rng).unwrap();
        let gt = scene.objects[0].pose;
        let m = &models[i];
        let cloud = scene_cloud(&scene.observation, m.diameter, &cfg).unwrap();
        let hyps = ppf_hypotheses(&ppf[i], &cloud, &cfg, &mut rng).unwrap();
        assert!(!hyps.is_empty() && hyps.len() <= cfg.top_k);
        hits += usize::from(hyps.iter().any(|h| {
            let (r, t) = pose_distance(&h.transform, &gt, &m.symmetry);
            r < 12f64.to_radians() && t < 0.1 * m.diameter
        }));
        let stages = icp_stages(&scene.observation, m.diameter, &cfg).unwrap();
        let best = hyps
            .iter()
            .map(|h| {
                let r = refine_pose(&dense[i], &stages, h, cfg.icp_max_iter, cfg.icp_tol, cfg.icp_color_weight).transform;
                if m.is_symmetric {
                    add_s_error(&r, &gt, &m.cloud.positions)
                } else {
                    add_error(&r, &gt, &m.cloud.positions)
                }
            })
            .fold(f64::INFINITY, f64::min);
        refined += usize::from(best < 0.02 * m.diameter);
    }
    eprintln!("within tolerance {hits}/{n}, refined below 0.02 diameter {refined}/{n}");
    assert!(hits as f64 >= 0.95 * n as f64);
    assert!(refined as f64 >= 0.95 * n as f64);
}
