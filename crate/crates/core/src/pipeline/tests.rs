use super::*;
use crate::io::{synth_scene, SynthSpec};
use crate::nets::ModelConfig;
use crate::voxelizer::GridSpec;

fn tiny_config() -> TrainConfig {
    let grid = GridSpec::cube(8).unwrap();
    let mut model = ModelConfig::new(grid);
    model.d_s = 8;
    model.d_o = 8;
    model.d_f = 4;
    model.d_star = 6;
    model.enc_hidden = 8;
    model.conv_hidden = 8;
    model.head_hidden = 8;
    model.prune_threshold = 0.1;
    let mut cfg = TrainConfig::new(model);
    cfg.views_per_step = 2;
    cfg.epochs = 4;
    cfg.seed = 21;
    cfg
}

fn tiny_scene(seed: u64) -> SceneSample {
    let spec = SynthSpec {
        width: 16,
        height: 16,
        feature_dim: 6,
        points_per_blob: 48,
        ..SynthSpec::new(3, GridSpec::cube(8).unwrap(), 3, seed)
    };
    synth_scene(&spec).unwrap().0
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = tiny_config();
    let scene = tiny_scene(1);
    let mut state = TrainState::new(&cfg).unwrap();
    let before = state.model.clone();
    let out = train_step(&mut state, &scene, &cfg, 0.0).unwrap();
    assert_eq!(state.model, before);
    assert_eq!(state.optimizer.step, 1);
    assert!(out.report.total.is_finite() && out.report.total > 0.0);
}

#[test]
fn step_shapes_and_counts() {
    let cfg = tiny_config();
    let scene = tiny_scene(2);
    let mut state = TrainState::new(&cfg).unwrap();
    let out = train_step(&mut state, &scene, &cfg, 1e-3).unwrap();
    assert_eq!(out.renders.len(), cfg.views_per_step);
    assert_eq!(out.views.len(), cfg.views_per_step);
    for (r, &k) in out.renders.iter().zip(&out.views) {
        let cam = &scene.views[k].camera;
        assert_eq!(
            (r.width, r.height, r.feature_dim),
            (cam.width, cam.height, cfg.model.d_f)
        );
    }
    assert!(out.gaussian_count <= out.anchor_count);
    let r = out.report;
    let total = cfg.loss.img * r.l_img + cfg.loss.dep * r.l_dep + cfg.loss.sem * r.l_sem;
    assert!((total - r.total).abs() < 1e-12);
}

#[test]
fn mismatched_feature_width_is_rejected() {
    let mut cfg = tiny_config();
    cfg.model.d_star = 7;
    let mut state = TrainState::new(&cfg).unwrap();
    assert!(train_step(&mut state, &tiny_scene(1), &cfg, 1e-3).is_err());
    cfg.model.d_star = 6;
    cfg.views_per_step = 4;
    let mut state = TrainState::new(&cfg).unwrap();
    let err = train_step(&mut state, &tiny_scene(1), &cfg, 1e-3).unwrap_err();
    assert!(err.to_string().contains("sample_views"), "{err}");
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let cfg = tiny_config();
    let scenes = [tiny_scene(3)];
    let (a, log_a) = fit(
        &scenes,
        &cfg,
        TrainState::new(&cfg).unwrap(),
        &mut NoCheckpoints,
    )
    .unwrap();
    let (b, log_b) = fit(
        &scenes,
        &cfg,
        TrainState::new(&cfg).unwrap(),
        &mut NoCheckpoints,
    )
    .unwrap();
    assert_eq!(a, b);
    let bits = |l: &[StepRecord]| {
        l.iter()
            .map(|r| [r.l_img, r.l_dep, r.l_sem, r.total, r.psnr].map(f64::to_bits))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&log_a), bits(&log_b));
    assert_eq!(log_a.len(), cfg.epochs);
}

#[test]
fn zero_epochs_return_the_initial_state() {
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    let init = TrainState::new(&cfg).unwrap();
    let (out, log) = fit(&[tiny_scene(4)], &cfg, init.clone(), &mut NoCheckpoints).unwrap();
    assert_eq!(out, init);
    assert!(log.is_empty());
    assert!(fit(&[], &cfg, init, &mut NoCheckpoints).is_err());
}

struct Keep(Vec<(usize, TrainState)>);

impl CheckpointSink for Keep {
    fn save(&mut self, epoch: usize, state: &TrainState) -> crate::Result<()> {
        self.0.push((epoch, state.clone()));
        Ok(())
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut cfg = tiny_config();
    cfg.epochs = 6;
    cfg.checkpoint_every = 2;
    let scenes = [tiny_scene(5), tiny_scene(6)];
    let mut sink = Keep(Vec::new());
    let (full, full_log) = fit(&scenes, &cfg, TrainState::new(&cfg).unwrap(), &mut sink).unwrap();
    assert_eq!(
        sink.0.iter().map(|(e, _)| *e).collect::<Vec<_>>(),
        vec![2, 4, 6]
    );
    let (_, mid) = sink.0[0].clone();
    assert_eq!(mid.optimizer.step, 4);
    let (resumed, tail) = fit(&scenes, &cfg, mid, &mut NoCheckpoints).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(format!("{tail:?}"), format!("{:?}", &full_log[4..]));
}

#[test]
fn off_boundary_state_is_rejected() {
    let cfg = tiny_config();
    let scenes = [tiny_scene(5), tiny_scene(6)];
    let mut state = TrainState::new(&cfg).unwrap();
    state.optimizer.step = 3;
    assert!(fit(&scenes, &cfg, state, &mut NoCheckpoints).is_err());
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = tiny_config();
    let scenes = [tiny_scene(7)];
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                fit(
                    &scenes,
                    &cfg,
                    TrainState::new(&cfg).unwrap(),
                    &mut NoCheckpoints,
                )
                .unwrap()
            })
    };
    let (a, la) = run(1);
    let (b, lb) = run(4);
    assert_eq!(a, b);
    assert_eq!(format!("{la:?}"), format!("{lb:?}"));
}

#[test]
fn losses_stay_finite_and_photometric_loss_falls() {
    let mut cfg = tiny_config();
    cfg.mask_ratio = 0.0;
    cfg.views_per_step = 3;
    cfg.epochs = 200;
    cfg.eval_every = 0;
    cfg.loss = crate::losses::LossWeights {
        img: 1.0,
        dep: 0.0,
        sem: 0.0,
    };
    let scene = tiny_scene(8);
    let mut state = TrainState::new(&cfg).unwrap();
    let mut l_img = Vec::new();
    for step in 0..cfg.epochs as u64 {
        let lr = learning_rate(cfg.optimizer.lr, step, cfg.epochs as u64, cfg.warmup);
        let out = train_step(&mut state, &scene, &cfg, lr).unwrap();
        let r = out.report;
        assert!([r.l_img, r.l_dep, r.l_sem, r.total]
            .iter()
            .all(|v| v.is_finite()));
        l_img.push(r.l_img);
    }
    let warm = (cfg.warmup * cfg.epochs as f64).ceil() as usize;
    let pairs = l_img[warm..].windows(2).count();
    let falling = l_img[warm..].windows(2).filter(|w| w[1] < w[0]).count();
    assert!(falling as f64 >= 0.9 * pairs as f64, "{falling}/{pairs}");
}

#[test]
fn probe_scores() {
    let cfg = tiny_config();
    let scene = tiny_scene(9);
    let state = TrainState::new(&cfg).unwrap();
    let q = 5;
    let scores = similarity_probe(&state.model, &scene.cloud, q).unwrap();
    assert_eq!(scores.len(), scene.cloud.len());
    assert_eq!(scores[q], 1.0);
    assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
    let (pc, _) = crate::voxelizer::normalize_to_cuboid(&scene.cloud).unwrap();
    let ids = crate::voxelizer::voxel_index(&pc.coords, &cfg.model.grid).unwrap();
    let (a, b) = (0..ids.len())
        .flat_map(|i| (i + 1..ids.len()).map(move |j| (i, j)))
        .find(|&(i, j)| ids[i] == ids[j])
        .expect("some voxel holds two points");
    for query in [0, 17, a] {
        let s = similarity_probe(&state.model, &scene.cloud, query).unwrap();
        assert_eq!(s[a], s[b]);
    }
    assert!(similarity_probe(&state.model, &scene.cloud, scene.cloud.len()).is_err());
}

#[test]
fn evaluation_of_perfect_render_is_exact() {
    let scene = tiny_scene(10);
    let v = &scene.views[0];
    let render = crate::splatter::RenderOutput {
        width: v.camera.width,
        height: v.camera.height,
        feature_dim: v.feature_dim,
        color: v.color.clone(),
        depth: v.depth.iter().map(|d| d * 2.0).collect(),
        feature: v.features.clone(),
        transmittance: vec![0.0; v.pixel_count()],
    };
    let m = view_metrics(&render, &v.features, v, 2.0).unwrap();
    assert_eq!(m.psnr, f64::INFINITY);
    assert_eq!(m.depth_mae, 0.0);
    assert!((m.cosine - 1.0).abs() < 1e-6);
    assert!(m.valid_pixels > 0);
}
