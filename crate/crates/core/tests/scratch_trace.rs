//! Temporary diagnostics for policy quality.

use lvla_core::config::Config;
use lvla_core::dataset::{self, extract_windows};
use lvla_core::eval::PolicyBundle;
use lvla_core::model::{load_checkpoint, normalize_action, MaskMode, MaskPhase, PhaseModalities, PolicyInput};
use lvla_core::rng::Rng;
use lvla_core::sim::*;
use lvla_core::trainer::sample_item;

#[test]
#[ignore]
fn trace_task() {
    let cfg = Config::default();
    let ckpt_path = std::env::var("CKPT").unwrap_or_else(|_| "/tmp/lvla_smoke/run7/checkpoint.bin".into());
    let ckpt = load_checkpoint(std::path::Path::new(&ckpt_path)).unwrap();
    let bundle = PolicyBundle::from_checkpoint(&ckpt).unwrap();
    let task = TaskId::parse(&std::env::var("TASK").unwrap_or_else(|_| "push_slider_left".into())).unwrap();
    let mode = MaskMode::Fixed(PhaseModalities::default());
    let policy = &bundle.policies[0].1;
    for seed in 0..3u64 {
        let mut state = feasible_start(600 + seed, task, &cfg.sim);
        let (mv, iv) = dataset::annotate_language(task, seed, dataset::Split::Val).unwrap();
        let mut rng = Rng::new(300 + seed);
        let mut controller = lvla_core::eval::PhaseController::new(0.0);
        let (tx, ty) = match task.target() {
            TargetObject::Block(c) => { let b = state.block_by_color(c).unwrap(); (b.x, b.y) }
            TargetObject::Bowl => state.bowl,
            TargetObject::Button => (geom::BUTTON_X, state.button_y),
            TargetObject::DrawerHandle => (geom::drawer_handle_x(state.drawer_open_frac), geom::DRAWER_Y),
            TargetObject::SliderHandle => (geom::slider_handle_x(state.slider_pos), geom::SLIDER_Y),
        };
        println!("== {task} seed {seed}: target ({tx:.3},{ty:.3}) gripper ({:.3},{:.3},{:.3}) slider={:.2} drawer={:.2}",
            state.gripper.x, state.gripper.y, state.gripper.z, state.slider_pos, state.drawer_open_frac);
        let mut ok = false;
        'outer: for replan in 0..15 {
            let phase = controller.phase();
            let instr = if bundle.decomposition && phase == Phase::Moving { &mv } else { &iv };
            let obs = Observation::capture(&state, &PerturbationSpec::identity(), &cfg.sim);
            let boxes = detect(&state, task.target(), &cfg.sim);
            let input = PolicyInput {
                static_img: obs.static_img, gripper_img: obs.gripper_img, boxes,
                lang: Some(policy.tokenize(instr)), goal_img: None,
                phase: bundle.mask_phase_for(phase),
            };
            let (actions, _) = bundle.sample_with_info(&input, phase, 8, &mut rng).unwrap();
            let mean_sp: f64 = actions.iter().map(|a| a.s_p).sum::<f64>() / actions.len() as f64;
            controller.observe_chunk(mean_sp);
            let a0 = &actions[0];
            let a7 = &actions[7];
            println!("  r{replan:2} ph={phase:?} sp={mean_sp:+.2} a0=({:.2},{:.2},{:.2}|{:+.1}) a7=({:.2},{:.2},{:.2}|{:+.1}) g=({:.2},{:.2},{:.2}) d={:.2} held={:?} sl={:.2}",
                a0.x, a0.y, a0.z, a0.s_g, a7.x, a7.y, a7.z, a7.s_g,
                state.gripper.x, state.gripper.y, state.gripper.z,
                state.gripper.planar_dist(tx, ty), state.held, state.slider_pos);
            for a in &actions {
                let next = step(&state, a, &cfg.sim).unwrap();
                let fired = task_detector(&state, &next, task, &cfg.sim);
                state = next;
                if fired { ok = true; break 'outer; }
            }
        }
        println!("  -> success={ok}");
    }
}

#[test]
#[ignore]
fn prediction_error_on_training_states() {
    let cfg = Config::default();
    let ckpt = load_checkpoint(std::path::Path::new("/tmp/lvla_smoke/run6/checkpoint.bin")).unwrap();
    let bundle = PolicyBundle::from_checkpoint(&ckpt).unwrap();
    let policy = &bundle.policies[0].1;
    let ds = dataset::load(std::path::Path::new("/tmp/lvla_smoke/data/full.bin")).unwrap();
    let windows = extract_windows(&ds, 16).unwrap();
    let mode = MaskMode::Fixed(PhaseModalities::default());

    let mut per_channel = [0.0f64; 8];
    let mut n = 0usize;
    let mut phase_counts = (0, 0);
    let mut rng = Rng::new(77);
    for (wi, w) in windows.iter().enumerate().step_by(7).take(60) {
        let item = sample_item(&ds, w, &cfg, policy, &mut rng);
        match item.input.phase {
            MaskPhase::Moving => phase_counts.0 += 1,
            _ => phase_counts.1 += 1,
        }
        let mut srng = Rng::new(1000 + wi as u64);
        let actions = policy.sample_actions(&item.input, &mode, 8, &mut srng).unwrap();
        for (j, a) in actions.iter().enumerate() {
            let pred = normalize_action(a);
            let truth = &item.chunk[j * 8..(j + 1) * 8];
            for c in 0..8 {
                per_channel[c] += (pred[c] - truth[c]).abs();
            }
        }
        n += 8;
    }
    println!("TRAIN-STATE MAE over {n} actions (phases {phase_counts:?}):");
    let names = ["x", "y", "z", "yaw", "ey", "ez", "s_g", "s_p"];
    for c in 0..8 {
        println!("  {:4} {:.4}", names[c], per_channel[c] / n as f64);
    }

    // Same measurement on fresh in-distribution starts with VAL instructions.
    let mut per_channel2 = [0.0f64; 8];
    let mut n2 = 0usize;
    let sim = &cfg.sim;
    for (i, &task) in ALL_TASKS.iter().enumerate() {
        for k in 0..5 {
            let seed = 5000 + (i * 10 + k) as u64;
            let state = feasible_start(seed, task, sim);
            // Ground truth: expert chunk from this state.
            let mut erng = Rng::new(seed);
            let (steps, _, ok) = run_expert_subtask(&state, task, sim, &mut erng, 120).unwrap();
            if !ok || steps.len() < 8 {
                continue;
            }
            let (mv, iv) = dataset::annotate_language(task, seed, dataset::Split::Val).unwrap();
            let obs = Observation::capture(&state, &PerturbationSpec::identity(), sim);
            let boxes = detect(&state, task.target(), sim);
            let input = PolicyInput {
                static_img: obs.static_img,
                gripper_img: obs.gripper_img,
                boxes,
                lang: Some(policy.tokenize(if steps[0].phase == Phase::Moving { &mv } else { &iv })),
                goal_img: None,
                phase: MaskPhase::Moving,
            };
            let mut srng = Rng::new(seed ^ 0xAB);
            let actions = policy.sample_actions(&input, &mode, 8, &mut srng).unwrap();
            for (j, a) in actions.iter().enumerate() {
                let pred = normalize_action(a);
                let truth = normalize_action(&steps[j].action);
                for c in 0..8 {
                    per_channel2[c] += (pred[c] - truth[c]).abs();
                }
            }
            n2 += 8;
        }
    }
    println!("FRESH-STATE MAE over {n2} actions:");
    for c in 0..8 {
        println!("  {:4} {:.4}", names[c], per_channel2[c] / n2 as f64);
    }
}
