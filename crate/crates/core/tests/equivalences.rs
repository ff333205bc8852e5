//! Generic engine against direct implementations of the named optimizers.

use normforge_core::data::{make_dataset, DatasetKind, DatasetSpec};
use normforge_core::linalg::{polar, Matrix, PolarConfig};
use normforge_core::models::{random_batch, Activation, LossKind, Mlp, ModelSpec};
use normforge_core::norms::{NormSpec, ProductAggregator};
use normforge_core::presets::backup_norm;
use normforge_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn theta_only(v: Vec<f64>) -> ParamTree {
    ParamTree::new(vec![], v)
}

fn toy_model(seed: u64) -> (Mlp, Vec<Batch>) {
    let model = Mlp::new(ModelSpec { layer_dims: vec![4, 6, 5, 3], activation: Activation::Tanh, loss: LossKind::Mse, seed })
        .unwrap();
    let spec = DatasetSpec { noise: 0.05, seed, ..DatasetSpec::new(DatasetKind::TeacherNet, 64, 4, 3) };
    let batches = make_dataset(&spec).unwrap().batches(16);
    (model, batches)
}

#[test]
fn adam_is_csd_under_ada_inf_and_rsd_under_ada2() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = if seed == 0 { 1 } else { 4 };
        let (eta, beta, beta2, eps) = (0.01, 0.9, 0.99, 1e-8);
        let init: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for descent in [Descent::Constrained, Descent::Regularized] {
            let mut adam = init.clone();
            let mut adam_state = AdamState::default();
            let mut w = theta_only(init.clone());
            let mut state = OptState::new(&w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..100 {
                // gradient of a shifted quadratic plus noise
                let g: Vec<f64> = adam.iter().map(|x| 2.0 * (x - 0.3) + rng.random_range(-0.5..0.5)).collect();
                adam_step(&mut adam, &g, &mut adam_state, eta, beta, beta2, eps).unwrap();
                let g_tree = theta_only(w.base.iter().zip(&g).map(|(_, gi)| *gi).collect());
                momentum_update(&mut state, &g_tree, beta, beta2).unwrap();
                let kind = if descent == Descent::Constrained { BackupNorm::AdaInf } else { BackupNorm::Ada2 };
                let spec = NormSpec::new(vec![backup_norm(kind, &state, eps).unwrap()], ProductAggregator::max());
                apply_step(&mut w, &mut state, &spec, &StepRule::plain(descent), eta).unwrap();
                let rel = w.rel_diff(&theta_only(adam.clone())).unwrap();
                assert!(rel <= 1e-10, "seed {seed} {descent:?}: {rel:e}");
            }
        }
    }
}

#[test]
fn generic_muon_adam_matches_direct_implementation() {
    for seed in 0..3u64 {
        let (model, batches) = toy_model(seed);
        let cfg = VariantConfig { beta: 0.9, beta1: Some(0.8), beta2: 0.99, ..VariantConfig::muon_adam() }.with_rates(0.02, 0.005);
        let polar_cfg = PolarConfig::default();
        let mut generic = build_variant(&cfg, &polar_cfg).unwrap();
        let mut w_gen = model.init_params();
        let mut w_dir = w_gen.clone();
        let mut state = OptState::new(&w_dir);
        for k in 0..100 {
            let batch = &batches[k % batches.len()];
            let (loss, g) = model.backward(&w_gen, batch).unwrap();
            generic.step(&mut w_gen, loss, &g, 1.0).unwrap();
            let (_, g) = model.backward(&w_dir, batch).unwrap();
            muonadam_step(&mut w_dir, &mut state, &g, 0.02, 0.005, 0.9, 0.8, 0.99, 1e-8, &polar_cfg).unwrap();
        }
        let rel = w_gen.rel_diff(&w_dir).unwrap();
        assert!(rel <= 1e-8, "seed {seed}: {rel:e}");
    }
}

#[test]
fn scion_and_polar_grad_closed_forms() {
    let (model, batches) = toy_model(7);
    let polar_cfg = PolarConfig::default();
    let (eta_m, eta_b) = (0.03, 0.004);
    for cfg in [VariantConfig::scion(), VariantConfig::polar_grad()] {
        let cfg = VariantConfig { beta: 0.9, ..cfg }.with_rates(eta_m, eta_b);
        let mut opt = build_variant(&cfg, &polar_cfg).unwrap();
        let mut w = model.init_params();
        let mut m = w.zeros_like();
        let mut v = vec![0.0; w.base.len()];
        for k in 0..20 {
            let (loss, g) = model.backward(&w, &batches[k % batches.len()]).unwrap();
            if k == 0 {
                m = g.clone();
                v = g.base.iter().map(|x| x * x).collect();
            } else {
                m.scale(0.9);
                m.axpy(0.1, &g).unwrap();
                v.iter_mut().zip(&g.base).for_each(|(vi, gi)| *vi = 0.95 * *vi + 0.05 * gi * gi);
            }
            let mut expect = w.clone();
            for (e, ml) in expect.matrices.iter_mut().zip(&m.matrices) {
                let p = polar(ml, &polar_cfg).unwrap();
                let scale = if cfg.sd_type == SdType::Regularized { normforge_core::frob_inner(&p, ml).unwrap() } else { 1.0 };
                e.axpy(-eta_m * scale, &p).unwrap();
            }
            for ((t, mi), vi) in expect.base.iter_mut().zip(&m.base).zip(&v) {
                *t -= match cfg.backup_norm {
                    BackupNorm::Inf => eta_b * mi.signum() * (*mi != 0.0) as u8 as f64,
                    _ => eta_b * mi / (vi.sqrt() + cfg.epsilon),
                };
            }
            opt.step(&mut w, loss, &g, 1.0).unwrap();
            let rel = w.rel_diff(&expect).unwrap();
            assert!(rel <= 1e-10, "{} step {k}: {rel:e}", cfg.name());
            w = expect;
        }
    }
}

#[test]
fn generic_muon_max_momo_matches_closed_form() {
    let (model, batches) = toy_model(3);
    let polar_cfg = PolarConfig::default();
    for stale in [false, true] {
        let cfg = VariantConfig { stale, f_star: 0.0, ..VariantConfig::muon_max().with_truncation(true) }.with_rates(0.05, 0.01);
        let mut generic = build_variant(&cfg, &polar_cfg).unwrap();
        let mut w_gen = model.init_params();
        let mut w_dir = w_gen.clone();
        let mut state = OptState::new(&w_dir);
        let mut clamped = 0;
        for k in 0..50 {
            let batch = &batches[k % batches.len()];
            let (loss, g) = model.backward(&w_gen, batch).unwrap();
            let a = generic.step(&mut w_gen, loss, &g, 1.0).unwrap();
            let (loss, g) = model.backward(&w_dir, batch).unwrap();
            let b = muonmax_momo_step(&mut w_dir, &mut state, loss, &g, &cfg, &polar_cfg, 1.0).unwrap();
            assert_eq!(a.clamp_active, b.clamp_active);
            clamped += a.clamp_active as usize;
        }
        let rel = w_gen.rel_diff(&w_dir).unwrap();
        assert!(rel <= 1e-8, "stale {stale}: {rel:e}");
        assert!(clamped > 0, "truncation never engaged");
    }
}

#[test]
fn muon_max_momo_without_floor_is_muon_max() {
    let (model, batches) = toy_model(4);
    let polar_cfg = PolarConfig::default();
    let cfg = VariantConfig { f_star: -1e9, ..VariantConfig::muon_max().with_truncation(true) }.with_rates(0.05, 0.01);
    let plain = VariantConfig { truncation: false, ..cfg.clone() };
    let mut generic = build_variant(&plain, &polar_cfg).unwrap();
    let mut w_gen = model.init_params();
    let mut w_dir = w_gen.clone();
    let mut state = OptState::new(&w_dir);
    for k in 0..50 {
        let batch = &batches[k % batches.len()];
        let (loss, g) = model.backward(&w_gen, batch).unwrap();
        generic.step(&mut w_gen, loss, &g, 1.0).unwrap();
        let (loss, g) = model.backward(&w_dir, batch).unwrap();
        let r = muonmax_momo_step(&mut w_dir, &mut state, loss, &g, &cfg, &polar_cfg, 1.0).unwrap();
        assert!(!r.clamp_active);
    }
    assert!(w_gen.rel_diff(&w_dir).unwrap() <= 1e-10);
}

#[test]
fn stale_equals_exact_under_constant_gradients() {
    let polar_cfg = PolarConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = ParamTree::new(
        vec![Matrix::random_normal(3, 4, &mut rng), Matrix::random_normal(2, 3, &mut rng)],
        (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    for base in [VariantConfig::muon_max(), VariantConfig::muon_max().with_truncation(true)] {
        let mut exact = build_variant(&base, &polar_cfg).unwrap();
        let mut stale = build_variant(&VariantConfig { stale: true, ..base.clone() }, &polar_cfg).unwrap();
        let mut we = g.zeros_like();
        let mut ws = g.zeros_like();
        for k in 0..10 {
            let a = exact.step(&mut we, 5.0, &g, 1.0).unwrap();
            let b = stale.step(&mut ws, 5.0, &g, 1.0).unwrap();
            assert!((a.dual_total - b.dual_total).abs() <= 1e-12 * a.dual_total, "step {k}");
            if k >= 1 {
                let s = stale.state().unwrap();
                let fresh: f64 = s.momentum.matrices.iter().map(|m| normforge_core::nuclear_norm(m, &polar_cfg).unwrap()).sum();
                assert!((s.stale_total - fresh).abs() <= 1e-12 * fresh);
            }
        }
        assert!(we.rel_diff(&ws).unwrap() <= 1e-12);
    }
}

#[test]
fn joint_rate_scaling_scales_constrained_steps() {
    let (model, batches) = toy_model(5);
    let polar_cfg = PolarConfig::default();
    for variant in [VariantConfig::muon_adam(), VariantConfig::scion()] {
        let w0 = model.init_params();
        let (loss, g) = model.backward(&w0, &batches[0]).unwrap();
        let mut deltas = Vec::new();
        for c in [1.0, 3.0] {
            let mut opt = build_variant(&variant.clone().with_rates(0.01 * c, 0.002 * c), &polar_cfg).unwrap();
            let mut w = w0.clone();
            opt.step(&mut w, loss, &g, 1.0).unwrap();
            w.axpy(-1.0, &w0).unwrap();
            deltas.push(w);
        }
        deltas[0].scale(3.0);
        assert!(deltas[1].rel_diff(&deltas[0]).unwrap() <= 1e-12);
    }
}

#[test]
fn forward_loss_golden_value() {
    let model = Mlp::new(ModelSpec { layer_dims: vec![2, 8, 3], activation: Activation::Tanh, loss: LossKind::SoftmaxXent, seed: 7 })
        .unwrap();
    let spec = DatasetSpec { seed: 42, separation: 4.0, ..DatasetSpec::new(DatasetKind::GaussianBlobs, 32, 2, 3) };
    let batch = make_dataset(&spec).unwrap().full_batch();
    let loss = model.forward_loss(&model.init_params(), &batch).unwrap();
    assert!((loss - GOLDEN_BLOB_LOSS).abs() <= 1e-12, "{loss:.17}");
}

// Recorded from this implementation; a regression anchor, not an external value.
const GOLDEN_BLOB_LOSS: f64 = 1.381_624_638_355_478_9;

#[test]
fn blob_task_is_learnable() {
    let spec = DatasetSpec { seed: 1, separation: 10.0, ..DatasetSpec::new(DatasetKind::GaussianBlobs, 200, 2, 2) };
    let data = make_dataset(&spec).unwrap();
    let model = Mlp::new(ModelSpec { layer_dims: vec![2, 2], activation: Activation::Tanh, loss: LossKind::SoftmaxXent, seed: 0 })
        .unwrap();
    let mut w = model.init_params();
    let batch = data.full_batch();
    let mut adam = AdamState::default();
    for _ in 0..200 {
        let (_, g) = model.backward(&w, &batch).unwrap();
        let mut flat: Vec<f64> = (0..w.num_params()).map(|i| w.get_flat(i)).collect();
        let gf: Vec<f64> = (0..g.num_params()).map(|i| g.get_flat(i)).collect();
        adam_step(&mut flat, &gf, &mut adam, 0.05, 0.9, 0.999, 1e-8).unwrap();
        flat.iter().enumerate().for_each(|(i, &x)| w.set_flat(i, x));
    }
    assert!(model.accuracy(&w, &batch).unwrap() >= 0.99);
}

#[test]
fn noiseless_teacher_is_fittable() {
    let spec = DatasetSpec { seed: 2, teacher_hidden: 8, ..DatasetSpec::new(DatasetKind::TeacherNet, 64, 3, 2) };
    let data = make_dataset(&spec).unwrap();
    let model = Mlp::new(ModelSpec { layer_dims: vec![3, 32, 2], activation: Activation::Tanh, loss: LossKind::Mse, seed: 3 })
        .unwrap();
    let mut w = model.init_params();
    let batch = data.full_batch();
    let mut adam = AdamState::default();
    let mut eta = 0.01;
    for k in 0..6000 {
        if k == 4000 {
            eta = 0.002;
        }
        let (_, g) = model.backward(&w, &batch).unwrap();
        let mut flat: Vec<f64> = (0..w.num_params()).map(|i| w.get_flat(i)).collect();
        let gf: Vec<f64> = (0..g.num_params()).map(|i| g.get_flat(i)).collect();
        adam_step(&mut flat, &gf, &mut adam, eta, 0.9, 0.999, 1e-8).unwrap();
        flat.iter().enumerate().for_each(|(i, &x)| w.set_flat(i, x));
    }
    let loss = model.forward_loss(&w, &batch).unwrap();
    assert!(loss <= 1e-3, "{loss:e}");
}

#[test]
fn random_batches_are_valid_for_every_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for loss in [LossKind::Mse, LossKind::SoftmaxXent] {
        let model = Mlp::new(ModelSpec { layer_dims: vec![3, 4, 3], activation: Activation::Relu, loss, seed: 1 }).unwrap();
        let b = random_batch(&model, 4, &mut rng);
        assert!(model.forward_loss(&model.init_params(), &b).unwrap().is_finite());
    }
}
