use super::*;
use crate::augment::BranchTransform::{Erase, Identity, Scale};
use rand::Rng as _;

fn small(channels: &[usize]) -> ModelConfig {
    ModelConfig {
        channels: channels.to_vec(),
        ..ModelConfig::default()
    }
}

fn batch(b: usize, seed: u64) -> Array4<f32> {
    let mut r = rng::seeded(seed);
    Array4::from_shape_fn((b, 3, 16, 8), |_| r.gen_range(-1.0..1.0))
}

#[test]
fn zero_input_and_zero_head_give_equal_logits() {
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &[Identity], 5, 0).unwrap();
    m.branches_mut()[0].classifier.value.fill(0.0);
    let out = m
        .forward_multibranch(&[Array4::zeros((4, 3, 16, 8))], true)
        .unwrap();
    assert!(out[0].logits().iter().all(|&v| v == 0.0));
}

#[test]
fn embedding_dim_follows_last_width() {
    let mut m = MultiBranchModel::new(&small(&[8, 64]), &[Identity, Erase, Scale], 4, 0).unwrap();
    assert_eq!(m.embedding_dim(), 64);
    let f = m.extract_features(&batch(2, 1)).unwrap();
    assert_eq!(f.dim(), (2, 192));
    let img = batch(1, 1).index_axis_move(Axis(0), 0);
    assert_eq!(extract_concat_features(&mut m, &img).unwrap().len(), 192);
}

#[test]
fn duplicate_rows_give_duplicate_outputs() {
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &[Identity], 3, 2).unwrap();
    let mut x = batch(4, 3);
    let row = x.index_axis(Axis(0), 0).to_owned();
    x.index_axis_mut(Axis(0), 2).assign(&row);
    for train in [true, false] {
        let o = &m.forward_multibranch(&[x.clone()], train).unwrap()[0];
        assert_eq!(o.embedding.row(0), o.embedding.row(2));
        assert_eq!(o.cosines.row(0), o.cosines.row(2));
    }
}

#[test]
fn training_batch_of_one_is_rejected() {
    let mut m = MultiBranchModel::new(&small(&[8]), &[Identity], 3, 0).unwrap();
    assert!(m.forward_multibranch(&[batch(1, 0)], true).is_err());
    assert!(m.forward_multibranch(&[batch(1, 0)], false).is_ok());
}

#[test]
fn branch_count_mismatch_is_rejected() {
    let mut m = MultiBranchModel::new(&small(&[8]), &[Identity, Erase], 3, 0).unwrap();
    assert!(m.forward_multibranch(&[batch(2, 0)], true).is_err());
    let grads = vec![BranchGrad::zeros(2, 8, 3)];
    assert!(m.backward(&grads, true).is_err());
}

#[test]
fn single_branch_model_matches_forward_branch() {
    let mut a = MultiBranchModel::new(&small(&[8, 16]), &[Identity], 3, 9).unwrap();
    let mut b = MultiBranchModel::new(&small(&[8, 16]), &[Identity], 3, 9).unwrap();
    let x = batch(3, 4);
    let via_model = a.forward_multibranch(&[x.clone()], false).unwrap();
    let direct = forward_branch(&mut b.branches_mut()[0], &x, false).unwrap();
    assert_eq!(via_model[0].embedding, direct.embedding);
}

#[test]
fn identical_weights_and_inputs_give_identical_branches() {
    let cfg = ModelConfig {
        identical_init: true,
        ..small(&[8, 16])
    };
    let mut m = MultiBranchModel::new(&cfg, &[Identity, Erase, Scale], 4, 5).unwrap();
    let x = batch(4, 6);
    let out = m
        .forward_multibranch(&[x.clone(), x.clone(), x], true)
        .unwrap();
    assert_eq!(out[0].cosines, out[1].cosines);
    assert_eq!(out[0].embedding, out[2].embedding);
}

#[test]
fn branches_are_initialised_independently() {
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &[Identity, Erase, Scale], 4, 5).unwrap();
    let x = batch(4, 6);
    let out = m
        .forward_multibranch(&[x.clone(), x.clone(), x], false)
        .unwrap();
    assert_ne!(out[0].cosines, out[1].cosines);
    assert_ne!(out[1].cosines, out[2].cosines);
}

#[test]
fn differing_inputs_give_differing_logits() {
    let cfg = ModelConfig {
        identical_init: true,
        ..small(&[8, 16])
    };
    let mut total = 0.0;
    for seed in 0..5 {
        let mut m = MultiBranchModel::new(&cfg, &[Identity, Erase], 4, seed).unwrap();
        let out = m
            .forward_multibranch(&[batch(4, seed), batch(4, seed + 100)], true)
            .unwrap();
        total += (&out[0].logits() - &out[1].logits()).mapv(f64::abs).sum();
    }
    assert!(total > 0.0);
}

#[test]
fn concatenated_distance_decomposes_per_branch() {
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &[Identity, Erase, Scale], 4, 1).unwrap();
    let f = m.extract_features(&batch(2, 8)).unwrap().mapv(f64::from);
    let d = m.embedding_dim();
    let sq =
        |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| (&a - &b).mapv(|v| v * v).sum();
    let whole = sq(f.row(0), f.row(1));
    let parts: f64 = (0..3)
        .map(|k| {
            let s = ndarray::s![k * d..(k + 1) * d];
            sq(f.row(0).slice(s), f.row(1).slice(s))
        })
        .sum();
    assert!((whole - parts).abs() < 1e-9 * whole.max(1.0));
}

#[test]
fn unknown_backbone_names_the_key() {
    let cfg = ModelConfig {
        backbone: "resnet50-ibn".into(),
        ..ModelConfig::default()
    };
    let err = MultiBranchModel::new(&cfg, &[Identity], 4, 0)
        .err()
        .unwrap();
    assert!(err.to_string().contains("model.backbone"));
}

#[test]
fn frozen_backbone_receives_no_gradient() {
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &[Identity], 3, 0).unwrap();
    let out = m.forward_multibranch(&[batch(4, 1)], true).unwrap();
    let mut g = BranchGrad::zeros(4, 16, 3);
    g.cosines.fill(1.0);
    g.embedding.fill(0.5);
    m.backward(&[g], false).unwrap();
    drop(out);
    m.visit_grouped(&mut |name, is_backbone, p| {
        let nonzero = p.grad.iter().any(|&v| v != 0.0);
        if is_backbone {
            assert!(!nonzero, "{name}");
        } else if name.ends_with("classifier.weight") {
            assert!(nonzero, "{name}");
        }
    });
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep0/model.ckpt");
    let plan = [Identity, Erase];
    let mut m = MultiBranchModel::new(&small(&[8, 16]), &plan, 4, 3).unwrap();
    m.forward_multibranch(&[batch(4, 0), batch(4, 1)], true)
        .unwrap();
    checkpoint::save_checkpoint(
        &path,
        &mut m,
        &plan,
        2,
        40,
        serde_json::json!({"name": "x"}),
    )
    .unwrap();
    let (mut back, header) = checkpoint::load_checkpoint(&path).unwrap();
    assert_eq!(header.epoch, 2);
    assert_eq!(header.branch_plan, plan);
    assert_eq!(header.run_config["name"], "x");
    let x = batch(3, 7);
    assert_eq!(
        m.extract_features(&x).unwrap(),
        back.extract_features(&x).unwrap()
    );
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(checkpoint::load_checkpoint(&path).is_err());
}

/// Directional derivative of the full training loss against the summed
/// parameter gradients, through backbone, neck and head.
#[test]
fn full_model_gradient_matches_directional_difference() {
    use crate::losses::{total_loss, KlMode, LossConfig};
    let plan = [Identity, Erase];
    let mut m = MultiBranchModel::new(&small(&[4, 8]), &plan, 3, 6).unwrap();
    let inputs = [batch(6, 2), batch(6, 3)];
    let labels = [0, 0, 1, 1, 2, 2];
    // peers are detached in the mutual term, so only the KL-free objective
    // is a plain function of the parameters
    let cfg = LossConfig {
        kl_mode: KlMode::None,
        ..LossConfig::default()
    };
    let loss_of = |m: &mut MultiBranchModel| {
        let out = m.forward_multibranch(&inputs, true).unwrap();
        total_loss(&out, &labels, &m.roles(), &cfg).unwrap()
    };
    let outcome = loss_of(&mut m);
    m.zero_grad();
    m.backward(&outcome.grads, true).unwrap();

    // ReLU kinks make the backbone difference noisier
    for (filter, tol) in [("classifier", 1e-3), ("neck", 1e-3), ("backbone", 2e-2)] {
        let mut r = rng::seeded(8);
        let mut dirs = Vec::new();
        let mut analytic = 0.0f64;
        m.visit("", &mut |name, p| {
            if p.kind == ParamKind::Buffer || !name.contains(filter) {
                dirs.push(None);
                return;
            }
            // step relative to the parameter's own scale
            let rms = (p.value.iter().map(|x| x * x).sum::<f32>() / p.value.len() as f32)
                .sqrt()
                .max(1e-3);
            let v = p.value.mapv(|_| rms * r.gen_range(-1.0f32..1.0));
            analytic += v
                .iter()
                .zip(p.grad.iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum::<f64>();
            dirs.push(Some(v));
        });
        let h = 1e-3f32;
        let shift = |m: &mut MultiBranchModel, s: f32| {
            let mut i = 0;
            m.visit("", &mut |_, p| {
                if let Some(v) = &dirs[i] {
                    p.value.scaled_add(s, v);
                }
                i += 1;
            });
        };
        shift(&mut m, h);
        let up = loss_of(&mut m).bundle.total;
        shift(&mut m, -2.0 * h);
        let down = loss_of(&mut m).bundle.total;
        let numeric = (up - down) / (2.0 * h as f64);
        shift(&mut m, h);
        let rel = (numeric - analytic).abs() / analytic.abs().max(1e-3);
        assert!(rel < tol, "{filter}: numeric {numeric} analytic {analytic}");
    }
}
