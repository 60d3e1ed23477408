mod common;

use abutment_core::model::{
    is_decoder_param, AbutmentNet, Architecture, Ctx, FusionMode, ModelConfig, ModelError, Objective,
};
use abutment_core::objectives::LossConfig;
use abutment_core::patch::{MaskSpec, PatchFeatureSet};
use abutment_core::tensor::{grad_check_params, Graph, ParamStore, Tensor, TensorError, Var};
use abutment_core::text::{HashEncoder, TextEmbedding, TextEncoder};
use abutment_core::trainer::TrainConfig;

fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn set(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let id = store.id(name).unwrap_or_else(|| panic!("no {name}"));
    for (i, v) in store.tensor_mut(id).values_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn embed(net: &AbutmentNet, pfs: &PatchFeatureSet) -> Tensor {
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, net.store());
    let x = net.arch().embed(&mut cx, pfs).unwrap();
    g.value(x).clone()
}

#[test]
fn embedding_shape_at_desk_scale() {
    let cfg = TrainConfig::default();
    let s = common::samples(1, 0, &cfg).remove(0);
    let net = AbutmentNet::new(&cfg.model, 0).unwrap();
    assert_eq!(embed(&net, &s.pfs).shape(), &[500, 64]);
    assert_eq!(s.pfs.features.shape(), &[500, 832]);
}

#[test]
fn zero_input_embeds_to_zero() {
    let cfg = common::tiny_config(1);
    let net = AbutmentNet::new(&cfg, 1).unwrap();
    let mut pfs = common::tiny_pfs(1);
    pfs.features = Tensor::zeros(pfs.features.shape());
    pfs.centers = Tensor::zeros(pfs.centers.shape());
    assert!(embed(&net, &pfs).values().iter().all(|v| *v == 0.0));
}

#[test]
fn translation_enters_through_position_term() {
    let cfg = common::tiny_config(1);
    let mut net = AbutmentNet::new(&cfg, 2).unwrap();
    // Blind the feature MLP to the absolute face centers (columns 7..10 of each face block).
    let d = cfg.embed_dim;
    let mut r = common::rng(2);
    let w: Vec<f64> = (0..52 * d).map(|_| rand::Rng::random_range(&mut r, -0.5..0.5)).collect();
    set(net.store_mut(), "embed.fc1.weight", |i| {
        let row = i / d;
        if (7..10).contains(&(row % 13)) {
            0.0
        } else {
            w[i]
        }
    });
    let t = abutment_core::mesh::Vec3::new(1.5, -3.0, 0.25);
    let base = common::bipyramid();
    let a = common::tiny_pfs(1);
    let b = abutment_core::patch::build_patch_features(
        &abutment_core::remesh::subdivide(&base.translated(&t).unwrap(), 1).unwrap(),
    )
    .unwrap();
    let (xa, xb) = (embed(&net, &a), embed(&net, &b));
    let wp = net.store().by_name("embed.pos.weight").unwrap();
    let ls = cfg.length_scale;
    for p in 0..6 {
        for j in 0..d {
            let shift: f64 = (0..3).map(|k| t[k] / ls * wp.get(k, j)).sum();
            assert!((xb.get(p, j) - xa.get(p, j) - shift).abs() < 1e-9);
        }
    }
}

#[test]
fn blocks_with_zero_residual_branches_are_identity() {
    let cfg = ModelConfig { encoder_blocks: 2, ..common::tiny_config(1) };
    let mut net = AbutmentNet::new(&cfg, 3).unwrap();
    for i in 0..2 {
        for part in ["attn.proj", "mlp.fc2"] {
            for suffix in ["weight", "bias"] {
                set(net.store_mut(), &format!("encoder.blocks.{i}.{part}.{suffix}"), |_| 0.0);
            }
        }
    }
    let pfs = common::tiny_pfs(1);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, net.store());
    let x = net.arch().embed(&mut cx, &pfs).unwrap();
    let fe = net.arch().encode(&mut cx, x).unwrap();
    assert_eq!(g.value(fe).values(), g.value(x).values());
}

#[test]
fn encoder_gradients_through_two_blocks() {
    let cfg = ModelConfig { encoder_blocks: 2, ..common::tiny_config(1) };
    let mut net = AbutmentNet::new(&cfg, 4).unwrap();
    common::jitter(net.store_mut(), 4, 0.1);
    let pfs = common::tiny_pfs(1);
    let arch = net.arch().clone();
    let err = grad_check_params(
        net.store(),
        |g, store| {
            let mut cx = Ctx::new(g, store);
            let x = arch.embed(&mut cx, &pfs).map_err(tensor_err)?;
            let fe = arch.encode(&mut cx, x).map_err(tensor_err)?;
            let w = cx.g.constant(Tensor::from_fn(6, 8, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.2 - 0.6));
            let m = cx.g.mul(fe, w)?;
            Ok(cx.g.sum(m))
        },
        1e-5,
        |n| n.starts_with("encoder.") || n.starts_with("embed."),
    )
    .unwrap();
    assert!(err < 1e-3, "{err:e}");
}

fn joint_total(
    arch: &Architecture,
    store: &ParamStore,
    pfs: &PatchFeatureSet,
    text: &TextEmbedding,
    mask: &MaskSpec,
    g: &mut Graph,
) -> Var {
    let mut cx = Ctx::new(g, store);
    let label = abutment_core::model::AbutmentParams::new(2.2, 4.9, 6.1);
    arch.step_loss(&mut cx, Objective::Joint, pfs, text, &label, mask, &LossConfig::default()).unwrap().total
}

#[test]
fn end_to_end_total_loss_gradient() {
    let cfg = common::tiny_config(1);
    let mut net = AbutmentNet::new(&cfg, 5).unwrap();
    common::jitter(net.store_mut(), 5, 0.05);
    let pfs = common::tiny_pfs(1);
    let text = common::random_text(&mut common::rng(5), 1, cfg.text_width);
    let mask = MaskSpec::sample(6, 0.5, 5).unwrap();
    let arch = net.arch().clone();
    let err =
        grad_check_params(net.store(), |g, store| Ok(joint_total(&arch, store, &pfs, &text, &mask, g)), 1e-5, |_| true)
            .unwrap();
    assert!(err < 1e-3, "{err:e}");
}

#[test]
fn every_parameter_receives_gradient_in_a_joint_step() {
    let cfg = common::tiny_config(1);
    let mut net = AbutmentNet::new(&cfg, 6).unwrap();
    let pfs = common::tiny_pfs(1);
    let text = common::random_text(&mut common::rng(6), 1, cfg.text_width);
    let mask = MaskSpec::sample(6, 0.5, 6).unwrap();
    let arch = net.arch().clone();
    let mut g = Graph::new();
    let total = joint_total(&arch, net.store(), &pfs, &text, &mask, &mut g);
    let grads = g.backward(total);
    let store = net.store_mut();
    store.zero_grad();
    store.accumulate(&g, &grads, 1.0);
    let silent: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.tensor.grad().is_none_or(|gr| gr.iter().all(|x| *x == 0.0)))
        .map(|(_, p)| p.name.clone())
        .collect();
    assert!(silent.is_empty(), "{silent:?}");
    let token = store.by_name("decoder.mask_token").unwrap();
    assert!(token.grad().unwrap().iter().any(|x| *x != 0.0));
}

#[test]
fn reconstruction_shapes_and_empty_mask() {
    let cfg = TrainConfig::default();
    let s = common::samples(1, 1, &cfg).remove(0);
    let net = AbutmentNet::new(&cfg.model, 7).unwrap();
    let mask = MaskSpec::sample(500, 0.5, 7).unwrap();
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, net.store());
    let x = net.arch().embed(&mut cx, &s.pfs).unwrap();
    let xv = cx.g.embedding_lookup(x, &mask.visible).unwrap();
    let fe = net.arch().encode(&mut cx, xv).unwrap();
    assert_eq!(cx.g.value(fe).shape(), &[250, 64]);
    let (v, f) = net.arch().decode(&mut cx, Some(fe), &mask, &s.pfs.centers).unwrap().unwrap();
    assert_eq!(g.value(v).shape(), &[250, 45 * 3]);
    assert_eq!(g.value(f).shape(), &[250, 64 * 13]);

    let none = MaskSpec::sample(500, 0.0, 7).unwrap();
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, net.store());
    let x = net.arch().embed(&mut cx, &s.pfs).unwrap();
    let fe = net.arch().encode(&mut cx, x).unwrap();
    assert!(net.arch().decode(&mut cx, Some(fe), &none, &s.pfs.centers).unwrap().is_none());
}

#[test]
fn predictions_are_finite_and_repeatable() {
    let cfg = common::tiny_config(1);
    let net = AbutmentNet::new(&cfg, 8).unwrap();
    let pfs = common::tiny_pfs(1);
    let text = common::random_text(&mut common::rng(8), 1, cfg.text_width);
    let a = net.predict(&pfs, &text).unwrap();
    assert!(a.is_finite());
    assert_eq!(a, net.predict(&pfs, &text).unwrap());
    assert!(matches!(net.predict(&pfs, &TextEmbedding::zeros(0, cfg.text_width)), Err(ModelError::MissingPrompt)));
}

#[test]
fn system_token_changes_prediction() {
    let cfg = TrainConfig::default();
    let s = common::samples(1, 2, &cfg).remove(0);
    let net = AbutmentNet::new(&cfg.model, 9).unwrap();
    let enc = HashEncoder::new(cfg.model.text_width, 0);
    let p1 = abutment_core::text::render_prompt("Bottom-45", "OSSTEM", "R").unwrap();
    let p2 = abutment_core::text::render_prompt("Bottom-45", "NOBEL", "R").unwrap();
    let t1 = enc.encode(&p1, cfg.model.text_mode).unwrap();
    let t2 = enc.encode(&p2, cfg.model.text_mode).unwrap();
    assert_ne!(net.predict(&s.pfs, &t1).unwrap(), net.predict(&s.pfs, &t2).unwrap());
}

#[test]
fn both_branches_read_the_same_encoder_weights() {
    let cfg = common::tiny_config(1);
    let mut net = AbutmentNet::new(&cfg, 10).unwrap();
    let pfs = common::tiny_pfs(1);
    let text = common::random_text(&mut common::rng(10), 1, cfg.text_width);
    let mask = MaskSpec::sample(6, 0.5, 10).unwrap();
    let run = |net: &AbutmentNet| {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, net.store());
        let label = abutment_core::model::AbutmentParams::new(2.0, 5.0, 6.0);
        let v = net
            .arch()
            .step_loss(&mut cx, Objective::Joint, &pfs, &text, &label, &mask, &LossConfig::default())
            .unwrap();
        (g.scalar(v.recon.unwrap().l_re), g.scalar(v.regression.unwrap().l_rg))
    };
    let before = run(&net);
    set(net.store_mut(), "encoder.blocks.0.mlp.fc1.weight", |i| 0.05 * ((i % 11) as f64 - 5.0));
    let after = run(&net);
    assert_ne!(before.0, after.0);
    assert_ne!(before.1, after.1);
}

#[test]
fn checkpoint_roundtrip_keeps_predictions() {
    let cfg = common::tiny_config(1);
    let net = AbutmentNet::new(&cfg, 11).unwrap();
    let pfs = common::tiny_pfs(1);
    let text = common::random_text(&mut common::rng(11), 1, cfg.text_width);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    net.save(&path).unwrap();
    let full = AbutmentNet::load(&path).unwrap();
    let lean = AbutmentNet::load_for_inference(&path).unwrap();
    let p = net.predict(&pfs, &text).unwrap();
    assert_eq!(full.predict(&pfs, &text).unwrap(), p);
    assert_eq!(lean.predict(&pfs, &text).unwrap(), p);
    assert!(lean.store().iter().all(|(_, q)| !is_decoder_param(&q.name)));
    assert_eq!(full.config(), &cfg);
}

#[test]
fn fusion_modes_produce_fused_vectors() {
    for fusion in [FusionMode::MeshQuery, FusionMode::TextQuery, FusionMode::Disabled] {
        let cfg = ModelConfig { fusion, ..common::tiny_config(1) };
        let net = AbutmentNet::new(&cfg, 12).unwrap();
        let text = common::random_text(&mut common::rng(12), 3, cfg.text_width);
        let out = net.fused_output(&common::tiny_pfs(1), &text).unwrap();
        assert_eq!(out.len(), cfg.fusion_width());
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(net.store().id("fusion.text_proj.weight").is_some(), fusion != FusionMode::Disabled);
    }
}
