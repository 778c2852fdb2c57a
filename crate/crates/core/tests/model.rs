use candle_core::Tensor;
use lhpf_core::features::{window_features, FeatureBundle};
use lhpf_core::history::{Fusion, FusionMode};
use lhpf_core::model::{Batch, ModelConfig, Planner};
use lhpf_core::nn::{device, ForwardCtx, ParamStore};
use lhpf_core::scenario::{generate_scenario, ScenarioKind, WindowConfig};

fn bundle(kind: ScenarioKind, seed: u64, t: usize, cfg: &ModelConfig) -> FeatureBundle {
    let w = generate_scenario(kind, seed).unwrap();
    let wc = WindowConfig { history_frames: cfg.history_frames, horizon_frames: cfg.decoder.horizon };
    window_features(&w.slice_window_with(t, wc).unwrap(), &cfg.features)
}

fn planner() -> (Planner, Batch) {
    let cfg = ModelConfig::desk();
    let a = bundle(ScenarioKind::LaneChange, 1, 30, &cfg);
    let b = bundle(ScenarioKind::DenseTraffic, 2, 40, &cfg);
    let batch = Batch::collate(&[&a, &b]).unwrap();
    (Planner::new(cfg).unwrap(), batch)
}

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

#[test]
fn plan_shapes_and_unit_headings() {
    let (p, batch) = planner();
    let out = p.backbone(&batch, &ForwardCtx::eval()).unwrap();
    let (b, r, l, t, c) = out.plan.trajectories.dims5().unwrap();
    assert_eq!((b, l, t, c), (2, p.config.decoder.lon_modes, p.config.decoder.horizon, 6));
    assert_eq!(r, batch.ref_ids[0].len());
    assert_eq!(out.plan.scores.dims(), &[b, r, l]);
    assert_eq!(out.plan.free.dims(), &[b, t, 6]);
    for row in values(&out.plan.trajectories).chunks(6) {
        assert!((row[2].hypot(row[3]) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn st_decoder_mirrors_spatial_decoder_trace() {
    let (p, batch) = planner();
    let ctx = ForwardCtx::eval().with_trace();
    let out = p.backbone(&batch, &ctx).unwrap();
    let plan_trace = ctx.take_trace();
    let q_st = p.fusion.fuse(&out.queries, None).unwrap();
    p.decode_st(&q_st, &batch, &out.encoding, &out.plan.free, &ctx).unwrap();
    let st_trace = ctx.take_trace();
    let suffixes = |v: &[String]| -> Vec<String> { v.iter().map(|s| s.rsplitn(3, '.').take(2).collect::<Vec<_>>().join("<")).collect() };
    assert_eq!(plan_trace.len(), 3 * p.config.decoder.num_layers);
    assert_eq!(suffixes(&plan_trace), suffixes(&st_trace));
    assert!(plan_trace[0].ends_with("0.lateral") && plan_trace[1].ends_with("0.longitudinal") && plan_trace[2].ends_with("0.cross"));
}

#[test]
fn warm_started_st_branch_reproduces_backbone_on_empty_pool() {
    let (p, batch) = planner();
    p.init_st_from_backbone().unwrap();
    let out = p.backbone(&batch, &ForwardCtx::eval()).unwrap();
    let q_st = p.fusion.fuse(&out.queries, None).unwrap();
    let st = p.decode_st(&q_st, &batch, &out.encoding, &out.plan.free, &ForwardCtx::eval()).unwrap();
    let diff = values(&st.trajectories).iter().zip(values(&out.plan.trajectories)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn sum_and_attention_fusion_differ() {
    let params = ParamStore::new(4);
    let sum = Fusion::new(&params.root().pp("a"), 8, 2, FusionMode::Sum).unwrap();
    let att = Fusion::new(&params.root().pp("b"), 8, 2, FusionMode::Attention).unwrap();
    let q0 = Tensor::randn(0.0, 1.0, (1, 2, 3, 8), &device()).unwrap();
    let h = Tensor::randn(0.0, 1.0, (1, 3, 2, 3, 8), &device()).unwrap();
    let a = values(&sum.history_term(&q0, Some(&h)).unwrap());
    let b = values(&att.history_term(&q0, Some(&h)).unwrap());
    assert!(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > 1e-6);
}

#[test]
fn history_sum_is_order_free() {
    let params = ParamStore::new(4);
    let sum = Fusion::new(&params.root().pp("a"), 4, 2, FusionMode::Sum).unwrap();
    let q0 = Tensor::zeros((1, 1, 2, 4), candle_core::DType::F64, &device()).unwrap();
    let h = Tensor::randn(0.0, 1.0, (1, 3, 1, 2, 4), &device()).unwrap();
    let idx = Tensor::new(&[2u32, 0, 1], &device()).unwrap();
    let shuffled = h.index_select(&idx, 1).unwrap();
    let a = values(&sum.history_term(&q0, Some(&h)).unwrap());
    let b = values(&sum.history_term(&q0, Some(&shuffled)).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn phase_two_graph_has_no_backbone_gradients() {
    let (p, batch) = planner();
    let out = p.backbone(&batch, &ForwardCtx::eval()).unwrap();
    let enc = out.encoding.detach();
    let q0 = out.queries.detach();
    let h = out.plan.embedding.detach().unsqueeze(1).unwrap();
    let h = Tensor::cat(&[&h, &h], 1).unwrap();
    let q_st = p.fusion.fuse(&q0, Some(&h)).unwrap();
    let st = p.decode_st(&q_st, &batch, &enc, &out.plan.free.detach(), &ForwardCtx::eval()).unwrap();
    let loss = (st.trajectories.sqr().unwrap().sum_all().unwrap() + st.scores.sum_all().unwrap()).unwrap();
    let grads = loss.backward().unwrap();
    let mut st_seen = 0;
    for (name, var) in p.params.named_vars() {
        let g = grads.get(var.as_tensor());
        if Planner::is_backbone_param(&name) {
            assert!(g.is_none_or(|g| values(g).iter().all(|v| *v == 0.0)), "{name}");
        } else if g.is_some() {
            st_seen += 1;
        }
    }
    assert!(st_seen > 0);
    assert!(grads.get(p.params.get("st.fusion.proj.weight").unwrap().as_tensor()).is_some());
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    let (p, batch) = planner();
    let a = p.backbone(&batch, &ForwardCtx::eval()).unwrap();
    let b = p.backbone(&batch, &ForwardCtx::eval()).unwrap();
    assert_eq!(values(&a.plan.trajectories), values(&b.plan.trajectories));
    assert_eq!(values(&a.plan.scores), values(&b.plan.scores));
}

#[test]
fn full_state_dropout_hides_ego_kinematics() {
    let mut cfg = ModelConfig::desk();
    cfg.encoder.sde_dropout = 1.0;
    let p = Planner::new(cfg).unwrap();
    let k1 = Tensor::new(&[[8.0, 0.1, 0.5, -0.2, 0.05]], &device()).unwrap();
    let k2 = Tensor::new(&[[2.0, -0.3, -1.5, 0.4, -0.2]], &device()).unwrap();
    let a = values(&p.encoder.ego.forward(&k1, &ForwardCtx::train(0.0, 1)).unwrap());
    let b = values(&p.encoder.ego.forward(&k2, &ForwardCtx::train(0.0, 2)).unwrap());
    assert_eq!(a, b);
    let e1 = values(&p.encoder.ego.forward(&k1, &ForwardCtx::eval()).unwrap());
    let e2 = values(&p.encoder.ego.forward(&k2, &ForwardCtx::eval()).unwrap());
    assert_ne!(e1, e2);
}
