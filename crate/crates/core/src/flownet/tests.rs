use super::*;
use crate::events::{Event, EventStream};
use crate::voxel::build_voxel_grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> NetworkConfig {
    let mut c = NetworkConfig::with_widths([4, 6, 8, 10], [8, 12, 16, 20]);
    (c.height, c.width, c.flow_hidden, c.mask_hidden) = (64, 64, 12, 16);
    c
}

fn random_voxels(seed: u64, h: usize, w: usize) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = (0..500)
        .map(|_| Event::new(rng.gen_range(0..w as u16), rng.gen_range(0..h as u16), rng.gen_range(0..1000), if rng.gen() { 1 } else { -1 }))
        .collect();
    events.sort_by_key(|e| e.t);
    let s = EventStream::new(w as u32, h as u32, events).unwrap();
    build_voxel_grid(&s, 32, 0, 1000).unwrap()
}

#[test]
fn default_geometry() {
    let c = NetworkConfig::default();
    c.validate().unwrap();
    assert_eq!(c.reduction(), (1024, 128));
    let dims: Vec<_> = c.trace(64, 64).unwrap().iter().map(|(s, g)| s.output_dims(g.n_t * s.m, g.h_p * s.k, g.w_p * s.k).unwrap()).collect();
    assert_eq!(dims, vec![(32, 32, 16, 16), (64, 8, 8, 8), (96, 4, 8, 8), (128, 1, 8, 8)]);
    let mut bad = c.clone();
    bad.stages[3].m = 2;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert!(c.trace(48, 64).is_err());
}

#[test]
fn encoder_and_heads_shapes() {
    let cfg = small_cfg();
    let net = FlowNet::<f32>::from_container(&cfg, &init_weights(&cfg, 3).unwrap()).unwrap();
    let v = random_voxels(1, 64, 64);
    let f = encoder_forward(&v, &net).unwrap();
    assert_eq!(f.shape(), &[10, 8, 8]);
    let (flow, masks) = predict_heads(&f, &net).unwrap();
    assert_eq!((flow.shape(), masks.shape()), (&[2, 8, 8][..], &[576, 8, 8][..]));
    let out = forward(&v, &net).unwrap();
    assert_eq!((out.width, out.height), (64, 64));
    assert_eq!(out, forward(&v, &net).unwrap());
}

#[test]
fn zero_input_gives_zero_features() {
    let cfg = small_cfg();
    let net = FlowNet::<f32>::from_container(&cfg, &init_weights(&cfg, 3).unwrap()).unwrap();
    let s = EventStream::empty(64, 64);
    let v = build_voxel_grid(&s, 32, 0, 1000).unwrap();
    let f = encoder_forward(&v, &net).unwrap();
    assert!(f.data().iter().all(|&x| x == 0.0));
    let flow = forward(&v, &net).unwrap();
    assert!(flow.u.iter().chain(&flow.v).all(|&x| x == 0.0));
}

#[test]
fn perturbation_changes_output() {
    let cfg = small_cfg();
    let net = FlowNet::<f32>::from_container(&cfg, &init_weights(&cfg, 5).unwrap()).unwrap();
    let v = random_voxels(2, 64, 64);
    let mut p = v.clone();
    let i = p.index(10, 20, 30);
    p.data[i] += 1.0;
    assert_ne!(forward(&v, &net).unwrap(), forward(&p, &net).unwrap());
}

#[test]
fn convex_upsample_constant_and_one_hot() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w) = (3, 4);
    let coarse = Tensor::from_fn([2, h, w], |i| if i < h * w { 0.3f32 } else { -1.7 });
    let masks = Tensor::from_fn([MASK_CHANNELS, h, w], |_| rng.gen_range(-5.0f32..5.0));
    let f = convex_upsample(&coarse, &masks).unwrap();
    assert!(f.u.iter().all(|&u| u == 8.0 * 0.3f32));
    assert!(f.v.iter().all(|&v| v == 8.0 * -1.7f32));

    let coarse = Tensor::from_fn([2, h, w], |_| rng.gen_range(-2.0f32..2.0));
    let onehot = Tensor::from_fn([MASK_CHANNELS, h, w], |i| if i / (h * w) / 64 == 4 { 50.0 } else { -50.0 });
    let f = convex_upsample(&coarse, &onehot).unwrap();
    for y in 0..8 * h {
        for x in 0..8 * w {
            let want = 8.0 * coarse.data()[(y / 8) * w + x / 8];
            assert!((f.u[y * 8 * w + x] - want).abs() < 1e-5);
        }
    }
    assert!(convex_upsample(&coarse, &Tensor::<f32>::zeros([575, h, w])).is_err());
}

#[test]
fn weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let masks = Tensor::from_fn([MASK_CHANNELS, 2, 2], |_| rng.gen_range(-30.0f32..30.0));
    for (i, j, di, dj) in [(0, 0, 0, 0), (1, 1, 7, 7), (0, 1, 3, 5)] {
        let s: f64 = upsample_weights(&masks, i, j, di, dj).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn container_round_trip_and_errors() {
    let cfg = small_cfg();
    let c = init_weights(&cfg, 11).unwrap();
    assert_eq!(c, init_weights(&cfg, 11).unwrap());
    assert_ne!(c, init_weights(&cfg, 12).unwrap());
    let back = WeightContainer::from_bytes(&c.to_bytes()).unwrap();
    assert_eq!(back, c);
    back.check_against(&cfg.param_specs().unwrap()).unwrap();

    let mut renamed = c.clone();
    let t = renamed.tensors.remove("blocks.1.proj.bias").unwrap();
    renamed.insert("blocks.1.proj.bais", t).unwrap();
    let err = renamed.check_against(&cfg.param_specs().unwrap()).unwrap_err().to_string();
    assert!(err.contains("blocks.1.proj.bias"), "{err}");

    let mut extra = c.clone();
    extra.insert("stray", Tensor::zeros([1])).unwrap();
    let err = extra.check_against(&cfg.param_specs().unwrap()).unwrap_err().to_string();
    assert!(err.contains("stray"), "{err}");

    let mut reshaped = c.clone();
    reshaped.tensors.insert("flow_head.conv2.bias".into(), Tensor::zeros([3]));
    assert!(reshaped.check_against(&cfg.param_specs().unwrap()).unwrap_err().to_string().contains("flow_head.conv2.bias"));

    assert!(matches!(WeightContainer::from_bytes(&[]), Err(Error::Format(_))));
    let bytes = c.to_bytes();
    assert!(matches!(WeightContainer::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
}

#[test]
fn init_bounds() {
    let cfg = small_cfg();
    let c = init_weights(&cfg, 1).unwrap();
    for s in cfg.param_specs().unwrap() {
        let t = c.get(&s.name).unwrap();
        assert!(t.is_finite());
        if let InitRule::Xavier { fan_in, fan_out } = s.rule {
            let b = InitRule::xavier_bound(fan_in, fan_out) as f32;
            assert!(t.data().iter().all(|v| v.abs() <= b), "{}", s.name);
        }
        if s.name.ends_with("tau") || s.name.ends_with(".bias") && !s.name.contains("dt_proj") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{}", s.name);
        }
    }
}

#[test]
fn positional_tables_pin_resolution() {
    let mut cfg = small_cfg();
    cfg.embedding = Embedding::TemporalPositional;
    let net = FlowNet::<f32>::from_container(&cfg, &init_weights(&cfg, 0).unwrap()).unwrap();
    forward(&random_voxels(0, 64, 64), &net).unwrap();
    assert!(matches!(forward(&random_voxels(0, 64, 96), &net), Err(Error::Shape(_))));
}

#[test]
fn pseudo_path_seeds() {
    let cfg = small_cfg();
    assert_eq!(load_weights("random-seed-7", &cfg).unwrap(), init_weights(&cfg, 7).unwrap());
    assert!(load_weights("random-seed-x", &cfg).is_err());
}
