use mcwnet::blocks::{FusionMode, RegionClass, SamplingKind};
use mcwnet::network::{
    build, layout, load_weights, loss_l1l2, loss_value, param_breakdown, param_count, read_weights,
    save_weights, sidecar_path, write_weights, NetworkConfig, WrnlPosition,
};
use mcwnet::diagnostics::{check_block, Block};
use mcwnet::{Error, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, side: usize) -> Tensor {
    Tensor::uniform(&[1, 3, side, side], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn preset_counts_match_table_one_within_tolerance() {
    let small = param_count(&NetworkConfig::small()).unwrap() as f64;
    let large = param_count(&NetworkConfig::large()).unwrap() as f64;
    assert!((small / 2_158_586.0 - 1.0).abs() <= 0.25, "small {small}");
    assert!((large / 129_539_018.0 - 1.0).abs() <= 0.25, "large {large}");
    assert!((55.0..=70.0).contains(&(large / small)));
}

#[test]
fn count_is_sum_of_serialized_arrays() {
    let cfg = NetworkConfig::toy();
    let model = build(&cfg, 3).unwrap();
    assert_eq!(model.param_count(), param_count(&cfg).unwrap());
    let mut buf = Vec::new();
    write_weights(&model.params, &mut buf).unwrap();
    let back = read_weights(&buf[..]).unwrap();
    assert_eq!(back.values().map(Tensor::len).sum::<usize>(), param_count(&cfg).unwrap());
    let parts = param_breakdown(&cfg).unwrap();
    assert_eq!(parts.first().unwrap().0, "head");
    assert_eq!(parts.last().unwrap().0, "tail");
    assert_eq!(parts.iter().map(|p| p.1).sum::<usize>(), param_count(&cfg).unwrap());
}

#[test]
fn build_is_deterministic_and_names_unique() {
    let cfg = NetworkConfig::toy();
    let a = build(&cfg, 11).unwrap();
    assert_eq!(a, build(&cfg, 11).unwrap());
    assert_ne!(a, build(&cfg, 12).unwrap());
    assert_eq!(a.params.len(), layout(&cfg).unwrap().len());
    assert!(a.params.values().all(Tensor::all_finite));
}

#[test]
fn forward_preserves_shape_and_is_deterministic() {
    let model = build(&NetworkConfig::toy(), 1).unwrap();
    let x = image(2, 64);
    let y = model.forward(&x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y, model.forward(&x).unwrap());
    assert!(model.forward(&image(2, 48)).is_err());
}

#[test]
fn zero_tail_gives_identity() {
    let mut model = build(&NetworkConfig::toy(), 1).unwrap();
    for name in ["tail.weight", "tail.bias"] {
        let t = &mut model.params[name];
        *t = Tensor::zeros(t.shape());
    }
    let x = image(3, 32);
    assert_eq!(model.forward(&x).unwrap(), x);
}

#[test]
fn every_ablation_builds_and_runs() {
    let x = image(4, 32);
    let mut configs = Vec::new();
    for region in [RegionClass::Wide, RegionClass::Square, RegionClass::Tall] {
        configs.push(NetworkConfig { wrnl_region: region, ..NetworkConfig::toy() });
    }
    for sampling in [SamplingKind::Dwt, SamplingKind::MeanPool, SamplingKind::Conv1x1] {
        configs.push(NetworkConfig { sampling, ..NetworkConfig::toy() });
    }
    for mlc_fusion in [FusionMode::Se, FusionMode::Concat, FusionMode::Add, FusionMode::None] {
        configs.push(NetworkConfig { mlc_fusion, ..NetworkConfig::toy() });
    }
    configs.push(NetworkConfig { wrnl_position: WrnlPosition::Before, wrnl_residual: false, global_residual: false, ..NetworkConfig::toy() });
    for cfg in configs {
        let m = build(&cfg, 5).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape(), "{cfg:?}");
        assert!(y.all_finite());
    }
}

#[test]
fn loss_closed_forms() {
    let t = image(5, 32);
    let tape = Tape::new();
    let same = loss_l1l2(tape.leaf(t.clone()), &t).unwrap();
    assert_eq!(same.total.value().data()[0], 0.0);
    let c = 0.3;
    let shifted = loss_l1l2(tape.leaf(t.map(|v| v + c)), &t).unwrap();
    assert!((shifted.total.value().data()[0] - 2.0 * c).abs() < 1e-12);
    let e = image(6, 32).map(|v| v - 0.5);
    let plus = loss_value(&t.add(&e).unwrap(), &t).unwrap();
    let minus = loss_value(&t.sub(&e).unwrap(), &t).unwrap();
    assert!((plus - minus).abs() < 1e-12);
    assert!(loss_l1l2(tape.leaf(Tensor::zeros(&[1, 3, 4, 4])), &t).is_err());
}

#[test]
fn toy_network_gradient_check() {
    let rep = check_block(Block::Network, 7, 1e-5).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn weights_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let model = build(&NetworkConfig::toy(), 21).unwrap();
    save_weights(&model, &path).unwrap();
    assert!(sidecar_path(&path).exists());
    let loaded = load_weights(&path, None).unwrap();
    assert_eq!(loaded.config, model.config);
    let x = image(10, 32);
    let d = model.forward(&x).unwrap().max_abs_diff(&loaded.forward(&x).unwrap());
    assert!(d < 1e-5, "{d}");

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_weights(&bad[..]), Err(Error::BadMagic(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(read_weights(&bad[..]), Err(Error::UnsupportedVersion(9))));
    assert!(matches!(read_weights(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    assert!(matches!(read_weights(&bytes[..6]), Err(Error::Truncated(_))));
    let mut empty = bytes[..8].to_vec();
    empty.extend_from_slice(&0u32.to_le_bytes());
    assert!(matches!(read_weights(&empty[..]), Err(Error::EmptyWeights)));
    assert!(matches!(write_weights(&Default::default(), Vec::new()), Err(Error::EmptyWeights)));

    let other = NetworkConfig { mlc_fusion: FusionMode::Concat, ..NetworkConfig::toy() };
    assert!(matches!(load_weights(&path, Some(&other)), Err(Error::WeightMismatch { .. })));
}

#[test]
fn dwt_down_then_up_is_identity() {
    use mcwnet::blocks::{Resampler, Sampler};
    let params = Default::default();
    let s = Sampler { kind: SamplingKind::Dwt, params: &params };
    let tape = Tape::new();
    let x = Tensor::uniform(&[2, 4, 32, 32], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(30));
    let down = s.resample(tape.leaf(x.clone()), 1, 4, "d").unwrap();
    assert_eq!(down.shape(), vec![2, 256, 4, 4]);
    let back = s.resample(down, 4, 1, "u").unwrap();
    assert!(back.value().max_abs_diff(&x) < 1e-12);
}
