use cmudrn::losses::{self, LossConfig};
use cmudrn::nets::{self, cross_stitch, init_params, ConvLayer, Layers};
use cmudrn::tensor::{self, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tensor::numel(&shape);
    Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn param_bytes(p: &nets::CmudrnParams) -> Vec<u64> {
    p.parameters()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn init_is_deterministic_per_seed() {
    assert_eq!(param_bytes(&init_params(7, 16, 3)), param_bytes(&init_params(7, 16, 3)));
    assert_ne!(param_bytes(&init_params(7, 16, 3)), param_bytes(&init_params(8, 16, 3)));
}

#[test]
fn init_variance_tracks_fan_in() {
    // Uniform(-a, a) with a = sqrt(1/fan_in) has variance 1 / (3 fan_in).
    let p = init_params(99, 16, 3);
    let mut samples = 0usize;
    for (name, layer) in p.layers() {
        let fan_in = layer.spec.fan_in() as f64;
        let target = 1.0 / (3.0 * fan_in);
        let w = layer.weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        assert!(
            var > target / 3.0 && var < target * 3.0,
            "{name}: variance {var:.3e} vs target {target:.3e}"
        );
        assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        samples += w.len();
    }
    assert!(samples >= 10_000, "only {samples} weight samples");
}

#[test]
fn gradients_reach_every_parameter_group() {
    let p = init_params(5, 8, 2);
    let y = random([1, 3, 16, 16], 6);
    let gt = random([1, 3, 16, 16], 7);
    let cfg = LossConfig::default();
    let out = nets::cmudrn_forward(&p, &y).unwrap();
    let mut loss = tensor::add(
        &losses::local_loss(&out.rain.output, &gt, &cfg).unwrap(),
        &losses::local_loss(&out.snow.output, &gt, &cfg).unwrap(),
    )
    .unwrap();
    for inter in [&out.rain.intermediates, &out.snow.intermediates] {
        loss = tensor::add(&loss, &losses::recur_loss(inter, &gt, &cfg).unwrap()).unwrap();
    }
    loss = tensor::add(&loss, &losses::global_loss(&out.fused, &gt, &cfg).unwrap()).unwrap();
    loss.backward().unwrap();
    for (name, t) in p.parameters() {
        let g = t.grad().unwrap_or_else(|| panic!("{name} has no grad"));
        assert!(g.iter().any(|&v| v != 0.0), "{name} grad is all zero");
    }
}

#[test]
fn zero_output_layers_make_branches_return_input_either_way() {
    for stitch in [true, false] {
        let mut p = init_params(9, 8, 3);
        p.stitch_enabled = stitch;
        p.rain.f_out = ConvLayer::zeros(p.rain.f_out.spec);
        p.snow.f_out = ConvLayer::zeros(p.snow.f_out.spec);
        let y = random([1, 3, 8, 8], 10);
        let out = nets::cmudrn_forward(&p, &y).unwrap();
        assert_eq!(out.rain.output.data(), y.data());
        assert_eq!(out.snow.output.data(), y.data());
    }
}

#[test]
fn drn_shape_preserved_over_sizes_and_loops() {
    let base = init_params(11, 4, 1);
    for size in [8, 16, 32] {
        let y = random([1, 3, size, size], size as u64);
        for loops in 1..=7 {
            let mut drn = base.rain.clone();
            drn.loops = loops;
            let out = nets::drn_forward(&drn, &y).unwrap();
            assert_eq!(out.output.shape(), y.shape());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_stitch_is_convex_and_conserves_sum(
        alpha in 0.0f64..=1.0,
        a in prop::collection::vec(-10.0f64..10.0, 12),
        b in prop::collection::vec(-10.0f64..10.0, 12),
    ) {
        let ta = Tensor::new([1, 3, 2, 2], a.clone()).unwrap();
        let tb = Tensor::new([1, 3, 2, 2], b.clone()).unwrap();
        let ab = cross_stitch(&ta, &tb, alpha).unwrap();
        let ba = cross_stitch(&tb, &ta, alpha).unwrap();
        for i in 0..12 {
            let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
            let v = ab.data()[i];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            prop_assert!((ab.data()[i] + ba.data()[i] - (a[i] + b[i])).abs() < 1e-12);
        }
    }
}
