use cmudrn::tensor::{self, ConvSpec, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tensor::numel(&shape);
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct nested-sum correlation with zero padding.
fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.shape();
    let [co, _, kh, kw] = w.shape();
    let (ho, wo) = (h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1);
    let mut out = vec![0.0; n * co * ho * wo];
    for bi in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(bi, ci, iy as usize, ix as usize) * w.at(o, ci, ky, kx);
                            }
                        }
                    }
                    out[((bi * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_correlation() {
    let spec = ConvSpec::same(2, 3, 3);
    let x = random([1, 2, 5, 5], 1);
    let w = random(spec.weight_shape(), 2);
    let b = random(spec.bias_shape(), 3);
    let y = tensor::conv2d(&x, &w, &b, &spec).unwrap();
    let expected = naive_conv(&x, &w, &b, 1);
    for (a, e) in y.data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn conv2d_matches_naive_for_assorted_geometries() {
    for (i, (c, co, kh, kw, pad, h, w)) in [
        (1, 1, 1, 1, 0, 4, 4),
        (3, 16, 3, 3, 1, 7, 9),
        (4, 2, 5, 5, 2, 6, 6),
        (2, 2, 3, 5, 0, 6, 8),
        (2, 2, 3, 3, 3, 2, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let spec = ConvSpec {
            in_channels: c,
            out_channels: co,
            kernel: (kh, kw),
            padding: pad,
        };
        let x = random([2, c, h, w], 10 + i as u64);
        let wt = random(spec.weight_shape(), 20 + i as u64);
        let b = random(spec.bias_shape(), 30 + i as u64);
        let y = tensor::conv2d(&x, &wt, &b, &spec).unwrap();
        let expected = naive_conv(&x, &wt, &b, pad);
        assert_eq!(y.len(), expected.len());
        for (a, e) in y.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "case {i}: {a} vs {e}");
        }
    }
}

#[test]
fn conv2d_matches_naive_across_tiles() {
    // Large outputs are unfolded in row tiles; cover partial last tiles and
    // rows wider than a tile.
    for (i, (c, co, h, w)) in [(2, 3, 45, 70), (1, 2, 3, 1500), (3, 2, 130, 9)].into_iter().enumerate() {
        let spec = ConvSpec::same(c, co, 3);
        let x = random([2, c, h, w], 50 + i as u64);
        let wt = random(spec.weight_shape(), 60 + i as u64);
        let b = random(spec.bias_shape(), 70 + i as u64);
        let y = tensor::conv2d(&x, &wt, &b, &spec).unwrap();
        let expected = naive_conv(&x, &wt, &b, 1);
        let err = y.data().iter().zip(&expected).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "case {i}: max error {err:e}");
    }
}

#[test]
fn conv2d_is_linear_without_bias() {
    let spec = ConvSpec::same(3, 4, 3);
    let w = random(spec.weight_shape(), 40);
    let b = Tensor::zeros(spec.bias_shape()).unwrap();
    let x = random([2, 3, 6, 6], 41);
    let y = random([2, 3, 6, 6], 42);
    let (alpha, beta) = (0.7, -1.3);
    let mix = tensor::add(&tensor::scale(&x, alpha), &tensor::scale(&y, beta)).unwrap();
    let lhs = tensor::conv2d(&mix, &w, &b, &spec).unwrap();
    let cx = tensor::conv2d(&x, &w, &b, &spec).unwrap();
    let cy = tensor::conv2d(&y, &w, &b, &spec).unwrap();
    for i in 0..lhs.len() {
        let rhs = alpha * cx.data()[i] + beta * cy.data()[i];
        assert!((lhs.data()[i] - rhs).abs() < 1e-6);
    }
}

#[test]
fn ops_are_deterministic() {
    let spec = ConvSpec::same(3, 5, 3);
    let run = || {
        let x = Tensor::param([2, 3, 8, 8], random([2, 3, 8, 8], 50).data().to_vec()).unwrap();
        let w = Tensor::param(spec.weight_shape(), random(spec.weight_shape(), 51).data().to_vec()).unwrap();
        let b = Tensor::param(spec.bias_shape(), random(spec.bias_shape(), 52).data().to_vec()).unwrap();
        let y = tensor::relu(&tensor::conv2d(&x, &w, &b, &spec).unwrap());
        let l = tensor::frobenius_sq(&y);
        l.backward().unwrap();
        (y.data().to_vec(), x.grad().unwrap(), w.grad().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn every_requires_grad_leaf_gets_a_grad() {
    let spec = ConvSpec::same(2, 2, 3);
    let x = Tensor::param([1, 2, 4, 4], vec![0.5; 32]).unwrap();
    let w = Tensor::param(spec.weight_shape(), vec![0.1; 36]).unwrap();
    let b = Tensor::param(spec.bias_shape(), vec![0.0; 2]).unwrap();
    let unused_in_value = Tensor::param([1, 2, 4, 4], vec![0.0; 32]).unwrap();
    let y = tensor::conv2d(&x, &w, &b, &spec).unwrap();
    let z = tensor::add(&y, &tensor::scale(&unused_in_value, 0.0)).unwrap();
    tensor::mean(&z).backward().unwrap();
    for t in [&x, &w, &b, &unused_in_value] {
        let g = t.grad().expect("leaf without grad");
        assert_eq!(g.len(), t.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_padding_preserves_spatial_size(
        k in prop::sample::select(vec![1usize, 3, 5, 7]),
        h in 1usize..12,
        w in 1usize..12,
        c in 1usize..4,
    ) {
        let spec = ConvSpec::same(c, 2, k);
        let x = Tensor::full([1, c, h, w], 0.25).unwrap();
        let wt = Tensor::full(spec.weight_shape(), 0.5).unwrap();
        let b = Tensor::zeros(spec.bias_shape()).unwrap();
        let y = tensor::conv2d(&x, &wt, &b, &spec).unwrap();
        prop_assert_eq!(y.shape(), [1, 2, h, w]);
    }

    #[test]
    fn concat_then_narrow_recovers_inputs(
        n in 1usize..3,
        ca in 1usize..4,
        cb in 1usize..4,
        h in 1usize..6,
        w in 1usize..6,
        seed in any::<u64>(),
    ) {
        let a = random([n, ca, h, w], seed);
        let b = random([n, cb, h, w], seed.wrapping_add(1));
        let c = tensor::concat_channels(&a, &b).unwrap();
        prop_assert_eq!(c.shape(), [n, ca + cb, h, w]);
        let a2 = tensor::narrow_channels(&c, 0, ca).unwrap();
        let b2 = tensor::narrow_channels(&c, ca, cb).unwrap();
        prop_assert_eq!(a2.data(), a.data());
        prop_assert_eq!(b2.data(), b.data());
    }
}
