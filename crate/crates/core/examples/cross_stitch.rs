// What the cross-stitch unit does to two feature maps, and how the two
// branches collapse to the identity when their output layers are zero.
//
// `cargo run --example cross_stitch`

use cmudrn::nets::{cmudrn_forward, cross_stitch, init_params, ConvLayer};
use cmudrn::tensor::Tensor;

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let a = Tensor::full([1, 1, 2, 2], 1.0)?;
    let b = Tensor::full([1, 1, 2, 2], 3.0)?;
    for alpha in [0.0, 0.25, 0.5, 1.0] {
        let ab = cross_stitch(&a, &b, alpha)?;
        let ba = cross_stitch(&b, &a, alpha)?;
        println!("alpha {alpha:<4}  a' = {:<4}  b' = {:<4}", ab.data()[0], ba.data()[0]);
        // Stitching only redistributes: the pair sum is unchanged.
        assert_eq!(ab.data()[0] + ba.data()[0], 4.0);
    }

    let y = Tensor::new(
        [1, 3, 8, 8],
        (0..192).map(|i| (i % 17) as f64 / 16.0).collect(),
    )?;
    for stitch in [true, false] {
        let mut p = init_params(1, 8, 3);
        p.stitch_enabled = stitch;
        p.rain.f_out = ConvLayer::zeros(p.rain.f_out.spec);
        p.snow.f_out = ConvLayer::zeros(p.snow.f_out.spec);
        let out = cmudrn_forward(&p, &y)?;
        let same = out.rain.output.data() == y.data() && out.snow.output.data() == y.data();
        println!("stitch {stitch:<5}  zero output layers return the input: {same}");
        if !same {
            return Err("branch outputs differ from input".into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
