use std::time::Instant;
use sfcn::tensor::{conv2d, deconv2d, ConvSpec, Tensor};

fn bench(name: &str, macs: usize, mut f: impl FnMut()) {
    let reps = 20;
    let t = Instant::now();
    for _ in 0..reps { f(); }
    let el = t.elapsed().as_secs_f64();
    println!("{name:<28} {:>8.2} G MACs/s  ({:.1} ms/call)", (macs * reps) as f64 / el / 1e9, el * 1000.0 / reps as f64);
}

fn main() {
    let mk = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| (i % 13) as f64 * 0.1).collect()).unwrap()
    };
    // block1 conv2: 16->16 @64x64, batch 2
    let x = mk(&[2, 16, 64, 64]);
    let w = mk(&[16, 16, 3, 3]);
    let b = mk(&[16]);
    let spec = ConvSpec::new(16, 16, 3);
    bench("conv 16->16 @64", 2 * 16 * 16 * 9 * 4096, || {
        let _ = conv2d(&x, &w, &b, &spec).unwrap();
    });
    // block3 conv: 64->64 @16x16, batch 2
    let x = mk(&[2, 64, 16, 16]);
    let w = mk(&[64, 64, 3, 3]);
    let b = mk(&[64]);
    let spec = ConvSpec::new(64, 64, 3);
    bench("conv 64->64 @16", 2 * 64 * 64 * 9 * 256, || {
        let _ = conv2d(&x, &w, &b, &spec).unwrap();
    });
    // fusion squeeze: 96->64 1x1 @64x64
    let x = mk(&[2, 96, 64, 64]);
    let w = mk(&[64, 96, 1, 1]);
    let b = mk(&[64]);
    let spec = ConvSpec::new(96, 64, 1).with_padding(0);
    bench("conv1x1 96->64 @64", 2 * 96 * 64 * 4096, || {
        let _ = conv2d(&x, &w, &b, &spec).unwrap();
    });
    // deconv 64->64 @32->64
    let x = mk(&[2, 64, 32, 32]);
    let w = mk(&[64, 64, 4, 4]);
    let spec = ConvSpec { in_channels: 64, out_channels: 64, kernel: (4, 4), stride: (2, 2), padding: (1, 1) };
    bench("deconv 64->64 @32->64", 2 * 64 * 64 * 16 * 1024, || {
        let _ = deconv2d(&x, &w, &spec).unwrap();
    });
}
