use std::time::Instant;
use sfcn::loss::{loss_total, FeatureExtractor, LossConfig};
use sfcn::net::{Sfcn, SfcnConfig};
use sfcn::norm::Mode;
use sfcn::tensor::{backward, Tensor};

fn main() {
    let net = Sfcn::init(SfcnConfig::desk(), 1).unwrap();
    let n = 2;
    let data: Vec<f64> = (0..n*3*64*64).map(|i| ((i*31)%97) as f64/97.0 - 0.4).collect();
    let origin = Tensor::new(&[n,3,64,64], data.clone()).unwrap();
    let reflected = Tensor::new(&[n,3,64,64], data.iter().map(|v| -v).collect()).unwrap();
    let truth = Tensor::new(&[n,1,64,64], (0..n*4096).map(|i| f64::from(i%5==0)).collect()).unwrap();
    let extractor = FeatureExtractor::new(3);
    let cfg = LossConfig::default();

    let t0 = Instant::now();
    let maps = net.forward(&origin, &reflected, Mode::Train).unwrap();
    let t1 = Instant::now();
    let b = loss_total(&maps.fg, &truth, &extractor, &cfg).unwrap();
    let t2 = Instant::now();
    backward(&b.total).unwrap();
    let t3 = Instant::now();
    println!("forward: {:?}  loss: {:?}  backward: {:?}", t1-t0, t2-t1, t3-t2);
}
