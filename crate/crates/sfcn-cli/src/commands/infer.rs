//! `sfcn infer`: saliency maps for a directory of PPM images, written as
//! PGM at the source resolution.

use std::path::Path;

use sfcn::checkpoint;
use sfcn::data::{pnm, resize_bilinear};
use sfcn::norm::Mode;
use sfcn::tensor::Tensor;
use sfcn::{Error, Result};

pub fn run(ckpt: &Path, images: &Path, out: &Path) -> Result<()> {
    let checkpoint = checkpoint::load(ckpt)?;
    let run_config = checkpoint.config()?;
    let net = checkpoint.build_net()?.detached()?;
    let ids = super::ids_with_extension(images, "ppm")?;
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "no .ppm images under {}",
            images.display()
        )));
    }
    super::create_dir(out)?;
    super::write_resolved(&run_config, out)?;

    let (mh, mw) = net.config.input_size;
    for id in &ids {
        let image = pnm::load_image(&images.join(format!("{id}.ppm")))?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let resized = if (h, w) == (mh, mw) {
            image
        } else {
            resize_bilinear(&image, (mh, mw))?
        };
        let maps = net.predict(&[resized], &run_config.mean, Mode::Eval)?;
        let map = Tensor::new(&[1, mh, mw], maps.saliency.data().to_vec())?;
        // Back to the source resolution so outputs align with inputs.
        let full = if (h, w) == (mh, mw) {
            map
        } else {
            resize_bilinear(&map, (h, w))?
        };
        pnm::save_gray(&out.join(format!("{id}.pgm")), full.data(), h, w)?;
    }
    println!("wrote {} saliency maps to {}", ids.len(), out.display());
    Ok(())
}
