//! Encodes and decodes one frame with a freshly initialized VAE and prints the
//! per-frame loss terms.

use gla::trainer::{prepare_frame, TrainConfig};
use gla::rf_synth::{synth_ra_image, PersonTarget, RadarParams, SceneSpec};
use gla::vae::{kld_loss, recon_loss_bce, VAEArch, Vae};

fn main() -> gla::Result<()> {
    let params = RadarParams::default();
    let scene = SceneSpec::empty(5).with_person(PersonTarget {
        range_m: 2.0,
        angle_deg: 5.0,
        reflectivity: 1.2,
        blob_radius_bins: 2.5,
    });
    let frame = prepare_frame(&synth_ra_image(&scene, &params)?.0.normalize()?, &TrainConfig::default())?;

    let arch = VAEArch::default();
    let vae = Vae::<f32>::new(arch.clone(), 1)?;
    println!("{} parameters, bottleneck {:?}", vae.num_params(), arch.block_hw(3));

    let out = vae.encode(&frame)?;
    for b in &out.blocks {
        println!("block {}x{}x{}", b.channels, b.height, b.width);
    }
    let recon = vae.decode(&out.code.mu)?;
    let x: Vec<f64> = frame.pixels.iter().map(|&v| v as f64).collect();
    let mu = &out.code.mu;
    println!(
        "BCE {:.2}, KLD {:.4}",
        recon_loss_bce(&x, &recon, 1)?,
        kld_loss(mu, &out.code.log_var, 1)
    );
    Ok(())
}
