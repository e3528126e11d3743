//! Renders one person scene with the image-level generator and writes a PNG preview.
//!
//! cargo run --example synth_scene -- /tmp/scene.png

use gla::frames::save_preview_png;
use gla::rf_synth::{synth_ra_image, MultipathBand, PersonTarget, PointTarget, RadarParams, SceneSpec};

fn main() -> gla::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scene.png".into());
    let params = RadarParams::default();
    let mut scene = SceneSpec::empty(11).with_person(PersonTarget {
        range_m: 3.0,
        angle_deg: -15.0,
        reflectivity: 1.5,
        blob_radius_bins: 2.0,
    });
    scene.clutter_targets.push(PointTarget { range_m: 5.2, angle_deg: 30.0, reflectivity: 0.25 });
    scene.multipath_bands.push(MultipathBand { range_bin: 12.0, amplitude: 0.2, thickness_bins: 1.5 });
    scene.noise_power = 1e-4;

    let (raw, gt) = synth_ra_image(&scene, &params)?;
    let frame = raw.normalize()?;
    println!(
        "{}x{} frame, range resolution {:.3} m, person at bin {:?}",
        frame.height,
        frame.width,
        params.range_resolution(),
        gt.blob_center
    );
    save_preview_png(out.as_ref(), &frame)?;
    println!("wrote {out}");
    Ok(())
}
