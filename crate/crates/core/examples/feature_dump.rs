//! Dumps feature taps for external cross-checking.
//! Usage: feature_dump <out_dir> [weights_dir]
//! With no weights_dir, seeded archives are generated and saved alongside.

use senti_core::backbone::{init, Backbone, BackboneId, BackboneSpec, WeightArchive};
use senti_core::{raster, synth};

fn main() {
    let out = std::env::args().nth(1).expect("usage: feature_dump <out_dir> [weights_dir]");
    let weights_dir = std::env::args().nth(2);
    let out = std::path::PathBuf::from(out);
    std::fs::create_dir_all(&out).unwrap();

    let img = synth::scene(64, 96, 5, &synth::Palette::CLEAR);
    raster::save_image(&img, out.join("input.png")).unwrap();
    let img = raster::load_image(out.join("input.png")).unwrap();

    for id in [BackboneId::Densenet121, BackboneId::Vgg19] {
        let ar = match &weights_dir {
            Some(dir) => {
                WeightArchive::load(std::path::Path::new(dir).join(format!("{id}.safetensors")))
                    .unwrap()
            }
            None => {
                let ar = init::seeded_archive(id, 7);
                ar.save(out.join(format!("{id}.safetensors"))).unwrap();
                ar
            }
        };
        let bb: Backbone<f32> = Backbone::from_archive(BackboneSpec::for_id(id), &ar).unwrap();
        let pyr = bb.extract_features(&img).unwrap();
        let mut dump = WeightArchive::new();
        for (i, level) in pyr.levels.iter().enumerate() {
            let (c, h, w) = level.shape();
            dump.insert(format!("f{}", i + 1), vec![c, h, w], level.data().to_vec());
        }
        dump.save(out.join(format!("{id}-taps.safetensors"))).unwrap();
        println!("{id}: taps {:?}", pyr.channel_counts());
    }
}
