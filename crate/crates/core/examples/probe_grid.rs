//! Detail-preservation grid over several pairs and both backbones. Dev utility.

use senti_core::backbone::{Backbone, BackboneId, BackboneSpec, WeightArchive};
use senti_core::raster;
use senti_core::ssim::{ssim, SsimParams};
use senti_core::synth;
use senti_core::transfer::{run_transfer, TransferConfig};

fn main() {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let out_dir = std::path::PathBuf::from("/tmp/grid");
    std::fs::create_dir_all(&out_dir).unwrap();
    let palettes = [
        ("muddy", &synth::Palette::MUDDY),
        ("dark", &synth::Palette::DARK),
        ("warm", &synth::Palette::WARM),
        ("misty", &synth::Palette::MISTY),
    ];
    for id in [BackboneId::Densenet121, BackboneId::Vgg19] {
        let ar = WeightArchive::load(format!("weights/{id}.safetensors")).unwrap();
        let bb: Backbone<f32> = Backbone::from_archive(BackboneSpec::for_id(id), &ar).unwrap();
        let mut scores = Vec::new();
        for seed in 0..5u64 {
            let (pname, pal) = palettes[(seed as usize) % palettes.len()];
            let input = synth::scene(72, 96, seed, &synth::Palette::CLEAR);
            let reference = synth::scene(72, 96, seed, pal);
            let mut cfg = TransferConfig::with_backbone(BackboneSpec::for_id(id));
            cfg.working_long_side = 96;
            cfg.iterations = iters;
            cfg.trace_every = iters;
            let res = run_transfer(&bb, &input, &reference, cfg).unwrap();
            let s = ssim(
                &raster::rgb_to_luma(&input),
                &raster::rgb_to_luma(&res.output),
                &SsimParams::default(),
            )
            .unwrap();
            scores.push(s);
            raster::save_image(&input, out_dir.join(format!("{seed}-in.png"))).unwrap();
            raster::save_image(&reference, out_dir.join(format!("{seed}-ref-{pname}.png"))).unwrap();
            raster::save_image(&res.output, out_dir.join(format!("{seed}-out-{id}.png"))).unwrap();
            println!("{id} seed {seed} ({pname}): ssim {s:.4}  L1 {:.3e} -> {:.3e}",
                res.trace.first().unwrap().total, res.trace.last().unwrap().total);
        }
        let mean: f64 = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("{id}: mean ssim {mean:.4}");
    }
}
