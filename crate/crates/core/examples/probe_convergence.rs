//! Convergence and detail-preservation probe on one synthetic pair. Dev utility.

use senti_core::backbone::{init, Backbone, BackboneId, BackboneSpec};
use senti_core::raster;
use senti_core::ssim::{ssim, SsimParams};
use senti_core::synth;
use senti_core::transfer::{run_transfer, TransferConfig};

fn main() {
    let iters: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let ref_seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let input = synth::scene(72, 96, 1, &synth::Palette::CLEAR);
    let reference = synth::scene(72, 96, ref_seed, &synth::Palette::MUDDY);

    let weights_dir = std::env::args().nth(3);
    for id in [BackboneId::Densenet121, BackboneId::Vgg19] {
        let ar = match &weights_dir {
            Some(dir) => senti_core::backbone::WeightArchive::load(
                std::path::Path::new(dir).join(format!("{id}.safetensors")),
            )
            .unwrap(),
            None => init::seeded_archive(id, 7),
        };
        let bb: Backbone<f32> = Backbone::from_archive(BackboneSpec::for_id(id), &ar).unwrap();
        let mut cfg = TransferConfig::with_backbone(BackboneSpec::for_id(id));
        cfg.working_long_side = 96;
        cfg.iterations = iters;
        cfg.trace_every = iters / 10;
        let res = run_transfer(&bb, &input, &reference, cfg).unwrap();
        let first = res.trace.first().unwrap();
        let last = res.trace.last().unwrap();
        let s = ssim(
            &raster::rgb_to_luma(&input),
            &raster::rgb_to_luma(&res.output),
            &SsimParams::default(),
        )
        .unwrap();
        println!(
            "{id}: L1 {:.4e} -> L{} {:.4e} (ratio {:.4}), ssim(input,output) = {:.4}",
            first.total,
            last.iteration,
            last.total,
            last.total / first.total,
            s
        );
        for p in &res.trace {
            println!("  it {:4}  L {:.5e}  Lc {:.4e}  Ls {:.4e}", p.iteration, p.total, p.content, p.sentiment);
        }
    }
}
