//! Times transfer steps at a few working sizes. Dev utility.

use senti_core::backbone::{init, Backbone, BackboneId, BackboneSpec};
use senti_core::transfer::{TransferConfig, TransferSession};
use senti_core::synth;

fn main() {
    for (id, sizes) in [
        (BackboneId::Densenet121, vec![96usize, 160, 256]),
        (BackboneId::Vgg19, vec![64, 96, 128]),
    ] {
        let ar = init::seeded_archive(id, 7);
        let bb: Backbone<f32> = Backbone::from_archive(BackboneSpec::for_id(id), &ar).unwrap();
        for size in sizes {
            let input = synth::scene(size * 3 / 4, size, 1, &synth::Palette::CLEAR);
            let reference = synth::scene(size * 3 / 4, size, 2, &synth::Palette::MUDDY);
            let mut cfg = TransferConfig::with_backbone(BackboneSpec::for_id(id));
            cfg.working_long_side = size;
            cfg.iterations = 5;
            let t0 = std::time::Instant::now();
            let mut s = TransferSession::new(&bb, &input, &reference, cfg).unwrap();
            let setup = t0.elapsed();
            let t1 = std::time::Instant::now();
            for _ in 0..5 {
                s.step().unwrap();
            }
            let per = t1.elapsed() / 5;
            println!("{id} @{size}: setup {setup:?}, {per:?}/iter -> 500 iters ~{:?}", per * 500);
        }
    }
}
