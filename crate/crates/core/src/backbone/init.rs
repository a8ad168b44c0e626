//! Reproducible synthetic weight archives.
//!
//! When the published pretrained checkpoints are not reachable, a seeded
//! archive with He-normal convolution weights and identity batchnorm
//! statistics stands in: feature magnitudes stay well-scaled through the
//! ReLU stack, so the optimization and retrieval machinery behaves, while
//! the features themselves are untrained. The generation order is the
//! manifest order, making archives bit-reproducible for a given seed and
//! lockfile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::archive::WeightArchive;
use super::{densenet, vgg, BackboneId};

pub fn seeded_archive(id: BackboneId, seed: u64) -> WeightArchive {
    let manifest = match id {
        BackboneId::Densenet121 => densenet::manifest(),
        BackboneId::Vgg19 => vgg::manifest(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id as u64);
    let mut ar = WeightArchive::new();
    for (key, shape) in manifest {
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = if key.ends_with(".weight") && shape.len() == 4 {
            // He-normal: std^2 = 2 / fan_in.
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).unwrap();
            (0..numel).map(|_| normal.sample(&mut rng) as f32).collect()
        } else if key.ends_with(".running_var") {
            vec![1.0; numel]
        } else if key.ends_with(".weight") {
            // batchnorm gamma
            vec![1.0; numel]
        } else {
            // biases, running means
            vec![0.0; numel]
        };
        ar.insert(key, shape, data);
    }
    ar
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_archives_reproduce() {
        let a = seeded_archive(BackboneId::Vgg19, 42);
        let b = seeded_archive(BackboneId::Vgg19, 42);
        let ka = a.get("features.0.weight").unwrap();
        let kb = b.get("features.0.weight").unwrap();
        assert_eq!(ka.data, kb.data);
        let c = seeded_archive(BackboneId::Vgg19, 43);
        assert_ne!(ka.data, c.get("features.0.weight").unwrap().data);
    }
}
