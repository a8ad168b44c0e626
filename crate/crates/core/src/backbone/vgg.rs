//! VGG19 feature-tap graph (ablation backbone).
//!
//! Materialized up to conv5_1; taps are the first ReLU of each of the five
//! convolution stages. Keys follow the torchvision `features.<idx>` layout.

use super::archive::WeightArchive;
use super::graph::{Graph, GraphBuilder, Op};
use super::ops::ConvKernel;
use super::tensor::Scalar;
use super::BackboneError;

// (torchvision features index, in_channels, out_channels); `None` = maxpool.
const LAYOUT: [Option<(usize, usize, usize)>; 17] = [
    Some((0, 3, 64)),
    Some((2, 64, 64)),
    None,
    Some((5, 64, 128)),
    Some((7, 128, 128)),
    None,
    Some((10, 128, 256)),
    Some((12, 256, 256)),
    Some((14, 256, 256)),
    Some((16, 256, 256)),
    None,
    Some((19, 256, 512)),
    Some((21, 512, 512)),
    Some((23, 512, 512)),
    Some((25, 512, 512)),
    None,
    Some((28, 512, 512)),
];

// Taps = ReLU after conv{1,2,3,4,5}_1.
const TAP_CONV_IDX: [usize; 5] = [0, 5, 10, 19, 28];

pub fn manifest() -> Vec<(String, Vec<usize>)> {
    LAYOUT
        .iter()
        .flatten()
        .flat_map(|&(idx, c_in, c_out)| {
            [
                (format!("features.{idx}.weight"), vec![c_out, c_in, 3, 3]),
                (format!("features.{idx}.bias"), vec![c_out]),
            ]
        })
        .collect()
}

pub fn build_graph<F: Scalar>(ar: &WeightArchive) -> Result<Graph<F>, BackboneError> {
    let mut b = GraphBuilder::new(3);
    let mut cur = 0usize;
    let mut taps = [0usize; 5];
    let mut tap_slot = 0;
    for entry in &LAYOUT {
        match entry {
            Some((idx, c_in, c_out)) => {
                let w = ar.get_checked(&format!("features.{idx}.weight"), &[*c_out, *c_in, 3, 3])?;
                let bias = ar.get_checked(&format!("features.{idx}.bias"), &[*c_out])?;
                let kernel = ConvKernel {
                    out_c: *c_out,
                    in_c: *c_in,
                    kh: 3,
                    kw: 3,
                    weight: w.data.iter().map(|&v| F::from_f32(v)).collect(),
                    bias: Some(bias.data.iter().map(|&v| F::from_f32(v)).collect()),
                };
                let conv = b.push(Op::Conv { kernel, stride: 1, pad: 1 }, vec![cur], *c_out);
                cur = b.push(Op::Relu, vec![conv], *c_out);
                if TAP_CONV_IDX.contains(idx) {
                    taps[tap_slot] = cur;
                    tap_slot += 1;
                }
            }
            None => {
                let c = b.channels(cur);
                cur = b.push(Op::MaxPool { k: 2, stride: 2, pad: 0 }, vec![cur], c);
            }
        }
    }
    debug_assert_eq!(tap_slot, 5);
    Ok(b.finish(taps))
}

pub fn tap_names() -> [String; 5] {
    TAP_CONV_IDX.map(|i| format!("features.{}.relu", i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_counts() {
        let m = manifest();
        assert_eq!(m.len(), 26);
        let params: usize = m.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(params, 12_944_960);
    }
}
