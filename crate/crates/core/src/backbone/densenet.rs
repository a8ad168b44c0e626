//! DenseNet121 feature-tap graph.
//!
//! Only the prefix of the network that feeds the five taps is materialized:
//! stem, dense blocks 1-3 with their transitions, and the first
//! norm+relu of block 4. Taps are the stem ReLU plus the first internal
//! ReLU of each dense block, which after each pooling stage is the first
//! ReLU the signal meets.

use super::archive::WeightArchive;
use super::graph::{Graph, GraphBuilder, Op};
use super::ops::ConvKernel;
use super::tensor::Scalar;
use super::BackboneError;

const BN_EPS: f64 = 1e-5;
const GROWTH: usize = 32;
const BOTTLENECK: usize = 128; // bn_size(4) * growth
const BLOCK_LAYERS: [usize; 3] = [6, 12, 24];

/// Ordered `(key, shape)` pairs the archive must provide.
pub fn manifest() -> Vec<(String, Vec<usize>)> {
    let mut keys: Vec<(String, Vec<usize>)> = Vec::new();
    let bn = |keys: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize| {
        for field in ["weight", "bias", "running_mean", "running_var"] {
            keys.push((format!("{prefix}.{field}"), vec![c]));
        }
    };
    keys.push(("features.conv0.weight".into(), vec![64, 3, 7, 7]));
    bn(&mut keys, "features.norm0", 64);

    let mut c = 64;
    for (bi, &layers) in BLOCK_LAYERS.iter().enumerate() {
        let block = bi + 1;
        for l in 1..=layers {
            let p = format!("features.denseblock{block}.denselayer{l}");
            bn(&mut keys, &format!("{p}.norm1"), c);
            keys.push((format!("{p}.conv1.weight"), vec![BOTTLENECK, c, 1, 1]));
            bn(&mut keys, &format!("{p}.norm2"), BOTTLENECK);
            keys.push((format!("{p}.conv2.weight"), vec![GROWTH, BOTTLENECK, 3, 3]));
            c += GROWTH;
        }
        let p = format!("features.transition{block}");
        bn(&mut keys, &format!("{p}.norm"), c);
        keys.push((format!("{p}.conv.weight"), vec![c / 2, c, 1, 1]));
        c /= 2;
    }
    bn(&mut keys, "features.denseblock4.denselayer1.norm1", c);
    keys
}

fn bn_params<F: Scalar>(
    ar: &WeightArchive,
    prefix: &str,
    channels: usize,
) -> Result<(Vec<F>, Vec<F>), BackboneError> {
    let gamma = ar.get_checked(&format!("{prefix}.weight"), &[channels])?;
    let beta = ar.get_checked(&format!("{prefix}.bias"), &[channels])?;
    let mean = ar.get_checked(&format!("{prefix}.running_mean"), &[channels])?;
    let var = ar.get_checked(&format!("{prefix}.running_var"), &[channels])?;
    let mut scale = Vec::with_capacity(channels);
    let mut shift = Vec::with_capacity(channels);
    for i in 0..channels {
        let s = gamma.data[i] as f64 / (var.data[i] as f64 + BN_EPS).sqrt();
        scale.push(F::from_f64(s));
        shift.push(F::from_f64(beta.data[i] as f64 - mean.data[i] as f64 * s));
    }
    Ok((scale, shift))
}

fn conv_kernel<F: Scalar>(
    ar: &WeightArchive,
    key: &str,
    shape: [usize; 4],
) -> Result<ConvKernel<F>, BackboneError> {
    let t = ar.get_checked(key, &shape)?;
    Ok(ConvKernel {
        out_c: shape[0],
        in_c: shape[1],
        kh: shape[2],
        kw: shape[3],
        weight: t.data.iter().map(|&v| F::from_f32(v)).collect(),
        bias: None,
    })
}

pub fn build_graph<F: Scalar>(ar: &WeightArchive) -> Result<Graph<F>, BackboneError> {
    let mut b = GraphBuilder::new(3);

    let conv0 = conv_kernel(ar, "features.conv0.weight", [64, 3, 7, 7])?;
    let stem_conv = b.push(Op::Conv { kernel: conv0, stride: 2, pad: 3 }, vec![0], 64);
    let (s0, h0) = bn_params::<F>(ar, "features.norm0", 64)?;
    let tap1 = b.push(Op::AffineRelu { scale: s0, shift: h0 }, vec![stem_conv], 64);
    let mut cur = b.push(Op::MaxPool { k: 3, stride: 2, pad: 1 }, vec![tap1], 64);

    let mut c = 64;
    let mut taps = [tap1, 0, 0, 0, 0];
    for (bi, &layers) in BLOCK_LAYERS.iter().enumerate() {
        let block = bi + 1;
        for l in 1..=layers {
            let p = format!("features.denseblock{block}.denselayer{l}");
            let (s1, h1) = bn_params::<F>(ar, &format!("{p}.norm1"), c)?;
            let n1 = b.push(Op::AffineRelu { scale: s1, shift: h1 }, vec![cur], c);
            if l == 1 {
                taps[block] = n1;
            }
            let k1 = conv_kernel(ar, &format!("{p}.conv1.weight"), [BOTTLENECK, c, 1, 1])?;
            let n2 = b.push(Op::Conv { kernel: k1, stride: 1, pad: 0 }, vec![n1], BOTTLENECK);
            let (s2, h2) = bn_params::<F>(ar, &format!("{p}.norm2"), BOTTLENECK)?;
            let n3 = b.push(Op::AffineRelu { scale: s2, shift: h2 }, vec![n2], BOTTLENECK);
            let k2 = conv_kernel(ar, &format!("{p}.conv2.weight"), [GROWTH, BOTTLENECK, 3, 3])?;
            let n4 = b.push(Op::Conv { kernel: k2, stride: 1, pad: 1 }, vec![n3], GROWTH);
            cur = b.push(Op::Concat2, vec![cur, n4], c + GROWTH);
            c += GROWTH;
        }
        let p = format!("features.transition{block}");
        let (st, ht) = bn_params::<F>(ar, &format!("{p}.norm"), c)?;
        let tn = b.push(Op::AffineRelu { scale: st, shift: ht }, vec![cur], c);
        let kt = conv_kernel(ar, &format!("{p}.conv.weight"), [c / 2, c, 1, 1])?;
        let tc = b.push(Op::Conv { kernel: kt, stride: 1, pad: 0 }, vec![tn], c / 2);
        cur = b.push(Op::AvgPool { k: 2 }, vec![tc], c / 2);
        c /= 2;
    }

    let (s4, h4) = bn_params::<F>(ar, "features.denseblock4.denselayer1.norm1", c)?;
    let tap5 = b.push(Op::AffineRelu { scale: s4, shift: h4 }, vec![cur], c);
    taps[4] = tap5;

    Ok(b.finish(taps))
}

/// Human-readable tap identifiers, shallow to deep.
pub fn tap_names() -> [String; 5] {
    [
        "features.relu0".into(),
        "features.denseblock1.denselayer1.relu1".into(),
        "features.denseblock2.denselayer1.relu1".into(),
        "features.denseblock3.denselayer1.relu1".into(),
        "features.denseblock4.denselayer1.relu1".into(),
    ]
}
