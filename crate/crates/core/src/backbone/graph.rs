//! Static feature-extraction graphs with reverse-mode input gradients.
//!
//! A graph is a topologically ordered node list; node 0 is the input image.
//! Forward evaluation either records every activation (needed to backprop)
//! or frees each value after its last use (loss-only evaluation). The
//! backward pass seeds gradients at the five taps and accumulates back to
//! the input, which is all the pixel optimizer needs: weights stay frozen.

use super::ops::{self, ConvKernel};
use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub enum Op<F> {
    Input,
    Conv {
        kernel: ConvKernel<F>,
        stride: usize,
        pad: usize,
    },
    /// Evaluation-mode batchnorm (per-channel affine) fused with ReLU.
    AffineRelu { scale: Vec<F>, shift: Vec<F> },
    Relu,
    MaxPool { k: usize, stride: usize, pad: usize },
    AvgPool { k: usize },
    Concat2,
}

#[derive(Debug, Clone)]
pub struct Node<F> {
    pub op: Op<F>,
    pub inputs: Vec<usize>,
    /// Channel count of this node's output, known at build time.
    pub channels: usize,
}

pub struct Graph<F> {
    pub nodes: Vec<Node<F>>,
    /// Node ids of the five feature taps, shallow to deep.
    pub taps: [usize; 5],
    /// For each node, the index of the last node consuming it.
    last_use: Vec<usize>,
}

enum Aux {
    None,
    MaxIdx(Vec<u32>),
    InShape(usize, usize, usize),
}

/// Activations kept for the backward pass.
pub struct Recording<F> {
    values: Vec<Option<Tensor<F>>>,
    aux: Vec<Aux>,
}

impl<F: Scalar> Graph<F> {
    pub fn new(nodes: Vec<Node<F>>, taps: [usize; 5]) -> Self {
        let mut last_use = (0..nodes.len()).collect::<Vec<_>>();
        for (i, n) in nodes.iter().enumerate() {
            for &src in &n.inputs {
                last_use[src] = i;
            }
        }
        for &t in &taps {
            last_use[t] = nodes.len(); // taps are always returned
        }
        Self { nodes, taps, last_use }
    }

    pub fn tap_channels(&self) -> [usize; 5] {
        self.taps.map(|t| self.nodes[t].channels)
    }

    fn eval_node(&self, id: usize, values: &[Option<Tensor<F>>]) -> (Tensor<F>, Aux) {
        let node = &self.nodes[id];
        let arg = |i: usize| {
            values[node.inputs[i]]
                .as_ref()
                .expect("inputs are alive until their last use")
        };
        match &node.op {
            Op::Input => unreachable!("input node is seeded, not evaluated"),
            Op::Conv { kernel, stride, pad } => {
                let x = arg(0);
                let aux = Aux::InShape(x.channels(), x.height(), x.width());
                (ops::conv2d(x, kernel, *stride, *pad), aux)
            }
            Op::AffineRelu { scale, shift } => (ops::affine_relu(arg(0), scale, shift), Aux::None),
            Op::Relu => (ops::relu(arg(0)), Aux::None),
            Op::MaxPool { k, stride, pad } => {
                let (out, idx) = ops::maxpool(arg(0), *k, *stride, *pad);
                (out, Aux::MaxIdx(idx))
            }
            Op::AvgPool { k } => {
                let x = arg(0);
                let aux = Aux::InShape(x.channels(), x.height(), x.width());
                (ops::avgpool(x, *k), aux)
            }
            Op::Concat2 => (ops::concat2(arg(0), arg(1)), Aux::None),
        }
    }

    /// Forward pass keeping every activation; feeds [`Self::backward`].
    pub fn forward_recorded(&self, input: Tensor<F>) -> Recording<F> {
        let mut values: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        let mut aux: Vec<Aux> = Vec::with_capacity(self.nodes.len());
        values[0] = Some(input);
        aux.push(Aux::None);
        for id in 1..self.nodes.len() {
            let (v, a) = self.eval_node(id, &values);
            values[id] = Some(v);
            aux.push(a);
        }
        Recording { values, aux }
    }

    /// Loss-only forward pass; frees activations after their last use and
    /// returns just the five taps.
    pub fn forward_taps(&self, input: Tensor<F>) -> [Tensor<F>; 5] {
        let mut values: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        values[0] = Some(input);
        for id in 1..self.nodes.len() {
            let (v, _) = self.eval_node(id, &values);
            values[id] = Some(v);
            // Drop anything whose last consumer has now run.
            for (src, &last) in self.last_use.iter().enumerate() {
                if last == id && !self.taps.contains(&src) {
                    values[src] = None;
                }
            }
        }
        self.taps
            .map(|t| values[t].take().expect("taps are kept alive"))
    }

    pub fn taps_of<'r>(&self, rec: &'r Recording<F>) -> [&'r Tensor<F>; 5] {
        self.taps
            .map(|t| rec.values[t].as_ref().expect("recorded forward keeps all values"))
    }

    /// Backward pass from gradients seeded at (some of) the taps down to the
    /// input image. Consumes the recording.
    pub fn backward(&self, rec: Recording<F>, tap_grads: [Option<Tensor<F>>; 5]) -> Tensor<F> {
        let Recording { values, aux } = rec;
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        for (slot, g) in self.taps.iter().zip(tap_grads) {
            if let Some(g) = g {
                match &mut grads[*slot] {
                    Some(acc) => acc.add_assign(&g),
                    none => *none = Some(g),
                }
            }
        }

        for id in (1..self.nodes.len()).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let value = values[id].as_ref().expect("recorded");
            let mut push = |src: usize, g: Tensor<F>| match &mut grads[src] {
                Some(acc) => acc.add_assign(&g),
                none => *none = Some(g),
            };
            match &node.op {
                Op::Input => {}
                Op::Conv { kernel, stride, pad } => {
                    let Aux::InShape(c, h, w) = aux[id] else { unreachable!() };
                    push(
                        node.inputs[0],
                        ops::conv2d_backward_input(&gout, kernel, *stride, *pad, (c, h, w)),
                    );
                }
                Op::AffineRelu { scale, .. } => {
                    push(node.inputs[0], ops::affine_relu_backward(&gout, value, scale));
                }
                Op::Relu => push(node.inputs[0], ops::relu_backward(&gout, value)),
                Op::MaxPool { .. } => {
                    let Aux::MaxIdx(idx) = &aux[id] else { unreachable!() };
                    let src = values[node.inputs[0]].as_ref().expect("recorded");
                    push(node.inputs[0], ops::maxpool_backward(&gout, idx, src.shape()));
                }
                Op::AvgPool { k } => {
                    let Aux::InShape(c, h, w) = aux[id] else { unreachable!() };
                    push(node.inputs[0], ops::avgpool_backward(&gout, *k, (c, h, w)));
                }
                Op::Concat2 => {
                    let ca = self.nodes[node.inputs[0]].channels;
                    let (da, db) = ops::concat2_backward(&gout, ca);
                    push(node.inputs[0], da);
                    push(node.inputs[1], db);
                }
            }
        }
        grads[0].take().expect("input participates in every tap")
    }
}

/// Incremental graph construction with channel bookkeeping.
pub struct GraphBuilder<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> GraphBuilder<F> {
    pub fn new(input_channels: usize) -> Self {
        Self {
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
                channels: input_channels,
            }],
        }
    }

    pub fn channels(&self, id: usize) -> usize {
        self.nodes[id].channels
    }

    pub fn push(&mut self, op: Op<F>, inputs: Vec<usize>, channels: usize) -> usize {
        self.nodes.push(Node { op, inputs, channels });
        self.nodes.len() - 1
    }

    pub fn finish(self, taps: [usize; 5]) -> Graph<F> {
        Graph::new(self.nodes, taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Tiny two-branch graph: conv -> relu -> {tap, maxpool -> tap...}; checks
    // that unrecorded forward matches the recorded one and frees values.
    #[test]
    fn recorded_and_streaming_forward_agree() {
        let kernel = ConvKernel {
            out_c: 2,
            in_c: 1,
            kh: 3,
            kw: 3,
            weight: (0..18).map(|i| (i as f64 - 9.0) / 9.0).collect(),
            bias: None,
        };
        let mut b = GraphBuilder::<f64>::new(1);
        let conv = b.push(Op::Conv { kernel, stride: 1, pad: 1 }, vec![0], 2);
        let r = b.push(Op::Relu, vec![conv], 2);
        let p1 = b.push(Op::MaxPool { k: 3, stride: 2, pad: 1 }, vec![r], 2);
        let p2 = b.push(Op::AvgPool { k: 2 }, vec![p1], 2);
        let p3 = b.push(Op::Relu, vec![p2], 2);
        let p4 = b.push(Op::Relu, vec![p3], 2);
        let g = b.finish([r, p1, p2, p3, p4]);

        let input = Tensor::from_vec(
            1,
            16,
            16,
            (0..256).map(|i| ((i * 37) % 19) as f64 / 9.0 - 1.0).collect(),
        );
        let rec = g.forward_recorded(input.clone());
        let taps_rec = g.taps_of(&rec).map(|t| t.clone());
        let taps_stream = g.forward_taps(input);
        for (a, b) in taps_rec.iter().zip(&taps_stream) {
            assert_eq!(a.data(), b.data());
        }
    }
}
