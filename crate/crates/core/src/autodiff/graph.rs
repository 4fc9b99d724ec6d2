use super::ops::{self, Padding, Planes, Taps};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node inside its [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Conv { padding: Padding, taps: Taps },
    DepthwiseConv { padding: Padding, taps: Taps },
    Upsample2x,
    InterpTruncated,
    ChannelMix,
    BiasAdd,
    ChannelNorm { eps: f64 },
    Relu,
    Sigmoid,
    SquaredError,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// A tape of primitive operations evaluated eagerly.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient at `id`, or `None` when the node does not reach the output.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient at `id`, zero when the node is disconnected from the output.
    pub fn get_or_zero(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf (never differentiated for the caller's benefit).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, vec![], value)
    }

    /// A trainable leaf.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, vec![], value)
    }

    /// Multi-channel convolution. `x` is `[ci, *S]`, `kernel` is `[co, ci, *K]`;
    /// input channels are summed.
    pub fn conv(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let planes = Planes::of(self.value(x).shape(), "conv")?;
        let kshape = self.value(kernel).shape().to_vec();
        let (co, ci, taps) = match (planes.spatial_rank, kshape.as_slice()) {
            (1, [co, ci, l]) => (*co, *ci, Taps { kh: 1, kw: *l }),
            (2, [co, ci, kh, kw]) => (*co, *ci, Taps { kh: *kh, kw: *kw }),
            _ => {
                return Err(Error::shape(format!(
                    "kernel {:?} incompatible with signal {:?}",
                    kshape,
                    self.value(x).shape()
                )))
            }
        };
        if ci != planes.channels {
            return Err(Error::shape(format!(
                "kernel expects {ci} input channels, signal has {}",
                planes.channels
            )));
        }
        check_taps(planes, taps)?;
        let out = ops::conv_full(self.value(x).data(), planes, self.value(kernel).data(), co, taps, padding);
        let value = Tensor::from_parts(planes.shape_with_channels(co), out);
        Ok(self.push(Op::Conv { padding, taps }, vec![x, kernel], value))
    }

    /// Applies the same `[*K]` kernel to every channel of `x`.
    pub fn conv_depthwise(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let planes = Planes::of(self.value(x).shape(), "conv_depthwise")?;
        let kshape = self.value(kernel).shape().to_vec();
        let taps = match (planes.spatial_rank, kshape.as_slice()) {
            (1, [l]) => Taps { kh: 1, kw: *l },
            (2, [kh, kw]) => Taps { kh: *kh, kw: *kw },
            _ => {
                return Err(Error::shape(format!(
                    "depthwise kernel {:?} incompatible with signal {:?}",
                    kshape,
                    self.value(x).shape()
                )))
            }
        };
        check_taps(planes, taps)?;
        let out = ops::conv_depthwise(self.value(x).data(), planes, self.value(kernel).data(), taps, padding);
        let value = Tensor::from_parts(self.value(x).shape().to_vec(), out);
        Ok(self.push(Op::DepthwiseConv { padding, taps }, vec![x, kernel], value))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let planes = Planes::of(self.value(x).shape(), "upsample2x")?;
        let out = ops::upsample2x(self.value(x).data(), planes);
        let shape = if planes.spatial_rank == 1 {
            vec![planes.channels, 2 * planes.w]
        } else {
            vec![planes.channels, 2 * planes.h, 2 * planes.w]
        };
        Ok(self.push(Op::Upsample2x, vec![x], Tensor::from_parts(shape, out)))
    }

    /// Boundary-truncated linear upsampling `R^n → R^{2n−1}` (1D channels only).
    pub fn interp_truncated(&mut self, x: NodeId) -> Result<NodeId> {
        let planes = Planes::of(self.value(x).shape(), "interp_truncated")?;
        if planes.spatial_rank != 1 {
            return Err(Error::Rank {
                op: "interp_truncated",
                rank: self.value(x).rank(),
            });
        }
        let out = ops::interp_truncated(self.value(x).data(), planes.channels, planes.w);
        let shape = vec![planes.channels, 2 * planes.w - 1];
        Ok(self.push(Op::InterpTruncated, vec![x], Tensor::from_parts(shape, out)))
    }

    /// Linear combination of channels: `x [k, *S]`, `coeffs [k, ko]` → `[ko, *S]`.
    pub fn channel_mix(&mut self, x: NodeId, coeffs: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let cs = self.value(coeffs).shape().to_vec();
        let (k, ko) = match cs.as_slice() {
            [k, ko] if *k == xs[0] => (*k, *ko),
            _ => {
                return Err(Error::shape(format!(
                    "coefficients {cs:?} incompatible with channels of {xs:?}"
                )))
            }
        };
        let p = self.value(x).len() / k;
        let out = ops::channel_mix(self.value(x).data(), k, p, self.value(coeffs).data(), ko);
        let mut shape = xs;
        shape[0] = ko;
        Ok(self.push(Op::ChannelMix, vec![x, coeffs], Tensor::from_parts(shape, out)))
    }

    /// Adds `bias[c]` to every entry of channel `c`.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let c = self.value(x).shape()[0];
        if self.value(bias).len() != c {
            return Err(Error::shape(format!(
                "bias of length {} for {} channels",
                self.value(bias).len(),
                c
            )));
        }
        let p = self.value(x).len() / c;
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (ch, &bv) in b.iter().enumerate() {
            out[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v += bv);
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Op::BiasAdd, vec![x, bias], Tensor::from_parts(shape, out)))
    }

    /// Per-channel normalization with learned offsets `beta [k]`.
    pub fn channel_norm(&mut self, x: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        if !(eps > 0.0) {
            return Err(Error::invalid("channel_norm requires eps > 0"));
        }
        let c = self.value(x).shape()[0];
        if self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "beta of length {} for {} channels",
                self.value(beta).len(),
                c
            )));
        }
        let out = ops::channel_norm(self.value(x).data(), c, self.value(beta).data(), eps);
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Op::ChannelNorm { eps }, vec![x, beta], Tensor::from_parts(shape, out)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(ops::sigmoid);
        self.push(Op::Sigmoid, vec![x], value)
    }

    /// Scalar `Σ (x − target)²`.
    pub fn squared_error(&mut self, x: NodeId, target: NodeId) -> Result<NodeId> {
        if self.value(x).shape() != self.value(target).shape() {
            return Err(Error::shape(format!(
                "squared_error of {:?} against {:?}",
                self.value(x).shape(),
                self.value(target).shape()
            )));
        }
        let v = crate::tensor::squared_distance(self.value(x).data(), self.value(target).data());
        Ok(self.push(Op::SquaredError, vec![x, target], Tensor::scalar(v)))
    }

    /// Reverse-mode gradients of a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with_seed(loss, Tensor::scalar(1.0).reshape(self.value(loss).shape())?)
    }

    /// Vector-Jacobian product: propagates `seed = ∂L/∂output` back to every node.
    pub fn backward_with_seed(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.into_data());
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.node_backward(node, &g);
            grads[idx] = Some(g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(shapes[i].clone(), g)))
            .chain(std::iter::repeat_n(None, self.nodes.len() - output.0 - 1))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradient contributions of one node to each of its inputs.
    fn node_backward(&self, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let input = |i: usize| &self.nodes[node.inputs[i].0].value;
        match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Conv { padding, taps } => {
                let x = input(0);
                let k = input(1);
                let planes = Planes::of(x.shape(), "conv").expect("validated at build");
                let co = k.shape()[0];
                let (dx, dk) = ops::conv_full_backward(x.data(), planes, k.data(), co, *taps, *padding, g);
                vec![Some(dx), Some(dk)]
            }
            Op::DepthwiseConv { padding, taps } => {
                let x = input(0);
                let k = input(1);
                let planes = Planes::of(x.shape(), "conv_depthwise").expect("validated at build");
                let (dx, dk) = ops::conv_depthwise_backward(x.data(), planes, k.data(), *taps, *padding, g);
                vec![Some(dx), Some(dk)]
            }
            Op::Upsample2x => {
                let planes = Planes::of(input(0).shape(), "upsample2x").expect("validated at build");
                vec![Some(ops::upsample2x_adjoint(g, planes))]
            }
            Op::InterpTruncated => {
                let x = input(0);
                let (c, n) = (x.shape()[0], x.shape()[1]);
                vec![Some(ops::interp_truncated_adjoint(g, c, n))]
            }
            Op::ChannelMix => {
                let x = input(0);
                let coeffs = input(1);
                let (k, ko) = (coeffs.shape()[0], coeffs.shape()[1]);
                let p = x.len() / k;
                let (dx, dc) = ops::channel_mix_backward(x.data(), k, p, coeffs.data(), ko, g);
                vec![Some(dx), Some(dc)]
            }
            Op::BiasAdd => {
                let c = input(1).len();
                let p = g.len() / c;
                let db = (0..c).map(|ch| g[ch * p..(ch + 1) * p].iter().sum()).collect();
                vec![Some(g.to_vec()), Some(db)]
            }
            Op::ChannelNorm { eps } => {
                let x = input(0);
                let c = x.shape()[0];
                let (dx, db) = ops::channel_norm_backward(x.data(), c, *eps, g);
                vec![Some(dx), Some(db)]
            }
            Op::Relu => {
                // subgradient 0 at the kink
                let dx = input(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![Some(dx)]
            }
            Op::Sigmoid => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                vec![Some(dx)]
            }
            Op::SquaredError => {
                let x = input(0).data();
                let t = input(1).data();
                let scale = 2.0 * g[0];
                let dx: Vec<f64> = x.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                let dt = dx.iter().map(|v| -v).collect();
                vec![Some(dx), Some(dt)]
            }
        }
    }
}

fn check_taps(planes: Planes, taps: Taps) -> Result<()> {
    if taps.kh > planes.h || taps.kw > planes.w {
        return Err(Error::shape(format!(
            "kernel {}×{} larger than signal {}×{}",
            taps.kh, taps.kw, planes.h, planes.w
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_twice_the_point() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let zero = g.constant(Tensor::zeros(&[3]));
        let loss = g.squared_error(p, zero).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn disconnected_parameter_has_zero_gradient() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::scalar(3.0));
        let q = g.parameter(Tensor::scalar(5.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let loss = g.squared_error(p, zero).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(q).is_none());
        assert_eq!(grads.get_or_zero(q).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::zeros(&[2]));
        let r = g.relu(p);
        assert!(g.backward(r).is_err());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let r = g.relu(p);
        let grads = g.backward_with_seed(r, Tensor::filled(&[2], 1.0)).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 1.0]);
    }
}
