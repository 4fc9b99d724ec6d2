//! Tensor operations and reverse-mode differentiation for the fixed operation
//! set used by the generators.
//!
//! The free functions in this module evaluate single primitives on plain
//! tensors; [`Graph`] records the same primitives on a tape and differentiates
//! through them.

mod graph;
pub(crate) mod ops;

pub use graph::{Gradients, Graph, NodeId};
pub use ops::Padding;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default `ε` of the channel normalization.
pub const CHANNEL_NORM_EPS: f64 = 1e-6;

/// Convolves a 1D or 2D single-channel signal with a kernel of the same rank.
pub fn conv(signal: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    if signal.rank() != kernel.rank() || !(1..=2).contains(&signal.rank()) {
        return Err(Error::Rank {
            op: "conv",
            rank: signal.rank(),
        });
    }
    let mut g = Graph::new();
    let x = g.constant(with_leading(signal, &[1]));
    let k = g.constant(with_leading(kernel, &[1, 1]));
    let out = g.conv(x, k, padding)?;
    g.value(out).clone().reshape(signal.shape())
}

/// Zero insertion along every axis of a 1D or 2D signal.
pub fn upsample2x(signal: &Tensor) -> Result<Tensor> {
    if !(1..=2).contains(&signal.rank()) {
        return Err(Error::Rank {
            op: "upsample2x",
            rank: signal.rank(),
        });
    }
    let mut g = Graph::new();
    let x = g.constant(with_leading(signal, &[1]));
    let out = g.upsample2x(x)?;
    let shape: Vec<usize> = signal.shape().iter().map(|n| 2 * n).collect();
    g.value(out).clone().reshape(&shape)
}

/// Normalizes one channel: `(z − mean) / sqrt(var + eps) + beta`.
pub fn channel_norm(channel: &Tensor, beta: f64, eps: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(with_leading(channel, &[1]));
    let b = g.constant(Tensor::scalar(beta));
    let out = g.channel_norm(x, b, eps)?;
    g.value(out).clone().reshape(channel.shape())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(ops::sigmoid)
}

fn with_leading(t: &Tensor, lead: &[usize]) -> Tensor {
    let shape: Vec<usize> = lead.iter().chain(t.shape()).copied().collect();
    Tensor::from_parts(shape, t.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let x = t(&[5], &[1.0, -2.0, 3.0, 0.5, 4.0]);
        let delta = t(&[3], &[1.0, 0.0, 0.0]);
        assert_eq!(conv(&x, &delta, Padding::Circular).unwrap(), x);
        let centered = t(&[3], &[0.0, 1.0, 0.0]);
        assert_eq!(conv(&x, &centered, Padding::ZeroSame).unwrap(), x);
    }

    #[test]
    fn circular_conv_of_first_unit_vector_is_first_circulant_column() {
        let e1 = t(&[5], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let c = t(&[3], &[1.0, 2.0, 3.0]);
        let out = conv(&e1, &c, Padding::Circular).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.0, 3.0, 2.0]);
    }

    #[test]
    fn zero_signal_gives_zero_output() {
        let z = Tensor::zeros(&[4, 4]);
        let k = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!(conv(&z, &k, Padding::ZeroSame).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_oversized_kernel_and_bad_rank() {
        let x = Tensor::zeros(&[3]);
        assert!(conv(&x, &Tensor::zeros(&[4]), Padding::Circular).is_err());
        assert!(conv(&Tensor::zeros(&[2, 2, 2]), &Tensor::zeros(&[1, 1, 1]), Padding::Circular).is_err());
    }

    #[test]
    fn upsample_examples() {
        assert_eq!(upsample2x(&t(&[2], &[1.0, 2.0])).unwrap().data(), &[1.0, 0.0, 2.0, 0.0]);
        assert_eq!(upsample2x(&t(&[1], &[7.0])).unwrap().data(), &[7.0, 0.0]);
        let up = upsample2x(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(up.shape(), &[4, 4]);
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 2.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            3.0, 0.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(up.data(), &expected);
    }

    #[test]
    fn channel_norm_examples() {
        let c = channel_norm(&Tensor::filled(&[6], 3.0), 0.25, 1e-6).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.25));
        let z = channel_norm(&t(&[2], &[-1.0, 1.0]), 0.0, 1e-14).unwrap();
        assert!((z.data()[0] + 1.0).abs() < 1e-12 && (z.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_and_sigmoid_ranges() {
        let x = t(&[5], &[-40.0, -1.0, 0.0, 1.0, 40.0]);
        assert!(relu(&x).data().iter().all(|&v| v >= 0.0));
        assert!(sigmoid(&x).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
