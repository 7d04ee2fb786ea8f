//! Generators, PatchGAN discriminators and the frozen feature extractor.

mod discriminator;
mod features;
mod generator;

pub use discriminator::{Discriminator, DISCRIMINATOR_PLAN};
pub use features::{extract_features, parameter_shapes, FeatureExtractor};
pub use generator::Generator;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// A network with trainable parameters.
pub trait Network {
    fn params(&self) -> &ParamStore;
}

/// Sum of trainable parameter element counts.
pub fn count_parameters(net: &impl Network) -> usize {
    net.params().element_count()
}

/// Draws every convolution weight i.i.d. from `N(mean, std^2)` and zeroes biases.
///
/// Parameters are visited in name order from a single seeded stream, so the
/// same `(mean, std, seed)` always reproduces the same network.
pub fn init_weights(net: &impl Network, mean: f64, std: f64, seed: u64) -> Result<()> {
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::validation("init.std", format!("must be > 0, got {std}")));
    }
    let normal = Normal::new(mean, std).map_err(|e| Error::validation("init.std", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = net.params();
    for (name, var) in store.iter() {
        let value = if name.ends_with(".weight") {
            let draws: Vec<f64> = (0..var.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(draws, var.dims(), store.device())?.to_dtype(store.dtype())?
        } else {
            var.zeros_like()?
        };
        var.set(&value)?;
    }
    Ok(())
}

/// Kernel, stride and zero padding of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Side length in input pixels seen by one output unit of a conv stack.
pub fn receptive_field(plan: &[ConvGeometry]) -> usize {
    plan.iter()
        .rev()
        .fold(1, |rf, layer| (rf - 1) * layer.stride + layer.kernel)
}

/// Spatial output size of a conv stack, or `None` if it collapses to nothing.
pub fn output_extent(input: usize, plan: &[ConvGeometry]) -> Option<usize> {
    plan.iter().try_fold(input, |n, layer| {
        let padded = n + 2 * layer.padding;
        (padded >= layer.kernel).then(|| (padded - layer.kernel) / layer.stride + 1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_single_layer_is_kernel() {
        let plan = [ConvGeometry { kernel: 7, stride: 3, padding: 0 }];
        assert_eq!(receptive_field(&plan), 7);
    }

    #[test]
    fn patchgan_plan_sees_70_pixels() {
        assert_eq!(receptive_field(&DISCRIMINATOR_PLAN), 70);
    }

    #[test]
    fn all_stride_two_variant_does_not_see_70() {
        let mut plan = DISCRIMINATOR_PLAN;
        plan[3].stride = 2;
        assert_ne!(receptive_field(&plan), 70);
    }

    #[test]
    fn stride_trace_for_256() {
        assert_eq!(output_extent(256, &DISCRIMINATOR_PLAN), Some(30));
        assert_eq!(output_extent(70, &DISCRIMINATOR_PLAN), Some(6));
        assert_eq!(output_extent(16, &DISCRIMINATOR_PLAN), None);
    }
}
