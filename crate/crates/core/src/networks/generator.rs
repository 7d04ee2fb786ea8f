use candle_core::{DType, Device, Tensor};

use super::Network;
use crate::error::{Error, Result};
use crate::nn::{instance_norm, reflection_pad, Conv2d, ConvTranspose2d, ParamStore};

const RESIDUAL_BLOCKS: usize = 9;

/// Residual image-to-image generator.
///
/// Layer plan: `c7s1-64, c3s2-128, c3s2-256, 9 x rb256, dc3s2-128, dc3s2-64,
/// c7s1-C`. The 7x7 convolutions and the residual blocks use reflection
/// padding; the strided and transposed convolutions pad with zeros.
/// Everything except the first and last convolution is followed by an
/// affine-free instance norm; the output passes through `tanh`.
#[derive(Debug, Clone)]
pub struct Generator {
    store: ParamStore,
    channels: usize,
    head: Conv2d,
    down: [Conv2d; 2],
    blocks: Vec<(Conv2d, Conv2d)>,
    up: [ConvTranspose2d; 2],
    tail: Conv2d,
}

impl Generator {
    /// Builds an all-zero generator; call [`super::init_weights`] before training.
    pub fn new(image_channels: usize, dtype: DType, device: &Device) -> Result<Self> {
        if image_channels == 0 {
            return Err(Error::validation("image_channels", "must be >= 1"));
        }
        let mut s = ParamStore::new(dtype, device);
        let head = Conv2d::new(&mut s, "head", image_channels, 64, 7, 1, 0)?;
        let down = [
            Conv2d::new(&mut s, "down.0", 64, 128, 3, 2, 1)?,
            Conv2d::new(&mut s, "down.1", 128, 256, 3, 2, 1)?,
        ];
        let blocks = (0..RESIDUAL_BLOCKS)
            .map(|i| {
                Ok((
                    Conv2d::new(&mut s, &format!("blocks.{i}.conv1"), 256, 256, 3, 1, 0)?,
                    Conv2d::new(&mut s, &format!("blocks.{i}.conv2"), 256, 256, 3, 1, 0)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let up = [
            ConvTranspose2d::new(&mut s, "up.0", 256, 128, 3, 2, 1, 1)?,
            ConvTranspose2d::new(&mut s, "up.1", 128, 64, 3, 2, 1, 1)?,
        ];
        let tail = Conv2d::new(&mut s, "tail", 64, image_channels, 7, 1, 0)?;
        Ok(Generator {
            store: s,
            channels: image_channels,
            head,
            down,
            blocks,
            up,
            tail,
        })
    }

    pub fn image_channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::Shape(format!(
                "generator input must be at least 8x8 with sides divisible by 4, got {h}x{w}"
            )));
        }
        let mut x = self.head.forward(&reflection_pad(x, 3)?)?.relu()?;
        for conv in &self.down {
            x = instance_norm(&conv.forward(&x)?)?.relu()?;
        }
        for (conv1, conv2) in &self.blocks {
            let y = instance_norm(&conv1.forward(&reflection_pad(&x, 1)?)?)?.relu()?;
            let y = instance_norm(&conv2.forward(&reflection_pad(&y, 1)?)?)?;
            x = (x + y)?;
        }
        for deconv in &self.up {
            x = instance_norm(&deconv.forward(&x)?)?.relu()?;
        }
        Ok(self.tail.forward(&reflection_pad(&x, 3)?)?.tanh()?)
    }
}

impl Network for Generator {
    fn params(&self) -> &ParamStore {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{count_parameters, init_weights};

    #[test]
    fn parameter_count_matches_layer_plan() {
        let g = Generator::new(3, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(count_parameters(&g), 11_378_179);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = Generator::new(3, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let y = g.forward(&x).unwrap();
        let max = y.abs().unwrap().flatten_all().unwrap().max(0).unwrap();
        assert_eq!(max.to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn shape_preserved_and_bounded() {
        let g = Generator::new(3, DType::F32, &Device::Cpu).unwrap();
        init_weights(&g, 0.0, 0.02, 1).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, 32, 24), &Device::Cpu).unwrap();
        let y = g.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 3, 32, 24]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn rejects_indivisible_sides() {
        let g = Generator::new(1, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 1, 18, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(g.forward(&x), Err(Error::Shape(_))));
        assert!(Generator::new(0, DType::F32, &Device::Cpu).is_err());
    }
}
