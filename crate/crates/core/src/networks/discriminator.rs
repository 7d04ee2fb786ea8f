use candle_core::{DType, Device, Tensor};

use super::{output_extent, ConvGeometry, Network};
use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, Conv2d, ParamStore};

const LEAK: f64 = 0.2;
const WIDTHS: [usize; 4] = [64, 128, 256, 512];

/// Kernel/stride/padding of the five PatchGAN convolutions.
///
/// The fourth hidden layer runs at stride 1; with stride 2 the receptive
/// field would no longer be 70x70.
pub const DISCRIMINATOR_PLAN: [ConvGeometry; 5] = [
    ConvGeometry { kernel: 4, stride: 2, padding: 1 },
    ConvGeometry { kernel: 4, stride: 2, padding: 1 },
    ConvGeometry { kernel: 4, stride: 2, padding: 1 },
    ConvGeometry { kernel: 4, stride: 1, padding: 1 },
    ConvGeometry { kernel: 4, stride: 1, padding: 1 },
];

/// 70x70 PatchGAN: one raw realness score per overlapping input patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    store: ParamStore,
    channels: usize,
    hidden: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(image_channels: usize, dtype: DType, device: &Device) -> Result<Self> {
        if image_channels == 0 {
            return Err(Error::validation("image_channels", "must be >= 1"));
        }
        let mut s = ParamStore::new(dtype, device);
        let mut hidden = Vec::with_capacity(WIDTHS.len());
        let mut in_ch = image_channels;
        for (i, (&out_ch, geo)) in WIDTHS.iter().zip(&DISCRIMINATOR_PLAN).enumerate() {
            hidden.push(Conv2d::new(
                &mut s,
                &format!("hidden.{i}"),
                in_ch,
                out_ch,
                geo.kernel,
                geo.stride,
                geo.padding,
            )?);
            in_ch = out_ch;
        }
        let geo = DISCRIMINATOR_PLAN[4];
        let head = Conv2d::new(&mut s, "head", in_ch, 1, geo.kernel, geo.stride, geo.padding)?;
        Ok(Discriminator {
            store: s,
            channels: image_channels,
            hidden,
            head,
        })
    }

    /// Score-map side length for an input side length, if non-empty.
    pub fn patch_map_extent(input: usize) -> Option<usize> {
        output_extent(input, &DISCRIMINATOR_PLAN).filter(|&n| n > 0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.channels
            )));
        }
        if Self::patch_map_extent(h).is_none() || Self::patch_map_extent(w).is_none() {
            return Err(Error::Shape(format!(
                "input {h}x{w} is too small for the PatchGAN discriminator"
            )));
        }
        let mut x = x.clone();
        for (i, conv) in self.hidden.iter().enumerate() {
            x = conv.forward(&x)?;
            if i > 0 {
                x = instance_norm(&x)?;
            }
            x = leaky_relu(&x, LEAK)?;
        }
        self.head.forward(&x)
    }
}

impl Network for Discriminator {
    fn params(&self) -> &ParamStore {
        &self.store
    }
}
