//! Loss terms and the weighted composite objective.
//!
//! Every function here is a pure map from tensors to a scalar tensor, so the
//! same code serves training (through autodiff) and evaluation.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{LossTerm, LossWeights};
use crate::error::{Error, Result};
use crate::networks::{Discriminator, FeatureExtractor, Generator};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
///
/// Callers pass scores of a detached fake so the generator gets no gradient.
pub fn lsgan_discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    same_shape(d_real, d_fake, "discriminator scores")?;
    let real = (d_real - 1.0)?.sqr()?.mean_all()?;
    let fake = d_fake.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// `mean((d_fake - 1)^2)`: the generator is pushed toward the "real" label.
pub fn lsgan_generator_loss(d_fake: &Tensor) -> Result<Tensor> {
    Ok((d_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Mean absolute elementwise difference.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "l1 operands")?;
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Mean absolute difference of `phi(a)` and `phi(b)`.
pub fn perceptual_l1_loss(fe: &FeatureExtractor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "perceptual operands")?;
    l1_loss(&fe.forward(a)?, &fe.forward(b)?)
}

/// Real, synthesized and cycled images of one iteration.
#[derive(Debug, Clone)]
pub struct ForwardBundle {
    pub real_t: Tensor,
    pub real_v: Tensor,
    /// `G_T(real_v)`
    pub syn_t: Tensor,
    /// `G_V(real_t)`
    pub syn_v: Tensor,
    /// `G_T(G_V(real_t))`
    pub cyc_t: Tensor,
    /// `G_V(G_T(real_v))`
    pub cyc_v: Tensor,
}

impl ForwardBundle {
    pub fn compute(g_t: &Generator, g_v: &Generator, real_t: &Tensor, real_v: &Tensor) -> Result<Self> {
        same_shape(real_t, real_v, "paired batch")?;
        let syn_v = g_v.forward(real_t)?;
        let syn_t = g_t.forward(real_v)?;
        let cyc_t = g_t.forward(&syn_v)?;
        let cyc_v = g_v.forward(&syn_t)?;
        Ok(ForwardBundle {
            real_t: real_t.detach(),
            real_v: real_v.detach(),
            syn_t,
            syn_v,
            cyc_t,
            cyc_v,
        })
    }
}

/// Scalar tensors for the ten generator-side terms, indexed by [`LossTerm`].
#[derive(Debug, Clone)]
pub struct GeneratorTerms {
    terms: Vec<Tensor>,
}

impl GeneratorTerms {
    pub fn get(&self, term: LossTerm) -> &Tensor {
        &self.terms[term as usize]
    }

    /// Builds the terms from explicit adversarial score maps.
    ///
    /// `scores_t` and `scores_v` are the discriminator outputs on `syn_t` and
    /// `syn_v`.
    pub fn from_scores(
        bundle: &ForwardBundle,
        scores_t: &Tensor,
        scores_v: &Tensor,
        fe: &FeatureExtractor,
    ) -> Result<Self> {
        let feat_real_t = fe.forward(&bundle.real_t)?.detach();
        let feat_real_v = fe.forward(&bundle.real_v)?.detach();
        let terms = vec![
            lsgan_generator_loss(scores_t)?,
            lsgan_generator_loss(scores_v)?,
            l1_loss(&bundle.cyc_t, &bundle.real_t)?,
            l1_loss(&bundle.cyc_v, &bundle.real_v)?,
            l1_loss(&bundle.syn_t, &bundle.real_t)?,
            l1_loss(&bundle.syn_v, &bundle.real_v)?,
            l1_loss(&fe.forward(&bundle.cyc_t)?, &feat_real_t)?,
            l1_loss(&fe.forward(&bundle.cyc_v)?, &feat_real_v)?,
            l1_loss(&fe.forward(&bundle.syn_t)?, &feat_real_t)?,
            l1_loss(&fe.forward(&bundle.syn_v)?, &feat_real_v)?,
        ];
        Ok(GeneratorTerms { terms })
    }

    pub fn compute(
        bundle: &ForwardBundle,
        d_t: &Discriminator,
        d_v: &Discriminator,
        fe: &FeatureExtractor,
    ) -> Result<Self> {
        let scores_t = d_t.forward(&bundle.syn_t)?;
        let scores_v = d_v.forward(&bundle.syn_v)?;
        Self::from_scores(bundle, &scores_t, &scores_v, fe)
    }

    /// Weighted sum of the enabled terms; disabled terms are skipped entirely.
    pub fn weighted_sum(&self, weights: &LossWeights) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        for term in LossTerm::ALL {
            let c = weights.coefficient(term);
            if c == 0.0 {
                continue;
            }
            let scaled = self.get(term).affine(c, 0.0)?;
            total = Some(match total {
                None => scaled,
                Some(t) => (t + scaled)?,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(self.terms[0].zeros_like()?),
        }
    }
}

/// Least-squares losses of both discriminators against detached fakes.
pub fn discriminator_terms(
    bundle: &ForwardBundle,
    d_t: &Discriminator,
    d_v: &Discriminator,
) -> Result<(Tensor, Tensor)> {
    let adv_d_t = lsgan_discriminator_loss(
        &d_t.forward(&bundle.real_t)?,
        &d_t.forward(&bundle.syn_t.detach())?,
    )?;
    let adv_d_v = lsgan_discriminator_loss(
        &d_v.forward(&bundle.real_v)?,
        &d_v.forward(&bundle.syn_v.detach())?,
    )?;
    Ok((adv_d_t, adv_d_v))
}

/// Values of every loss term for one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_g_t: f64,
    pub adv_g_v: f64,
    pub adv_d_t: f64,
    pub adv_d_v: f64,
    pub cyc_t: f64,
    pub cyc_v: f64,
    pub syn_t: f64,
    pub syn_v: f64,
    pub cyc_per_t: f64,
    pub cyc_per_v: f64,
    pub syn_per_t: f64,
    pub syn_per_v: f64,
}

impl LossComponents {
    /// Column order of training logs.
    pub const COLUMNS: [&'static str; 12] = [
        "adv_G_T", "adv_G_V", "adv_D_T", "adv_D_V", "cyc_T", "cyc_V", "syn_T", "syn_V",
        "cyc_per_T", "cyc_per_V", "syn_per_T", "syn_per_V",
    ];

    pub fn from_tensors(gen: &GeneratorTerms, adv_d_t: &Tensor, adv_d_v: &Tensor) -> Result<Self> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossComponents {
            adv_g_t: v(gen.get(LossTerm::AdversarialT))?,
            adv_g_v: v(gen.get(LossTerm::AdversarialV))?,
            adv_d_t: v(adv_d_t)?,
            adv_d_v: v(adv_d_v)?,
            cyc_t: v(gen.get(LossTerm::CycleT))?,
            cyc_v: v(gen.get(LossTerm::CycleV))?,
            syn_t: v(gen.get(LossTerm::SynthesizedT))?,
            syn_v: v(gen.get(LossTerm::SynthesizedV))?,
            cyc_per_t: v(gen.get(LossTerm::CycledPerceptualT))?,
            cyc_per_v: v(gen.get(LossTerm::CycledPerceptualV))?,
            syn_per_t: v(gen.get(LossTerm::SynthesizedPerceptualT))?,
            syn_per_v: v(gen.get(LossTerm::SynthesizedPerceptualV))?,
        })
    }

    pub fn generator_term(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::AdversarialT => self.adv_g_t,
            LossTerm::AdversarialV => self.adv_g_v,
            LossTerm::CycleT => self.cyc_t,
            LossTerm::CycleV => self.cyc_v,
            LossTerm::SynthesizedT => self.syn_t,
            LossTerm::SynthesizedV => self.syn_v,
            LossTerm::CycledPerceptualT => self.cyc_per_t,
            LossTerm::CycledPerceptualV => self.cyc_per_v,
            LossTerm::SynthesizedPerceptualT => self.syn_per_t,
            LossTerm::SynthesizedPerceptualV => self.syn_per_v,
        }
    }

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 12] {
        [
            self.adv_g_t, self.adv_g_v, self.adv_d_t, self.adv_d_v, self.cyc_t, self.cyc_v,
            self.syn_t, self.syn_v, self.cyc_per_t, self.cyc_per_v, self.syn_per_t, self.syn_per_v,
        ]
    }

    pub fn from_values(v: [f64; 12]) -> Self {
        LossComponents {
            adv_g_t: v[0],
            adv_g_v: v[1],
            adv_d_t: v[2],
            adv_d_v: v[3],
            cyc_t: v[4],
            cyc_v: v[5],
            syn_t: v[6],
            syn_v: v[7],
            cyc_per_t: v[8],
            cyc_per_v: v[9],
            syn_per_t: v[10],
            syn_per_v: v[11],
        }
    }

    /// Errors on the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        for (name, value) in Self::COLUMNS.iter().zip(self.values()) {
            if !value.is_finite() {
                return Err(Error::Numeric { term: name, value });
            }
        }
        Ok(())
    }

    /// Elementwise mean over a set of iterations.
    pub fn mean(items: &[LossComponents]) -> LossComponents {
        let mut acc = [0.0; 12];
        for item in items {
            for (a, v) in acc.iter_mut().zip(item.values()) {
                *a += v;
            }
        }
        let n = items.len().max(1) as f64;
        LossComponents::from_values(acc.map(|a| a / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTotals {
    pub generator: f64,
    /// `(adv_D_T, adv_D_V)`, each minimized by its own discriminator.
    pub discriminators: (f64, f64),
}

/// Generator objective as a weighted sum, plus the two discriminator losses.
pub fn total_objective(components: &LossComponents, weights: &LossWeights) -> Result<ObjectiveTotals> {
    components.check_finite()?;
    let generator = LossTerm::ALL
        .into_iter()
        .map(|term| weights.coefficient(term) * components.generator_term(term))
        .sum();
    Ok(ObjectiveTotals {
        generator,
        discriminators: (components.adv_d_t, components.adv_d_v),
    })
}
