use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over one network's parameters.
#[derive(Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    step: u64,
    slots: Vec<Slot>,
}

#[derive(Debug)]
struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64) -> Result<Self> {
        let slots = params
            .iter()
            .map(|(name, var)| {
                Ok(Slot {
                    name: name.to_string(),
                    var: var.clone(),
                    m: var.zeros_like()?.detach(),
                    v: var.zeros_like()?.detach(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Adam {
            lr,
            beta1,
            step: 0,
            slots,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from `grads`; parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.beta1;
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - BETA2.powi(t);
        for slot in &mut self.slots {
            let Some(g) = grads.get(&slot.var) else { continue };
            let g = g.detach();
            slot.m = (slot.m.affine(b1, 0.0)? + g.affine(1.0 - b1, 0.0)?)?.detach();
            slot.v = (slot.v.affine(BETA2, 0.0)? + g.sqr()?.affine(1.0 - BETA2, 0.0)?)?.detach();
            let m_hat = slot.m.affine(1.0 / correction1, 0.0)?;
            let v_hat = slot.v.affine(1.0 / correction2, 0.0)?;
            let update = (m_hat / (v_hat.sqrt()? + EPSILON)?)?.affine(self.lr, 0.0)?;
            let next = (slot.var.as_tensor().detach() - update)?;
            slot.var.set(&next)?;
        }
        Ok(())
    }

    /// Moments as `<param>.m` / `<param>.v` plus the step counter under `step`.
    pub fn state(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = HashMap::new();
        for slot in &self.slots {
            out.insert(format!("{}.m", slot.name), slot.m.copy()?);
            out.insert(format!("{}.v", slot.name), slot.v.copy()?);
        }
        let device = self.slots.first().map(|s| s.m.device().clone()).unwrap_or(candle_core::Device::Cpu);
        out.insert("step".into(), Tensor::new(&[self.step as i64], &device)?);
        Ok(out)
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        let missing = |k: &str| Error::Shape(format!("optimizer state lacks `{k}`"));
        let step = state.get("step").ok_or_else(|| missing("step"))?;
        let step: Vec<i64> = step.to_dtype(DType::I64)?.flatten_all()?.to_vec1()?;
        self.step = step.first().copied().unwrap_or(0).max(0) as u64;
        for slot in &mut self.slots {
            for (suffix, target) in [("m", &mut slot.m), ("v", &mut slot.v)] {
                let key = format!("{}.{suffix}", slot.name);
                let t = state.get(&key).ok_or_else(|| missing(&key))?;
                if t.dims() != slot.var.dims() {
                    return Err(Error::Shape(format!("optimizer state `{key}` has shape {:?}", t.dims())));
                }
                *target = t.to_dtype(slot.var.dtype())?.copy()?;
            }
        }
        Ok(())
    }
}
