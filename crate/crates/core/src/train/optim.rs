//! Adadelta with global gradient-norm clipping.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    /// Global L2 norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            rho: 0.95,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    sq_grad: Tensor,
    sq_delta: Tensor,
}

pub struct Adadelta {
    config: AdadeltaConfig,
    slots: Vec<Slot>,
}

impl Adadelta {
    pub fn new(params: Vec<(String, Var)>, config: AdadeltaConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.rho) || !(config.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adadelta settings {config:?}")));
        }
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                let z = var.as_tensor().zeros_like()?;
                Ok(Slot {
                    name,
                    var,
                    sq_grad: z.clone(),
                    sq_delta: z,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, slots })
    }

    pub fn config(&self) -> &AdadeltaConfig {
        &self.config
    }

    /// Accumulators `(name, E[g^2], E[dx^2])` for checkpointing.
    pub fn state(&self) -> Vec<(String, Tensor, Tensor)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.sq_grad.clone(), s.sq_delta.clone()))
            .collect()
    }

    pub fn load_state(&mut self, state: &[(String, Tensor, Tensor)]) -> Result<()> {
        for slot in &mut self.slots {
            if let Some((_, g, d)) = state.iter().find(|(n, _, _)| *n == slot.name) {
                if g.dims() != slot.sq_grad.dims() || d.dims() != slot.sq_delta.dims() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state for {} has the wrong shape",
                        slot.name
                    )));
                }
                slot.sq_grad = g.to_dtype(slot.sq_grad.dtype())?;
                slot.sq_delta = d.to_dtype(slot.sq_delta.dtype())?;
            }
        }
        Ok(())
    }

    /// Global L2 norm of the gradients of the tracked parameters.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for s in &self.slots {
            if let Some(g) = grads.get(s.var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// One update; returns the pre-clipping gradient norm.
    pub fn step(&mut self, grads: &GradStore) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is {norm}")));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let AdadeltaConfig { learning_rate, rho, eps, .. } = self.config;
        for s in &mut self.slots {
            let Some(g) = grads.get(s.var.as_tensor()) else {
                continue;
            };
            // Gradients can still carry an autograd graph; keeping that in the
            // accumulators would chain every step's graph together.
            let g = (g.detach() * scale)?;
            s.sq_grad = ((&s.sq_grad * rho)? + (g.sqr()? * (1.0 - rho))?)?;
            let delta = (((&s.sq_delta + eps)?.sqrt()? / (&s.sq_grad + eps)?.sqrt()?)? * &g)?;
            s.sq_delta = ((&s.sq_delta * rho)? + (delta.sqr()? * (1.0 - rho))?)?;
            s.var.set(&(s.var.as_tensor().detach() - (delta * learning_rate)?)?)?;
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar_problem(x0: f64) -> (Var, Adadelta) {
        let x = Var::new(&[x0], &Device::Cpu).unwrap();
        let opt = Adadelta::new(vec![("x".into(), x.clone())], AdadeltaConfig::default()).unwrap();
        (x, opt)
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (x, mut opt) = scalar_problem(1.0);
        // loss = x^2, gradient 2
        let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap();
        opt.step(&g).unwrap();
        let eg = 0.05 * 4.0;
        let dx = (1e-8f64).sqrt() / (eg + 1e-8f64).sqrt() * 2.0;
        let got = x.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - (1.0 - dx)).abs() < 1e-12);
    }

    #[test]
    fn clipping_scales_to_the_cap() {
        let (x, mut opt) = scalar_problem(100.0);
        let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap();
        let norm = opt.step(&g).unwrap();
        assert!((norm - 200.0).abs() < 1e-9);
        let eg = 0.05 * 25.0;
        let dx = (1e-8f64).sqrt() / (eg + 1e-8f64).sqrt() * 5.0;
        let got = x.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - (100.0 - dx)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let (x, mut opt) = scalar_problem(3.0);
        let mut prev = f64::INFINITY;
        for _ in 0..500 {
            let loss = (x.as_tensor() - 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let v = loss.to_scalar::<f64>().unwrap();
            assert!(v < prev);
            prev = v;
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        assert!(prev < 4.0);
    }

    #[test]
    fn rejects_bad_settings() {
        let x = Var::new(&[0f64], &Device::Cpu).unwrap();
        let cfg = AdadeltaConfig {
            rho: 1.5,
            ..Default::default()
        };
        assert!(Adadelta::new(vec![("x".into(), x)], cfg).is_err());
    }
}
