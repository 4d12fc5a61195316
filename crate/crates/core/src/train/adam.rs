use crate::error::{Error, Result};
use crate::nn::{named_params, Module};
use crate::tensor::{lit, Element};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Element> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Element> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected Adam update of `params` in place. `step` counts from 1.
/// A non-finite gradient leaves everything untouched and names `name`.
pub fn adam_step<T: Element>(
    name: &str,
    params: &mut [T],
    grads: &[T],
    moments: &mut Moments<T>,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(params.len(), grads.len(), "gradient length for `{name}`");
    check_finite(name, grads)?;
    let AdamConfig { beta1, beta2, eps } = *cfg;
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        let m = beta1 * moments.m[i].as_f64() + (1.0 - beta1) * g;
        let v = beta2 * moments.v[i].as_f64() + (1.0 - beta2) * g * g;
        moments.m[i] = lit(m);
        moments.v[i] = lit(v);
        let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        params[i] = lit(params[i].as_f64() - update);
    }
    Ok(())
}

fn check_finite<T: Element>(name: &str, grads: &[T]) -> Result<()> {
    match grads.iter().position(|g| !g.as_f64().is_finite()) {
        Some(i) => Err(Error::Numerical(format!(
            "non-finite gradient {} in parameter `{name}` at index {i}",
            grads[i].as_f64()
        ))),
        None => Ok(()),
    }
}

/// Adam over every parameter of a module, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Element> {
    pub config: AdamConfig,
    /// Updates applied so far.
    pub step: u64,
    pub slots: Vec<(String, Moments<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new<M: Module<T> + ?Sized>(module: &M, config: AdamConfig) -> Self {
        let slots = named_params(module)
            .into_iter()
            .map(|(name, p)| (name, Moments::zeros(p.numel())))
            .collect();
        Self { config, step: 0, slots }
    }

    /// Consumes the accumulated gradients of `module` and applies one update.
    /// Parameters without a gradient are left alone. All gradients are
    /// checked before any parameter changes.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &M, lr: f64) -> Result<()> {
        let params = named_params(module);
        if params.len() != self.slots.len() {
            return Err(crate::error::config_err("optimizer state does not match the module"));
        }
        let grads: Vec<Option<Vec<T>>> = params.iter().map(|(_, p)| p.get().take_grad()).collect();
        for ((name, _), g) in params.iter().zip(&grads) {
            if let Some(g) = g {
                check_finite(name, g)?;
            }
        }
        self.step += 1;
        for (((name, p), g), (slot_name, moments)) in params.iter().zip(grads).zip(&mut self.slots) {
            debug_assert_eq!(name, slot_name);
            if let Some(g) = g {
                let mut values = p.get().to_vec();
                adam_step(name, &mut values, &g, moments, self.step, lr, &self.config)?;
                p.set(values)?;
            }
        }
        Ok(())
    }
}
