use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with gradient and Adam moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    params: Vec<Param>,
    step: u64,
}

/// Gradient buffers laid out like a [`ModelParams`], produced independently
/// per batch item and summed in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.bufs {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor drawn from U(-a, a) with a = sqrt(6 / fan_in).
    pub fn add_he_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut Stream,
    ) -> usize {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * bound).collect();
        self.push(Param::new(name, shape, value))
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let n = shape.iter().product();
        self.push(Param::new(name, shape, vec![0.0; n]))
    }

    fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        &self.params[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.params[idx].value
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn empty_gradients(&self) -> Gradients {
        Gradients {
            bufs: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.bufs) {
            for (a, b) in p.grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self
            .params
            .iter()
            .find(|p| p.value.iter().any(|v| !v.is_finite()))
        {
            Some(p) => Err(Error::NonFinite(format!("parameter `{}`", p.name))),
            None => Ok(()),
        }
    }

    /// One bias-corrected Adam update over every tensor, then clears the
    /// gradient buffers. Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                p.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.add_zeros("theta", vec![1]);
        p.value_mut(0)[0] = v;
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.3);
        p.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(p.value(0)[0], 0.3);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn single_step_matches_hand_computed_update() {
        let cfg = AdamConfig::default();
        let mut p = scalar(0.5);
        p.param_mut(0).grad[0] = 1.0;
        p.adam_step(&cfg).unwrap();
        // m = 0.1, v = 0.01; bias-corrected both to 1.
        let m_hat = (1.0 - 0.9) / (1.0 - 0.9);
        let v_hat: f64 = (1.0 - 0.99) / (1.0 - 0.99);
        let expected = 0.5 - 1e-4 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.value(0)[0] - expected).abs() < 1e-9);
        assert!((p.value(0)[0] - (0.5 - 1e-4 / (1.0 + 1e-8))).abs() < 1e-9);
        assert_eq!(p.params()[0].grad[0], 0.0);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let cfg = AdamConfig::default();
        let mut p = scalar(0.0);
        for _ in 0..2 {
            p.param_mut(0).grad[0] = 1.0;
            p.adam_step(&cfg).unwrap();
        }
        // With a constant gradient the bias-corrected ratio stays at 1.
        assert!((p.value(0)[0] + 2.0 * 1e-4 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar(1.0);
        p.param_mut(0).grad[0] = f64::NAN;
        let err = p.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(p.value(0)[0], 1.0);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let make = || {
            let mut p = ModelParams::new();
            let mut rng = Stream::new(4);
            p.add_he_uniform("w", vec![3, 5], 3, &mut rng);
            p
        };
        assert_eq!(make(), make());
        let p = make();
        let bound = (6.0f64 / 3.0).sqrt();
        assert!(p.value(0).iter().all(|v| v.abs() <= bound));
    }
}
