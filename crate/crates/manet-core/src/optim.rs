//! Bias-corrected Adam.
//!
//! State is kept as plain tensors (first and second moments per parameter
//! plus the step counter) so a checkpoint can embed it alongside the
//! weights and a resumed run continues bit-identically at 64-bit.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    /// Fresh optimizer with zero moments, one slot per parameter.
    pub fn new(cfg: AdamConfig, param_shapes: &[crate::tensor::Shape]) -> Self {
        Adam {
            cfg,
            m: param_shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    /// Rebuild from checkpointed state.
    pub fn from_state(
        cfg: AdamConfig,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        step: u64,
    ) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::State(format!(
                "optimizer moment lists disagree: {} first vs {} second",
                m.len(),
                v.len()
            )));
        }
        for (a, b) in m.iter().zip(v.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::State(format!(
                    "optimizer moment shapes disagree: {} vs {}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Adam { cfg, m, v, step })
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One Adam update over all parameters. `params[i]` and `grads[i]` must
    /// match the shapes this optimizer was built with.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam_step: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        // Bias corrections for step t.
        let c1 = 1.0 - b1.powf(t);
        let c2 = 1.0 - b2.powf(t);
        for i in 0..params.len() {
            let shape = params[i].shape();
            let g = grads[i].data();
            if grads[i].shape() != shape || self.m[i].shape() != shape {
                return Err(Error::Dimension(format!(
                    "adam_step: param {} shape {} vs grad {} vs state {}",
                    i,
                    shape,
                    grads[i].shape(),
                    self.m[i].shape()
                )));
            }
            grads[i].ensure_finite("adam_step gradient")?;
            let mut pd = params[i].data().to_vec();
            let mut md = self.m[i].data().to_vec();
            let mut vd = self.v[i].data().to_vec();
            for j in 0..pd.len() {
                let gj = g[j].as_f64();
                let mj = b1 * md[j].as_f64() + (1.0 - b1) * gj;
                let vj = b2 * vd[j].as_f64() + (1.0 - b2) * gj * gj;
                md[j] = T::from_f64(mj);
                vd[j] = T::from_f64(vj);
                let update = self.cfg.lr * (mj / c1) / ((vj / c2).sqrt() + self.cfg.eps);
                pd[j] = T::from_f64(pd[j].as_f64() - update);
            }
            params[i] = Tensor::from_vec(shape, pd)?;
            params[i].ensure_finite("adam_step parameter")?;
            self.m[i] = Tensor::from_vec(shape, md)?;
            self.v[i] = Tensor::from_vec(shape, vd)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_param(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let shapes = [Shape::new(1, 1, 1, 1)];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &shapes);
        let mut params = scalar_param(3.0);
        let grads = scalar_param(0.0);
        for _ in 0..5 {
            opt.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params[0].item().unwrap(), 3.0);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With constant gradient g the bias corrections cancel on step 1:
        // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps) ~ lr * sign(g).
        for &g in &[0.7, -2.0, 1e-3] {
            let shapes = [Shape::new(1, 1, 1, 1)];
            let mut opt = Adam::new(AdamConfig::with_lr(0.1), &shapes);
            let mut params = scalar_param(1.0);
            opt.step(&mut params, &scalar_param(g)).unwrap();
            let moved = params[0].item().unwrap() - 1.0;
            assert!(
                (moved + 0.1 * g.signum()).abs() < 1e-5,
                "gradient {g}: moved {moved}"
            );
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let shapes = [Shape::new(1, 2, 1, 1)];
            let mut opt = Adam::new(AdamConfig::default(), &shapes);
            let mut params =
                vec![Tensor::from_vec(shapes[0], vec![0.3f64, -0.8]).unwrap()];
            for k in 0..50 {
                let g = Tensor::from_vec(
                    shapes[0],
                    vec![(k as f64).sin(), (k as f64).cos()],
                )
                .unwrap();
                opt.step(&mut params, &[g]).unwrap();
            }
            params.remove(0)
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn resumed_state_continues_bit_identically() {
        let shapes = [Shape::new(1, 3, 1, 1)];
        let grad_at = |k: u64| {
            Tensor::from_vec(
                shapes[0],
                vec![(k as f64).sin(), (k as f64 * 0.5).cos(), 0.25],
            )
            .unwrap()
        };
        // Uninterrupted run of 40 steps.
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &shapes);
        let mut params = vec![Tensor::from_vec(shapes[0], vec![1.0, 2.0, 3.0]).unwrap()];
        for k in 0..40 {
            opt.step(&mut params, &[grad_at(k)]).unwrap();
        }
        // Same run split at step 20 with state carried over.
        let mut opt_a = Adam::new(AdamConfig::with_lr(0.01), &shapes);
        let mut params_b = vec![Tensor::from_vec(shapes[0], vec![1.0, 2.0, 3.0]).unwrap()];
        for k in 0..20 {
            opt_a.step(&mut params_b, &[grad_at(k)]).unwrap();
        }
        let (m, v) = opt_a.moments();
        let mut opt_b =
            Adam::from_state(AdamConfig::with_lr(0.01), m.to_vec(), v.to_vec(), opt_a.step_count())
                .unwrap();
        for k in 20..40 {
            opt_b.step(&mut params_b, &[grad_at(k)]).unwrap();
        }
        assert!(params[0].bit_eq(&params_b[0]));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let shapes = [Shape::new(1, 1, 1, 1)];
        let mut opt = Adam::new(AdamConfig::default(), &shapes);
        let mut params = scalar_param(0.0);
        let bad = vec![Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1))];
        assert!(matches!(
            opt.step(&mut params, &bad),
            Err(Error::Dimension(_))
        ));
    }
}
