//! Adam optimizer over a fixed list of parameter tensors.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Default moment settings with a custom learning rate.
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for a parameter list. Update order
/// is the parameter list order, so a given gradient sequence always
/// produces the same parameters.
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta1_power: f64,
    beta2_power: f64,
}

impl AdamState {
    /// Zeroed moments for parameters of the given flat sizes.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            beta1_power: 1.0,
            beta2_power: 1.0,
        })
    }

    /// Applies one optimization step. `grads[i]` of `None` leaves
    /// parameter `i` and its moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "state tracks {} parameters, got {} params and {} gradients",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        let c = self.config;
        self.beta1_power *= c.beta1;
        self.beta2_power *= c.beta2;
        let m_corr = 1.0 - self.beta1_power;
        let v_corr = 1.0 - self.beta2_power;
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            if g.shape() != params[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "parameter {i} is {}, gradient is {}",
                        params[i].shape(),
                        g.shape()
                    ),
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let theta = params[i].data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / m_corr;
                let v_hat = v[j] / v_corr;
                theta[j] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            if !params[i].is_finite() {
                return Err(Error::NonFinite {
                    op: format!("adam_step parameter {i}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_nearly_the_learning_rate() {
        let mut state =
            AdamState::new(AdamConfig::with_learning_rate(0.01), &[1]).unwrap();
        let mut p = Tensor::vector(vec![1.0]);
        let g = Some(Tensor::vector(vec![1.0]));
        state.step(&mut [&mut p], &[g]).unwrap();
        assert_abs_diff_eq!(p.data()[0], 1.0 - 0.01 / (1.0 + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(p.data()[0], 0.99, epsilon = 1e-9);
    }

    #[test]
    fn five_steps_on_a_quadratic_match_a_hand_rolled_reference() {
        let config = AdamConfig::with_learning_rate(0.1);
        let mut state = AdamState::new(config, &[1]).unwrap();
        let mut p = Tensor::vector(vec![2.0]);

        let mut theta = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let (mut b1p, mut b2p) = (1.0f64, 1.0f64);
        for _ in 0..5 {
            let g = 2.0 * p.data()[0];
            state
                .step(&mut [&mut p], &[Some(Tensor::vector(vec![g]))])
                .unwrap();

            let gr = 2.0 * theta;
            m = config.beta1 * m + (1.0 - config.beta1) * gr;
            v = config.beta2 * v + (1.0 - config.beta2) * gr * gr;
            b1p *= config.beta1;
            b2p *= config.beta2;
            let m_hat = m / (1.0 - b1p);
            let v_hat = v / (1.0 - b2p);
            theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);

            assert_abs_diff_eq!(p.data()[0], theta, epsilon = 1e-12);
        }
        assert!(theta < 2.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters_in_place() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = Tensor::vector(vec![1.5, -0.5]);
        let g = Some(Tensor::vector(vec![0.0, 0.0]));
        state.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p.data(), &[1.5, -0.5]);
    }

    #[test]
    fn missing_gradients_skip_their_parameters() {
        let mut state =
            AdamState::new(AdamConfig::with_learning_rate(0.01), &[1, 1]).unwrap();
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0]);
        state
            .step(&mut [&mut a, &mut b], &[Some(Tensor::vector(vec![1.0])), None])
            .unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0], 1.0);
    }

    #[test]
    fn configuration_and_shape_errors_are_reported() {
        assert!(AdamState::new(AdamConfig::with_learning_rate(0.0), &[1]).is_err());
        let mut state = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut p = Tensor::vector(vec![1.0]);
        let wrong = Some(Tensor::vector(vec![1.0, 2.0]));
        assert!(state.step(&mut [&mut p], &[wrong]).is_err());
    }
}
