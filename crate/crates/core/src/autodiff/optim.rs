use std::collections::BTreeMap;

use super::{AutodiffError, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Every gradient must name an existing parameter of the
    /// same shape; parameters without a gradient are left alone.
    pub fn step(
        &mut self,
        params: &mut Params,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params {
        let mut p = Params::new();
        p.insert(
            "w",
            Tensor::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap(),
        );
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = params();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::zeros(2, 2));
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_bounded_by_learning_rate() {
        // m_hat = g and v_hat = g^2 on step one, so each update is
        // -lr * g / (|g| + eps).
        let mut p = params();
        let before = p.clone();
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        });
        let gv = vec![3.0, -0.2, 1e-3, -50.0];
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::from_vec(2, 2, gv.clone()).unwrap());
        adam.step(&mut p, &g).unwrap();
        for ((a, b), gi) in p
            .get("w")
            .unwrap()
            .data()
            .iter()
            .zip(before.get("w").unwrap().data())
            .zip(&gv)
        {
            let delta = a - b;
            assert!(delta.abs() <= lr + 1e-9);
            assert_eq!(delta.signum(), -gi.signum());
            let expect = -lr * gi / (gi.abs() + 1e-8);
            assert!((delta - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = params();
        let mut adam = Adam::new(AdamConfig::default());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::zeros(1, 2));
        assert!(matches!(
            adam.step(&mut p, &g),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut p = params();
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..20 {
                let mut g = BTreeMap::new();
                let w = p.get("w").unwrap().clone();
                g.insert("w".to_string(), w.map(|v| v * 0.3 + k as f64 * 1e-3));
                adam.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
