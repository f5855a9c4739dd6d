//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_width, Error, Result};

/// A parameter tensor paired with its gradient, flattened.
pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Moments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in `params`.
    ///
    /// Parameters must be passed in the same order on every call; moment
    /// buffers are matched positionally and checked by name and length.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [ParamRef<'_>]) -> Result<()> {
        for p in params.iter() {
            ensure_width("optimizer grad", p.value.len(), p.grad.len())?;
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: vec![0.0; p.value.len()],
                    v: vec![0.0; p.value.len()],
                })
                .collect();
        } else {
            ensure_width("optimizer param count", self.moments.len(), params.len())?;
            for (mo, p) in self.moments.iter().zip(params.iter()) {
                if mo.name != p.name {
                    return Err(Error::State(format!(
                        "optimizer expected parameter `{}`, got `{}`",
                        mo.name, p.name
                    )));
                }
                ensure_width("optimizer moment", mo.m.len(), p.value.len())?;
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for (mo, p) in self.moments.iter_mut().zip(params.iter_mut()) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g;
                mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g * g;
                let m_hat = mo.m[i] / bc1;
                let v_hat = mo.v[i] / bc2;
                p.value[i] = p.value[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(opt: &mut AdamW, x: &mut f64, g: f64) {
        let mut v = [*x];
        let gs = [g];
        opt.step(&mut [ParamRef {
            name: "x".into(),
            value: &mut v,
            grad: &gs,
        }])
        .unwrap();
        *x = v[0];
    }

    #[test]
    fn decay_only_step() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut x = 2.0;
        scalar_step(&mut opt, &mut x, 0.0);
        assert!((x - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [-3.0, 0.02, 50.0] {
            let mut opt = AdamW::new(cfg);
            let mut x = 1.0;
            scalar_step(&mut opt, &mut x, g);
            let delta = x - 1.0;
            assert!((delta.abs() - 1e-3).abs() < 1e-9, "{delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn five_step_sequence_matches_scalar_oracle() {
        // Oracle: scalar AdamW rolled out by hand (independent of the slice loop).
        let (lr, b1, b2, eps, wd) = (0.01, 0.8, 0.95, 1e-8, 0.1);
        let grads = [0.5, -1.0, 0.25, 2.0, -0.75];
        let mut x_ref: f64 = 1.5;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_ref = x_ref * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + eps);
        }
        // frozen from the oracle above
        assert!((x_ref - 1.4810521104162724).abs() < 1e-12, "{x_ref:.17}");

        let mut opt = AdamW::new(AdamWConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        });
        let mut x = 1.5;
        for g in grads {
            scalar_step(&mut opt, &mut x, g);
        }
        assert!((x - x_ref).abs() < 1e-14);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut a = [1.0, 2.0];
        let mut b = [3.0];
        let ga = [0.1, 0.2];
        let gb = [f64::NAN];
        let err = opt
            .step(&mut [
                ParamRef {
                    name: "enc.0.weight".into(),
                    value: &mut a,
                    grad: &ga,
                },
                ParamRef {
                    name: "enc.0.bias".into(),
                    value: &mut b,
                    grad: &gb,
                },
            ])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "enc.0.bias"));
        assert_eq!(a, [1.0, 2.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut a = [1.0, 2.0];
        opt.step(&mut [ParamRef {
            name: "p".into(),
            value: &mut a,
            grad: &[0.0, 0.0],
        }])
        .unwrap();
        let mut b = [1.0];
        assert!(opt
            .step(&mut [ParamRef {
                name: "p".into(),
                value: &mut b,
                grad: &[0.0],
            }])
            .is_err());
    }
}
