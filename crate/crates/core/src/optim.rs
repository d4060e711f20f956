//! Adaptive-moment optimizer.

use crate::error::{CoreError, Result};
use crate::param::Param;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl AdamConfig {
    pub fn with_lr(lr: Real) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are kept per parameter position,
/// so one optimizer instance must always be stepped with the same group.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    moments: Vec<(Vec<Real>, Vec<Real>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over the group. Every param must carry a gradient; the
    /// gradients are consumed.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(CoreError::Usage(format!(
                "optimizer built for {} params, stepped with {}",
                self.moments.len(),
                params.len()
            )));
        }
        // Validate all gradients before mutating anything.
        for p in params.iter() {
            match p.grad() {
                None => {
                    return Err(CoreError::MissingGradient {
                        name: p.name().to_owned(),
                    })
                }
                Some(g) => {
                    if g.len() != p.numel() {
                        return Err(CoreError::Usage(format!(
                            "gradient length {} does not match param `{}` ({})",
                            g.len(),
                            p.name(),
                            p.numel()
                        )));
                    }
                }
            }
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let g = p.take_grad().expect("validated above");
            let values = p.values_mut();
            for i in 0..values.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
