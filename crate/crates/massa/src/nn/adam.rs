//! Adaptive-moment optimizer over named parameter blocks.

use crate::error::{Error, Result};

/// Adam state: per-block first/second moment accumulators plus a step
/// counter. Blocks are matched to parameters by position, so callers must
/// present blocks in a stable order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` per entry.
    ///
    /// `params` and `grads` must be aligned block-for-block. A non-finite
    /// gradient aborts with the offending block named.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut [f64])],
        grads: &[(String, &[f64])],
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "param/grad block count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        }
        for (b, ((name, g), (_, p))) in grads.iter().zip(params.iter()).enumerate() {
            assert_eq!(
                g.len(),
                p.len(),
                "grad/param length mismatch in block `{name}`"
            );
            assert_eq!(self.m[b].len(), p.len(), "optimizer state shape mismatch");
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient ({bad}) in parameter block `{name}`"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (b, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            let m = &mut self.m[b];
            let v = &mut self.v[b];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
