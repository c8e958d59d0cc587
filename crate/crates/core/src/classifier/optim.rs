//! Rectified Adam.
//!
//! Adam's adaptive step has unbounded variance in the first iterations, when
//! the second-moment estimate rests on very few samples. RAdam tracks the
//! length `rho_t` of the approximated simple moving average; while
//! `rho_t <= 4` the variance is intractable and the update is plain bias
//! corrected momentum, afterwards the adaptive step is multiplied by the
//! rectification term
//!
//! ```text
//! r_t = sqrt((rho_t - 4)(rho_t - 2) rho_inf / ((rho_inf - 4)(rho_inf - 2) rho_t))
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl RAdam {
    /// One moment buffer per parameter group, sized by `group_lens`.
    pub fn new(group_lens: &[usize]) -> Self {
        Self::with_betas(group_lens, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(group_lens: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        RAdam {
            beta1,
            beta2,
            eps,
            step: 0,
            first_moment: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated SMA at step `t`.
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powf(t as f64);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification term, `None` while it is undefined.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho_inf = self.rho_inf();
        let rho_t = self.rho(t);
        (rho_t > 4.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt()
        })
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter group count");
        assert_eq!(grads.len(), self.first_moment.len(), "gradient group count");
        self.step += 1;
        let t = self.step;
        let bias1 = 1.0 - self.beta1.powf(t as f64);
        let bias2 = 1.0 - self.beta2.powf(t as f64);
        let rect = self.rectification(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        for (g_idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[g_idx];
            let v = &mut self.second_moment[g_idx];
            assert_eq!(p.len(), g.len(), "group {g_idx} length");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let delta = match rect {
                    Some(r) => {
                        let v_hat = (v[i] / bias2).sqrt();
                        r * m_hat / (v_hat + eps)
                    }
                    None => m_hat,
                };
                p[i] -= lr * delta;
            }
        }
    }
}
