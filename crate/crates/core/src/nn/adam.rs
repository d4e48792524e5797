//! Adam optimizer with bias correction.

use thiserror::Error;

/// Optimizer state: step count plus first/second moment buffers aligned
/// with the flat parameter arena.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("adam buffers hold {state} values but got {got} parameters/gradients")]
    ShapeMismatch { state: usize, got: usize },
}

impl AdamState {
    /// Fresh state with the standard defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`, then the
    /// bias-corrected step `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) -> Result<(), AdamError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AdamError::ShapeMismatch {
                state: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = self.beta1 * self.m[i] as f64 + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i] as f64 + (1.0 - self.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= (self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(1e-4, 3);
        let mut params = vec![0.5f32, -0.25, 1.0];
        let before = params.clone();
        state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // After bias correction the first update is exactly
        // −lr·g/(|g| + ε) for any nonzero g (up to f32 storage rounding).
        for g in [0.3f32, -2.0, 1e-3] {
            let mut state = AdamState::new(1e-4, 1);
            let mut params = vec![1.0f32];
            state.step(&mut params, &[g]).unwrap();
            let expected = 1.0 - (1e-4 * g as f64 / (g.abs() as f64 + 1e-8)) as f32;
            assert!(
                (params[0] - expected).abs() <= 1e-6 * expected.abs().max(1.0),
                "g={g}: got {} want {expected}",
                params[0]
            );
            // Close to a full signed step of the learning rate.
            let sign_step = 1.0f32 - 1e-4 * g.signum();
            assert!((params[0] - sign_step).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_runs_produce_identical_trajectories() {
        let run = || {
            let mut state = AdamState::new(1e-3, 4);
            let mut params = vec![0.1f32, 0.2, -0.3, 0.4];
            for step in 0..50 {
                let grads: Vec<f32> =
                    (0..4).map(|i| ((step * 7 + i * 3) % 5) as f32 * 0.1 - 0.2).collect();
                state.step(&mut params, &grads).unwrap();
            }
            (params, state)
        };
        let (pa, sa) = run();
        let (pb, sb) = run();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa), bits(&pb));
        assert_eq!(bits(&sa.m), bits(&sb.m));
        assert_eq!(bits(&sa.v), bits(&sb.v));
        assert_eq!(sa.t, sb.t);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = AdamState::new(1e-4, 2);
        let mut params = vec![0.0f32; 3];
        assert!(state.step(&mut params, &[0.0; 3]).is_err());
    }

    #[test]
    fn moments_track_gradient_statistics() {
        let mut state = AdamState::new(1e-2, 1);
        let mut params = vec![0.0f32];
        for _ in 0..200 {
            state.step(&mut params, &[1.0]).unwrap();
        }
        // With a constant unit gradient the moments follow the closed forms
        // m_t = 1 − β1^t and v_t = 1 − β2^t.
        let t = 200i32;
        assert!((state.m[0] as f64 - (1.0 - 0.9f64.powi(t))).abs() < 1e-3);
        assert!((state.v[0] as f64 - (1.0 - 0.999f64.powi(t))).abs() < 1e-3);
        assert!(state.v[0] >= 0.0);
        // Steps move the parameter in the negative gradient direction.
        assert!(params[0] < 0.0);
    }
}
