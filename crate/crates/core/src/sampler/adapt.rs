//! Random-walk proposal for one block, with Robbins-Monro scale adaptation and an
//! empirical covariance learned during warmup.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub(crate) struct BlockProposal {
    dim: usize,
    log_scale: f64,
    // lower-triangular factor of the unit-scale proposal covariance, row-major
    chol: Vec<f64>,
    target_rate: f64,
    learn_covariance: bool,
    // Welford accumulators over block positions
    n_seen: usize,
    mean: Vec<f64>,
    m2: DMatrix<f64>,
    // Robbins-Monro step counter since the last covariance update
    rm_step: usize,
    z: Vec<f64>,
}

impl BlockProposal {
    pub fn new(initial_sd: &[f64], target_rate: f64, learn_covariance: bool) -> Self {
        let dim = initial_sd.len();
        let mut chol = vec![0.0; dim * dim];
        for (i, sd) in initial_sd.iter().enumerate() {
            chol[i * dim + i] = *sd;
        }
        BlockProposal {
            dim,
            log_scale: 0.0,
            chol,
            target_rate,
            learn_covariance,
            n_seen: 0,
            mean: vec![0.0; dim],
            m2: DMatrix::zeros(dim, dim),
            rm_step: 0,
            z: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, delta: &mut [f64]) {
        let d = self.dim;
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let s = self.log_scale.exp();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol[i * d + j] * self.z[j];
            }
            delta[i] = s * acc;
        }
    }

    /// Robbins-Monro update of the log scale toward the target acceptance rate.
    pub fn adapt_scale(&mut self, accept_prob: f64) {
        self.rm_step += 1;
        let eta = 1.0 / (self.rm_step as f64 + 5.0).powf(0.6);
        self.log_scale += eta * (accept_prob - self.target_rate);
        self.log_scale = self.log_scale.clamp(-30.0, 30.0);
    }

    pub fn observe(&mut self, position: &[f64]) {
        if !self.learn_covariance {
            return;
        }
        self.n_seen += 1;
        let n = self.n_seen as f64;
        let d = self.dim;
        let mut delta_old = vec![0.0; d];
        for i in 0..d {
            delta_old[i] = position[i] - self.mean[i];
            self.mean[i] += delta_old[i] / n;
        }
        for i in 0..d {
            let di_new = position[i] - self.mean[i];
            for j in 0..d {
                self.m2[(i, j)] += delta_old[j] * di_new;
            }
        }
    }

    /// Replaces the proposal shape by the empirical covariance scaled by `2.38^2 / d`
    /// and restarts the accumulators. Keeps the old shape when too few draws were seen
    /// or the covariance is numerically singular.
    pub fn update_covariance(&mut self) {
        if !self.learn_covariance || self.n_seen < 10 * self.dim.max(2) {
            self.reset_accumulators();
            return;
        }
        let d = self.dim;
        let mut cov = &self.m2 / (self.n_seen as f64 - 1.0);
        let avg_var = (0..d).map(|i| cov[(i, i)]).sum::<f64>() / d as f64;
        if !(avg_var > 0.0 && avg_var.is_finite()) {
            self.reset_accumulators();
            return;
        }
        for i in 0..d {
            cov[(i, i)] += 1e-8 * avg_var + 1e-12;
        }
        cov *= 2.38 * 2.38 / d as f64;
        if let Some(ch) = cov.cholesky() {
            let l = ch.l();
            for i in 0..d {
                for j in 0..d {
                    self.chol[i * d + j] = if j <= i { l[(i, j)] } else { 0.0 };
                }
            }
            self.log_scale = 0.0;
            self.rm_step = 0;
        }
        self.reset_accumulators();
    }

    fn reset_accumulators(&mut self) {
        self.n_seen = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.fill(0.0);
    }

    #[cfg(test)]
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        let l = DMatrix::from_fn(d, d, |i, j| self.chol[i * d + j]);
        let s2 = (2.0 * self.log_scale).exp();
        &l * l.transpose() * s2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_moves_toward_target() {
        let mut p = BlockProposal::new(&[1.0], 0.44, false);
        for _ in 0..50 {
            p.adapt_scale(0.0);
        }
        assert!(p.log_scale < -1.0);
        for _ in 0..500 {
            p.adapt_scale(1.0);
        }
        assert!(p.log_scale > 0.0);
    }

    #[test]
    fn learns_covariance_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = BlockProposal::new(&[1.0, 1.0], 0.234, true);
        for _ in 0..20_000 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            p.observe(&[2.0 * a, a + 0.1 * b]);
        }
        p.update_covariance();
        let c = p.covariance() / (2.38 * 2.38 / 2.0);
        assert!((c[(0, 0)] - 4.0).abs() < 0.2);
        assert!((c[(0, 1)] - 2.0).abs() < 0.1);
        assert!((c[(1, 1)] - 1.01).abs() < 0.05);
    }
}
