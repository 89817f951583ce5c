//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let x = h * XGK[k];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integral of `f` over `[a, b]` to absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        if err <= tol.max(1e-300) || depth == 0 || (b - a).abs() < 1e-15 * a.abs().max(1.0) {
            return value;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    rec(&f, a, b, tol, 50)
}

/// `integral_a^inf f`, mapped onto `[0, 1)` by `x = a + u / (1 - u)`.
pub fn integrate_upper<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    integrate(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - u;
            f(a + u / w) / (w * w)
        },
        0.0,
        1.0,
        tol,
    )
}

/// `integral_-inf^b f`.
pub fn integrate_lower<F: Fn(f64) -> f64>(f: F, b: f64, tol: f64) -> f64 {
    integrate_upper(|x| f(2.0 * b - x), b, tol)
}

/// Regularized lower incomplete gamma by direct quadrature of its defining integral.
/// For shape below one the substitution `t = s^(1/b)` removes the endpoint singularity.
pub fn reg_lower_gamma_oracle(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let lg = ln_gamma(b);
    let total = if b < 1.0 {
        let upper = a.powf(b);
        integrate(|s| (-s.powf(1.0 / b) - lg).exp() / b, 0.0, upper, 1e-14)
    } else {
        // the integrand peaks at b - 1; split there so each piece is unimodal
        let peak = (b - 1.0).min(a);
        let f = |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                ((b - 1.0) * t.ln() - t - lg).exp()
            }
        };
        integrate(f, 0.0, peak, 1e-14) + integrate(f, peak, a, 1e-14)
    };
    total.min(1.0)
}

/// Normal-mean model with known unit noise: `y_j ~ N(theta, 1)`, `theta ~ N(m0, t0^2)`.
#[derive(Debug, Clone)]
pub struct ConjugateNormal {
    pub y: Vec<f64>,
    pub m0: f64,
    pub t0: f64,
}

impl ConjugateNormal {
    pub fn example(n: usize, shift: f64) -> Self {
        // deterministic, roughly centred data
        let y = (0..n)
            .map(|j| shift + ((j as f64 * 0.618_033_988_7).fract() - 0.5) * 2.5)
            .collect();
        ConjugateNormal {
            y,
            m0: 0.0,
            t0: 2.0,
        }
    }

    pub fn log_joint(&self, theta: f64) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let ll: f64 = self
            .y
            .iter()
            .map(|y| -0.5 * (ln_2pi + (y - theta).powi(2)))
            .sum();
        let v0 = self.t0 * self.t0;
        ll - 0.5 * (ln_2pi + v0.ln() + (theta - self.m0).powi(2) / v0)
    }

    /// Posterior `(mean, sd)`.
    pub fn posterior(&self) -> (f64, f64) {
        let prec = 1.0 / (self.t0 * self.t0) + self.y.len() as f64;
        let mean = (self.m0 / (self.t0 * self.t0) + self.y.iter().sum::<f64>()) / prec;
        (mean, prec.sqrt().recip())
    }

    /// `ln p(y)`, from the marginal `y ~ N(m0 1, I + t0^2 1 1^T)`.
    pub fn log_evidence(&self) -> f64 {
        let n = self.y.len() as f64;
        let v0 = self.t0 * self.t0;
        let d: Vec<f64> = self.y.iter().map(|y| y - self.m0).collect();
        let ss: f64 = d.iter().map(|x| x * x).sum();
        let s: f64 = d.iter().sum();
        let quad = ss - v0 * s * s / (1.0 + n * v0);
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + (1.0 + n * v0).ln() + quad)
    }
}

/// How a self-consistency replication draws its "observed" data from the fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservedDraw {
    /// One whole dataset: a single posterior draw and one random effect per subject.
    Dataset,
    /// Every observation from its own dataset, so observations are independent.
    PerObservation,
}

/// Randomized-PIT self-consistency. Fits the SEP model once to a dataset from the
/// simulation design, then for each replication draws fresh data from the fitted
/// posterior predictive and tests its residuals against an independent set of
/// replicates. Returns one KS p-value per replication.
pub fn residual_calibration(n_reps: usize, seed: u64, mode: ObservedDraw) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sepqmm::model::KernelKind;
    use sepqmm::residuals::{
        scaled_residuals, simulate_replicates, uniformity_test, DEFAULT_N_SIMS,
    };
    use sepqmm::sampler::{run_chains, ChainConfig};
    use sepqmm::simstudy::{generate_dataset, simulation_spec, SimScenario};

    let scenario = SimScenario::new(0.0, 0.5, (2.0, 0.5));
    let data = generate_dataset(&scenario, seed).unwrap();
    let spec = simulation_spec(KernelKind::Sep, 0.5).unwrap();
    let draws = run_chains(
        &data,
        &spec,
        &ChainConfig::with_lengths(4, 2000, 2000, seed),
    )
    .unwrap();
    let pool = match mode {
        ObservedDraw::Dataset => n_reps,
        ObservedDraw::PerObservation => 2000,
    };
    let fresh = simulate_replicates(&draws, &data, &spec, pool, seed ^ 0xABCD).unwrap();
    sepqmm::parallel::map_indexed(n_reps, |r| {
        let reps = simulate_replicates(
            &draws,
            &data,
            &spec,
            DEFAULT_N_SIMS,
            seed.wrapping_add(1 + r as u64),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(r as u64));
        let observed: Vec<f64> = match mode {
            ObservedDraw::Dataset => fresh[r].clone(),
            ObservedDraw::PerObservation => (0..data.n_obs())
                .map(|k| fresh[rng.random_range(0..pool)][k])
                .collect(),
        };
        let res = scaled_residuals(&observed, &reps, &mut rng).unwrap();
        uniformity_test(&res).unwrap().p_value
    })
}
