//! The quantile mixed-effects posterior as a blocked target with cached per-subject
//! likelihood and random-effect terms, so a subject move only touches that subject.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::engine::{BlockSpec, BlockedTarget};
use super::BlockPlan;
use crate::dist::{ErrorKernel, SepParams, SlParams};
use crate::error::Result;
use crate::model::posterior::l_v_log_prior;
use crate::model::{
    random_effects_logdensity, subject_loglik, Dataset, LinkFunction, ModelSpec, ParamLayout,
    PrecisionCholesky, QmmPosterior,
};
use crate::stats::{mean, normal_logpdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Fixed,
    Error,
    PrecisionFactor,
    Recenter,
    Subject(usize),
}

pub struct QmmTarget<'a> {
    data: &'a Dataset,
    spec: ModelSpec,
    layout: ParamLayout,
    kinds: Vec<BlockKind>,
    start_beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QmmState {
    unc: Vec<f64>,
    kernel: ErrorKernel,
    l_v: PrecisionCholesky,
    subject_ll: Vec<f64>,
    subject_re: Vec<f64>,
    fixed_term: f64,
    error_term: f64,
    l_term: f64,
    lp: f64,
}

pub struct QmmPending {
    unc: Vec<f64>,
    dirty: Vec<Range<usize>>,
    kernel: Option<ErrorKernel>,
    l_v: Option<PrecisionCholesky>,
    subject_ll: Vec<f64>,
    subject_re: Vec<f64>,
    term: f64,
    single_ll: f64,
    single_re: f64,
}

impl<'a> QmmTarget<'a> {
    pub fn new(data: &'a Dataset, spec: ModelSpec, plan: BlockPlan) -> Result<Self> {
        let posterior = QmmPosterior::new(data, spec)?;
        let layout = posterior.layout().clone();
        let mut kinds = vec![
            BlockKind::Fixed,
            BlockKind::Error,
            BlockKind::PrecisionFactor,
        ];
        if plan.recenter {
            kinds.push(BlockKind::Recenter);
        }
        kinds.extend((0..data.n_subjects()).map(BlockKind::Subject));
        let start_beta = heuristic_beta(data, &spec.link);
        Ok(QmmTarget {
            data,
            spec,
            layout,
            kinds,
            start_beta,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn block_range(&self, kind: BlockKind) -> Range<usize> {
        match kind {
            BlockKind::Fixed => self.layout.fixed(),
            BlockKind::Error => self.layout.error(),
            BlockKind::PrecisionFactor => self.layout.l_v(),
            BlockKind::Recenter => self.layout.beta(),
            BlockKind::Subject(i) => self.layout.v(i),
        }
    }

    fn subject_ll(&self, i: usize, unc: &[f64], kernel: &ErrorKernel) -> f64 {
        let beta = &unc[self.layout.beta()];
        let gamma = self.layout.gamma().map_or(0.0, |k| unc[k]);
        subject_loglik(
            self.data.subject(i),
            &self.spec.link,
            beta,
            gamma,
            &unc[self.layout.v(i)],
            kernel,
        )
    }

    fn fixed_term(&self, unc: &[f64]) -> f64 {
        let var = self.spec.priors.beta_variance;
        unc[self.layout.fixed()]
            .iter()
            .map(|b| normal_logpdf(*b, 0.0, var))
            .sum()
    }

    fn error_term(&self, unc: &[f64]) -> (Option<ErrorKernel>, f64) {
        let (sigma, kappa, ln_jac) = self.layout.decode_error(unc);
        let p = &self.spec.priors;
        let mut term = p.scale_prior.ln_pdf(sigma) + ln_jac;
        if let Some((k1, k2)) = kappa {
            term += p.kappa_prior.ln_pdf(k1) + p.kappa_prior.ln_pdf(k2);
        }
        if !term.is_finite() {
            return (None, f64::NEG_INFINITY);
        }
        let kernel = match kappa {
            None => SlParams::new(0.0, sigma, self.spec.p0).map(ErrorKernel::Sl),
            Some((k1, k2)) => {
                SepParams::new(0.0, sigma, k1, k2, self.spec.p0).map(ErrorKernel::Sep)
            }
        };
        match kernel {
            Ok(k) => (Some(k), term),
            Err(_) => (None, f64::NEG_INFINITY),
        }
    }

    fn l_term(&self, unc: &[f64]) -> (PrecisionCholesky, f64) {
        let (l_v, ln_jac) = self.layout.decode_l_v(unc);
        let term = l_v_log_prior(&l_v, &self.spec) + ln_jac;
        (l_v, term)
    }

    fn total(state: &QmmState) -> f64 {
        state.subject_ll.iter().sum::<f64>()
            + state.subject_re.iter().sum::<f64>()
            + state.fixed_term
            + state.error_term
            + state.l_term
    }

    fn sync_pending(&self, state: &QmmState, pending: &mut QmmPending) {
        if pending.unc.len() != state.unc.len() {
            pending.unc = state.unc.clone();
            pending.dirty.clear();
            return;
        }
        for r in pending.dirty.drain(..) {
            pending.unc[r.clone()].copy_from_slice(&state.unc[r]);
        }
    }

    /// Fills `pending.subject_ll` for every subject; returns the summed change or
    /// `-inf` as soon as one subject leaves the support.
    fn all_subjects_ll(
        &self,
        state: &QmmState,
        pending: &mut QmmPending,
        kernel: &ErrorKernel,
    ) -> f64 {
        let mut diff = 0.0;
        for i in 0..self.data.n_subjects() {
            let ll = self.subject_ll(i, &pending.unc, kernel);
            if ll == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            pending.subject_ll[i] = ll;
            diff += ll - state.subject_ll[i];
        }
        diff
    }

    fn all_subjects_re(
        &self,
        state: &QmmState,
        pending: &mut QmmPending,
        l_v: &PrecisionCholesky,
    ) -> f64 {
        let mut diff = 0.0;
        for i in 0..self.data.n_subjects() {
            let re = random_effects_logdensity(&pending.unc[self.layout.v(i)], l_v);
            pending.subject_re[i] = re;
            diff += re - state.subject_re[i];
        }
        diff
    }
}

/// Starting fixed effects from a least-squares line through the uncensored rows.
fn heuristic_beta(data: &Dataset, link: &LinkFunction) -> Vec<f64> {
    let rows: Vec<(f64, f64)> = data
        .observations()
        .iter()
        .filter(|o| o.censor.is_observed())
        .map(|o| (o.time, o.response))
        .collect();
    let (a, b) = if rows.len() >= 2 {
        let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (tm, ym) = (mean(&t), mean(&y));
        let sxx: f64 = t.iter().map(|x| (x - tm) * (x - tm)).sum();
        let sxy: f64 = t.iter().zip(&y).map(|(x, y)| (x - tm) * (y - ym)).sum();
        let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        (ym - b * tm, b)
    } else if let Some(r) = rows.first() {
        (r.1, 0.0)
    } else {
        (0.0, 0.0)
    };
    match link {
        LinkFunction::LinearRandomInterceptSlope => vec![a, b],
        LinkFunction::BiexponentialCd4 { .. } => {
            // amplitudes on the natural-log scale; fast decay dominates early, a slower
            // phase two decades lower carries the tail
            let ln_a = a * std::f64::consts::LN_10;
            let decay = (-b * std::f64::consts::LN_10).max(0.05);
            vec![
                ln_a,
                2.0 * decay,
                ln_a - 2.0 * std::f64::consts::LN_10,
                0.25 * decay,
            ]
        }
    }
}

impl BlockedTarget for QmmTarget<'_> {
    type State = QmmState;
    type Pending = QmmPending;

    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn blocks(&self) -> Vec<BlockSpec> {
        self.kinds
            .iter()
            .map(|&kind| {
                let d = self.block_range(kind).len();
                match kind {
                    BlockKind::Fixed => BlockSpec::new("fixed", vec![0.05; d], true),
                    BlockKind::Error => BlockSpec::new("error", vec![0.1; d], true),
                    BlockKind::PrecisionFactor => BlockSpec::new("Lv", vec![0.1; d], true),
                    BlockKind::Recenter => BlockSpec::new("recenter", vec![0.1; d], true),
                    BlockKind::Subject(i) => {
                        BlockSpec::new(format!("v[{}]", i + 1), vec![0.2; d], true)
                    }
                }
            })
            .collect()
    }

    fn initial_point(&self, chain: usize, attempt: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut unc = vec![0.0; self.layout.dim()];
        unc[self.layout.beta()].copy_from_slice(&self.start_beta);
        // sigma = 1, kappa = 1, L_v = I and v = 0 all map to 0 except a logit kappa
        if let Some(r) = self.layout.kappa() {
            let z = self.layout.kappa_transform().inverse(1.0).unwrap_or(0.0);
            unc[r].iter_mut().for_each(|x| *x = z);
        }
        if chain > 0 || attempt > 0 {
            let spread = 0.2 * (1.0 + attempt as f64);
            let mut jitter =
                |x: &mut f64, s: f64| *x += spread * s * rng.sample::<f64, _>(StandardNormal);
            for k in self.layout.fixed() {
                let s = unc[k].abs().max(1.0);
                jitter(&mut unc[k], 0.5 * s);
            }
            for k in self.layout.error().chain(self.layout.l_diag()) {
                jitter(&mut unc[k], 1.0);
            }
        }
        unc
    }

    fn init_state(&self, unc: Vec<f64>) -> std::result::Result<QmmState, String> {
        let fixed_term = self.fixed_term(&unc);
        if !fixed_term.is_finite() {
            return Err("fixed-effect prior".into());
        }
        let (kernel, error_term) = self.error_term(&unc);
        let kernel = kernel.ok_or_else(|| {
            let (sigma, kappa, _) = self.layout.decode_error(&unc);
            format!("error model out of support (sigma = {sigma}, kappa = {kappa:?})")
        })?;
        let (l_v, l_term) = self.l_term(&unc);
        if !l_term.is_finite() {
            return Err("L_v prior".into());
        }
        let n = self.data.n_subjects();
        let mut subject_ll = Vec::with_capacity(n);
        let mut subject_re = Vec::with_capacity(n);
        for i in 0..n {
            let ll = self.subject_ll(i, &unc, &kernel);
            if !ll.is_finite() {
                let id = self
                    .data
                    .subject_ids()
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| i.to_string());
                return Err(format!("likelihood of subject `{id}` is {ll}"));
            }
            subject_ll.push(ll);
            subject_re.push(random_effects_logdensity(&unc[self.layout.v(i)], &l_v));
        }
        let mut state = QmmState {
            unc,
            kernel,
            l_v,
            subject_ll,
            subject_re,
            fixed_term,
            error_term,
            l_term,
            lp: 0.0,
        };
        state.lp = Self::total(&state);
        if !state.lp.is_finite() {
            return Err(format!("log-posterior is {}", state.lp));
        }
        Ok(state)
    }

    fn new_pending(&self) -> QmmPending {
        let n = self.data.n_subjects();
        QmmPending {
            unc: Vec::new(),
            dirty: Vec::new(),
            kernel: None,
            l_v: None,
            subject_ll: vec![0.0; n],
            subject_re: vec![0.0; n],
            term: 0.0,
            single_ll: 0.0,
            single_re: 0.0,
        }
    }

    fn unconstrained<'s>(&self, state: &'s QmmState) -> &'s [f64] {
        &state.unc
    }

    fn log_density(&self, state: &QmmState) -> f64 {
        state.lp
    }

    fn block_position(&self, state: &QmmState, block: usize, out: &mut [f64]) {
        out.copy_from_slice(&state.unc[self.block_range(self.kinds[block])]);
    }

    fn propose(
        &self,
        state: &QmmState,
        block: usize,
        delta: &[f64],
        pending: &mut QmmPending,
    ) -> f64 {
        self.sync_pending(state, pending);
        let kind = self.kinds[block];
        let range = self.block_range(kind);
        for (k, d) in range.clone().zip(delta) {
            pending.unc[k] += d;
        }
        pending.dirty.push(range);
        match kind {
            BlockKind::Subject(i) => {
                let ll = self.subject_ll(i, &pending.unc, &state.kernel);
                if ll == f64::NEG_INFINITY {
                    return ll;
                }
                let re = random_effects_logdensity(&pending.unc[self.layout.v(i)], &state.l_v);
                pending.single_ll = ll;
                pending.single_re = re;
                (ll - state.subject_ll[i]) + (re - state.subject_re[i])
            }
            BlockKind::Fixed => {
                pending.term = self.fixed_term(&pending.unc);
                let d_ll = self.all_subjects_ll(state, pending, &state.kernel);
                d_ll + (pending.term - state.fixed_term)
            }
            BlockKind::Error => {
                let (kernel, term) = self.error_term(&pending.unc);
                let Some(kernel) = kernel else {
                    return f64::NEG_INFINITY;
                };
                pending.term = term;
                pending.kernel = Some(kernel);
                let d_ll = self.all_subjects_ll(state, pending, &kernel);
                d_ll + (term - state.error_term)
            }
            BlockKind::PrecisionFactor => {
                let (l_v, term) = self.l_term(&pending.unc);
                if !term.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let d_re = self.all_subjects_re(state, pending, &l_v);
                pending.term = term;
                pending.l_v = Some(l_v);
                d_re + (term - state.l_term)
            }
            BlockKind::Recenter => {
                // beta moved by delta above; every v_i moves by -delta so link values stay put
                for i in 0..self.data.n_subjects() {
                    for (k, d) in self.layout.v(i).zip(delta) {
                        pending.unc[k] -= d;
                    }
                }
                pending.dirty.push(self.layout.v_all());
                pending.term = self.fixed_term(&pending.unc);
                let d_ll = self.all_subjects_ll(state, pending, &state.kernel);
                if d_ll == f64::NEG_INFINITY {
                    return d_ll;
                }
                let d_re = self.all_subjects_re(state, pending, &state.l_v);
                d_ll + d_re + (pending.term - state.fixed_term)
            }
        }
    }

    fn commit(&self, state: &mut QmmState, block: usize, pending: &mut QmmPending) {
        let kind = self.kinds[block];
        for r in &pending.dirty {
            state.unc[r.clone()].copy_from_slice(&pending.unc[r.clone()]);
        }
        pending.dirty.clear();
        match kind {
            BlockKind::Subject(i) => {
                let diff = (pending.single_ll - state.subject_ll[i])
                    + (pending.single_re - state.subject_re[i]);
                state.subject_ll[i] = pending.single_ll;
                state.subject_re[i] = pending.single_re;
                state.lp += diff;
                return;
            }
            BlockKind::Fixed => {
                state.fixed_term = pending.term;
                state.subject_ll.copy_from_slice(&pending.subject_ll);
            }
            BlockKind::Error => {
                state.error_term = pending.term;
                state.kernel = pending.kernel.take().expect("proposed kernel");
                state.subject_ll.copy_from_slice(&pending.subject_ll);
            }
            BlockKind::PrecisionFactor => {
                state.l_term = pending.term;
                state.l_v = pending.l_v.take().expect("proposed factor");
                state.subject_re.copy_from_slice(&pending.subject_re);
            }
            BlockKind::Recenter => {
                state.fixed_term = pending.term;
                state.subject_ll.copy_from_slice(&pending.subject_ll);
                state.subject_re.copy_from_slice(&pending.subject_re);
            }
        }
        state.lp = Self::total(state);
    }
}
