//! Gibbs/Metropolis-Hastings sampler for the semi-parametric GP model.
//!
//! One sweep updates, in order: β (Gibbs, h integrated out), σ² (Gibbs),
//! λ (log random-walk MH), the kernel bandwidths (ρ by log random walk, or the
//! spike-and-slab `r_j` one exposure at a time), and finally h from its full
//! conditional. Every conditional is written against a [`SketchedSubset`], so
//! a full-data fit is the `scale_c = 1` special case.

mod io;

use std::time::{Duration, Instant};

use faer::Col;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub use io::{read_draws_csv, write_draws_csv, DrawFileHeader};

use crate::data::{GammaPrior, KernelDraw, KernelMode, ModelConfig, PosteriorDraw};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelParams, SquaredDiffs, VFactor};
use crate::linalg::{col_from_slice, col_to_vec, least_squares, standard_normal_col, Cholesky};
use crate::partition::SketchedSubset;
use crate::seed::rng_from_seed;

/// Accepted / proposed counts for one MH move.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub accepted: usize,
    pub proposed: usize,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += usize::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Post burn-in acceptance rates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptanceRates {
    pub lambda: f64,
    pub rho: Option<f64>,
    pub r: Vec<f64>,
}

/// Retained draws of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// 0-based subset index, `None` for a full-data fit.
    pub subset: Option<usize>,
    pub n_sites: usize,
    pub seed: u64,
    pub draws: Vec<PosteriorDraw>,
    pub acceptance: AcceptanceRates,
    pub duration: Duration,
}

/// Gram matrix and `V` factorization for the current `(λ, kernel)` pair.
#[derive(Debug, Clone)]
pub struct FactorCache {
    pub params: KernelParams,
    pub gram: GramMatrix,
    pub v: VFactor,
    gram_chol: Option<Cholesky>,
}

impl FactorCache {
    pub fn new(data: &SketchedSubset, params: KernelParams, lambda: f64, jitter: f64) -> Result<Self> {
        let gram = crate::kernel::gram(data.z_sub.as_ref(), &params, jitter)?;
        let v = VFactor::new(&gram, lambda, data.scale_c)?;
        Ok(Self {
            params,
            gram,
            v,
            gram_chol: None,
        })
    }

    fn gram_factor(&mut self) -> Result<&Cholesky> {
        if self.gram_chol.is_none() {
            self.gram_chol = Some(Cholesky::with_jitter(self.gram.m.as_ref(), 0.0)?);
        }
        Ok(self.gram_chol.as_ref().expect("factor was just computed"))
    }
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub draw: PosteriorDraw,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
    pub accept_lambda: Counter,
    pub accept_rho: Counter,
    pub accept_r: Vec<Counter>,
    pub log_step_lambda: f64,
    pub log_step_rho: f64,
    pub log_step_r: Vec<f64>,
    pub cache: FactorCache,
    diffs: SquaredDiffs,
    mode: KernelMode,
    inclusion: Vec<f64>,
}

impl ChainState {
    pub fn new(data: &SketchedSubset, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (n, p, q) = (data.n_k(), data.p(), data.q());
        if n < 2 {
            return Err(Error::InvalidData(format!("a chain needs at least 2 sites, got {n}")));
        }
        let mut rng = rng_from_seed(seed);
        let inclusion = cfg.inclusion_probs(q)?;

        let kernel = match cfg.kernel {
            KernelMode::Isotropic { .. } => KernelDraw::Isotropic {
                rho: cfg.init.rho.unwrap_or_else(|| cfg.rho_prior.mean()),
            },
            KernelMode::Ard => match &cfg.init.r {
                Some(r) => {
                    if r.len() != q || r.iter().any(|&v| !(v >= 0.0)) {
                        return Err(Error::Config("initial r must have q nonnegative entries".into()));
                    }
                    KernelDraw::Ard {
                        r: r.clone(),
                        eta: r.iter().map(|&v| v > 0.0).collect(),
                    }
                }
                None => {
                    let eta: Vec<bool> = inclusion.iter().map(|&pj| rng.random::<f64>() < pj).collect();
                    let r = eta.iter().map(|&e| if e { cfg.slab.mean() } else { 0.0 }).collect();
                    KernelDraw::Ard { r, eta }
                }
            },
        };

        let beta = match &cfg.init.beta {
            Some(b) if b.len() == p => col_from_slice(b),
            Some(_) => return Err(Error::Config("initial beta has the wrong length".into())),
            None => least_squares(data.x_t.as_ref(), data.y_t.as_ref())
                .ok_or_else(|| Error::RankDeficient("initial least-squares fit".into()))?,
        };
        let sigma2 = match cfg.init.sigma2 {
            Some(s) => s,
            None => {
                let resid = &data.y_t - &data.x_t * &beta;
                let dof = n.saturating_sub(p).max(1) as f64;
                (resid.squared_norm_l2() / dof / data.scale_c).max(1e-10)
            }
        };
        let lambda = cfg.init.lambda.unwrap_or(1.0);
        if !(sigma2 > 0.0 && lambda > 0.0) {
            return Err(Error::Config("initial sigma2 and lambda must be positive".into()));
        }

        let params = KernelParams::from_draw(&kernel, &cfg.kernel, q);
        let cache = FactorCache::new(data, params, lambda, cfg.jitter)?;
        let diffs = SquaredDiffs::new(data.z_sub.as_ref(), cfg.kernel.is_ard());
        let log_step = cfg.initial_step.ln();
        Ok(Self {
            draw: PosteriorDraw {
                beta: col_to_vec(beta.as_ref()),
                sigma2,
                lambda,
                kernel,
                h: vec![0.0; n],
            },
            rng,
            iteration: 0,
            accept_lambda: Counter::default(),
            accept_rho: Counter::default(),
            accept_r: vec![Counter::default(); q],
            log_step_lambda: log_step,
            log_step_rho: log_step,
            log_step_r: vec![log_step; q],
            cache,
            diffs,
            mode: cfg.kernel,
            inclusion,
        })
    }

    fn kernel_params(&self, kernel: &KernelDraw) -> KernelParams {
        KernelParams::from_draw(kernel, &self.mode, self.inclusion.len())
    }

    /// Reset the acceptance counters (end of burn-in).
    fn reset_counters(&mut self) {
        self.accept_lambda = Counter::default();
        self.accept_rho = Counter::default();
        self.accept_r.iter_mut().for_each(|c| *c = Counter::default());
    }
}

/// `Ỹ − X̃β`.
pub fn residual(data: &SketchedSubset, beta: &[f64]) -> Col<f64> {
    if beta.is_empty() {
        return data.y_t.clone();
    }
    &data.y_t - &data.x_t * col_from_slice(beta)
}

/// `WSS = (Ỹ − X̃β)ᵀ V⁻¹ (Ỹ − X̃β)`.
pub fn weighted_ss(data: &SketchedSubset, v: &VFactor, beta: &[f64]) -> f64 {
    v.quad_form(residual(data, beta).as_ref())
}

/// Mean `V_β X̃ᵀV⁻¹Ỹ` and Cholesky factor of `V_β⁻¹ = X̃ᵀV⁻¹X̃`.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    pub mean: Col<f64>,
    pub precision: Cholesky,
}

pub fn beta_conditional(data: &SketchedSubset, v: &VFactor) -> Result<BetaConditional> {
    let w = v.solve_mat(data.x_t.as_ref());
    let a = data.x_t.transpose() * &w;
    let b = w.transpose() * &data.y_t;
    let precision = Cholesky::new(a.as_ref())
        .map_err(|_| Error::RankDeficient(format!("{}x{} cross-product is not positive definite", a.nrows(), a.ncols())))?;
    let l = precision.lower();
    let max_diag = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-10 * max_diag) {
        return Err(Error::RankDeficient(format!(
            "pivot {min_pivot:e} against diagonal {max_diag:e}"
        )));
    }
    let mean = precision.solve(b.as_ref());
    Ok(BetaConditional { mean, precision })
}

/// Exact draw from `N(V_β X̃ᵀV⁻¹Ỹ, σ² V_β)`.
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, data: &SketchedSubset, v: &VFactor, sigma2: f64) -> Result<Vec<f64>> {
    let cond = beta_conditional(data, v)?;
    let xi = standard_normal_col(rng, data.p());
    let noise = cond.precision.color_inverse(xi.as_ref());
    let sd = sigma2.sqrt();
    Ok((0..data.p()).map(|j| cond.mean[j] + sd * noise[j]).collect())
}

/// Shape and rate of the Gamma conditional for the error precision.
pub fn sigma2_gamma_params(wss: f64, n: usize, prior: &GammaPrior) -> (f64, f64) {
    (prior.shape + n as f64 / 2.0, prior.rate + 0.5 * wss)
}

/// Draw σ²: the precision `1/σ²` is Gamma(α + n/2, b + WSS/2). With
/// `literal_gamma` the Gamma draw is returned as σ² itself.
pub fn sample_sigma2<R: Rng + ?Sized>(rng: &mut R, wss: f64, n: usize, prior: &GammaPrior, literal_gamma: bool) -> Result<f64> {
    if !(wss.is_finite() && wss >= 0.0) {
        return Err(Error::Numerical(format!("weighted sum of squares is {wss}")));
    }
    let (shape, rate) = sigma2_gamma_params(wss, n, prior);
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, {rate}): {e}")))?
        .sample(rng);
    let sigma2 = if literal_gamma { g } else { 1.0 / g };
    Ok(sigma2.clamp(1e-300, 1e300))
}

/// Exact draw of h from `N(λK̃Ṽ⁻¹(Ỹ−X̃β), ·)` under the subset model, returned
/// on the unscaled site scale (`h = h̃ / √c`).
///
/// Uses the conditioning identity `h̃ = f + λK̃Ṽ⁻¹(Ỹ − X̃β − f − ε)` with
/// `f ~ N(0, σ²λK̃)` and `ε ~ N(0, σ²c I)`, which needs only the factors of
/// `K` and `V`.
pub fn sample_h<R: Rng + ?Sized>(
    rng: &mut R,
    data: &SketchedSubset,
    cache: &mut FactorCache,
    beta: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    let n = data.n_k();
    let c = data.scale_c;
    let lambda = cache.v.lambda();
    let xi_f = standard_normal_col(rng, n);
    let xi_e = standard_normal_col(rng, n);
    let sd = sigma2.sqrt();
    let mut f = cache.gram_factor()?.color(xi_f.as_ref());
    f *= faer::Scale(sd * (lambda * c).sqrt());
    let eps = xi_e * faer::Scale(sd * c.sqrt());
    let w = residual(data, beta) - &f - eps;
    let kw = cache.gram.apply(cache.v.solve(w.as_ref()).as_ref());
    let root = c.sqrt();
    let h: Vec<f64> = (0..n).map(|i| (f[i] + lambda * c * kw[i]) / root).collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite h draw".into()));
    }
    Ok(h)
}

/// Log of `|V|^{-1/2} exp{-WSS/(2σ²)}`, the h-marginal likelihood shared by
/// the λ and kernel updates.
pub fn log_marginal(data: &SketchedSubset, v: &VFactor, beta: &[f64], sigma2: f64) -> f64 {
    -0.5 * v.logdet() - weighted_ss(data, v, beta) / (2.0 * sigma2)
}

/// Unnormalized log density of λ given everything else, plus the factor it
/// was evaluated with. `None` when `V(λ)` cannot be formed or the value is
/// not finite.
pub fn lambda_log_target(
    data: &SketchedSubset,
    gram: &GramMatrix,
    lambda: f64,
    beta: &[f64],
    sigma2: f64,
    prior: &GammaPrior,
) -> Option<(f64, VFactor)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return None;
    }
    let v = VFactor::new(gram, lambda, data.scale_c).ok()?;
    let value = log_marginal(data, &v, beta, sigma2) + prior.log_kernel(lambda);
    value.is_finite().then_some((value, v))
}

fn accept<R: Rng + ?Sized>(rng: &mut R, log_alpha: f64) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_alpha
}

/// One random-walk MH step on `log λ`.
pub fn mh_lambda(state: &mut ChainState, data: &SketchedSubset, cfg: &ModelConfig) -> Result<(f64, bool)> {
    let current = state.draw.lambda;
    let step = state.log_step_lambda.exp();
    let xi: f64 = state.rng.sample(rand_distr::StandardNormal);
    let proposal = current * (step * xi).exp();
    let cur_val = log_marginal(data, &state.cache.v, &state.draw.beta, state.draw.sigma2)
        + cfg.lambda_prior.log_kernel(current);
    let prop = lambda_log_target(data, &state.cache.gram, proposal, &state.draw.beta, state.draw.sigma2, &cfg.lambda_prior);
    let accepted = match prop {
        Some((prop_val, v)) => {
            let log_alpha = prop_val - cur_val + proposal.ln() - current.ln();
            if accept(&mut state.rng, log_alpha) {
                state.cache.v = v;
                state.draw.lambda = proposal;
                true
            } else {
                false
            }
        }
        None => {
            // keep the uniform stream aligned with the finite case
            let _: f64 = state.rng.random();
            false
        }
    };
    state.accept_lambda.record(accepted);
    Ok((state.draw.lambda, accepted))
}

/// Evaluate a kernel proposal: returns the candidate cache and its log marginal.
fn kernel_candidate(
    state: &ChainState,
    data: &SketchedSubset,
    cfg: &ModelConfig,
    kernel: &KernelDraw,
) -> Option<(FactorCache, f64)> {
    let params = state.kernel_params(kernel);
    let gram = state.diffs.gram(&params, cfg.jitter).ok()?;
    let v = VFactor::new(&gram, state.draw.lambda, data.scale_c).ok()?;
    let value = log_marginal(data, &v, &state.draw.beta, state.draw.sigma2);
    value.is_finite().then_some((
        FactorCache {
            params,
            gram,
            v,
            gram_chol: None,
        },
        value,
    ))
}

/// One random-walk MH step on `log ρ` (isotropic kernel).
pub fn mh_rho(state: &mut ChainState, data: &SketchedSubset, cfg: &ModelConfig) -> Result<(f64, bool)> {
    let KernelDraw::Isotropic { rho } = state.draw.kernel else {
        return Err(Error::ModeError);
    };
    let step = state.log_step_rho.exp();
    let xi: f64 = state.rng.sample(rand_distr::StandardNormal);
    let proposal = rho * (step * xi).exp();
    let cur_val = log_marginal(data, &state.cache.v, &state.draw.beta, state.draw.sigma2);
    let kernel = KernelDraw::Isotropic { rho: proposal };
    let candidate = if proposal > 0.0 && proposal.is_finite() {
        kernel_candidate(state, data, cfg, &kernel)
    } else {
        None
    };
    let u: f64 = state.rng.random();
    let accepted = match candidate {
        Some((cache, val)) => {
            let log_alpha = val - cur_val + cfg.rho_prior.log_kernel(proposal) - cfg.rho_prior.log_kernel(rho)
                + proposal.ln()
                - rho.ln();
            if !log_alpha.is_nan() && u.ln() < log_alpha {
                state.cache = cache;
                state.draw.kernel = kernel;
                true
            } else {
                false
            }
        }
        None => false,
    };
    state.accept_rho.record(accepted);
    Ok((proposal, accepted))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RMove {
    SwitchOn,
    SwitchOff,
    Walk,
}

/// Spike-and-slab update for exposure `j`: toggle the indicator (a switched-on
/// component draws its bandwidth from the slab) or, when included, random-walk
/// `log r_j`. Returns `(r_j, η_j, accepted)`.
pub fn mh_r(state: &mut ChainState, data: &SketchedSubset, cfg: &ModelConfig, j: usize) -> Result<(f64, bool, bool)> {
    let KernelDraw::Ard { r, eta } = &state.draw.kernel else {
        return Err(Error::ModeError);
    };
    let (r, eta) = (r.clone(), eta.clone());
    let pi = state.inclusion[j];
    if pi == 0.0 && !eta[j] {
        return Ok((0.0, false, false));
    }
    let toggle_prob_on = if pi < 1.0 { 0.5 } else { 0.0 };
    let mv = if !eta[j] {
        RMove::SwitchOn
    } else if state.rng.random::<f64>() < toggle_prob_on {
        RMove::SwitchOff
    } else {
        RMove::Walk
    };

    let (new_rj, log_prior_and_proposal) = match mv {
        RMove::SwitchOn => {
            let slab = Gamma::new(cfg.slab.shape, 1.0 / cfg.slab.rate)
                .map_err(|e| Error::Numerical(format!("slab distribution: {e}")))?;
            let draw = slab.sample(&mut state.rng).max(f64::MIN_POSITIVE);
            // slab density cancels against the proposal density
            let reverse = if pi < 1.0 { 0.5f64 } else { 1.0 };
            (draw, pi.ln() - (1.0 - pi).ln() + reverse.ln())
        }
        RMove::SwitchOff => (0.0, (1.0 - pi).ln() - pi.ln() - 0.5f64.ln()),
        RMove::Walk => {
            let step = state.log_step_r[j].exp();
            let xi: f64 = state.rng.sample(rand_distr::StandardNormal);
            let prop = r[j] * (step * xi).exp();
            (
                prop,
                cfg.slab.log_kernel(prop) - cfg.slab.log_kernel(r[j]) + prop.ln() - r[j].ln(),
            )
        }
    };

    let mut new_r = r.clone();
    let mut new_eta = eta.clone();
    new_r[j] = new_rj;
    new_eta[j] = mv != RMove::SwitchOff;
    let kernel = KernelDraw::Ard { r: new_r, eta: new_eta };
    let cur_val = log_marginal(data, &state.cache.v, &state.draw.beta, state.draw.sigma2);
    let candidate = if new_rj.is_finite() && (mv == RMove::SwitchOff || new_rj > 0.0) {
        kernel_candidate(state, data, cfg, &kernel)
    } else {
        None
    };
    let u: f64 = state.rng.random();
    let accepted = match candidate {
        Some((cache, val)) => {
            let log_alpha = val - cur_val + log_prior_and_proposal;
            if !log_alpha.is_nan() && u.ln() < log_alpha {
                state.cache = cache;
                state.draw.kernel = kernel;
                true
            } else {
                false
            }
        }
        None => false,
    };
    if mv == RMove::Walk && state.iteration < cfg.burnin {
        adapt(&mut state.log_step_r[j], accepted, cfg.target_acceptance, state.iteration);
    }
    state.accept_r[j].record(accepted);
    let KernelDraw::Ard { r, eta } = &state.draw.kernel else {
        unreachable!()
    };
    Ok((r[j], eta[j], accepted))
}

/// Robbins-Monro adjustment of a log step size toward the target acceptance.
fn adapt(log_step: &mut f64, accepted: bool, target: f64, iteration: usize) {
    let gain = (iteration as f64 + 1.0).powf(-0.6);
    *log_step += gain * (f64::from(u8::from(accepted)) - target);
    *log_step = log_step.clamp(-12.0, 3.0);
}

/// One full sweep β → σ² → λ → kernel → h.
pub fn sweep(state: &mut ChainState, data: &SketchedSubset, cfg: &ModelConfig) -> Result<()> {
    let tuning = state.iteration < cfg.burnin;
    if cfg.updates.beta && data.p() > 0 {
        state.draw.beta = sample_beta(&mut state.rng, data, &state.cache.v, state.draw.sigma2)?;
    }
    if cfg.updates.sigma2 {
        let wss = weighted_ss(data, &state.cache.v, &state.draw.beta);
        state.draw.sigma2 = sample_sigma2(&mut state.rng, wss, data.n_k(), &cfg.sigma_prior, cfg.sigma2_literal_gamma)?;
    }
    if cfg.updates.lambda {
        let (_, acc) = mh_lambda(state, data, cfg)?;
        if tuning {
            adapt(&mut state.log_step_lambda, acc, cfg.target_acceptance, state.iteration);
        }
    }
    if cfg.updates.kernel {
        match cfg.kernel {
            KernelMode::Isotropic { .. } => {
                let (_, acc) = mh_rho(state, data, cfg)?;
                if tuning {
                    adapt(&mut state.log_step_rho, acc, cfg.target_acceptance, state.iteration);
                }
            }
            KernelMode::Ard => {
                for j in 0..data.q() {
                    mh_r(state, data, cfg, j)?;
                }
            }
        }
    }
    if cfg.updates.h {
        state.draw.h = sample_h(&mut state.rng, data, &mut state.cache, &state.draw.beta, state.draw.sigma2)?;
    }
    state.iteration += 1;
    Ok(())
}

/// Run `cfg.iters` sweeps and keep every `thin`-th draw after burn-in.
pub fn run_chain(data: &SketchedSubset, cfg: &ModelConfig, seed: u64) -> Result<ChainOutput> {
    let start = Instant::now();
    let mut state = ChainState::new(data, cfg, seed)?;
    let mut draws = Vec::with_capacity(cfg.retained());
    for it in 0..cfg.iters {
        if it == cfg.burnin {
            state.reset_counters();
        }
        sweep(&mut state, data, cfg).map_err(|e| e.at_iteration(it + 1))?;
        if it >= cfg.burnin && (it + 1 - cfg.burnin) % cfg.thin == 0 {
            draws.push(state.draw.clone());
        }
    }
    let acceptance = AcceptanceRates {
        lambda: state.accept_lambda.rate(),
        rho: matches!(cfg.kernel, KernelMode::Isotropic { .. }).then(|| state.accept_rho.rate()),
        r: if cfg.kernel.is_ard() {
            state.accept_r.iter().map(Counter::rate).collect()
        } else {
            Vec::new()
        },
    };
    Ok(ChainOutput {
        subset: data.subset,
        n_sites: data.n_k(),
        seed,
        draws,
        acceptance,
        duration: start.elapsed(),
    })
}

/// Mean of `λK̃Ṽ⁻¹(Ỹ − X̃β)` mapped back to the site scale; the centre of the
/// h conditional.
pub fn h_conditional_mean(data: &SketchedSubset, cache: &FactorCache, beta: &[f64]) -> Vec<f64> {
    let e = residual(data, beta);
    let kw = cache.gram.apply(cache.v.solve(e.as_ref()).as_ref());
    let scale = cache.v.lambda() * data.scale_c.sqrt();
    (0..data.n_k()).map(|i| scale * kw[i]).collect()
}

#[cfg(test)]
mod tests;
