//! Hybrid Monte Carlo over network weights: leapfrog dynamics with a
//! Metropolis correction, burn-in-only step-size adaptation, and finite-sum
//! predictive estimates with error bars.

use crate::error::{Error, Result};
use crate::net::{self, NetworkConfig};
use crate::objective::{DataObjective, NetworkObjective, PriorSpec, RegularizedObjective};
use crate::seeding::hash_f64_u64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

/// Potential energy `U(w)` and its gradient. `None` signals a non-finite
/// value, which the sampler treats as a diverged trajectory (reject).
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    fn energy(&self, w: &[f64]) -> Option<f64>;
    fn grad(&self, w: &[f64]) -> Option<Vec<f64>>;
}

/// The regularized network error as a potential; sampling targets
/// `exp(-S(w))` with the prior's alphas held fixed.
pub struct RegularizedPotential<'a, O: DataObjective + ?Sized> {
    obj: RegularizedObjective<'a, O>,
}

impl<'a, O: DataObjective + ?Sized> RegularizedPotential<'a, O> {
    pub fn new(data: &'a O, prior: &'a PriorSpec) -> Result<Self> {
        Ok(Self {
            obj: RegularizedObjective::new(data, prior)?,
        })
    }
}

impl<O: DataObjective + ?Sized> Potential for RegularizedPotential<'_, O> {
    fn dim(&self) -> usize {
        self.obj.data.dim()
    }

    fn energy(&self, w: &[f64]) -> Option<f64> {
        match self.obj.total(w) {
            Ok(v) if v.is_finite() => Some(v),
            _ => None,
        }
    }

    fn grad(&self, w: &[f64]) -> Option<Vec<f64>> {
        match self.obj.grad(w) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HmcSettings {
    /// Initial step size; adapted during burn-in, frozen afterwards.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub thin: usize,
    /// Running-acceptance window targeted by burn-in adaptation.
    pub accept_low: f64,
    pub accept_high: f64,
    pub seed: u64,
}

impl Default for HmcSettings {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            leapfrog_steps: 100,
            burn_in: 5000,
            retained: 5000,
            thin: 1,
            accept_low: 0.6,
            accept_high: 0.9,
            seed: 0,
        }
    }
}

impl HmcSettings {
    fn validate(&self) -> Result<()> {
        if self.step_size < 0.0 || !self.step_size.is_finite() {
            return Err(Error::InvalidInput("step size must be finite and >= 0".into()));
        }
        if self.leapfrog_steps < 1 {
            return Err(Error::InvalidInput("need at least one leapfrog step".into()));
        }
        if self.retained < 1 {
            return Err(Error::InvalidInput("need at least one retained sample".into()));
        }
        if self.thin < 1 {
            return Err(Error::InvalidInput("thinning must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per retained sample: the total energy at the accept decision, whether
/// the proposal was accepted, and the step size in force.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub energy: f64,
    pub accepted: bool,
    pub step_size: f64,
}

/// Retained draws from one chain plus its bookkeeping.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub initial_step_size: f64,
    pub final_step_size: f64,
    /// Acceptance rate over the retained phase.
    pub acceptance_rate: f64,
    /// Set when retained-phase acceptance fell below 0.05.
    pub low_acceptance_warning: bool,
    /// Prior alphas the potential was built with (empty for raw potentials).
    pub alphas: Vec<f64>,
    /// Content hash of the training data (0 for raw potentials).
    pub data_hash: u64,
    /// RNG stream position after the last step, for resumability.
    pub rng_word_pos: u128,
}

impl Chain {
    pub fn n_params(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

/// Standard leapfrog: half-step momentum, `l` position/momentum steps,
/// closing half-step. Returns `None` when the trajectory leaves the finite
/// domain. Reversible: integrating `(w', -p')` returns `(w, -p)` up to
/// round-off.
pub fn leapfrog<F>(
    w: &[f64],
    p: &[f64],
    eps: f64,
    l: usize,
    grad_u: F,
) -> Option<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut w = w.to_vec();
    let mut p = p.to_vec();
    let mut g = grad_u(&w)?;
    for i in 0..p.len() {
        p[i] -= 0.5 * eps * g[i];
    }
    for step in 0..l {
        for i in 0..w.len() {
            w[i] += eps * p[i];
            if !w[i].is_finite() {
                return None;
            }
        }
        g = grad_u(&w)?;
        let half = if step + 1 == l { 0.5 } else { 1.0 };
        for i in 0..p.len() {
            p[i] -= half * eps * g[i];
        }
    }
    Some((w, p))
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Current position and its potential energy.
#[derive(Debug, Clone)]
pub struct HmcState {
    pub position: Vec<f64>,
    pub potential: f64,
}

/// One HMC transition: unit-mass Gaussian momentum, leapfrog proposal,
/// Metropolis accept with probability `min(1, exp(H_old - H_new))`.
/// Diverged trajectories count as rejections. Returns the new state, the
/// accept flag, and the total energy at the decision.
pub fn hmc_step<P: Potential + ?Sized, R: Rng + ?Sized>(
    state: &HmcState,
    potential: &P,
    eps: f64,
    leapfrog_steps: usize,
    rng: &mut R,
) -> (HmcState, bool, f64) {
    let dim = state.position.len();
    let p0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let h_old = state.potential + kinetic(&p0);
    // The uniform is always drawn so the stream position is independent of
    // the trajectory outcome.
    let u: f64 = rng.random();

    let proposal = leapfrog(&state.position, &p0, eps, leapfrog_steps, |w| {
        potential.grad(w)
    })
    .and_then(|(w_new, p_new)| potential.energy(&w_new).map(|u_new| (w_new, p_new, u_new)));

    match proposal {
        Some((w_new, p_new, u_new)) => {
            let h_new = u_new + kinetic(&p_new);
            if u < (h_old - h_new).exp() {
                (
                    HmcState {
                        position: w_new,
                        potential: u_new,
                    },
                    true,
                    h_new,
                )
            } else {
                (state.clone(), false, h_old)
            }
        }
        None => (state.clone(), false, h_old),
    }
}

const ADAPT_WINDOW: usize = 50;
const LOW_ACCEPTANCE: f64 = 0.05;

/// Run one chain against an arbitrary potential. The step size adapts only
/// during burn-in (x1.1 when the last window's acceptance exceeds the
/// target band, x0.9 when it falls below) and is frozen for the retained
/// phase. Fully reproducible from the seed.
pub fn run_chain_potential<P: Potential + ?Sized>(
    potential: &P,
    init: &[f64],
    settings: &HmcSettings,
) -> Result<Chain> {
    settings.validate()?;
    if init.len() != potential.dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial point has {} coordinates, potential expects {}",
            init.len(),
            potential.dim()
        )));
    }
    let u0 = potential
        .energy(init)
        .ok_or_else(|| Error::InvalidInput("potential not finite at the initial point".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut state = HmcState {
        position: init.to_vec(),
        potential: u0,
    };
    let mut eps = settings.step_size;

    let mut window_accepts = 0usize;
    for step in 0..settings.burn_in {
        let (next, accepted, _) = hmc_step(&state, potential, eps, settings.leapfrog_steps, &mut rng);
        state = next;
        if accepted {
            window_accepts += 1;
        }
        if (step + 1) % ADAPT_WINDOW == 0 {
            let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
            if rate > settings.accept_high {
                eps *= 1.1;
            } else if rate < settings.accept_low {
                eps *= 0.9;
            }
            window_accepts = 0;
        }
    }

    let mut samples = Vec::with_capacity(settings.retained);
    let mut steps = Vec::with_capacity(settings.retained);
    let mut accepted_count = 0usize;
    let mut total_steps = 0usize;
    for _ in 0..settings.retained {
        let mut record = StepRecord {
            energy: state.potential,
            accepted: false,
            step_size: eps,
        };
        for _ in 0..settings.thin {
            let (next, accepted, energy) =
                hmc_step(&state, potential, eps, settings.leapfrog_steps, &mut rng);
            state = next;
            total_steps += 1;
            if accepted {
                accepted_count += 1;
            }
            record = StepRecord {
                energy,
                accepted,
                step_size: eps,
            };
        }
        samples.push(state.position.clone());
        steps.push(record);
    }

    let acceptance_rate = accepted_count as f64 / total_steps.max(1) as f64;
    Ok(Chain {
        samples,
        steps,
        burn_in: settings.burn_in,
        thin: settings.thin,
        seed: settings.seed,
        initial_step_size: settings.step_size,
        final_step_size: eps,
        acceptance_rate,
        low_acceptance_warning: acceptance_rate < LOW_ACCEPTANCE,
        alphas: Vec::new(),
        data_hash: 0,
        rng_word_pos: rng.get_word_pos(),
    })
}

/// Sample network weights from `exp(-S(w))` on a dataset with the prior's
/// alphas held fixed.
pub fn run_chain(
    cfg: &NetworkConfig,
    x: &Array2<f64>,
    t: &[u64],
    prior: &PriorSpec,
    init: &[f64],
    settings: &HmcSettings,
) -> Result<Chain> {
    let data = NetworkObjective::new(*cfg, x, t)?;
    let potential = RegularizedPotential::new(&data, prior)?;
    let mut chain = run_chain_potential(&potential, init, settings)?;
    chain.alphas = prior.alphas.clone();
    let flat = x.as_standard_layout();
    chain.data_hash = hash_f64_u64(flat.as_slice().expect("standard layout"), t);
    Ok(chain)
}

/// Poisson pmf value, computed in log space.
pub fn poisson_pmf(t: u64, lambda: f64) -> f64 {
    (t as f64 * lambda.ln() - lambda - ln_gamma(t as f64 + 1.0)).exp()
}

/// Monte Carlo pmf estimate with its finite-sum standard error.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PmfEstimate {
    pub t_value: u64,
    pub mean: f64,
    /// `sqrt((<p^2> - <p>^2) / N)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PredictiveRow {
    pub mean_rate: f64,
    /// Sample standard deviation of the rate over retained draws, the
    /// one-standard-deviation error-bar half-width.
    pub sd_rate: f64,
    pub pmf: Vec<PmfEstimate>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PredictiveSummary {
    pub rows: Vec<PredictiveRow>,
    pub n_samples: usize,
}

/// Pool the retained samples of the given chains and summarize the
/// predictive distribution at each query row: mean rate, rate standard
/// deviation, and optionally the averaged Poisson pmf at requested counts.
pub fn predictive_summary(
    cfg: &NetworkConfig,
    chains: &[Chain],
    x_star: &Array2<f64>,
    t_queries: &[u64],
) -> Result<PredictiveSummary> {
    let n_samples: usize = chains.iter().map(|c| c.samples.len()).sum();
    if n_samples == 0 {
        return Err(Error::EmptyChain);
    }
    let n_rows = x_star.nrows();
    let mut sum = vec![0.0; n_rows];
    let mut sumsq = vec![0.0; n_rows];
    let mut pmf_sum = vec![vec![0.0; t_queries.len()]; n_rows];
    let mut pmf_sumsq = vec![vec![0.0; t_queries.len()]; n_rows];

    for chain in chains {
        for w in &chain.samples {
            let rates = net::forward_batch(cfg, w, x_star)?;
            for (r, &rate) in rates.iter().enumerate() {
                sum[r] += rate;
                sumsq[r] += rate * rate;
                for (q, &tq) in t_queries.iter().enumerate() {
                    let p = poisson_pmf(tq, rate);
                    pmf_sum[r][q] += p;
                    pmf_sumsq[r][q] += p * p;
                }
            }
        }
    }

    let n = n_samples as f64;
    let rows = (0..n_rows)
        .map(|r| {
            let mean = sum[r] / n;
            let sd = if n_samples > 1 {
                ((sumsq[r] - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
            } else {
                0.0
            };
            let pmf = t_queries
                .iter()
                .enumerate()
                .map(|(q, &tq)| {
                    let p_mean = pmf_sum[r][q] / n;
                    let var = (pmf_sumsq[r][q] / n - p_mean * p_mean).max(0.0);
                    PmfEstimate {
                        t_value: tq,
                        mean: p_mean,
                        se: (var / n).sqrt(),
                    }
                })
                .collect();
            PredictiveRow {
                mean_rate: mean,
                sd_rate: sd,
                pmf,
            }
        })
        .collect();

    Ok(PredictiveSummary { rows, n_samples })
}
