//! Block coordinate descent with proximal-gradient updates, extrapolation,
//! and the optional neighboring-regularization pass.
//!
//! Each round updates core, O, D, T in order through a prox step at a linear
//! extrapolated point, with a sufficient-decrease backtracking line search on
//! the step size. A per-block restart discards extrapolation whenever it
//! would increase that block's objective, and a round-level check skips the
//! NR pass when it would increase the full objective, so the recorded
//! objective history is non-increasing.

use crate::error::{Error, Result};
use crate::ingest::{ContextMatrix, NeighborGraph};
use crate::model::{
    block_gradient, block_smooth_objective, objective, BlockId, FactorModel,
    Hyperparameters, SampleMask,
};
use crate::nr::{build_kernel_cache, median_sigma, nr_update, NrConfig, PairwiseKernelCache, Side};
use crate::tensor::{Matrix, Mode, Tensor3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const TAU_FLOOR: f64 = 1e-8;
const EXTRAPOLATION_CAP: f64 = 0.9999;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub model: FactorModel,
    /// Objective value before the first round followed by one entry per
    /// accepted round; non-increasing.
    pub objective_history: Vec<f64>,
    /// Rounds (1-based) where the raw NR update alone would have increased
    /// the objective and was therefore skipped.
    pub nr_skipped_rounds: Vec<usize>,
}

/// Closed-form prox update max{0, g~ - grad/tau - lambda/tau}, elementwise.
pub fn pg_step(extrapolated: &[f64], gradient: &[f64], tau: f64, lambda: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidInput("lambda must be nonnegative".into()));
    }
    Ok(extrapolated
        .iter()
        .zip(gradient)
        .map(|(g, grad)| (g - grad / tau - lambda / tau).max(0.0))
        .collect())
}

/// Step-size estimate for one block from the spectral norms of the Gram
/// system. For O and D the quartic context term is only locally Lipschitz,
/// so a local curvature bound is added and the solver backtracks on top of
/// the estimate.
pub fn lipschitz_estimate(
    block: BlockId,
    model: &FactorModel,
    h: &Hyperparameters,
    w: &ContextMatrix,
) -> f64 {
    let gram_o = model.o.gram();
    let gram_d = model.d.gram();
    let gram_t = model.t.gram();
    let value = match block {
        BlockId::Core => {
            gram_o.sym_spectral_norm() * gram_d.sym_spectral_norm() * gram_t.sym_spectral_norm()
        }
        BlockId::O => {
            let sys = model
                .core
                .mode_product(&gram_d, Mode::Two)
                .and_then(|t| t.mode_product(&gram_t, Mode::Three))
                .and_then(|t| {
                    t.matricize(Mode::One)
                        .matmul(&model.core.matricize(Mode::One).transpose())
                })
                .expect("gram dims consistent");
            let mut tau = sys.sym_spectral_norm();
            if h.context_o > 0.0 {
                let ctx_norm = crate::model::context_residual(w, &model.o)
                    .map(|m| m.frobenius_norm())
                    .unwrap_or(0.0);
                tau += 4.0 * h.context_o * (2.0 * gram_o.sym_spectral_norm() + ctx_norm);
            }
            tau
        }
        BlockId::D => {
            let sys = model
                .core
                .mode_product(&gram_o, Mode::One)
                .and_then(|t| t.mode_product(&gram_t, Mode::Three))
                .and_then(|t| {
                    t.matricize(Mode::Two)
                        .matmul(&model.core.matricize(Mode::Two).transpose())
                })
                .expect("gram dims consistent");
            let mut tau = sys.sym_spectral_norm();
            if h.context_d > 0.0 {
                let ctx_norm = crate::model::context_residual(w, &model.d)
                    .map(|m| m.frobenius_norm())
                    .unwrap_or(0.0);
                tau += 4.0 * h.context_d * (2.0 * gram_d.sym_spectral_norm() + ctx_norm);
            }
            tau
        }
        BlockId::T => {
            let sys = model
                .core
                .mode_product(&gram_o, Mode::One)
                .and_then(|t| t.mode_product(&gram_d, Mode::Two))
                .and_then(|t| {
                    t.matricize(Mode::Three)
                        .matmul(&model.core.matricize(Mode::Three).transpose())
                })
                .expect("gram dims consistent");
            sys.sym_spectral_norm()
        }
    };
    value.max(TAU_FLOOR)
}

/// The accelerated-BCD extrapolation schedule: omega_s =
/// min{(t_{s-1}-1)/t_s, rho * sqrt(tau_prev/tau_curr)} with the Nesterov
/// t-sequence and rho = 0.9999. The first round returns 0.
#[derive(Debug, Clone)]
pub struct ExtrapolationSchedule {
    t_prev: f64,
    t_curr: f64,
}

impl ExtrapolationSchedule {
    pub fn new() -> Self {
        ExtrapolationSchedule {
            t_prev: 1.0,
            t_curr: 1.0,
        }
    }

    /// Advance the t-sequence at the start of round `s` (s >= 1).
    pub fn advance(&mut self) {
        self.t_prev = self.t_curr;
        self.t_curr = 0.5 * (1.0 + (1.0 + 4.0 * self.t_prev * self.t_prev).sqrt());
    }

    /// Weight for a block given its step-size history. `tau_prev` is `None`
    /// on the first round.
    pub fn weight(&self, tau_prev: Option<f64>, tau_curr: f64) -> f64 {
        let hat = (self.t_prev - 1.0) / self.t_curr;
        match tau_prev {
            None => 0.0,
            Some(tp) => hat
                .min(EXTRAPOLATION_CAP * (tp / tau_curr).sqrt())
                .clamp(0.0, EXTRAPOLATION_CAP),
        }
    }
}

impl Default for ExtrapolationSchedule {
    fn default() -> Self {
        Self::new()
    }
}

/// Random initialization with entries uniform on (0,1), rescaled so the
/// initial reconstruction's Frobenius norm matches the data tensor's.
pub fn random_init(r: &Tensor3, h: &Hyperparameters, seed: u64) -> FactorModel {
    let (m1, m2, n) = r.dims();
    let (i, j, k) = (h.dim_i, h.dim_j, h.dim_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let core = Tensor3::from_values(i, j, k, gen(i * j * k)).unwrap();
    let o = Matrix::from_values(m1, i, gen(m1 * i)).unwrap();
    let d = Matrix::from_values(m2, j, gen(m2 * j)).unwrap();
    let t = Matrix::from_values(n, k, gen(n * k)).unwrap();
    let mut model = FactorModel { core, o, d, t };
    let recon_norm = model.reconstruct().frobenius_norm();
    let r_norm = r.frobenius_norm();
    if recon_norm > 0.0 && r_norm > 0.0 {
        model.core = model.core.scale(r_norm / recon_norm);
    }
    model
}

struct NrContext<'a> {
    graph: &'a NeighborGraph,
    cfg_o: NrConfig,
    cfg_d: NrConfig,
    cache_o: PairwiseKernelCache,
    cache_d: PairwiseKernelCache,
}

/// One proximal-gradient block update with backtracking and a per-block
/// extrapolation restart. Returns the new block values.
#[allow(clippy::too_many_arguments)]
fn update_block(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &mut FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    block: BlockId,
    prev: &[f64],
    prev2: &[f64],
    omega: f64,
    tau_init: f64,
) -> Result<f64> {
    let lambda = block.l1_weight(h);

    let try_from = |model: &mut FactorModel, point: &[f64], tau0: f64| -> Result<(Vec<f64>, f64)> {
        model.block_values_mut(block).copy_from_slice(point);
        let f_point = block_smooth_objective(r, w, model, h, mask, block)?;
        let grad = block_gradient(r, w, model, h, mask, block)?;
        let mut tau = tau0;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = pg_step(point, &grad, tau, lambda)?;
            model.block_values_mut(block).copy_from_slice(&candidate);
            let f_candidate = block_smooth_objective(r, w, model, h, mask, block)?;
            if !f_candidate.is_finite() {
                return Err(Error::Solver("non-finite block objective".into()));
            }
            let linear: f64 = grad
                .iter()
                .zip(candidate.iter().zip(point))
                .map(|(g, (c, p))| g * (c - p))
                .sum();
            let dist2: f64 = candidate
                .iter()
                .zip(point)
                .map(|(c, p)| (c - p) * (c - p))
                .sum();
            if f_candidate <= f_point + linear + 0.5 * tau * dist2 + 1e-12 * f_point.abs().max(1.0) {
                return Ok((candidate, tau));
            }
            tau *= 2.0;
        }
        Err(Error::Solver("backtracking failed to find a stable step".into()))
    };

    let block_value = |model: &mut FactorModel, values: &[f64]| -> Result<f64> {
        model.block_values_mut(block).copy_from_slice(values);
        let smooth = block_smooth_objective(r, w, model, h, mask, block)?;
        let l1: f64 = values.iter().map(|v| v.abs()).sum();
        Ok(smooth + lambda * l1)
    };

    let f_prev = block_value(model, prev)?;

    if omega > 0.0 {
        let extrapolated: Vec<f64> = prev
            .iter()
            .zip(prev2)
            .map(|(p, p2)| p + omega * (p - p2))
            .collect();
        let (candidate, tau) = try_from(model, &extrapolated, tau_init)?;
        let f_candidate = block_value(model, &candidate)?;
        if f_candidate <= f_prev {
            model.block_values_mut(block).copy_from_slice(&candidate);
            return Ok(tau);
        }
        // Extrapolation overshot; restart from the previous accepted point.
    }

    let (candidate, tau) = try_from(model, prev, tau_init)?;
    let f_candidate = block_value(model, &candidate)?;
    if f_candidate <= f_prev {
        model.block_values_mut(block).copy_from_slice(&candidate);
    } else {
        // Numerical tie; keep the previous value.
        model.block_values_mut(block).copy_from_slice(prev);
    }
    Ok(tau)
}

/// Block-coordinate-descent solve of the regularized factorization.
/// `graph` is required when `h.nr_enabled` is set.
pub fn bcd_solve(
    r: &Tensor3,
    w: &ContextMatrix,
    h: &Hyperparameters,
    init: FactorModel,
    graph: Option<&NeighborGraph>,
    mask: Option<&SampleMask>,
) -> Result<SolveResult> {
    bcd_solve_blocks(r, w, h, init, graph, mask, &BlockId::all())
}

/// Same scheme restricted to a subset of blocks; blocks left out keep their
/// initial values. Used for the fixed-core CP solves.
pub(crate) fn bcd_solve_blocks(
    r: &Tensor3,
    w: &ContextMatrix,
    h: &Hyperparameters,
    init: FactorModel,
    graph: Option<&NeighborGraph>,
    mask: Option<&SampleMask>,
    blocks: &[BlockId],
) -> Result<SolveResult> {
    h.validate()?;
    init.check_compatible(r)?;
    if !init.is_nonnegative() {
        return Err(Error::InvalidInput("initialization must be nonnegative".into()));
    }
    if let Some(m) = mask {
        if !m.mask.same_dims(r) {
            return Err(Error::DimensionMismatch("mask dims differ from tensor".into()));
        }
    }

    let nr = if h.nr_enabled {
        let graph = graph.ok_or_else(|| {
            Error::InvalidInput("neighboring regularization enabled but no neighbor graph given".into())
        })?;
        let sigma_o = h.nr_sigma.unwrap_or_else(|| median_sigma(r, graph, Side::Origin));
        let sigma_d = h.nr_sigma.unwrap_or_else(|| median_sigma(r, graph, Side::Destination));
        let cfg_o = NrConfig::new(sigma_o)?;
        let cfg_d = NrConfig::new(sigma_d)?;
        Some(NrContext {
            graph,
            cache_o: build_kernel_cache(r, graph, Side::Origin, &cfg_o),
            cache_d: build_kernel_cache(r, graph, Side::Destination, &cfg_d),
            cfg_o,
            cfg_d,
        })
    } else {
        None
    };

    let mut current = init;
    let mut previous = current.clone();
    let mut objective_history = vec![objective(r, w, &current, h, mask)?];
    if !objective_history[0].is_finite() {
        return Err(Error::Solver("initial objective is not finite".into()));
    }
    let mut nr_skipped_rounds = Vec::new();
    let mut schedule = ExtrapolationSchedule::new();
    let mut tau_history: [Option<f64>; 4] = [None; 4];

    for round in 1..=h.max_rounds {
        schedule.advance();
        let round_start = current.clone();
        let mut working = current.clone();

        for &block in blocks {
            let bi = block as usize;
            let tau_est = lipschitz_estimate(block, &working, h, w);
            let omega = schedule.weight(tau_history[bi], tau_est);
            let prev = round_start.block_values(block).to_vec();
            let prev2 = previous.block_values(block).to_vec();
            let tau_used = update_block(
                r, w, &mut working, h, mask, block, &prev, &prev2, omega, tau_est,
            )?;
            tau_history[bi] = Some(tau_used);
        }

        let f_before_nr = objective(r, w, &working, h, mask)?;
        let f_prev = *objective_history.last().unwrap();
        let mut nr_applied = false;

        if let Some(ctx) = &nr {
            let mut with_nr = working.clone();
            with_nr.o = nr_update(&working.o, &round_start.o, &ctx.cache_o, ctx.graph, &ctx.cfg_o)?;
            with_nr.d = nr_update(&working.d, &round_start.d, &ctx.cache_d, ctx.graph, &ctx.cfg_d)?;
            let f_with_nr = objective(r, w, &with_nr, h, mask)?;
            if f_with_nr.is_finite() && f_with_nr <= f_prev {
                working = with_nr;
                nr_applied = true;
            } else {
                nr_skipped_rounds.push(round);
            }
        }

        let f_new = if nr_applied {
            objective(r, w, &working, h, mask)?
        } else {
            f_before_nr
        };
        if !f_new.is_finite() {
            return Err(Error::Solver(format!("objective diverged at round {round}")));
        }
        if f_new > f_prev {
            // Blocks alone could not decrease the objective; stationary.
            break;
        }

        previous = current;
        current = working;
        if nr_applied {
            // NR moved O and D off the PG trajectory; clear their
            // extrapolation memory.
            previous.o = current.o.clone();
            previous.d = current.d.clone();
        }
        objective_history.push(f_new);

        let rel_change = (f_prev - f_new) / f_prev.abs().max(1e-30);
        if rel_change < h.tolerance {
            break;
        }
    }

    Ok(SolveResult {
        model: current,
        objective_history,
        nr_skipped_rounds,
    })
}
