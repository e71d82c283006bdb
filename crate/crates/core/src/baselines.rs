//! CP, regularized-CP, and plain Tucker baselines.
//!
//! The CP solvers run the same block-coordinate scheme as the main solver
//! with the core fixed to a superdiagonal of ones, so every comparison uses
//! an identical optimizer. `tucker_solve` is the main solver with the
//! context weights zeroed and no neighboring pass.

use crate::error::{Error, Result};
use crate::ingest::ContextMatrix;
use crate::model::{trivial_context, BlockId, FactorModel, Hyperparameters, SampleMask};
use crate::solver::{bcd_solve, bcd_solve_blocks, random_init, SolveResult};
use crate::tensor::{Matrix, Tensor3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    pub o: Matrix,
    pub d: Matrix,
    pub t: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpSolveResult {
    pub model: CpModel,
    pub objective_history: Vec<f64>,
}

impl CpModel {
    pub fn rank(&self) -> usize {
        self.o.cols()
    }

    pub fn check_consistent(&self) -> Result<()> {
        if self.o.cols() != self.d.cols() || self.o.cols() != self.t.cols() {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks differ: {} / {} / {}",
                self.o.cols(), self.d.cols(), self.t.cols()
            )));
        }
        if self.o.rows() != self.d.rows() {
            return Err(Error::DimensionMismatch(
                "origin and destination factors index different zone counts".into(),
            ));
        }
        Ok(())
    }

    pub fn is_nonnegative(&self) -> bool {
        [&self.o, &self.d, &self.t]
            .iter()
            .all(|m| m.values().iter().all(|v| *v >= 0.0))
    }
}

fn superdiagonal_core(rank: usize) -> Tensor3 {
    let mut core = Tensor3::zeros(rank, rank, rank);
    for i in 0..rank {
        core.set(i, i, i, 1.0);
    }
    core
}

pub fn cp_to_tucker(model: &CpModel) -> Result<FactorModel> {
    model.check_consistent()?;
    Ok(FactorModel {
        core: superdiagonal_core(model.rank()),
        o: model.o.clone(),
        d: model.d.clone(),
        t: model.t.clone(),
    })
}

/// Sum of rank-one outer products over the factor columns.
pub fn cp_reconstruct(model: &CpModel) -> Result<Tensor3> {
    model.check_consistent()?;
    let (m1, m2, n) = (model.o.rows(), model.d.rows(), model.t.rows());
    let mut out = Tensor3::zeros(m1, m2, n);
    for r in 0..model.rank() {
        for z in 0..n {
            let tz = model.t.get(z, r);
            if tz == 0.0 {
                continue;
            }
            for y in 0..m2 {
                let dy = model.d.get(y, r) * tz;
                if dy == 0.0 {
                    continue;
                }
                for x in 0..m1 {
                    let v = out.get(x, y, z) + model.o.get(x, r) * dy;
                    out.set(x, y, z, v);
                }
            }
        }
    }
    Ok(out)
}

/// Seeded CP initialization, scale-matched like the Tucker one but with the
/// superdiagonal core held fixed afterwards.
pub fn random_cp_init(r: &Tensor3, rank: usize, h: &Hyperparameters, seed: u64) -> CpModel {
    let mut hc = h.clone();
    hc.dim_i = rank;
    hc.dim_j = rank;
    hc.dim_k = rank;
    let model = random_init(r, &hc, seed);
    // Fold the random core's scale into T so the superdiagonal-core model
    // keeps the matched reconstruction norm.
    let core_scale = model.core.frobenius_norm() / (rank as f64).sqrt();
    CpModel {
        o: model.o,
        d: model.d,
        t: model.t.scale(core_scale.max(1e-12)),
    }
}

fn cp_hyperparameters(h: &Hyperparameters, rank: usize, context: bool) -> Hyperparameters {
    Hyperparameters {
        context_o: if context { h.context_o } else { 0.0 },
        context_d: if context { h.context_d } else { 0.0 },
        l1_core: 0.0,
        dim_i: rank,
        dim_j: rank,
        dim_k: rank,
        nr_enabled: false,
        nr_sigma: None,
        ..h.clone()
    }
}

fn cp_solve_inner(
    r: &Tensor3,
    w: &ContextMatrix,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    init: CpModel,
    context: bool,
) -> Result<CpSolveResult> {
    init.check_consistent()?;
    let rank = init.rank();
    let hc = cp_hyperparameters(h, rank, context);
    let tucker_init = cp_to_tucker(&init)?;
    let blocks = [BlockId::O, BlockId::D, BlockId::T];
    let result = bcd_solve_blocks(r, w, &hc, tucker_init, None, mask, &blocks)?;
    Ok(CpSolveResult {
        model: CpModel {
            o: result.model.o,
            d: result.model.d,
            t: result.model.t,
        },
        objective_history: result.objective_history,
    })
}

/// Nonnegative CP factorization with L1 penalties, no context terms.
pub fn cp_solve(
    r: &Tensor3,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    init: CpModel,
) -> Result<CpSolveResult> {
    let w = trivial_context(r.dims().0);
    cp_solve_inner(r, &w, h, mask, init, false)
}

/// CP with the context-similarity penalties on O and D.
pub fn rcp_solve(
    r: &Tensor3,
    w: &ContextMatrix,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    init: CpModel,
) -> Result<CpSolveResult> {
    cp_solve_inner(r, w, h, mask, init, true)
}

/// Plain nonnegative Tucker: context weights zeroed, no neighboring pass.
pub fn tucker_solve(
    r: &Tensor3,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    init: FactorModel,
) -> Result<SolveResult> {
    let ht = Hyperparameters {
        context_o: 0.0,
        context_d: 0.0,
        nr_enabled: false,
        nr_sigma: None,
        ..h.clone()
    };
    let w = trivial_context(r.dims().0);
    bcd_solve(r, &w, &ht, init, None, mask)
}
