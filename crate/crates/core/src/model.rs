//! The factor model, its regularized objective, and analytic gradients of the
//! smooth part (reconstruction plus context terms; L1 is handled by the
//! proximal step).

use crate::error::{Error, Result};
use crate::ingest::ContextMatrix;
use crate::tensor::{Matrix, Mode, Tensor3};
use serde::{Deserialize, Serialize};

/// Core tensor plus the three nonnegative projection matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub core: Tensor3,
    pub o: Matrix,
    pub d: Matrix,
    pub t: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Context weight on the origin side (alpha).
    pub context_o: f64,
    /// Context weight on the destination side (beta).
    pub context_d: f64,
    /// L1 weight on O (gamma).
    pub l1_o: f64,
    /// L1 weight on D (delta).
    pub l1_d: f64,
    /// L1 weight on T (epsilon).
    pub l1_t: f64,
    /// L1 weight on the core (varepsilon).
    pub l1_core: f64,
    pub dim_i: usize,
    pub dim_j: usize,
    pub dim_k: usize,
    pub max_rounds: usize,
    /// Relative objective change below which the solver stops.
    pub tolerance: f64,
    pub nr_enabled: bool,
    /// Kernel width for the neighboring pass; `None` selects the median
    /// heuristic over neighbor-pair slice distances.
    pub nr_sigma: Option<f64>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        // Paper-default trade-off weights and pattern-space dims.
        Hyperparameters {
            context_o: 0.01,
            context_d: 0.01,
            l1_o: 2.5,
            l1_d: 2.5,
            l1_t: 2.5,
            l1_core: 2.5,
            dim_i: 20,
            dim_j: 20,
            dim_k: 4,
            max_rounds: 500,
            tolerance: 1e-6,
            nr_enabled: true,
            nr_sigma: None,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.context_o,
            self.context_d,
            self.l1_o,
            self.l1_d,
            self.l1_t,
            self.l1_core,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "regularization weights must be finite and nonnegative".into(),
            ));
        }
        if self.dim_i == 0 || self.dim_j == 0 || self.dim_k == 0 {
            return Err(Error::InvalidInput("pattern dims must be positive".into()));
        }
        if let Some(s) = self.nr_sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidInput("nr_sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Binary sampling tensor for masked completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMask {
    pub mask: Tensor3,
}

impl SampleMask {
    pub fn new(mask: Tensor3) -> Result<SampleMask> {
        if mask.values().iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidInput("mask entries must be 0 or 1".into()));
        }
        Ok(SampleMask { mask })
    }

    pub fn ones(d1: usize, d2: usize, d3: usize) -> SampleMask {
        SampleMask {
            mask: Tensor3::from_values(d1, d2, d3, vec![1.0; d1 * d2 * d3]).unwrap(),
        }
    }

    pub fn observed_count(&self) -> usize {
        self.mask.values().iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub core: Tensor3,
    pub o: Matrix,
    pub d: Matrix,
    pub t: Matrix,
}

impl FactorModel {
    pub fn dims(&self) -> ((usize, usize, usize), usize, usize) {
        (self.core.dims(), self.o.rows(), self.t.rows())
    }

    pub fn check_compatible(&self, r: &Tensor3) -> Result<()> {
        let (i, j, k) = self.core.dims();
        let (m1, m2, n) = r.dims();
        if self.o.rows() != m1 || self.o.cols() != i {
            return Err(Error::DimensionMismatch(format!(
                "O is {}x{}, expected {}x{}",
                self.o.rows(),
                self.o.cols(),
                m1,
                i
            )));
        }
        if self.d.rows() != m2 || self.d.cols() != j {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                self.d.rows(),
                self.d.cols(),
                m2,
                j
            )));
        }
        if self.t.rows() != n || self.t.cols() != k {
            return Err(Error::DimensionMismatch(format!(
                "T is {}x{}, expected {}x{}",
                self.t.rows(),
                self.t.cols(),
                n,
                k
            )));
        }
        Ok(())
    }

    /// C x1 O x2 D x3 T.
    pub fn reconstruct(&self) -> Tensor3 {
        self.core
            .mode_product(&self.o, Mode::One)
            .and_then(|t| t.mode_product(&self.d, Mode::Two))
            .and_then(|t| t.mode_product(&self.t, Mode::Three))
            .expect("factor dims are internally consistent")
    }

    pub fn is_nonnegative(&self) -> bool {
        self.core.values().iter().all(|v| *v >= 0.0)
            && self.o.values().iter().all(|v| *v >= 0.0)
            && self.d.values().iter().all(|v| *v >= 0.0)
            && self.t.values().iter().all(|v| *v >= 0.0)
    }
}

fn masked_residual(r: &Tensor3, model: &FactorModel, mask: Option<&SampleMask>) -> Result<Tensor3> {
    let reconstruction = model.reconstruct();
    let mut residual = reconstruction.sub(r)?;
    if let Some(m) = mask {
        residual = residual.hadamard(&m.mask)?;
    }
    Ok(residual)
}

/// Context residual W - V V^T with rows and columns of inactive zones zeroed,
/// so context-less zones contribute nothing to the penalty.
pub(crate) fn context_residual(w: &ContextMatrix, v: &Matrix) -> Result<Matrix> {
    if w.w.rows() != v.rows() {
        return Err(Error::DimensionMismatch(format!(
            "context matrix is {}x{}, factor has {} rows",
            w.w.rows(),
            w.w.cols(),
            v.rows()
        )));
    }
    let vvt = v.matmul(&v.transpose())?;
    let mut res = w.w.sub(&vvt)?;
    let m = res.rows();
    for p in 0..m {
        for q in 0..m {
            if !w.active[p] || !w.active[q] {
                res.set(p, q, 0.0);
            }
        }
    }
    Ok(res)
}

/// The smooth part of the objective: masked reconstruction error plus the two
/// context penalties.
pub fn smooth_objective(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
) -> Result<f64> {
    model.check_compatible(r)?;
    let residual = masked_residual(r, model, mask)?;
    let mut value = residual.frobenius_norm().powi(2);
    if h.context_o > 0.0 {
        value += h.context_o * context_residual(w, &model.o)?.frobenius_norm().powi(2);
    }
    if h.context_d > 0.0 {
        value += h.context_d * context_residual(w, &model.d)?.frobenius_norm().powi(2);
    }
    Ok(value)
}

pub fn l1_penalty(model: &FactorModel, h: &Hyperparameters) -> f64 {
    h.l1_o * model.o.l1_norm()
        + h.l1_d * model.d.l1_norm()
        + h.l1_t * model.t.l1_norm()
        + h.l1_core * model.core.l1_norm()
}

/// Full regularized objective. With no mask this is the unmasked form; a mask
/// applies only to the reconstruction term.
pub fn objective(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
) -> Result<f64> {
    Ok(smooth_objective(r, w, model, h, mask)? + l1_penalty(model, h))
}

/// Identifies one of the four factorization blocks, in the update order the
/// solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    Core,
    O,
    D,
    T,
}

impl BlockId {
    pub fn all() -> [BlockId; 4] {
        [BlockId::Core, BlockId::O, BlockId::D, BlockId::T]
    }

    pub fn l1_weight(self, h: &Hyperparameters) -> f64 {
        match self {
            BlockId::Core => h.l1_core,
            BlockId::O => h.l1_o,
            BlockId::D => h.l1_d,
            BlockId::T => h.l1_t,
        }
    }
}

impl FactorModel {
    pub fn block_values(&self, block: BlockId) -> &[f64] {
        match block {
            BlockId::Core => self.core.values(),
            BlockId::O => self.o.values(),
            BlockId::D => self.d.values(),
            BlockId::T => self.t.values(),
        }
    }

    pub fn block_values_mut(&mut self, block: BlockId) -> &mut [f64] {
        match block {
            BlockId::Core => self.core.values_mut(),
            BlockId::O => self.o.values_mut(),
            BlockId::D => self.d.values_mut(),
            BlockId::T => self.t.values_mut(),
        }
    }
}

/// Gradient of the smooth objective with respect to a single block, as a flat
/// value vector in the block's storage order.
///
/// The reconstruction part is computed from the masked residual
/// E = S (.) (R_hat - R): grad_C = 2 E x1 O^T x2 D^T x3 T^T and
/// grad_V = 2 E_(n) B_(n)^T for each projection matrix, where B is the
/// reconstruction with that matrix left out. The context part contributes
/// 4 alpha (V V^T - W) V.
pub fn block_gradient(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    block: BlockId,
) -> Result<Vec<f64>> {
    model.check_compatible(r)?;
    let residual = masked_residual(r, model, mask)?;
    match block {
        BlockId::Core => {
            let g = residual
                .mode_product(&model.o.transpose(), Mode::One)?
                .mode_product(&model.d.transpose(), Mode::Two)?
                .mode_product(&model.t.transpose(), Mode::Three)?
                .scale(2.0);
            Ok(g.values().to_vec())
        }
        BlockId::O => {
            // B = C x2 D x3 T, an I x M x N tensor.
            let b = model
                .core
                .mode_product(&model.d, Mode::Two)?
                .mode_product(&model.t, Mode::Three)?;
            let mut g = residual
                .matricize(Mode::One)
                .matmul(&b.matricize(Mode::One).transpose())?
                .scale(2.0);
            if h.context_o > 0.0 {
                let ctx = context_residual(w, &model.o)?;
                g = g.add(&ctx.matmul(&model.o)?.scale(-4.0 * h.context_o))?;
            }
            Ok(g.values().to_vec())
        }
        BlockId::D => {
            let b = model
                .core
                .mode_product(&model.o, Mode::One)?
                .mode_product(&model.t, Mode::Three)?;
            let mut g = residual
                .matricize(Mode::Two)
                .matmul(&b.matricize(Mode::Two).transpose())?
                .scale(2.0);
            if h.context_d > 0.0 {
                let ctx = context_residual(w, &model.d)?;
                g = g.add(&ctx.matmul(&model.d)?.scale(-4.0 * h.context_d))?;
            }
            Ok(g.values().to_vec())
        }
        BlockId::T => {
            let b = model
                .core
                .mode_product(&model.o, Mode::One)?
                .mode_product(&model.d, Mode::Two)?;
            let g = residual
                .matricize(Mode::Three)
                .matmul(&b.matricize(Mode::Three).transpose())?
                .scale(2.0);
            Ok(g.values().to_vec())
        }
    }
}

/// The part of the smooth objective that varies with the given block: the
/// masked reconstruction error, plus the context penalty for O or D.
pub fn block_smooth_objective(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
    block: BlockId,
) -> Result<f64> {
    let residual = masked_residual(r, model, mask)?;
    let mut value = residual.frobenius_norm().powi(2);
    match block {
        BlockId::O if h.context_o > 0.0 => {
            value += h.context_o * context_residual(w, &model.o)?.frobenius_norm().powi(2);
        }
        BlockId::D if h.context_d > 0.0 => {
            value += h.context_d * context_residual(w, &model.d)?.frobenius_norm().powi(2);
        }
        _ => {}
    }
    Ok(value)
}

/// Gradients of the smooth objective with respect to all four blocks.
pub fn gradients(
    r: &Tensor3,
    w: &ContextMatrix,
    model: &FactorModel,
    h: &Hyperparameters,
    mask: Option<&SampleMask>,
) -> Result<Gradients> {
    let g_core = block_gradient(r, w, model, h, mask, BlockId::Core)?;
    let g_o = block_gradient(r, w, model, h, mask, BlockId::O)?;
    let g_d = block_gradient(r, w, model, h, mask, BlockId::D)?;
    let g_t = block_gradient(r, w, model, h, mask, BlockId::T)?;
    let (i, j, k) = model.core.dims();
    Ok(Gradients {
        core: Tensor3::from_values(i, j, k, g_core)?,
        o: Matrix::from_values(model.o.rows(), model.o.cols(), g_o)?,
        d: Matrix::from_values(model.d.rows(), model.d.cols(), g_d)?,
        t: Matrix::from_values(model.t.rows(), model.t.cols(), g_t)?,
    })
}

/// A context matrix that applies no constraint: all zones active, used when
/// a solver variant runs without context data.
pub fn trivial_context(zones: usize) -> ContextMatrix {
    ContextMatrix {
        w: Matrix::identity(zones),
        active: vec![true; zones],
    }
}
