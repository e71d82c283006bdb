//! Post-factorization interpretation: community assignment, temporal
//! component splitting, rhythm energies, concentrated core views, and RMSE.

use crate::error::{Error, Result};
use crate::model::{FactorModel, SampleMask};
use crate::tensor::{Matrix, Tensor3};
use serde::{Deserialize, Serialize};

/// Per-zone hard community labels plus per-pattern member lists. Patterns
/// that win no zone are listed as empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    pub labels: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl CommunityAssignment {
    pub fn empty_patterns(&self) -> Vec<usize> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhythmReport {
    /// Mean absolute intensity contributed by each temporal pattern.
    pub energies: Vec<f64>,
    /// N x K matrix of rescaled per-slice coefficients; each column sums to
    /// the pattern's energy.
    pub rescaled: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensityReport {
    pub inter: Vec<f64>,
    pub intra: Vec<f64>,
}

/// Hard assignment of each row to its largest-scoring column, lowest index
/// winning ties.
pub fn assign_communities(v: &Matrix) -> CommunityAssignment {
    let mut labels = Vec::with_capacity(v.rows());
    let mut members = vec![Vec::new(); v.cols()];
    for x in 0..v.rows() {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..v.cols() {
            let val = v.get(x, j);
            if val > best_val {
                best_val = val;
                best = j;
            }
        }
        labels.push(best);
        members[best].push(x);
    }
    CommunityAssignment { labels, members }
}

/// Reconstruction using only temporal pattern `k`: all other columns of T
/// are zeroed before the mode products.
pub fn temporal_component(model: &FactorModel, k: usize) -> Result<Tensor3> {
    if k >= model.t.cols() {
        return Err(Error::InvalidInput(format!(
            "temporal pattern {k} out of range (K = {})",
            model.t.cols()
        )));
    }
    let mut t_masked = Matrix::zeros(model.t.rows(), model.t.cols());
    for z in 0..model.t.rows() {
        t_masked.set(z, k, model.t.get(z, k));
    }
    let masked = FactorModel {
        core: model.core.clone(),
        o: model.o.clone(),
        d: model.d.clone(),
        t: t_masked,
    };
    Ok(masked.reconstruct())
}

/// Mean absolute intensity of pattern k's component over all cells.
pub fn pattern_energy(model: &FactorModel, k: usize) -> Result<f64> {
    let component = temporal_component(model, k)?;
    Ok(component.l1_norm() / component.len() as f64)
}

/// Per-slice rhythm curves: column k of T normalized to unit sum, scaled by
/// the pattern energy. A zero column yields a zero curve.
pub fn rescaled_coefficients(model: &FactorModel) -> Result<RhythmReport> {
    let n = model.t.rows();
    let k_dim = model.t.cols();
    let mut energies = Vec::with_capacity(k_dim);
    let mut rescaled = Matrix::zeros(n, k_dim);
    for k in 0..k_dim {
        let u = pattern_energy(model, k)?;
        energies.push(u);
        let col_sum: f64 = (0..n).map(|z| model.t.get(z, k)).sum();
        if col_sum > 0.0 {
            for z in 0..n {
                rescaled.set(z, k, model.t.get(z, k) / col_sum * u);
            }
        }
    }
    Ok(RhythmReport { energies, rescaled })
}

/// Core tensor with each entry scaled by the column sums of its three
/// factors, making entries comparable traffic intensities.
pub fn concentrated_core(model: &FactorModel) -> Tensor3 {
    let (i_dim, j_dim, k_dim) = model.core.dims();
    let col_sums = |m: &Matrix| -> Vec<f64> {
        (0..m.cols())
            .map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum())
            .collect()
    };
    let so = col_sums(&model.o);
    let sd = col_sums(&model.d);
    let st = col_sums(&model.t);
    let mut out = Tensor3::zeros(i_dim, j_dim, k_dim);
    for k in 0..k_dim {
        for j in 0..j_dim {
            for i in 0..i_dim {
                out.set(i, j, k, model.core.get(i, j, k) * so[i] * sd[j] * st[k]);
            }
        }
    }
    out
}

/// Per-community inter and intra intensities from a concentrated core with
/// matching origin and destination pattern counts.
pub fn inter_intra_intensity(cprime: &Tensor3) -> Result<IntensityReport> {
    let (i_dim, j_dim, k_dim) = cprime.dims();
    if i_dim != j_dim {
        return Err(Error::DimensionMismatch(format!(
            "inter/intra intensities need matching pattern counts, got {i_dim} x {j_dim}"
        )));
    }
    let mut inter = vec![0.0; i_dim];
    let mut intra = vec![0.0; i_dim];
    for k in 0..k_dim {
        for j in 0..j_dim {
            for i in 0..i_dim {
                let v = cprime.get(i, j, k);
                if i == j {
                    intra[i] += v;
                } else {
                    inter[j] += v;
                    inter[i] += v;
                }
            }
        }
    }
    Ok(IntensityReport { inter, intra })
}

/// Root mean square error over all cells.
pub fn rmse(r: &Tensor3, r_hat: &Tensor3) -> Result<f64> {
    if !r.same_dims(r_hat) {
        return Err(Error::DimensionMismatch("rmse operands differ in dims".into()));
    }
    let sum: f64 = r
        .values()
        .iter()
        .zip(r_hat.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / r.len() as f64).sqrt())
}

/// RMSE over the mask's selected cells, divided by the full cell count.
/// This is the whole-tensor convention applied to a masked sum.
pub fn full_count_rmse(r: &Tensor3, r_hat: &Tensor3, mask: &SampleMask) -> Result<f64> {
    let (sum, _) = masked_square_sum(r, r_hat, mask)?;
    Ok((sum / r.len() as f64).sqrt())
}

/// RMSE over the mask's selected cells, divided by their count.
pub fn held_out_rmse(r: &Tensor3, r_hat: &Tensor3, mask: &SampleMask) -> Result<f64> {
    let (sum, count) = masked_square_sum(r, r_hat, mask)?;
    if count == 0 {
        return Err(Error::InvalidInput("mask selects no cells".into()));
    }
    Ok((sum / count as f64).sqrt())
}

fn masked_square_sum(r: &Tensor3, r_hat: &Tensor3, mask: &SampleMask) -> Result<(f64, usize)> {
    if !r.same_dims(r_hat) || !mask.mask.same_dims(r) {
        return Err(Error::DimensionMismatch("rmse operands differ in dims".into()));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for ((a, b), s) in r.values().iter().zip(r_hat.values()).zip(mask.mask.values()) {
        if *s != 0.0 {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((sum, count))
}

/// The I x J origin-destination view of one temporal rhythm.
pub fn od_slice(cprime: &Tensor3, k: usize) -> Result<Matrix> {
    let (i_dim, j_dim, k_dim) = cprime.dims();
    if k >= k_dim {
        return Err(Error::InvalidInput(format!("slice {k} out of range (K = {k_dim})")));
    }
    let mut out = Matrix::zeros(i_dim, j_dim);
    for j in 0..j_dim {
        for i in 0..i_dim {
            out.set(i, j, cprime.get(i, j, k));
        }
    }
    Ok(out)
}
