//! Multi-year sequence analysis by pipeline initialization: year 1 is
//! solved from a random start, each later year starts from the previous
//! year's factors but fits only its own tensor and context. Inherited
//! starts keep pattern columns comparable across years; a drift report and
//! column-correlation matrices let callers see how much they moved.

use crate::error::{Error, Result};
use crate::ingest::{ContextMatrix, NeighborGraph};
use crate::model::{FactorModel, Hyperparameters, SampleMask};
use crate::solver::{bcd_solve, random_init};
use crate::tensor::{Matrix, Tensor3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct YearInput {
    pub label: String,
    pub tensor: Tensor3,
    pub context: ContextMatrix,
    pub mask: Option<SampleMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YearResult {
    pub label: String,
    pub model: FactorModel,
    pub objective_history: Vec<f64>,
}

/// Per-transition diagnostics between consecutive years.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    /// Relative Frobenius drift of O for each year l >= 2.
    pub o_drift: Vec<f64>,
    /// Relative Frobenius drift of D for each year l >= 2.
    pub d_drift: Vec<f64>,
    /// Cosine similarity between corresponding and crossed columns of
    /// consecutive O factors, one I x I matrix per transition.
    pub o_column_correlation: Vec<Matrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSequence {
    pub years: Vec<YearResult>,
    pub drift: DriftReport,
}

fn relative_drift(curr: &Matrix, prev: &Matrix) -> f64 {
    let denom = prev.frobenius_norm();
    if denom == 0.0 {
        return 0.0;
    }
    curr.sub(prev).map(|d| d.frobenius_norm() / denom).unwrap_or(f64::NAN)
}

fn column_cosines(curr: &Matrix, prev: &Matrix) -> Matrix {
    let cols = curr.cols();
    let norm = |m: &Matrix, c: usize| -> f64 {
        (0..m.rows()).map(|r| m.get(r, c).powi(2)).sum::<f64>().sqrt()
    };
    let mut out = Matrix::zeros(cols, cols);
    for a in 0..cols {
        for b in 0..cols {
            let na = norm(prev, a);
            let nb = norm(curr, b);
            if na > 0.0 && nb > 0.0 {
                let dot: f64 = (0..curr.rows()).map(|r| prev.get(r, a) * curr.get(r, b)).sum();
                out.set(a, b, dot / (na * nb));
            }
        }
    }
    out
}

/// Solve a sequence of yearly tensors with inherited initialization.
pub fn pi_tsa(
    inputs: &[YearInput],
    h: &Hyperparameters,
    graph: Option<&NeighborGraph>,
    seed: u64,
) -> Result<PatternSequence> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("sequence needs at least one year".into()));
    }
    let dims = inputs[0].tensor.dims();
    for input in &inputs[1..] {
        if input.tensor.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "year {} tensor dims {:?} differ from first year {:?}",
                input.label,
                input.tensor.dims(),
                dims
            )));
        }
    }

    let mut years: Vec<YearResult> = Vec::with_capacity(inputs.len());
    let mut o_drift = Vec::new();
    let mut d_drift = Vec::new();
    let mut o_column_correlation = Vec::new();

    for (l, input) in inputs.iter().enumerate() {
        let init = if let Some(prev) = years.last() {
            prev.model.clone()
        } else {
            random_init(&input.tensor, h, seed)
        };
        let result = bcd_solve(
            &input.tensor,
            &input.context,
            h,
            init,
            graph,
            input.mask.as_ref(),
        )?;
        if l > 0 {
            let prev = &years[l - 1].model;
            o_drift.push(relative_drift(&result.model.o, &prev.o));
            d_drift.push(relative_drift(&result.model.d, &prev.d));
            o_column_correlation.push(column_cosines(&result.model.o, &prev.o));
        }
        years.push(YearResult {
            label: input.label.clone(),
            model: result.model,
            objective_history: result.objective_history,
        });
    }

    Ok(PatternSequence {
        years,
        drift: DriftReport {
            o_drift,
            d_drift,
            o_column_correlation,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::assign_communities;
    use crate::synth::{generate, PlantSpec};

    fn test_hyperparameters() -> Hyperparameters {
        Hyperparameters {
            dim_i: 4,
            dim_j: 4,
            dim_k: 3,
            l1_o: 0.01,
            l1_d: 0.01,
            l1_t: 0.01,
            l1_core: 0.01,
            max_rounds: 4000,
            tolerance: 1e-12,
            nr_enabled: false,
            ..Hyperparameters::default()
        }
    }

    fn year(label: &str, city: &crate::synth::SynthCity) -> YearInput {
        YearInput {
            label: label.into(),
            tensor: city.r.clone(),
            context: city.w.clone(),
            mask: None,
        }
    }

    #[test]
    fn single_year_equals_plain_solve() {
        let city = generate(&PlantSpec::default()).unwrap();
        let h = test_hyperparameters();
        let seq = pi_tsa(&[year("2015", &city)], &h, None, 7).unwrap();
        let direct = bcd_solve(
            &city.r,
            &city.w,
            &h,
            random_init(&city.r, &h, 7),
            None,
            None,
        )
        .unwrap();
        assert_eq!(seq.years.len(), 1);
        assert_eq!(seq.years[0].model, direct.model);
        assert_eq!(seq.years[0].objective_history, direct.objective_history);
        assert!(seq.drift.o_drift.is_empty());
    }

    #[test]
    fn duplicate_years_barely_drift() {
        let city = generate(&PlantSpec::default()).unwrap();
        let h = test_hyperparameters();
        let inputs = vec![year("a", &city), year("b", &city), year("c", &city)];
        let seq = pi_tsa(&inputs, &h, None, 3).unwrap();
        assert_eq!(seq.drift.o_drift.len(), 2);
        for drift in &seq.drift.o_drift {
            assert!(*drift <= 1e-3, "drift {drift}");
        }
        let f1 = *seq.years[0].objective_history.last().unwrap();
        for y in &seq.years[1..] {
            let fl = *y.objective_history.last().unwrap();
            assert!(fl <= f1 + 1e-9);
            for pair in y.objective_history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12);
            }
        }
        // Matching columns stay aligned.
        for corr in &seq.drift.o_column_correlation {
            for c in 0..corr.cols() {
                assert!(corr.get(c, c) > 0.999);
            }
        }
    }

    #[test]
    fn permuted_communities_keep_inherited_labels() {
        let spec = PlantSpec::default();
        let city = generate(&spec).unwrap();
        let m = spec.zones();
        // Year 2: swap the origin rows of the last community's zones among
        // themselves, leaving all other zones untouched.
        let swapped: Vec<usize> = (0..m)
            .map(|z| {
                if spec.planted_label(z, spec.dim_i) == spec.dim_i - 1 {
                    let block: Vec<usize> = (0..m)
                        .filter(|q| spec.planted_label(*q, spec.dim_i) == spec.dim_i - 1)
                        .collect();
                    let pos = block.iter().position(|q| *q == z).unwrap();
                    block[(pos + 1) % block.len()]
                } else {
                    z
                }
            })
            .collect();
        let (d1, d2, d3) = city.r.dims();
        let mut r2 = Tensor3::zeros(d1, d2, d3);
        for x in 0..d1 {
            for y in 0..d2 {
                for z in 0..d3 {
                    r2.set(x, y, z, city.r.get(swapped[x], y, z));
                }
            }
        }
        let h = test_hyperparameters();
        let inputs = vec![
            year("y1", &city),
            YearInput {
                label: "y2".into(),
                tensor: r2,
                context: city.w.clone(),
                mask: None,
            },
        ];
        let seq = pi_tsa(&inputs, &h, None, 13).unwrap();
        let labels1 = assign_communities(&seq.years[0].model.o).labels;
        let labels2 = assign_communities(&seq.years[1].model.o).labels;
        let unchanged: Vec<usize> = (0..m).filter(|z| swapped[*z] == *z).collect();
        let agree = unchanged.iter().filter(|z| labels1[**z] == labels2[**z]).count();
        let frac = agree as f64 / unchanged.len() as f64;
        assert!(frac >= 0.95, "alignment {frac}");
    }

    #[test]
    fn dimension_drift_rejected() {
        let city = generate(&PlantSpec::default()).unwrap();
        let other = generate(&PlantSpec {
            grid_width: 5,
            grid_height: 5,
            ..PlantSpec::default()
        })
        .unwrap();
        let inputs = vec![year("a", &city), year("b", &other)];
        assert!(pi_tsa(&inputs, &test_hyperparameters(), None, 1).is_err());
        assert!(pi_tsa(&[], &test_hyperparameters(), None, 1).is_err());
    }
}
