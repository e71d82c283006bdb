//! Neighboring regularization: a CRF-potential-based correction applied to
//! the spatial projection matrices once per solver round. Adjacent zones with
//! similar observed mobility slices are pushed toward the same spatial
//! pattern.

use crate::error::{Error, Result};
use crate::ingest::NeighborGraph;
use crate::tensor::{Matrix, Tensor3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrConfig {
    pub sigma_nr: f64,
    pub epsilon_floor: f64,
}

impl NrConfig {
    pub fn new(sigma_nr: f64) -> Result<NrConfig> {
        if !(sigma_nr > 0.0) {
            return Err(Error::InvalidInput("sigma_nr must be positive".into()));
        }
        Ok(NrConfig {
            sigma_nr,
            epsilon_floor: 1e-12,
        })
    }
}

/// Which slices of the data tensor the kernel compares: mode-1 slices for the
/// origin matrix O, mode-2 slices for the destination matrix D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Origin,
    Destination,
}

/// Precomputed Gaussian kernel values g(x,y) for every neighbor pair,
/// computed once per solve from the input tensor.
#[derive(Debug, Clone)]
pub struct PairwiseKernelCache {
    values: Vec<Vec<f64>>,
}

impl PairwiseKernelCache {
    pub fn get(&self, x: usize, neighbor_idx: usize) -> f64 {
        self.values[x][neighbor_idx]
    }
}

fn slice_distance_sq(r: &Tensor3, x: usize, y: usize, side: Side) -> f64 {
    let (a, b) = match side {
        Side::Origin => (r.slice_mode1(x), r.slice_mode1(y)),
        Side::Destination => (r.slice_mode2(x), r.slice_mode2(y)),
    };
    a.values()
        .iter()
        .zip(b.values())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

/// g(x,y) = exp(-||slice_x - slice_y||_F^2 / (2 sigma^2)), in (0,1].
pub fn pairwise_kernel(r: &Tensor3, x: usize, y: usize, side: Side, cfg: &NrConfig) -> f64 {
    let d2 = slice_distance_sq(r, x, y, side);
    (-d2 / (2.0 * cfg.sigma_nr * cfg.sigma_nr)).exp()
}

/// Median of slice distances over all neighbor pairs; scale-adaptive default
/// for sigma_nr. Falls back to 1.0 when all neighbor slices coincide or the
/// graph has no edges.
pub fn median_sigma(r: &Tensor3, graph: &NeighborGraph, side: Side) -> f64 {
    let mut distances = Vec::new();
    for x in 0..graph.zones() {
        for &y in graph.neighbors_of(x) {
            if y > x {
                distances.push(slice_distance_sq(r, x, y, side).sqrt());
            }
        }
    }
    if distances.is_empty() {
        return 1.0;
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = distances[distances.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

pub fn build_kernel_cache(
    r: &Tensor3,
    graph: &NeighborGraph,
    side: Side,
    cfg: &NrConfig,
) -> PairwiseKernelCache {
    let values = (0..graph.zones())
        .map(|x| {
            graph
                .neighbors_of(x)
                .iter()
                .map(|&y| pairwise_kernel(r, x, y, side, cfg))
                .collect()
        })
        .collect();
    PairwiseKernelCache { values }
}

/// Row-normalizes a nonnegative matrix. Rows with zero sum map to the uniform
/// distribution.
pub fn normalize_rows(v: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(v.rows(), v.cols());
    let uniform = 1.0 / v.cols() as f64;
    for x in 0..v.rows() {
        let sum: f64 = v.row(x).iter().sum();
        for i in 0..v.cols() {
            let p = if sum > 0.0 { v.get(x, i) / sum } else { uniform };
            out.set(x, i, p);
        }
    }
    out
}

/// Unary potentials psi^u_{xi} = -log(max(o'_{xi}, epsilon_floor)).
pub fn unary_potentials(v: &Matrix, cfg: &NrConfig) -> Matrix {
    let normalized = normalize_rows(v);
    let mut out = Matrix::zeros(v.rows(), v.cols());
    for x in 0..v.rows() {
        for i in 0..v.cols() {
            out.set(x, i, -(normalized.get(x, i).max(cfg.epsilon_floor)).ln());
        }
    }
    out
}

/// Average pairwise potentials Q_{xi} = sum_{y in M_x} g(x,y)(1 - o'_{yi}),
/// the closed form of the double sum over labels j != i.
pub fn pairwise_potentials(
    v_normalized: &Matrix,
    kernels: &PairwiseKernelCache,
    graph: &NeighborGraph,
) -> Matrix {
    let mut q = Matrix::zeros(v_normalized.rows(), v_normalized.cols());
    for x in 0..v_normalized.rows() {
        for (n_idx, &y) in graph.neighbors_of(x).iter().enumerate() {
            let g = kernels.get(x, n_idx);
            for i in 0..v_normalized.cols() {
                let qv = q.get(x, i) + g * (1.0 - v_normalized.get(y, i));
                q.set(x, i, qv);
            }
        }
    }
    q
}

/// One neighboring-regularization pass over a projection matrix.
///
/// From the total potential zeta = psi^u + Q it forms the regularized matrix
/// o~_{xi} = exp(-zeta_{xi}) * sum_j o_{xj}, then combines the NR delta with
/// the solver's own delta for this round:
/// if delta_cntf <= 0: max{0, prev + delta_cntf + delta_nr},
/// else: prev + max{0, delta_cntf + delta_nr}.
pub fn nr_update(
    v: &Matrix,
    v_prev_round: &Matrix,
    kernels: &PairwiseKernelCache,
    graph: &NeighborGraph,
    cfg: &NrConfig,
) -> Result<Matrix> {
    if v.rows() != v_prev_round.rows() || v.cols() != v_prev_round.cols() {
        return Err(Error::DimensionMismatch("nr_update shapes differ".into()));
    }
    let normalized = normalize_rows(v);
    let unary = unary_potentials(v, cfg);
    let q = pairwise_potentials(&normalized, kernels, graph);
    let mut out = Matrix::zeros(v.rows(), v.cols());
    for x in 0..v.rows() {
        // No neighbors means Q = 0 and exp(-psi) undoes the normalization, so
        // the pass is the identity; keep the row bit-exact instead of round
        // tripping it through log and exp.
        if graph.neighbors_of(x).is_empty() {
            for i in 0..v.cols() {
                out.set(x, i, v.get(x, i));
            }
            continue;
        }
        let row_sum: f64 = v.row(x).iter().sum();
        for i in 0..v.cols() {
            let zeta = unary.get(x, i) + q.get(x, i);
            let regularized = (-zeta).exp() * row_sum;
            let delta_nr = regularized - v.get(x, i);
            let delta_cntf = v.get(x, i) - v_prev_round.get(x, i);
            let prev = v_prev_round.get(x, i);
            let updated = if delta_cntf <= 0.0 {
                (prev + delta_cntf + delta_nr).max(0.0)
            } else {
                prev + (delta_cntf + delta_nr).max(0.0)
            };
            out.set(x, i, updated);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tensor(rng: &mut StdRng, d1: usize, d2: usize, d3: usize) -> Tensor3 {
        Tensor3::from_values(
            d1,
            d2,
            d3,
            (0..d1 * d2 * d3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_nonneg_matrix(rng: &mut StdRng, r: usize, c: usize) -> Matrix {
        Matrix::from_values(r, c, (0..r * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_identical_slices_is_one() {
        let mut t = Tensor3::zeros(3, 2, 2);
        for y in 0..2 {
            for z in 0..2 {
                t.set(0, y, z, 0.5);
                t.set(1, y, z, 0.5);
            }
        }
        let cfg = NrConfig::new(1.0).unwrap();
        assert_eq!(pairwise_kernel(&t, 0, 1, Side::Origin, &cfg), 1.0);
    }

    #[test]
    fn kernel_at_two_sigma_squared_distance() {
        // ||delta||_F^2 = 2 sigma^2 gives g = e^{-1}.
        let sigma = 0.7;
        let mut t = Tensor3::zeros(2, 2, 1);
        let d = (2.0 * sigma * sigma / 2.0f64).sqrt();
        t.set(0, 0, 0, d);
        t.set(0, 1, 0, d);
        let cfg = NrConfig::new(sigma).unwrap();
        let g = pairwise_kernel(&t, 0, 1, Side::Origin, &cfg);
        assert!((g - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_matches_elementwise_oracle() {
        let mut rng = StdRng::seed_from_u64(30);
        let t = random_tensor(&mut rng, 5, 5, 4);
        let cfg = NrConfig::new(0.9).unwrap();
        for side in [Side::Origin, Side::Destination] {
            for x in 0..5 {
                for y in 0..5 {
                    if x == y {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for b in 0..5 {
                        for z in 0..4 {
                            let (p, q) = match side {
                                Side::Origin => (t.get(x, b, z), t.get(y, b, z)),
                                Side::Destination => (t.get(b, x, z), t.get(b, y, z)),
                            };
                            d2 += (p - q) * (p - q);
                        }
                    }
                    let expected = (-d2 / (2.0 * 0.9 * 0.9)).exp();
                    let got = pairwise_kernel(&t, x, y, side, &cfg);
                    assert!((got - expected).abs() < 1e-12);
                    assert!(got > 0.0 && got <= 1.0);
                }
            }
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(31);
        let t = random_tensor(&mut rng, 4, 4, 3);
        let cfg = NrConfig::new(1.1).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                if x != y {
                    let a = pairwise_kernel(&t, x, y, Side::Origin, &cfg);
                    let b = pairwise_kernel(&t, y, x, Side::Origin, &cfg);
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn unary_uniform_row() {
        let v = Matrix::from_values(1, 4, vec![0.3; 4]).unwrap();
        let cfg = NrConfig::new(1.0).unwrap();
        let psi = unary_potentials(&v, &cfg);
        for i in 0..4 {
            assert!((psi.get(0, i) - 4.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn unary_one_hot_row() {
        let v = Matrix::from_values(1, 3, vec![0.0, 2.0, 0.0]).unwrap();
        let cfg = NrConfig::new(1.0).unwrap();
        let psi = unary_potentials(&v, &cfg);
        assert_eq!(psi.get(0, 1), 0.0);
        assert!((psi.get(0, 0) + (1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn unary_matches_normalize_oracle() {
        let mut rng = StdRng::seed_from_u64(32);
        let v = random_nonneg_matrix(&mut rng, 3, 4);
        let cfg = NrConfig::new(1.0).unwrap();
        let psi = unary_potentials(&v, &cfg);
        for x in 0..3 {
            let sum: f64 = (0..4).map(|i| v.get(x, i)).sum();
            for i in 0..4 {
                let expected = -(v.get(x, i) / sum).max(1e-12).ln();
                assert!((psi.get(x, i) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pairwise_empty_neighbors_gives_zero_row() {
        let graph = NeighborGraph::from_pairs(&[(1, 2)], 3).unwrap();
        let mut rng = StdRng::seed_from_u64(33);
        let t = random_tensor(&mut rng, 3, 3, 2);
        let cfg = NrConfig::new(1.0).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let v = normalize_rows(&random_nonneg_matrix(&mut rng, 3, 3));
        let q = pairwise_potentials(&v, &cache, &graph);
        for i in 0..3 {
            assert_eq!(q.get(0, i), 0.0);
        }
    }

    #[test]
    fn pairwise_one_hot_neighbor() {
        let graph = NeighborGraph::from_pairs(&[(0, 1)], 2).unwrap();
        let mut rng = StdRng::seed_from_u64(34);
        let t = random_tensor(&mut rng, 2, 2, 2);
        let cfg = NrConfig::new(1.0).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let g = cache.get(0, 0);
        // Neighbor row one-hot at index 1.
        let v = Matrix::from_values(2, 3, vec![0.2, 0.5, 0.3, 0.0, 1.0, 0.0]).unwrap();
        let q = pairwise_potentials(&v, &cache, &graph);
        assert!((q.get(0, 1)).abs() < 1e-15);
        assert!((q.get(0, 0) - g).abs() < 1e-15);
        assert!((q.get(0, 2) - g).abs() < 1e-15);
    }

    #[test]
    fn pairwise_closed_form_matches_double_sum() {
        let mut rng = StdRng::seed_from_u64(35);
        let zones = 6;
        let pairs: Vec<(usize, usize)> = (0..zones)
            .flat_map(|a| ((a + 1)..zones).filter_map(move |b| None.or(Some((a, b)))))
            .filter(|_| true)
            .collect();
        let chosen: Vec<(usize, usize)> = pairs.into_iter().step_by(2).collect();
        let graph = NeighborGraph::from_pairs(&chosen, zones).unwrap();
        let t = random_tensor(&mut rng, zones, zones, 3);
        let cfg = NrConfig::new(0.8).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let v = normalize_rows(&random_nonneg_matrix(&mut rng, zones, 4));
        let q = pairwise_potentials(&v, &cache, &graph);
        // Literal double sum over labels j != i and neighbors y.
        for x in 0..zones {
            for i in 0..4 {
                let mut expected = 0.0;
                for j in 0..4 {
                    if j == i {
                        continue;
                    }
                    for (n_idx, &y) in graph.neighbors_of(x).iter().enumerate() {
                        expected += v.get(y, j) * cache.get(x, n_idx);
                    }
                }
                assert!((q.get(x, i) - expected).abs() <= 1e-12, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn isolated_zone_is_fixed_point() {
        let graph = NeighborGraph::from_pairs(&[(1, 2)], 4).unwrap();
        let mut rng = StdRng::seed_from_u64(36);
        let t = random_tensor(&mut rng, 4, 4, 2);
        let cfg = NrConfig::new(1.0).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let v = random_nonneg_matrix(&mut rng, 4, 3);
        let prev = random_nonneg_matrix(&mut rng, 4, 3);
        let out = nr_update(&v, &prev, &cache, &graph, &cfg).unwrap();
        // Zones 0 and 3 are isolated: Q = 0 means the regularized value equals
        // the input, so delta_nr = 0 and the row reduces to the plain update.
        for &x in &[0usize, 3usize] {
            for i in 0..3 {
                let delta_cntf = v.get(x, i) - prev.get(x, i);
                let expected = if delta_cntf <= 0.0 {
                    (prev.get(x, i) + delta_cntf).max(0.0)
                } else {
                    prev.get(x, i) + delta_cntf
                };
                assert!((out.get(x, i) - expected).abs() < 1e-12);
                // Which in both cases is just v itself.
                assert!((out.get(x, i) - v.get(x, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nr_update_matches_step_transcription() {
        let mut rng = StdRng::seed_from_u64(37);
        let zones = 5;
        let graph = NeighborGraph::from_pairs(&[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], zones).unwrap();
        let t = random_tensor(&mut rng, zones, zones, 3);
        let cfg = NrConfig::new(0.9).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let v = random_nonneg_matrix(&mut rng, zones, 3);
        let prev = random_nonneg_matrix(&mut rng, zones, 3);
        let out = nr_update(&v, &prev, &cache, &graph, &cfg).unwrap();
        // Step-by-step transcription of the NR pass.
        for x in 0..zones {
            let sum: f64 = (0..3).map(|i| v.get(x, i)).sum();
            for i in 0..3 {
                let o_prime = if sum > 0.0 { v.get(x, i) / sum } else { 1.0 / 3.0 };
                let psi = -o_prime.max(1e-12).ln();
                let mut q = 0.0;
                for (n_idx, &y) in graph.neighbors_of(x).iter().enumerate() {
                    let ysum: f64 = (0..3).map(|j| v.get(y, j)).sum();
                    let oyi = if ysum > 0.0 { v.get(y, i) / ysum } else { 1.0 / 3.0 };
                    q += cache.get(x, n_idx) * (1.0 - oyi);
                }
                let zeta = psi + q;
                let tilde = (-zeta).exp() * sum;
                let d_nr = tilde - v.get(x, i);
                let d_cntf = v.get(x, i) - prev.get(x, i);
                let expected = if d_cntf <= 0.0 {
                    (prev.get(x, i) + d_cntf + d_nr).max(0.0)
                } else {
                    prev.get(x, i) + (d_cntf + d_nr).max(0.0)
                };
                assert!((out.get(x, i) - expected).abs() <= 1e-12);
                assert!(out.get(x, i) >= 0.0);
            }
        }
    }

    #[test]
    fn nr_update_nonnegative_output() {
        let mut rng = StdRng::seed_from_u64(38);
        let graph = NeighborGraph::from_pairs(&[(0, 1), (1, 2)], 3).unwrap();
        let t = random_tensor(&mut rng, 3, 3, 2);
        let cfg = NrConfig::new(0.5).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        for _ in 0..20 {
            let v = random_nonneg_matrix(&mut rng, 3, 4);
            let prev = random_nonneg_matrix(&mut rng, 3, 4);
            let out = nr_update(&v, &prev, &cache, &graph, &cfg).unwrap();
            assert!(out.values().iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn zero_row_stays_zero() {
        let graph = NeighborGraph::from_pairs(&[(0, 1)], 2).unwrap();
        let t = Tensor3::zeros(2, 2, 2);
        let cfg = NrConfig::new(1.0).unwrap();
        let cache = build_kernel_cache(&t, &graph, Side::Origin, &cfg);
        let v = Matrix::from_values(2, 3, vec![0.0, 0.0, 0.0, 0.1, 0.2, 0.3]).unwrap();
        let prev = v.clone();
        let out = nr_update(&v, &prev, &cache, &graph, &cfg).unwrap();
        for i in 0..3 {
            assert_eq!(out.get(0, i), 0.0);
        }
    }

    #[test]
    fn median_sigma_positive() {
        let mut rng = StdRng::seed_from_u64(39);
        let graph = NeighborGraph::from_pairs(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        let t = random_tensor(&mut rng, 4, 4, 3);
        assert!(median_sigma(&t, &graph, Side::Origin) > 0.0);
        // Degenerate tensor falls back to 1.0.
        let z = Tensor3::zeros(4, 4, 3);
        assert_eq!(median_sigma(&z, &graph, Side::Origin), 1.0);
    }
}
