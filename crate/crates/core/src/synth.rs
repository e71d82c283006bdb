//! Seeded synthetic-city generator. Plants block communities on a grid,
//! unimodal daily rhythms, and a diagonal-heavy core with tidal
//! off-diagonal flows, then emits the tensor, context, and neighbor graph
//! the solvers consume. Serves as the ground-truth oracle for recovery and
//! completion tests.

use crate::error::{Error, Result};
use crate::ingest::{ContextMatrix, NeighborGraph, PoiTable, TripRecord};
use crate::model::{FactorModel, SampleMask};
use crate::tensor::{Matrix, Tensor3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub grid_width: usize,
    pub grid_height: usize,
    pub n_slices: usize,
    pub dim_i: usize,
    pub dim_j: usize,
    pub dim_k: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            grid_width: 6,
            grid_height: 5,
            n_slices: 12,
            dim_i: 4,
            dim_j: 4,
            dim_k: 3,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn zones(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.zones();
        if self.grid_width == 0 || self.grid_height == 0 || self.n_slices == 0 {
            return Err(Error::InvalidInput("grid and slice dims must be positive".into()));
        }
        if self.dim_i == 0 || self.dim_j == 0 || self.dim_k == 0 {
            return Err(Error::InvalidInput("pattern dims must be positive".into()));
        }
        if self.dim_i > m || self.dim_j > m {
            return Err(Error::InvalidInput(format!(
                "cannot fit {} / {} community blocks on a {}-zone grid",
                self.dim_i, self.dim_j, m
            )));
        }
        if self.dim_k > self.n_slices {
            return Err(Error::InvalidInput("more rhythms than time slices".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidInput("noise sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Ground-truth community of a zone: contiguous row-major blocks.
    pub fn planted_label(&self, zone: usize, patterns: usize) -> usize {
        zone * patterns / self.zones()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub ground_truth: FactorModel,
    pub r: Tensor3,
    pub w: ContextMatrix,
    pub graph: NeighborGraph,
}

fn membership_matrix(spec: &PlantSpec, patterns: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = spec.zones();
    let mut out = Matrix::zeros(m, patterns);
    for z in 0..m {
        let label = spec.planted_label(z, patterns);
        for c in 0..patterns {
            let v = if c == label {
                1.0 + 0.1 * rng.gen_range(0.0..1.0)
            } else {
                0.05 * rng.gen_range(0.0..1.0)
            };
            out.set(z, c, v);
        }
    }
    out
}

fn rhythm_matrix(spec: &PlantSpec) -> Matrix {
    let n = spec.n_slices as f64;
    let k_dim = spec.dim_k;
    let width = (n / (2.0 * k_dim as f64)).max(0.75);
    let mut t = Matrix::zeros(spec.n_slices, k_dim);
    for k in 0..k_dim {
        let center = (k as f64 + 0.5) * n / k_dim as f64;
        for z in 0..spec.n_slices {
            let d = z as f64 + 0.5 - center;
            t.set(z, k, (-d * d / (2.0 * width * width)).exp());
        }
    }
    t
}

fn planted_core(spec: &PlantSpec) -> Tensor3 {
    let (i_dim, j_dim, k_dim) = (spec.dim_i, spec.dim_j, spec.dim_k);
    let mut core = Tensor3::zeros(i_dim, j_dim, k_dim);
    for k in 0..k_dim {
        for j in 0..j_dim {
            for i in 0..i_dim {
                core.set(i, j, k, if i == j { 0.6 } else { 0.05 });
            }
        }
    }
    // Tidal plant: the first rhythm concentrates flows into destination
    // pattern 0 (morning inflow), the last concentrates flows out of origin
    // pattern 0 (evening outflow).
    for i in 0..i_dim {
        core.set(i, 0, 0, core.get(i, 0, 0) + 0.5);
    }
    if k_dim > 1 {
        for j in 0..j_dim {
            core.set(0, j, k_dim - 1, core.get(0, j, k_dim - 1) + 0.5);
        }
    }
    core
}

fn grid_graph(spec: &PlantSpec) -> NeighborGraph {
    let (gw, gh) = (spec.grid_width, spec.grid_height);
    let mut pairs = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            let z = row * gw + col;
            if col + 1 < gw {
                pairs.push((z, z + 1));
            }
            if row + 1 < gh {
                pairs.push((z, z + gw));
            }
        }
    }
    NeighborGraph::from_pairs(&pairs, gw * gh).unwrap()
}

fn cosine_rows(g: &Matrix) -> ContextMatrix {
    let m = g.rows();
    let mut w = Matrix::zeros(m, m);
    let norms: Vec<f64> = (0..m)
        .map(|z| (0..g.cols()).map(|c| g.get(z, c).powi(2)).sum::<f64>().sqrt())
        .collect();
    for p in 0..m {
        for q in 0..m {
            if norms[p] > 0.0 && norms[q] > 0.0 {
                let dot: f64 = (0..g.cols()).map(|c| g.get(p, c) * g.get(q, c)).sum();
                w.set(p, q, (dot / (norms[p] * norms[q])).min(1.0));
            }
        }
    }
    ContextMatrix {
        w,
        active: vec![true; m],
    }
}

/// Generate a planted city: ground-truth factors, noisy tensor, context
/// similarity, and grid adjacency. Identical specs give identical outputs.
pub fn generate(spec: &PlantSpec) -> Result<SynthCity> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let o = membership_matrix(spec, spec.dim_i, &mut rng);
    let d = membership_matrix(spec, spec.dim_j, &mut rng);
    let t = rhythm_matrix(spec);
    let ground_truth = FactorModel {
        core: planted_core(spec),
        o,
        d,
        t,
    };
    let mut r = ground_truth.reconstruct();
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in r.values_mut() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    let g = membership_matrix(spec, spec.dim_i, &mut rng);
    let w = cosine_rows(&g);
    Ok(SynthCity {
        ground_truth,
        r,
        w,
        graph: grid_graph(spec),
    })
}

/// Seeded Bernoulli sampling mask with the given observation rate.
pub fn sample_mask(dims: (usize, usize, usize), rate: f64, seed: u64) -> Result<SampleMask> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidInput(format!("sampling rate {rate} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d1, d2, d3) = dims;
    let values = (0..d1 * d2 * d3)
        .map(|_| if rng.gen_bool(rate) { 1.0 } else { 0.0 })
        .collect();
    SampleMask::new(Tensor3::from_values(d1, d2, d3, values)?)
}

/// Uniform random trips over the grid, for ingestion fixtures.
pub fn random_trips(zones: usize, slices: usize, count: usize, seed: u64) -> Vec<TripRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| TripRecord {
            vehicle_id: format!("v{:05}", i % 997),
            origin_zone: rng.gen_range(0..zones),
            dest_zone: rng.gen_range(0..zones),
            start_slice: rng.gen_range(0..slices),
        })
        .collect()
}

/// Random POI counts for fixtures; every zone gets at least one POI so the
/// whole context matrix is active.
pub fn random_poi_table(zones: usize, category_names: Vec<String>, seed: u64) -> PoiTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = category_names.len();
    let counts = (0..zones)
        .map(|_| {
            let mut row: Vec<u64> = (0..h).map(|_| rng.gen_range(0..20)).collect();
            if row.iter().all(|c| *c == 0) {
                row[rng.gen_range(0..h)] = 1;
            }
            row
        })
        .collect();
    PoiTable {
        counts,
        category_names,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::assign_communities;

    #[test]
    fn zero_noise_matches_reconstruction_exactly() {
        let spec = PlantSpec {
            noise_sigma: 0.0,
            ..PlantSpec::default()
        };
        let city = generate(&spec).unwrap();
        let recon = city.ground_truth.reconstruct();
        assert_eq!(city.r.values(), recon.values());
    }

    #[test]
    fn repeated_seed_is_bit_identical() {
        let spec = PlantSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.r.values(), b.r.values());
        assert_eq!(a.w.w.values(), b.w.w.values());
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.graph.neighbors, b.graph.neighbors);
    }

    #[test]
    fn planted_labels_recovered_from_ground_truth_factors() {
        let spec = PlantSpec::default();
        let city = generate(&spec).unwrap();
        let assignment = assign_communities(&city.ground_truth.o);
        for z in 0..spec.zones() {
            assert_eq!(assignment.labels[z], spec.planted_label(z, spec.dim_i));
        }
    }

    #[test]
    fn infeasible_geometry_rejected() {
        let spec = PlantSpec {
            grid_width: 2,
            grid_height: 1,
            dim_i: 4,
            ..PlantSpec::default()
        };
        assert!(generate(&spec).is_err());
        let spec = PlantSpec {
            dim_k: 20,
            ..PlantSpec::default()
        };
        assert!(generate(&spec).is_err());
        let spec = PlantSpec {
            noise_sigma: f64::NAN,
            ..PlantSpec::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn context_matrix_is_symmetric_with_unit_diagonal() {
        let city = generate(&PlantSpec::default()).unwrap();
        let m = city.w.w.rows();
        for p in 0..m {
            assert!((city.w.w.get(p, p) - 1.0).abs() < 1e-12);
            for q in 0..m {
                assert!((city.w.w.get(p, q) - city.w.w.get(q, p)).abs() < 1e-12);
                assert!(city.w.w.get(p, q) >= 0.0 && city.w.w.get(p, q) <= 1.0);
            }
        }
    }

    #[test]
    fn tidal_plant_shows_in_concentrated_core() {
        let city = generate(&PlantSpec::default()).unwrap();
        let cprime = crate::analysis::concentrated_core(&city.ground_truth);
        let morning = crate::analysis::od_slice(&cprime, 0).unwrap();
        let evening = crate::analysis::od_slice(&cprime, 2).unwrap();
        // Morning: flows into pattern 0 dominate other off-diagonal flows.
        for i in 1..4 {
            for j in 1..4 {
                if i != j {
                    assert!(morning.get(i, 0) > morning.get(i, j));
                }
            }
        }
        // Evening: flows out of pattern 0 dominate other off-diagonal flows.
        for j in 1..4 {
            for i in 1..4 {
                if i != j {
                    assert!(evening.get(0, j) > evening.get(i, j));
                }
            }
        }
    }

    #[test]
    fn full_rate_mask_is_all_ones() {
        let mask = sample_mask((3, 3, 2), 1.0, 5).unwrap();
        assert_eq!(mask.observed_count(), 18);
    }

    #[test]
    fn mask_density_tracks_rate() {
        let mask = sample_mask((50, 50, 40), 0.5, 9).unwrap();
        let density = mask.observed_count() as f64 / 100_000.0;
        assert!((density - 0.5).abs() < 0.01, "density {density}");
    }

    #[test]
    fn mask_is_deterministic_and_rate_checked() {
        let a = sample_mask((4, 4, 3), 0.7, 11).unwrap();
        let b = sample_mask((4, 4, 3), 0.7, 11).unwrap();
        assert_eq!(a.mask.values(), b.mask.values());
        assert!(sample_mask((2, 2, 2), 0.0, 1).is_err());
        assert!(sample_mask((2, 2, 2), 1.5, 1).is_err());
    }

    #[test]
    fn random_trips_are_in_range_and_deterministic() {
        let a = random_trips(30, 12, 1000, 3);
        let b = random_trips(30, 12, 1000, 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.origin_zone < 30 && t.dest_zone < 30 && t.start_slice < 12));
    }

    #[test]
    fn random_poi_table_has_no_empty_zones() {
        let table = random_poi_table(20, crate::ingest::default_poi_categories(), 4);
        assert_eq!(table.counts.len(), 20);
        assert!(table.counts.iter().all(|row| row.iter().sum::<u64>() > 0));
    }
}
