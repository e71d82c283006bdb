//! Builds the data tensor from ODT trip records, the urban-context similarity
//! matrix from POI counts, and the neighbor graph from zone adjacency pairs.
//!
//! Map matching is out of scope: upstream tools must already have mapped GPS
//! points to zone and time-slice indices (see the trip CSV contract in the
//! README).

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};
use serde::{Deserialize, Serialize};
use std::io::BufRead;

/// One origin-destination-time record, post map-matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle_id: String,
    pub origin_zone: usize,
    pub dest_zone: usize,
    pub start_slice: usize,
}

/// Per-zone POI counts by category. `counts[p][h]` is the number of POIs of
/// category `h` in zone `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiTable {
    pub counts: Vec<Vec<u64>>,
    pub category_names: Vec<String>,
}

/// Symmetric zone-similarity matrix with entries in [0,1]. Zones without any
/// POIs are inactive: their rows are zero off-diagonal and they are excluded
/// from the context penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMatrix {
    pub w: Matrix,
    pub active: Vec<bool>,
}

/// Undirected zone adjacency. `neighbors[x]` is the set M_x, sorted,
/// without self-loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
}

impl PoiTable {
    pub fn zones(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.category_names.len()
    }
}

impl NeighborGraph {
    pub fn zones(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, x: usize) -> &[usize] {
        &self.neighbors[x]
    }
}

/// Counts trips per (origin, destination, slice) cell and applies the
/// log(1 + count) rescale. Out-of-range records are counted as rejections
/// rather than aborting the build.
pub fn build_data_tensor(
    trips: &[TripRecord],
    zones: usize,
    slices: usize,
) -> (Tensor3, IngestReport) {
    let mut counts = Tensor3::zeros(zones, zones, slices);
    let mut report = IngestReport::default();
    for trip in trips {
        if trip.origin_zone >= zones || trip.dest_zone >= zones || trip.start_slice >= slices {
            report.rejected += 1;
            continue;
        }
        let v = counts.get(trip.origin_zone, trip.dest_zone, trip.start_slice);
        counts.set(trip.origin_zone, trip.dest_zone, trip.start_slice, v + 1.0);
        report.accepted += 1;
    }
    for v in counts.values_mut() {
        *v = (1.0 + *v).ln();
    }
    (counts, report)
}

/// POI context vector u_p of length H+1: per-category citywide fractions
/// followed by the zone's share of all POIs. Categories absent citywide
/// contribute 0.
pub fn poi_context_vector(table: &PoiTable, p: usize) -> Vec<f64> {
    let h = table.categories();
    let mut column_totals = vec![0u64; h];
    let mut grand_total = 0u64;
    for row in &table.counts {
        for (c, n) in row.iter().enumerate() {
            column_totals[c] += n;
            grand_total += n;
        }
    }
    let mut u = Vec::with_capacity(h + 1);
    for c in 0..h {
        if column_totals[c] == 0 {
            u.push(0.0);
        } else {
            u.push(table.counts[p][c] as f64 / column_totals[c] as f64);
        }
    }
    let zone_total: u64 = table.counts[p].iter().sum();
    if grand_total == 0 {
        u.push(0.0);
    } else {
        u.push(zone_total as f64 / grand_total as f64);
    }
    u
}

/// Pairwise cosine of POI context vectors. Zones with no POIs at all are
/// flagged inactive and get zero rows off-diagonal.
pub fn build_context_matrix(table: &PoiTable) -> Result<ContextMatrix> {
    let m = table.zones();
    let total: u64 = table.counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidInput("POI table is entirely zero".into()));
    }
    let vectors: Vec<Vec<f64>> = (0..m).map(|p| poi_context_vector(table, p)).collect();
    let norms: Vec<f64> = vectors
        .iter()
        .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let active: Vec<bool> = norms.iter().map(|n| *n > 0.0).collect();
    let mut w = Matrix::zeros(m, m);
    for p in 0..m {
        if !active[p] {
            continue;
        }
        for q in p..m {
            if !active[q] {
                continue;
            }
            let dot: f64 = vectors[p].iter().zip(&vectors[q]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[p] * norms[q])).min(1.0);
            w.set(p, q, c);
            w.set(q, p, c);
        }
    }
    Ok(ContextMatrix { w, active })
}

impl NeighborGraph {
    /// Symmetric closure of undirected pairs; self-loops dropped, duplicates
    /// merged. Pairs referencing zones >= `zones` are rejected.
    pub fn from_pairs(pairs: &[(usize, usize)], zones: usize) -> Result<NeighborGraph> {
        let mut neighbors = vec![Vec::new(); zones];
        for (line, &(a, b)) in pairs.iter().enumerate() {
            if a >= zones || b >= zones {
                return Err(Error::Parse {
                    line: line + 1,
                    msg: format!("zone pair ({a},{b}) out of range for {zones} zones"),
                });
            }
            if a == b {
                continue;
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(NeighborGraph { neighbors })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {s:?}"),
    })
}

/// Trip CSV: header `vid,origin_zone,dest_zone,slice`, one record per line.
pub fn read_trip_csv<R: BufRead>(reader: R) -> Result<Vec<TripRecord>> {
    let mut trips = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if i == 0 && trimmed.starts_with("vid") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        trips.push(TripRecord {
            vehicle_id: fields[0].trim().to_string(),
            origin_zone: parse_field(fields[1], line_no, "origin_zone")?,
            dest_zone: parse_field(fields[2], line_no, "dest_zone")?,
            start_slice: parse_field(fields[3], line_no, "slice")?,
        });
    }
    Ok(trips)
}

/// POI CSV: header `zone,category,count`, categories indexed 1..H matching
/// `category_names`.
pub fn read_poi_csv<R: BufRead>(reader: R, zones: usize, category_names: Vec<String>) -> Result<PoiTable> {
    let h = category_names.len();
    let mut counts = vec![vec![0u64; h]; zones];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if i == 0 && trimmed.starts_with("zone") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let zone: usize = parse_field(fields[0], line_no, "zone")?;
        let category: usize = parse_field(fields[1], line_no, "category")?;
        let count: u64 = parse_field(fields[2], line_no, "count")?;
        if zone >= zones {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("zone {zone} out of range"),
            });
        }
        if category < 1 || category > h {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("category {category} outside 1..{h}"),
            });
        }
        counts[zone][category - 1] += count;
    }
    Ok(PoiTable {
        counts,
        category_names,
    })
}

/// Adjacency CSV: header `zone_a,zone_b`, undirected.
pub fn read_adjacency_csv<R: BufRead>(reader: R, zones: usize) -> Result<NeighborGraph> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if i == 0 && trimmed.starts_with("zone_a") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let a: usize = parse_field(fields[0], line_no, "zone_a")?;
        let b: usize = parse_field(fields[1], line_no, "zone_b")?;
        if a >= zones || b >= zones {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("zone pair ({a},{b}) out of range"),
            });
        }
        pairs.push((a, b));
    }
    NeighborGraph::from_pairs(&pairs, zones)
}

/// Default POI category list (14 categories).
pub fn default_poi_categories() -> Vec<String> {
    [
        "food & beverage service",
        "hotel",
        "scenic spot",
        "finance & insurance",
        "corporate business",
        "shopping service",
        "transportation facilities",
        "education and culture",
        "business building",
        "residence",
        "living service",
        "sports & entertainments",
        "medical care",
        "government agencies",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn trip(x: usize, y: usize, z: usize) -> TripRecord {
        TripRecord {
            vehicle_id: "v".into(),
            origin_zone: x,
            dest_zone: y,
            start_slice: z,
        }
    }

    #[test]
    fn empty_trip_list_gives_zero_tensor() {
        let (t, report) = build_data_tensor(&[], 4, 3);
        assert!(t.values().iter().all(|v| *v == 0.0));
        assert_eq!(report.accepted, 0);
    }

    #[test]
    fn single_trip_gives_ln2() {
        let (t, _) = build_data_tensor(&[trip(2, 5, 8)], 10, 24);
        assert!((t.get(2, 5, 8) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            t.values().iter().filter(|v| **v != 0.0).count(),
            1
        );
    }

    #[test]
    fn random_trips_match_counting_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let (zones, slices) = (6, 4);
        let trips: Vec<TripRecord> = (0..1000)
            .map(|_| {
                trip(
                    rng.gen_range(0..zones),
                    rng.gen_range(0..zones),
                    rng.gen_range(0..slices),
                )
            })
            .collect();
        let (t, report) = build_data_tensor(&trips, zones, slices);
        assert_eq!(report.accepted, 1000);
        // Independent counting pass.
        let mut counts = vec![0u64; zones * zones * slices];
        for tr in &trips {
            counts[tr.origin_zone + zones * (tr.dest_zone + zones * tr.start_slice)] += 1;
        }
        for x in 0..zones {
            for y in 0..zones {
                for z in 0..slices {
                    let c = counts[x + zones * (y + zones * z)] as f64;
                    assert!((t.get(x, y, z) - (1.0 + c).ln()).abs() < 1e-14);
                }
            }
        }
        // Total trip count recoverable from the log rescale.
        let total: f64 = t.values().iter().map(|v| v.exp() - 1.0).sum();
        assert!((total - 1000.0).abs() / 1000.0 < 1e-9);
    }

    #[test]
    fn out_of_range_trips_are_rejected() {
        let (_, report) = build_data_tensor(&[trip(0, 0, 0), trip(9, 0, 0)], 3, 3);
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn build_tensor_is_permutation_invariant() {
        let mut rng = StdRng::seed_from_u64(12);
        let mut trips: Vec<TripRecord> = (0..200)
            .map(|_| trip(rng.gen_range(0..4), rng.gen_range(0..4), rng.gen_range(0..3)))
            .collect();
        let (t1, _) = build_data_tensor(&trips, 4, 3);
        trips.reverse();
        let (t2, _) = build_data_tensor(&trips, 4, 3);
        assert_eq!(t1, t2);
    }

    #[test]
    fn context_vector_single_category_owner() {
        let table = PoiTable {
            counts: vec![vec![10, 0], vec![0, 0], vec![0, 0]],
            category_names: vec!["a".into(), "b".into()],
        };
        let u = poi_context_vector(&table, 0);
        assert_eq!(u, vec![1.0, 0.0, 1.0]);
        let u1 = poi_context_vector(&table, 1);
        assert_eq!(u1, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn context_vector_two_distinct_zones() {
        let table = PoiTable {
            counts: vec![vec![5, 0], vec![0, 5]],
            category_names: vec!["a".into(), "b".into()],
        };
        assert_eq!(poi_context_vector(&table, 0), vec![1.0, 0.0, 0.5]);
        assert_eq!(poi_context_vector(&table, 1), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn context_vector_matches_recomputation() {
        let mut rng = StdRng::seed_from_u64(13);
        let counts: Vec<Vec<u64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(0..20)).collect())
            .collect();
        let table = PoiTable {
            counts: counts.clone(),
            category_names: vec!["a".into(), "b".into(), "c".into()],
        };
        for p in 0..4 {
            let u = poi_context_vector(&table, p);
            // Spreadsheet-style recomputation.
            for h in 0..3 {
                let col: u64 = counts.iter().map(|r| r[h]).sum();
                let expected = if col == 0 {
                    0.0
                } else {
                    counts[p][h] as f64 / col as f64
                };
                assert!((u[h] - expected).abs() < 1e-15);
            }
            let grand: u64 = counts.iter().flatten().sum();
            let zone: u64 = counts[p].iter().sum();
            assert!((u[3] - zone as f64 / grand as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn context_matrix_identical_zones() {
        let table = PoiTable {
            counts: vec![vec![3, 1], vec![3, 1]],
            category_names: vec!["a".into(), "b".into()],
        };
        let ctx = build_context_matrix(&table).unwrap();
        assert!((ctx.w.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((ctx.w.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn context_matrix_hand_cosine() {
        // Zone A: category 1 only (count 4); zone B: category 2 only (count 4).
        // u_A = (1, 0, 0.5), u_B = (0, 1, 0.5).
        let table = PoiTable {
            counts: vec![vec![4, 0], vec![0, 4]],
            category_names: vec!["a".into(), "b".into()],
        };
        let ctx = build_context_matrix(&table).unwrap();
        let ua = [1.0, 0.0, 0.5];
        let ub = [0.0, 1.0, 0.5];
        let dot: f64 = ua.iter().zip(&ub).map(|(a, b)| a * b).sum();
        let na = ua.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = ub.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ctx.w.get(0, 1) - dot / (na * nb)).abs() < 1e-12);
    }

    #[test]
    fn context_matrix_symmetric_and_bounded() {
        let mut rng = StdRng::seed_from_u64(14);
        let counts: Vec<Vec<u64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(0..30)).collect())
            .collect();
        let table = PoiTable {
            counts,
            category_names: (0..4).map(|i| format!("c{i}")).collect(),
        };
        let ctx = build_context_matrix(&table).unwrap();
        for p in 0..6 {
            for q in 0..6 {
                assert_eq!(ctx.w.get(p, q), ctx.w.get(q, p));
                assert!(ctx.w.get(p, q) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn context_matrix_rejects_all_zero_table() {
        let table = PoiTable {
            counts: vec![vec![0, 0]; 3],
            category_names: vec!["a".into(), "b".into()],
        };
        assert!(build_context_matrix(&table).is_err());
    }

    #[test]
    fn context_less_zone_gets_zero_row() {
        let table = PoiTable {
            counts: vec![vec![3, 1], vec![0, 0], vec![1, 2]],
            category_names: vec!["a".into(), "b".into()],
        };
        let ctx = build_context_matrix(&table).unwrap();
        assert!(!ctx.active[1]);
        for q in 0..3 {
            assert_eq!(ctx.w.get(1, q), 0.0);
            assert_eq!(ctx.w.get(q, 1), 0.0);
        }
    }

    #[test]
    fn neighbor_graph_symmetric_dedup() {
        let g = NeighborGraph::from_pairs(&[(0, 1)], 3).unwrap();
        assert_eq!(g.neighbors_of(0), &[1]);
        assert_eq!(g.neighbors_of(1), &[0]);
        assert!(g.neighbors_of(2).is_empty());

        let g2 = NeighborGraph::from_pairs(&[(0, 1), (1, 0)], 3).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn neighbor_graph_rejects_dangling_zone() {
        let err = NeighborGraph::from_pairs(&[(0, 5)], 3).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn grid_adjacency_degree_histogram() {
        // 6x5 grid, 4-neighborhood: corners have degree 2, edges 3, interior 4.
        let (w, h) = (6usize, 5usize);
        let mut pairs = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let z = r * w + c;
                if c + 1 < w {
                    pairs.push((z, z + 1));
                }
                if r + 1 < h {
                    pairs.push((z, z + w));
                }
            }
        }
        let g = NeighborGraph::from_pairs(&pairs, w * h).unwrap();
        let mut histogram = [0usize; 5];
        for z in 0..w * h {
            histogram[g.neighbors_of(z).len()] += 1;
        }
        // Oracle recount: 4 corners, 2*(w-2)+2*(h-2) edges, rest interior.
        assert_eq!(histogram[2], 4);
        assert_eq!(histogram[3], 2 * (w - 2) + 2 * (h - 2));
        assert_eq!(histogram[4], (w - 2) * (h - 2));
    }

    #[test]
    fn csv_round_trips() {
        let trips_csv = "vid,origin_zone,dest_zone,slice\nv1,0,1,2\nv2,2,0,1\n";
        let trips = read_trip_csv(trips_csv.as_bytes()).unwrap();
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[1].origin_zone, 2);

        let poi_csv = "zone,category,count\n0,1,5\n1,2,3\n";
        let table = read_poi_csv(poi_csv.as_bytes(), 2, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(table.counts[0][0], 5);
        assert_eq!(table.counts[1][1], 3);

        let adj_csv = "zone_a,zone_b\n0,1\n";
        let g = read_adjacency_csv(adj_csv.as_bytes(), 2).unwrap();
        assert_eq!(g.neighbors_of(0), &[1]);
    }

    #[test]
    fn malformed_csv_reports_line_number() {
        let bad = "vid,origin_zone,dest_zone,slice\nv1,0,1\n";
        match read_trip_csv(bad.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
