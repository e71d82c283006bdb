use crate::config::{resolve_out_dir, write_run_manifest, RunConfig};
use anyhow::{bail, Context, Result};
use odtf_core::analysis::{
    assign_communities, concentrated_core, held_out_rmse, inter_intra_intensity, od_slice,
    full_count_rmse, rescaled_coefficients, rmse,
};
use odtf_core::baselines::{cp_solve, cp_to_tucker, random_cp_init, tucker_solve};
use odtf_core::ingest::{
    build_context_matrix, build_data_tensor, default_poi_categories, read_adjacency_csv,
    read_poi_csv, read_trip_csv, ContextMatrix, NeighborGraph,
};
use odtf_core::io::{
    read_checkpoint, read_context_bin, read_sequence_manifest, read_tensor_bin, write_adjacency_csv,
    write_checkpoint, write_context_bin, write_poi_csv, write_tensor_bin, write_tensor_csv,
    write_trip_csv, Checkpoint, CheckpointModel, ModelKind,
};
use odtf_core::model::{Hyperparameters, SampleMask};
use odtf_core::sequence::{pi_tsa, YearInput};
use odtf_core::solver::{bcd_solve, random_init};
use odtf_core::synth::{generate, random_poi_table, random_trips, sample_mask, PlantSpec};
use odtf_core::tensor::Tensor3;
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_tensor(path: &Path) -> Result<Tensor3> {
    read_tensor_bin(&mut open_reader(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_context(path: &Path) -> Result<ContextMatrix> {
    read_context_bin(&mut open_reader(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(path: &Path, zones: usize) -> Result<NeighborGraph> {
    read_adjacency_csv(open_reader(path)?, zones)
        .with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveReport {
    kind: ModelKind,
    seed: u64,
    rounds: usize,
    final_objective: f64,
    full_rmse: f64,
    nr_skipped_rounds: Vec<usize>,
    elapsed_seconds: f64,
}

pub struct IngestArgs {
    pub trips: PathBuf,
    pub poi: PathBuf,
    pub adjacency: PathBuf,
    pub zones: usize,
    pub slices: usize,
}

pub fn cmd_ingest(args: &IngestArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let trips = read_trip_csv(open_reader(&args.trips)?)
        .with_context(|| format!("reading {}", args.trips.display()))?;
    let (tensor, report) = build_data_tensor(&trips, args.zones, args.slices);
    let table = read_poi_csv(open_reader(&args.poi)?, args.zones, default_poi_categories())
        .with_context(|| format!("reading {}", args.poi.display()))?;
    let context = build_context_matrix(&table)?;
    let graph = load_graph(&args.adjacency, args.zones)?;

    write_tensor_bin(&mut create_writer(&out.join("tensor.bin"))?, &tensor)?;
    write_tensor_csv(&mut create_writer(&out.join("tensor.csv"))?, &tensor)?;
    write_context_bin(&mut create_writer(&out.join("context.bin"))?, &context)?;
    write_adjacency_csv(&mut create_writer(&out.join("graph.csv"))?, &graph)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    write_run_manifest(&out, "ingest", &serde_json::to_string(config)?, 0)?;
    println!(
        "ingested {} trips ({} rejected) into {}x{}x{} tensor",
        report.accepted, report.rejected, args.zones, args.zones, args.slices
    );
    Ok(())
}

pub struct FactorizeArgs {
    pub tensor: PathBuf,
    pub context: PathBuf,
    pub graph: Option<PathBuf>,
    pub no_nr: bool,
}

pub fn cmd_factorize(args: &FactorizeArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let r = load_tensor(&args.tensor)?;
    let w = load_context(&args.context)?;
    let mut h = config.hyperparameters();
    if args.no_nr {
        h.nr_enabled = false;
    }
    let graph = match &args.graph {
        Some(p) => Some(load_graph(p, r.dims().0)?),
        None => None,
    };
    if h.nr_enabled && graph.is_none() {
        bail!("neighboring regularization needs --graph");
    }
    let seed = config.seed.unwrap_or(0);
    let start = Instant::now();
    let init = random_init(&r, &h, seed);
    let result = bcd_solve(&r, &w, &h, init, graph.as_ref(), None)?;
    let elapsed = start.elapsed().as_secs_f64();

    let kind = if h.nr_enabled { ModelKind::NrCntf } else { ModelKind::Cntf };
    let full_rmse = rmse(&r, &result.model.reconstruct())?;
    let report = SolveReport {
        kind,
        seed,
        rounds: result.objective_history.len() - 1,
        final_objective: *result.objective_history.last().unwrap(),
        full_rmse,
        nr_skipped_rounds: result.nr_skipped_rounds.clone(),
        elapsed_seconds: elapsed,
    };
    let checkpoint = Checkpoint {
        kind,
        hyperparameters: h,
        seed,
        model: CheckpointModel::Tucker(result.model),
        objective_history: result.objective_history,
        nr_skipped_rounds: result.nr_skipped_rounds,
    };
    write_checkpoint(&mut create_writer(&out.join("checkpoint.json"))?, &checkpoint)?;
    write_json(&out.join("report.json"), &report)?;
    write_run_manifest(&out, "factorize", &serde_json::to_string(config)?, seed)?;
    println!("factorized in {} rounds, full RMSE {:.6}", report.rounds, full_rmse);
    Ok(())
}

pub struct CompleteArgs {
    pub tensor: PathBuf,
    pub context: PathBuf,
    pub graph: PathBuf,
    pub rates: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct CompletionRow {
    rate: f64,
    nr_cntf: f64,
    cntf: f64,
    tucker: f64,
    cp: f64,
    nr_cntf_full_count: f64,
}

pub fn cmd_complete(args: &CompleteArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let r = load_tensor(&args.tensor)?;
    let w = load_context(&args.context)?;
    let graph = load_graph(&args.graph, r.dims().0)?;
    let h = config.hyperparameters();
    let seed = config.seed.unwrap_or(0);
    let rates = if args.rates.is_empty() {
        vec![0.5, 0.6, 0.7, 0.8, 0.9]
    } else {
        args.rates.clone()
    };

    let mut rows = Vec::new();
    for (i, &rate) in rates.iter().enumerate() {
        let cell_seed = seed.wrapping_add(i as u64);
        let mask = sample_mask(r.dims(), rate, cell_seed)?;
        let holdout = complement(&mask)?;
        let init = random_init(&r, &h, cell_seed);

        let mut h_nr = h.clone();
        h_nr.nr_enabled = true;
        let nr = bcd_solve(&r, &w, &h_nr, init.clone(), Some(&graph), Some(&mask))?;

        let mut h_plain = h.clone();
        h_plain.nr_enabled = false;
        let plain = bcd_solve(&r, &w, &h_plain, init.clone(), None, Some(&mask))?;
        let tucker = tucker_solve(&r, &h_plain, Some(&mask), init.clone())?;
        let cp = cp_solve(
            &r,
            &h_plain,
            Some(&mask),
            random_cp_init(&r, h.dim_k, &h_plain, cell_seed),
        )?;

        let nr_recon = nr.model.reconstruct();
        rows.push(CompletionRow {
            rate,
            nr_cntf: held_out_rmse(&r, &nr_recon, &holdout)?,
            cntf: held_out_rmse(&r, &plain.model.reconstruct(), &holdout)?,
            tucker: held_out_rmse(&r, &tucker.model.reconstruct(), &holdout)?,
            cp: held_out_rmse(&r, &cp_to_tucker(&cp.model)?.reconstruct(), &holdout)?,
            nr_cntf_full_count: full_count_rmse(&r, &nr_recon, &holdout)?,
        });
    }

    let mut csv = create_writer(&out.join("completion_table.csv"))?;
    writeln!(csv, "rate,nr_cntf,cntf,tucker,cp,nr_cntf_full_count")?;
    for row in &rows {
        writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.rate, row.nr_cntf, row.cntf, row.tucker, row.cp, row.nr_cntf_full_count
        )?;
    }
    csv.flush()?;
    write_json(&out.join("completion_report.json"), &rows)?;
    write_run_manifest(&out, "complete", &serde_json::to_string(config)?, seed)?;
    println!("completion table written for {} rates", rows.len());
    Ok(())
}

fn complement(mask: &SampleMask) -> Result<SampleMask> {
    let mut inverted = mask.mask.clone();
    for v in inverted.values_mut() {
        *v = 1.0 - *v;
    }
    Ok(SampleMask::new(inverted)?)
}

pub struct SequenceArgs {
    pub manifest: PathBuf,
    pub graph: Option<PathBuf>,
}

pub fn cmd_sequence(args: &SequenceArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let manifest = read_sequence_manifest(open_reader(&args.manifest)?)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let mut inputs = Vec::new();
    for entry in &manifest.years {
        let tensor = load_tensor(&base.join(&entry.tensor_path))?;
        let context = load_context(&base.join(&entry.context_path))?;
        let mask = match &entry.mask_path {
            Some(p) => Some(SampleMask::new(load_tensor(&base.join(p))?)?),
            None => None,
        };
        inputs.push(YearInput {
            label: entry.label.clone(),
            tensor,
            context,
            mask,
        });
    }
    let h = config.hyperparameters();
    let graph = match &args.graph {
        Some(p) => Some(load_graph(p, inputs[0].tensor.dims().0)?),
        None => None,
    };
    if h.nr_enabled && graph.is_none() {
        bail!("neighboring regularization needs --graph");
    }
    let seed = config.seed.unwrap_or(0);
    let sequence = pi_tsa(&inputs, &h, graph.as_ref(), seed)?;

    let kind = if h.nr_enabled { ModelKind::NrCntf } else { ModelKind::Cntf };
    for year in &sequence.years {
        let checkpoint = Checkpoint {
            kind,
            hyperparameters: h.clone(),
            seed,
            model: CheckpointModel::Tucker(year.model.clone()),
            objective_history: year.objective_history.clone(),
            nr_skipped_rounds: vec![],
        };
        write_checkpoint(
            &mut create_writer(&out.join(format!("year_{}.json", year.label)))?,
            &checkpoint,
        )?;
    }
    write_json(&out.join("drift_report.json"), &sequence.drift)?;
    write_run_manifest(&out, "sequence", &serde_json::to_string(config)?, seed)?;
    println!("sequence of {} years solved", sequence.years.len());
    Ok(())
}

pub struct SweepArgs {
    pub tensor: PathBuf,
    pub context: PathBuf,
    pub spatial_dims: Vec<usize>,
    pub temporal_dims: Vec<usize>,
}

pub fn cmd_sweep(args: &SweepArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let r = load_tensor(&args.tensor)?;
    let w = load_context(&args.context)?;
    let base = config.hyperparameters();
    let seed = config.seed.unwrap_or(0);

    let solve_cell = |h: &Hyperparameters, cell_seed: u64| -> Result<f64> {
        let mut hc = h.clone();
        hc.nr_enabled = false;
        let init = random_init(&r, &hc, cell_seed);
        let result = bcd_solve(&r, &w, &hc, init, None, None)?;
        Ok(rmse(&r, &result.model.reconstruct())?)
    };

    let mut ij_csv = create_writer(&out.join("sweep_spatial.csv"))?;
    writeln!(ij_csv, "spatial_dim,rmse")?;
    for (i, &dim) in args.spatial_dims.iter().enumerate() {
        let mut h = base.clone();
        h.dim_i = dim;
        h.dim_j = dim;
        let value = solve_cell(&h, seed.wrapping_add(i as u64))?;
        writeln!(ij_csv, "{dim},{value:.6}")?;
    }
    ij_csv.flush()?;

    let mut k_csv = create_writer(&out.join("sweep_temporal.csv"))?;
    writeln!(k_csv, "temporal_dim,rmse")?;
    for (i, &dim) in args.temporal_dims.iter().enumerate() {
        let mut h = base.clone();
        h.dim_k = dim;
        let value = solve_cell(&h, seed.wrapping_add(1000 + i as u64))?;
        writeln!(k_csv, "{dim},{value:.6}")?;
    }
    k_csv.flush()?;
    write_run_manifest(&out, "sweep", &serde_json::to_string(config)?, seed)?;
    println!(
        "sweep finished: {} spatial and {} temporal cells",
        args.spatial_dims.len(),
        args.temporal_dims.len()
    );
    Ok(())
}

pub struct SynthArgs {
    pub grid_width: usize,
    pub grid_height: usize,
    pub slices: usize,
    pub dim_i: usize,
    pub dim_j: usize,
    pub dim_k: usize,
    pub noise: f64,
    pub trips: usize,
}

pub fn cmd_synth(args: &SynthArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let seed = config.seed.unwrap_or(0);
    let spec = PlantSpec {
        grid_width: args.grid_width,
        grid_height: args.grid_height,
        n_slices: args.slices,
        dim_i: args.dim_i,
        dim_j: args.dim_j,
        dim_k: args.dim_k,
        noise_sigma: args.noise,
        seed,
    };
    let city = generate(&spec)?;
    write_tensor_bin(&mut create_writer(&out.join("tensor.bin"))?, &city.r)?;
    write_tensor_csv(&mut create_writer(&out.join("tensor.csv"))?, &city.r)?;
    write_context_bin(&mut create_writer(&out.join("context.bin"))?, &city.w)?;
    write_adjacency_csv(&mut create_writer(&out.join("graph.csv"))?, &city.graph)?;

    let zones = spec.zones();
    let trips = random_trips(zones, spec.n_slices, args.trips, seed);
    write_trip_csv(&mut create_writer(&out.join("trips.csv"))?, &trips)?;
    let poi = random_poi_table(zones, default_poi_categories(), seed);
    write_poi_csv(&mut create_writer(&out.join("poi.csv"))?, &poi)?;

    let truth = Checkpoint {
        kind: ModelKind::NrCntf,
        hyperparameters: Hyperparameters {
            dim_i: spec.dim_i,
            dim_j: spec.dim_j,
            dim_k: spec.dim_k,
            ..Hyperparameters::default()
        },
        seed,
        model: CheckpointModel::Tucker(city.ground_truth),
        objective_history: vec![],
        nr_skipped_rounds: vec![],
    };
    write_checkpoint(&mut create_writer(&out.join("ground_truth.json"))?, &truth)?;
    write_json(&out.join("plant_spec.json"), &spec)?;
    write_run_manifest(&out, "synth", &serde_json::to_string(config)?, seed)?;
    println!("synthetic city with {zones} zones written to {}", out.display());
    Ok(())
}

pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    kind: ModelKind,
    origin_communities: Vec<usize>,
    destination_communities: Vec<usize>,
    empty_origin_patterns: Vec<usize>,
    empty_destination_patterns: Vec<usize>,
    pattern_energies: Vec<f64>,
    inter: Vec<f64>,
    intra: Vec<f64>,
}

pub fn cmd_analyze(args: &AnalyzeArgs, config: &RunConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out)?;
    let checkpoint = read_checkpoint(open_reader(&args.checkpoint)?)?;
    let model = checkpoint.factor_model()?;

    let origin = assign_communities(&model.o);
    let dest = assign_communities(&model.d);
    let rhythm = rescaled_coefficients(model)?;
    let cprime = concentrated_core(model);
    let (i_dim, j_dim, k_dim) = cprime.dims();

    let mut communities = create_writer(&out.join("communities.csv"))?;
    writeln!(communities, "zone,origin_pattern,destination_pattern")?;
    for z in 0..origin.labels.len() {
        writeln!(communities, "{z},{},{}", origin.labels[z], dest.labels[z])?;
    }
    communities.flush()?;

    let mut rhythms = create_writer(&out.join("rhythms.csv"))?;
    let header: Vec<String> = (0..k_dim).map(|k| format!("pattern_{k}")).collect();
    writeln!(rhythms, "slice,{}", header.join(","))?;
    for z in 0..rhythm.rescaled.rows() {
        let row: Vec<String> = (0..k_dim)
            .map(|k| format!("{:.12e}", rhythm.rescaled.get(z, k)))
            .collect();
        writeln!(rhythms, "{z},{}", row.join(","))?;
    }
    rhythms.flush()?;

    for k in 0..k_dim {
        let slice = od_slice(&cprime, k)?;
        let mut f = create_writer(&out.join(format!("od_slice_{k}.csv")))?;
        for i in 0..i_dim {
            let row: Vec<String> = (0..j_dim).map(|j| format!("{:.12e}", slice.get(i, j))).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
    }

    let intensities = if i_dim == j_dim {
        let report = inter_intra_intensity(&cprime)?;
        let mut f = create_writer(&out.join("intensities.csv"))?;
        writeln!(f, "community,inter,intra")?;
        for c in 0..report.inter.len() {
            writeln!(f, "{c},{:.12e},{:.12e}", report.inter[c], report.intra[c])?;
        }
        f.flush()?;
        Some(report)
    } else {
        None
    };

    let summary = AnalysisSummary {
        kind: checkpoint.kind,
        origin_communities: origin.labels.clone(),
        destination_communities: dest.labels.clone(),
        empty_origin_patterns: origin.empty_patterns(),
        empty_destination_patterns: dest.empty_patterns(),
        pattern_energies: rhythm.energies.clone(),
        inter: intensities.as_ref().map(|r| r.inter.clone()).unwrap_or_default(),
        intra: intensities.as_ref().map(|r| r.intra.clone()).unwrap_or_default(),
    };
    write_json(&out.join("analysis.json"), &summary)?;
    write_run_manifest(&out, "analyze", &serde_json::to_string(config)?, checkpoint.seed)?;
    println!("analysis written to {}", out.display());
    Ok(())
}
