//! Command-line front end: one subcommand per pipeline, each writing a
//! manifest followed by CSV and SVG artifacts into its output directory.

pub mod config;
pub mod svg;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{
    generate_synthetic_fleet, load_capacity, load_cells, split_holdout, write_capacity, write_cells, CapacityTable,
    CellRecords,
};
use crate::error::{Error, Result};
use crate::eval::{
    correlate_with_capacity, default_grid, estimate_history_with_references, isomap_2d, pca_2d, reference_pool,
    run_ablation, strided_cycles, write_ablation_csv, write_health_csv, CorrelationReport, HealthEstimate,
    DEFAULT_REFERENCES,
};
use crate::ewt::{build_filterbank, detect_boundaries, fourier_magnitude};
use crate::finetune::{finetune_capacity, write_predictions_csv, CapacityPrediction};
use crate::nn::{checkpoint, Model};
use crate::train::{train, write_loss_history};

pub use config::{Overrides, RunConfig, RunManifest, MANIFEST_FILE};
use svg::{Chart, Marker};

#[derive(Debug, Parser)]
#[command(name = "dssl", version, about = "Self-supervised battery health indicators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Args)]
pub struct Common {
    /// TOML run configuration; missing sections take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Patch window length in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// Stochastic draws per evaluated cycle.
    #[arg(long)]
    pub draws: Option<usize>,
    /// EWT mode count.
    #[arg(long)]
    pub modes: Option<usize>,
    /// EWT transition ratio.
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, window: self.window, draws: self.draws, modes: self.modes, gamma: self.gamma }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fleet and its capacity labels.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Split one signal column into EWT modes.
    Decompose {
        /// CSV file with a header row.
        signal: PathBuf,
        /// Column to decompose; defaults to the first.
        #[arg(long)]
        column: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain with the degradation loss on the training cells.
    Train {
        #[arg(long)]
        fleet: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Health indicators and their correlation with capacity.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Representations and their 2-D projections.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every case of the ablation grid.
    Ablate {
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Capacity regression from a pretrained embedding and from scratch.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves the configuration, creates the output directory and writes the manifest.
fn begin(name: &str, common: &Common, inputs: &[&Path]) -> Result<RunConfig> {
    let cfg = common.resolve()?;
    fs::create_dir_all(&common.out)?;
    RunManifest::new(name, cfg.train.seed, inputs, &common.out, &cfg).write(&common.out)?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common),
        Command::Decompose { signal, column, common } => cmd_decompose(&signal, column.as_deref(), &common),
        Command::Train { fleet, common } => cmd_train(&fleet, &common),
        Command::Eval { checkpoint, fleet, labels, common } => cmd_eval(&checkpoint, &fleet, &labels, &common),
        Command::Embed { checkpoint, fleet, labels, common } => {
            cmd_embed(&checkpoint, &fleet, labels.as_deref(), &common)
        }
        Command::Ablate { fleet, labels, common } => cmd_ablate(&fleet, &labels, &common),
        Command::Finetune { checkpoint, fleet, labels, common } => {
            cmd_finetune(checkpoint.as_deref(), &fleet, &labels, &common)
        }
    }
}

pub fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = begin("synth", common, &[])?;
    let fleet = generate_synthetic_fleet(&cfg.fleet)?;
    write_cells(create(&common.out.join("fleet.csv"))?, &fleet.cells)?;
    write_capacity(create(&common.out.join("capacity.csv"))?, &fleet.capacity)?;
    info!("wrote {} cells", fleet.cells.len());
    Ok(())
}

fn read_signal(path: &Path, column: Option<&str>) -> Result<(String, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let idx = match column {
        None => 0,
        Some(name) => headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))?,
    };
    let name = headers.get(idx).ok_or_else(|| Error::Schema("signal file has no columns".into()))?.to_string();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(idx).unwrap_or("").trim();
        values.push(field.parse().map_err(|_| Error::Data(format!("row {}: cannot parse '{field}'", line + 1)))?);
    }
    Ok((name, values))
}

fn write_column(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([name])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_decompose(signal: &Path, column: Option<&str>, common: &Common) -> Result<()> {
    let cfg = begin("decompose", common, &[signal])?;
    let (n_modes, gamma) = match cfg.patch.preprocess {
        crate::data::Preprocess::Detrend { n_modes, gamma } => (n_modes, gamma),
        crate::data::Preprocess::None => (crate::ewt::DEFAULT_DETREND_MODES, crate::ewt::DEFAULT_GAMMA),
    };
    let (name, x) = read_signal(signal, column)?;
    let spectrum = fourier_magnitude(&x)?;
    let boundaries = detect_boundaries(&spectrum, n_modes)?;
    let modes = if n_modes == 1 {
        vec![x.clone()]
    } else {
        let bound = 0.9 * boundaries.max_gamma();
        if gamma > bound {
            warn!("gamma {gamma} clipped to {bound:.4} for the detected bands");
        }
        build_filterbank(&boundaries, gamma.min(bound))?.decompose(&x)?
    };
    for (k, m) in modes.iter().enumerate() {
        write_column(&common.out.join(format!("mode_{k}.csv")), &name, m)?;
    }
    let mut w = create(&common.out.join("boundaries.csv"))?;
    for om in boundaries.omegas() {
        use std::io::Write;
        writeln!(w, "{om}")?;
    }
    info!("{} modes written", modes.len());
    Ok(())
}

fn load_fleet(path: &Path, cfg: &RunConfig) -> Result<(Vec<CellRecords>, Vec<CellRecords>)> {
    let cells = load_cells(path, &cfg.columns)?;
    let (train_cells, test_cells) = split_holdout(&cells, cfg.split.n_test_cells);
    info!("{} training cells, {} held out", train_cells.len(), test_cells.len());
    Ok((train_cells, test_cells))
}

pub fn cmd_train(fleet: &Path, common: &Common) -> Result<()> {
    let cfg = begin("train", common, &[fleet])?;
    cfg.validate_pipeline()?;
    let (train_cells, _) = load_fleet(fleet, &cfg)?;
    let out = train::<f64>(&train_cells, &cfg.model, &cfg.patch, &cfg.train, Some(&common.out))?;
    write_loss_history(create(&common.out.join("loss_history.csv"))?, &out.history)?;
    let mut chart = Chart::new("Degradation loss", "epoch", "mean loss");
    chart.lines.push(out.history.iter().map(|e| (e.epoch as f64, e.mean_loss)).collect());
    fs::write(common.out.join("loss.svg"), chart.render())?;
    Ok(())
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<Model<f64>> {
    checkpoint::load::<f64>(path, &cfg.model)
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    split: &'a str,
    cell_id: &'a str,
    pearson_r: f64,
    non_increasing: f64,
    n_points: usize,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    split: &'a str,
    mean_r: f64,
    non_increasing: f64,
}

fn health_chart(title: &str, estimates: &[HealthEstimate], labels: &CapacityTable) -> String {
    let mut chart = Chart::new(title, "capacity (Ah)", "health indicator h");
    for e in estimates {
        if let Some(q) = labels.get(&e.cell_id, e.cycle_index) {
            chart.markers.push(Marker { x: q, y: e.mean_h, err: Some(2.0 * e.std_h), shade: None });
        }
    }
    chart.render()
}

pub fn cmd_eval(ckpt: &Path, fleet: &Path, labels: &Path, common: &Common) -> Result<()> {
    let cfg = begin("eval", common, &[ckpt, fleet, labels])?;
    cfg.validate_pipeline()?;
    let model = load_model(ckpt, &cfg)?;
    let capacity = load_capacity(labels)?;
    let (train_cells, test_cells) = load_fleet(fleet, &cfg)?;

    let mut estimates = Vec::new();
    let mut per_cell = Vec::new();
    let mut summary = Vec::new();
    for (split, cells) in [("train", &train_cells), ("test", &test_cells)] {
        if cells.is_empty() {
            continue;
        }
        let report: CorrelationReport = correlate_with_capacity(&model, cells, &capacity, &cfg.patch, &cfg.eval)?;
        summary.push((split, report.mean_r(), report.pooled_non_increasing()));
        per_cell.extend(report.cells.into_iter().map(|c| (split, c)));
        estimates.extend(report.estimates);
    }
    write_health_csv(create(&common.out.join("health.csv"))?, &estimates)?;
    let rows: Vec<_> = per_cell
        .iter()
        .map(|(split, c)| CorrelationRow {
            split,
            cell_id: &c.cell_id,
            pearson_r: c.pearson_r,
            non_increasing: c.non_increasing,
            n_points: c.n_points,
        })
        .collect();
    write_rows(&common.out.join("correlation.csv"), &rows)?;
    let summary: Vec<_> =
        summary.iter().map(|&(split, mean_r, non_increasing)| SummaryRow { split, mean_r, non_increasing }).collect();
    write_rows(&common.out.join("correlation_summary.csv"), &summary)?;
    for s in &summary {
        info!("{} mean R {:.4}, non-increasing {:.3}", s.split, s.mean_r, s.non_increasing);
    }
    fs::write(common.out.join("health_vs_capacity.svg"), health_chart("Health vs capacity", &estimates, &capacity))?;

    if !test_cells.is_empty() && !train_cells.is_empty() {
        let pool = reference_pool(&train_cells, DEFAULT_REFERENCES, cfg.patch.window_len);
        let mut refs = Vec::new();
        for (k, cell) in test_cells.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
            rng.set_stream(k as u64);
            let cycles = strided_cycles(cell, cfg.eval.stride);
            refs.extend(estimate_history_with_references(
                &model,
                cell,
                &cycles,
                &pool,
                DEFAULT_REFERENCES,
                &cfg.patch,
                cfg.eval.n_draws,
                &mut rng,
            )?);
        }
        write_health_csv(create(&common.out.join("health_reference.csv"))?, &refs)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ProjectionRow<'a> {
    cell_id: &'a str,
    cycle_index: usize,
    x: f64,
    y: f64,
    #[serde(rename = "capacity_Ah")]
    capacity_ah: Option<f64>,
}

fn projection_outputs(
    out: &Path,
    stem: &str,
    title: &str,
    keys: &[(&str, usize)],
    coords: &[[f64; 2]],
    capacity: &[Option<f64>],
) -> Result<()> {
    let rows: Vec<_> = keys
        .iter()
        .zip(coords)
        .zip(capacity)
        .map(|((&(cell_id, cycle_index), c), &q)| ProjectionRow {
            cell_id,
            cycle_index,
            x: c[0],
            y: c[1],
            capacity_ah: q,
        })
        .collect();
    write_rows(&out.join(format!("{stem}.csv")), &rows)?;
    let known: Vec<f64> = capacity.iter().flatten().copied().collect();
    let lo = known.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = known.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut chart = Chart::new(title, "component 1", "component 2");
    for (c, q) in coords.iter().zip(capacity) {
        let shade = q.map(|q| if hi > lo { (q - lo) / (hi - lo) } else { 0.5 });
        chart.markers.push(Marker { x: c[0], y: c[1], err: None, shade });
    }
    fs::write(out.join(format!("{stem}.svg")), chart.render())?;
    Ok(())
}

pub fn cmd_embed(ckpt: &Path, fleet: &Path, labels: Option<&Path>, common: &Common) -> Result<()> {
    let mut inputs = vec![ckpt, fleet];
    inputs.extend(labels);
    let cfg = begin("embed", common, &inputs)?;
    cfg.validate_pipeline()?;
    let model = load_model(ckpt, &cfg)?;
    let capacity = labels.map(load_capacity).transpose()?.unwrap_or_default();
    let cells = load_cells(fleet, &cfg.columns)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let mut keys = Vec::new();
    let mut reps = Vec::new();
    for cell in &cells {
        for c in strided_cycles(cell, cfg.eval.stride) {
            let rec = cell.cycle(c).expect("strided cycle exists");
            if rec.len() < cfg.patch.window_len {
                warn!("cycle {}/{c} is shorter than the window; skipped", cell.cell_id);
                continue;
            }
            let patch = cfg.patch.sample::<f64, _>(rec, &mut rng)?;
            reps.push(model.embed(&patch)?);
            keys.push((cell.cell_id.as_str(), c));
        }
    }
    if reps.is_empty() {
        return Err(Error::Data("no cycle is long enough to embed".into()));
    }

    let mut w = csv::Writer::from_writer(create(&common.out.join("embeddings.csv"))?);
    let mut header = vec!["cell_id".to_string(), "cycle_index".to_string()];
    header.extend((0..cfg.model.d_model).map(|i| format!("r_{i}")));
    w.write_record(&header)?;
    for ((id, c), r) in keys.iter().zip(&reps) {
        let mut rec = vec![id.to_string(), c.to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let q: Vec<Option<f64>> = keys.iter().map(|&(id, c)| capacity.get(id, c)).collect();
    let pca = pca_2d(&reps)?;
    if pca.rank_deficient {
        warn!("representations have rank below 2");
    }
    projection_outputs(&common.out, "projection_pca", "PCA of representations", &keys, &pca.coords, &q)?;
    let iso = isomap_2d(&reps, cfg.split.k_neighbors)?;
    projection_outputs(&common.out, "projection_isomap", "Isomap of representations", &keys, &iso, &q)?;
    Ok(())
}

pub fn cmd_ablate(fleet: &Path, labels: &Path, common: &Common) -> Result<()> {
    let cfg = begin("ablate", common, &[fleet, labels])?;
    cfg.validate_pipeline()?;
    let capacity = load_capacity(labels)?;
    let (train_cells, test_cells) = load_fleet(fleet, &cfg)?;
    if test_cells.is_empty() {
        return Err(Error::Config("ablation needs at least one held-out cell".into()));
    }
    let grid = if cfg.ablation.grid.is_empty() { default_grid(&cfg.model) } else { cfg.ablation.grid.clone() };
    let rows = run_ablation::<f64>(
        &train_cells,
        &test_cells,
        &capacity,
        &cfg.model,
        &cfg.patch,
        &cfg.train,
        &cfg.eval,
        &grid,
    )?;
    write_ablation_csv(create(&common.out.join("ablation.csv"))?, &rows)?;
    Ok(())
}

pub fn cmd_finetune(ckpt: Option<&Path>, fleet: &Path, labels: &Path, common: &Common) -> Result<()> {
    let mut inputs = vec![fleet, labels];
    inputs.extend(ckpt);
    let cfg = begin("finetune", common, &inputs)?;
    cfg.validate_pipeline()?;
    let pretrained = ckpt.map(|p| load_model(p, &cfg)).transpose()?;
    let capacity = load_capacity(labels)?;
    let (train_cells, test_cells) = load_fleet(fleet, &cfg)?;
    let train_labels = capacity.thinned(cfg.finetune.label_stride);
    let test_labels = capacity.thinned(cfg.eval.stride);

    let mut predictions: Vec<CapacityPrediction> = Vec::new();
    let mut runs = vec![None];
    if let Some(m) = &pretrained {
        runs.insert(0, Some(&m.params));
    }
    for init in runs {
        let out = finetune_capacity(
            &train_cells,
            &train_labels,
            &test_cells,
            &test_labels,
            &cfg.model,
            &cfg.patch,
            init,
            &cfg.finetune,
        )?;
        let mode = if init.is_some() { "pretrained" } else { "scratch" };
        info!("{mode}: test MAE {:.4} Ah, mean std {:.4} Ah", out.test_mae(), out.mean_pred_std());
        predictions.extend(out.predictions);
    }
    write_predictions_csv(create(&common.out.join("predictions.csv"))?, &predictions)?;
    let mut chart = Chart::new("Capacity parity", "measured capacity (Ah)", "predicted capacity (Ah)");
    chart.diagonal = true;
    for p in &predictions {
        let shade = if p.init_mode == crate::finetune::InitMode::Pretrained { 1.0 } else { 0.0 };
        chart.markers.push(Marker {
            x: p.capacity_true_ah,
            y: p.capacity_pred_mean_ah,
            err: Some(2.0 * p.capacity_pred_std_ah),
            shade: Some(shade),
        });
    }
    fs::write(common.out.join("parity.svg"), chart.render())?;
    Ok(())
}
