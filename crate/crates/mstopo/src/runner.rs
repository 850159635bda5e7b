//! End-to-end run orchestration: train a config, write every artifact under
//! one output directory, then report numbers recomputed from those artifacts.
//!
//! Artifact layout under the output directory:
//!
//! ```text
//! config.json      resolved run configuration
//! log.csv          one loss row per epoch
//! final.ck         binary checkpoint with optimizer state
//! design_x{S}.pgm  rendered density raster at upsample S
//! clean_x{S}.pgm   postprocessed solid mask at upsample S
//! summary.json     the RunSummary
//! ```
//!
//! The summary never quotes in-memory training state: the checkpoint is
//! reloaded from disk before rendering, postprocessing and connectivity run
//! on the decoded PGM bytes, and [`metrics_from_artifacts`] recomputes the
//! headline numbers from the files alone. Re-running it on the directory
//! reproduces the summary exactly, because the checkpoint round trip is
//! bit-exact and evaluation is deterministic.
//!
//! Metrics describe the saved network's canonical cell field (the same
//! pixels a 1x render produces), not the last mini-epoch subcell, so they
//! are properties of the design rather than of the training schedule.
//! On any failure the directory's partial contents are removed.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{MaskSpec, NodeSet, RunConfig};
use crate::error::{Error, Result};
use crate::fem::compliance;
use crate::field::{build_coordinates, forward, init_network, TopologyNetwork};
use crate::homog::Homogenizer;
use crate::loss::{macro_solve, CellGrid, LossReport, ObjectiveMode};
use crate::metrics::{
    delta_metric, delta_normalized, masked_rmse, percent_hs_report, select_masked,
};
use crate::pgm::{self, PgmImage};
use crate::post::{self, ConnectivityReport, RenderedDesign};
use crate::preset::make_target;
use crate::train::{log_csv, parse_log, select_subcells, solid_compliance, TrainSetup, Trainer};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "final.ck";
pub const SUMMARY_FILE: &str = "summary.json";

/// Rendered raster file name for one upsample factor.
pub fn design_file(upsample: usize) -> String {
    format!("design_x{upsample}.pgm")
}

/// Postprocessed mask file name for one upsample factor.
pub fn clean_file(upsample: usize) -> String {
    format!("clean_x{upsample}.pgm")
}

/// Orchestration knobs that live outside the config schema.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Upsample factors to render, at least one, no repeats.
    pub upsamples: Vec<usize>,
    /// Solve the design per pixel on the first rendered raster and compare
    /// against the displacement target (displacement mode only).
    pub full_scale: bool,
    /// Cleanup threshold below which pixels never count as solid.
    pub low_cutoff: f64,
    /// Stricter threshold that decides which features are load-bearing.
    pub high_cutoff: f64,
    /// Cleanup keeps components only at or above this pixel count.
    pub min_area: usize,
    /// Suppress per-epoch progress lines.
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            upsamples: vec![1],
            full_scale: false,
            low_cutoff: 0.3,
            high_cutoff: 0.5,
            min_area: 400,
            quiet: false,
        }
    }
}

/// Headline numbers recomputed from `config.json`, `final.ck`, and `log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetrics {
    /// Hex SHA-256 of the stored config.
    pub config_hash: String,
    /// Rows in the epoch log.
    pub epochs: usize,
    /// Last epoch log row.
    pub final_loss: LossReport,
    /// Per-cell volume fractions of the saved field at cell resolution.
    pub volumes: Vec<f64>,
    /// Displacement mode: masked RMSE of the homogenized solve.
    pub rmse: Option<f64>,
    /// Displacement mode: deviation of masked dofs in printed form.
    pub delta: Option<f64>,
    /// Displacement mode: dimensionless deviation of masked dofs.
    pub delta_normalized: Option<f64>,
    /// Compliance mode: compliance relative to the all-solid design.
    pub compliance_ratio: Option<f64>,
    /// Bulk mode: per-cell percentage of the attainable upper bound.
    pub percent_hs: Option<PercentHs>,
}

/// Bulk moduli as percentages of the theoretical bound at each cell's
/// actual volume fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentHs {
    pub per_cell: Vec<f64>,
    pub mean: f64,
}

/// Rendering, cleanup, and connectivity results for one upsample factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub upsample: usize,
    pub width: usize,
    pub height: usize,
    /// Connectivity of the stored raster at the low cutoff.
    pub connectivity: ConnectivityReport,
    /// Solid fraction of the cleaned mask.
    pub solid_fraction: f64,
    pub design_file: String,
    pub clean_file: String,
}

/// Outcome of the per-pixel verification solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullScaleReport {
    pub upsample: usize,
    /// Masked RMSE of the pixel-mesh solve against the target.
    pub rmse: f64,
    /// Mean signed error; negative means stiffer than the target asks.
    pub mean_signed_error: f64,
    pub n_masked: usize,
}

/// Everything `run` reports, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: ObjectiveMode,
    pub metrics: ArtifactMetrics,
    pub designs: Vec<DesignReport>,
    pub full_scale: Option<FullScaleReport>,
    pub wall_seconds: f64,
    /// Files written under the output directory, in order.
    pub artifacts: Vec<String>,
}

/// Trains the config and writes all artifacts under `opts.out_dir`, which
/// must be absent or empty. Partial contents are removed on failure.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    check_options(opts)?;
    let created = prepare_out_dir(&opts.out_dir)?;
    run_inner(cfg, opts).inspect_err(|_| {
        let _ = clear_dir(&opts.out_dir);
        if created {
            let _ = fs::remove_dir(&opts.out_dir);
        }
    })
}

fn run_inner(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let start = Instant::now();
    let out = &opts.out_dir;
    let mut artifacts = Vec::new();

    let pretty = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config does not serialize: {e}")))?;
    fs::write(out.join(CONFIG_FILE), pretty + "\n")?;
    artifacts.push(CONFIG_FILE.to_string());

    let target = match cfg.mode {
        ObjectiveMode::Displacement => Some(make_target(cfg)?),
        _ => None,
    };
    let setup = TrainSetup::from_config(cfg, target)?;
    let net = init_network(&cfg.network_init(), cfg.seed)?;
    let mut trainer = Trainer::new(&setup, net)?;

    let epochs = setup.epochs;
    let every = cfg.training.log_every.max(1);
    let quiet = opts.quiet;
    let log = trainer.run(|r| {
        if !quiet && (r.epoch % every == 0 || r.epoch + 1 == epochs) {
            println!("{}", progress_line(r, epochs));
        }
    })?;
    fs::write(out.join(LOG_FILE), log_csv(&log))?;
    artifacts.push(LOG_FILE.to_string());

    Checkpoint {
        config_hash: cfg.hash(),
        macro_dims: cfg.macro_dims(),
        micro_dims: cfg.micro_dims(),
        passive: cfg.passive.iter().map(|c| (c[0], c[1])).collect(),
        epoch: trainer.epoch as u64,
        network: trainer.net.clone(),
        adam: Some(trainer.adam.clone()),
    }
    .save(&out.join(CHECKPOINT_FILE))?;
    artifacts.push(CHECKPOINT_FILE.to_string());

    // From here on everything derives from the files just written.
    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE))?;
    let problem = cfg.needs_macro_solve().then(|| cfg.problem()).transpose()?;

    let mut designs = Vec::new();
    let mut first_stored = None;
    for &s in &opts.upsamples {
        let design = render_checkpoint(&ck, s, cfg.pixel_budget)?;
        let name = design_file(s);
        let bytes = pgm::encode(design.width, design.height, &design.raster, &design.comment())?;
        fs::write(out.join(&name), bytes)?;
        artifacts.push(name.clone());

        // Postprocess the quantized raster actually on disk, so rerunning
        // the cleanup on the artifact reproduces the stored mask.
        let img = pgm::decode(&fs::read(out.join(&name))?)?;
        let stored = design_from_pgm(img, ck.macro_dims, ck.micro_dims, ck.config_hash, ck.epoch)?;
        let protected = problem
            .as_ref()
            .map(|p| post::bc_pixels(p, &stored))
            .unwrap_or_default();
        let clean = post::remove_dangling(
            &stored,
            opts.low_cutoff,
            opts.high_cutoff,
            opts.min_area,
            &protected,
        )?;
        let clean_name = clean_file(s);
        let bytes = pgm::encode_mask(clean.width, clean.height, &clean.mask, &stored.comment())?;
        fs::write(out.join(&clean_name), bytes)?;
        artifacts.push(clean_name.clone());

        let connectivity = post::connectivity_metric(&stored, opts.low_cutoff)?;
        let solid = clean.mask.iter().filter(|&&b| b).count();
        designs.push(DesignReport {
            upsample: s,
            width: stored.width,
            height: stored.height,
            connectivity,
            solid_fraction: solid as f64 / clean.mask.len() as f64,
            design_file: name,
            clean_file: clean_name,
        });
        if first_stored.is_none() {
            first_stored = Some(stored);
        }
    }

    let full_scale = if opts.full_scale {
        let stored = first_stored.expect("at least one upsample is enforced");
        Some(full_scale_check(cfg, &stored)?)
    } else {
        None
    };

    let metrics = metrics_from_artifacts(out)?;
    let summary = RunSummary {
        name: cfg.name.clone(),
        mode: cfg.mode,
        metrics,
        designs,
        full_scale,
        wall_seconds: start.elapsed().as_secs_f64(),
        artifacts,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary does not serialize: {e}")))?;
    fs::write(out.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}

/// Recomputes the headline numbers from a run directory's files alone.
pub fn metrics_from_artifacts(dir: &Path) -> Result<ArtifactMetrics> {
    let cfg = RunConfig::from_json(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    if ck.config_hash != cfg.hash() {
        return Err(Error::Input(
            "checkpoint was not trained under the stored config".into(),
        ));
    }
    if ck.macro_dims != cfg.macro_dims() || ck.micro_dims != cfg.micro_dims() {
        return Err(Error::Input(
            "checkpoint dimensions disagree with the stored config".into(),
        ));
    }
    let log = parse_log(&fs::read_to_string(dir.join(LOG_FILE))?)?;
    let final_loss = log
        .last()
        .cloned()
        .ok_or_else(|| Error::Input("epoch log has no rows".into()))?;
    compute_metrics(&cfg, &ck.network, final_loss, log.len())
}

/// Evaluates the saved network at cell resolution and derives the
/// mode-specific numbers.
fn compute_metrics(
    cfg: &RunConfig,
    net: &TopologyNetwork,
    final_loss: LossReport,
    epochs: usize,
) -> Result<ArtifactMetrics> {
    let grid = cell_grid(cfg, net)?;
    let volumes: Vec<f64> = (0..cfg.n_cells()).map(|c| grid.volume_fraction(c)).collect();
    let mut m = ArtifactMetrics {
        config_hash: cfg.hash_hex(),
        epochs,
        final_loss,
        volumes,
        rmse: None,
        delta: None,
        delta_normalized: None,
        compliance_ratio: None,
        percent_hs: None,
    };
    match cfg.mode {
        ObjectiveMode::BulkOnly => {
            let (per_cell, mean) = percent_hs_report(&grid.results, &m.volumes, grid.material)?;
            m.percent_hs = Some(PercentHs { per_cell, mean });
        }
        ObjectiveMode::Compliance => {
            let problem = cfg.problem()?;
            let solve = macro_solve(&grid, &problem)?;
            let c = compliance(&problem.loads, &solve.u);
            let baseline = solid_compliance(
                &problem,
                cfg.micro_dims(),
                grid.material,
                grid.penal,
                grid.c0,
            )?;
            m.compliance_ratio = Some(c / baseline);
        }
        ObjectiveMode::Displacement => {
            let problem = cfg.problem()?;
            let target = make_target(cfg)?;
            let mask = cfg
                .mask
                .build(&problem, cfg.macro_dims())?
                .ok_or_else(|| Error::Config("displacement mode needs a mask".into()))?;
            let solve = macro_solve(&grid, &problem)?;
            m.rmse = Some(masked_rmse(&solve.u, &target, &mask)?);
            let u_m = select_masked(&solve.u, &mask);
            let t_m = select_masked(&target, &mask);
            m.delta = Some(delta_metric(&u_m, &t_m)?);
            m.delta_normalized = Some(delta_normalized(&u_m, &t_m)?);
        }
    }
    Ok(m)
}

/// The saved network's canonical cell field: every cell evaluated at its
/// own subcell origin, exactly the pixels a 1x render shows.
fn cell_grid(cfg: &RunConfig, net: &TopologyNetwork) -> Result<CellGrid> {
    let md = cfg.macro_dims();
    let ud = cfg.micro_dims();
    let selector = select_subcells(0, md, 1);
    let batch = build_coordinates(md, ud, 1, Some(&selector))?;
    let rho = forward(net, &batch)?;
    let h = Homogenizer::new(ud.0, ud.1)?;
    CellGrid::from_batch(
        &h,
        md,
        ud,
        &rho,
        cfg.material.material(),
        cfg.interpolation.penal,
        cfg.interpolation.stiffness_floor,
        &cfg.kinds(),
    )
}

/// Renders a design from a checkpoint, honoring its passive cells.
pub fn render_checkpoint(
    ck: &Checkpoint,
    upsample: usize,
    pixel_budget: u64,
) -> Result<RenderedDesign> {
    let mut d = post::render(
        &ck.network,
        ck.macro_dims,
        ck.micro_dims,
        upsample,
        pixel_budget,
        ck.config_hash,
        ck.epoch,
    )?;
    post::apply_passive(&mut d, &ck.passive)?;
    Ok(d)
}

/// Wraps a decoded raster as a design over the given lattice, inferring the
/// upsample factor from the image dimensions.
pub fn design_from_pgm(
    img: PgmImage,
    macro_dims: (usize, usize),
    micro_dims: (usize, usize),
    config_hash: [u8; 32],
    epoch: u64,
) -> Result<RenderedDesign> {
    let base_w = macro_dims.0 * micro_dims.0;
    let base_h = macro_dims.1 * micro_dims.1;
    let fits = img.width.is_multiple_of(base_w)
        && img.height.is_multiple_of(base_h)
        && img.width / base_w == img.height / base_h
        && img.width >= base_w;
    if !fits {
        return Err(Error::Input(format!(
            "raster {}x{} is not an upsampling of {} {}x{} cells",
            img.width,
            img.height,
            macro_dims.0 * macro_dims.1,
            micro_dims.0,
            micro_dims.1
        )));
    }
    let upsample = img.width / base_w;
    Ok(RenderedDesign {
        raster: img.densities,
        width: img.width,
        height: img.height,
        macro_dims,
        micro_dims,
        upsample,
        config_hash,
        epoch,
    })
}

/// Solves the rendered design per pixel (each raster pixel one element) and
/// compares against the displacement target evaluated on that fine mesh.
pub fn full_scale_check(cfg: &RunConfig, design: &RenderedDesign) -> Result<FullScaleReport> {
    if cfg.mode != ObjectiveMode::Displacement {
        return Err(Error::Input(
            "full-scale verification needs a displacement-mode config".into(),
        ));
    }
    if (design.macro_dims.0, design.macro_dims.1) != cfg.macro_dims()
        || (design.micro_dims.0, design.micro_dims.1) != cfg.micro_dims()
    {
        return Err(Error::Input(
            "design lattice disagrees with the config".into(),
        ));
    }
    // Per-node edge loads change total force with mesh density; point loads
    // and displacement conditions carry over unchanged.
    let edge_loaded = cfg
        .boundary
        .loads
        .iter()
        .any(|l| matches!(l.nodes, NodeSet::Edge { .. }));
    if edge_loaded {
        return Err(Error::Input(
            "full-scale verification does not support edge loads".into(),
        ));
    }
    let sx = design.micro_dims.0 * design.upsample;
    let sy = design.micro_dims.1 * design.upsample;
    let fine = fine_config(cfg, sx, sy);
    let problem = fine.problem()?;
    let target = make_target(&fine)?;
    // Ring masks stay one macro cell wide, so pass the coarse lattice dims.
    let mask = fine
        .mask
        .build(&problem, cfg.macro_dims())?
        .ok_or_else(|| Error::Config("displacement mode needs a mask".into()))?;
    let report = crate::fem::full_scale_verify(
        &problem,
        &design.raster,
        cfg.material.material(),
        cfg.interpolation.penal,
        cfg.interpolation.stiffness_floor,
        &target,
        &mask,
    )?;
    Ok(FullScaleReport {
        upsample: design.upsample,
        rmse: report.rmse,
        mean_signed_error: report.mean_signed_error,
        n_masked: report.n_masked,
    })
}

/// A copy of the config whose macro lattice is the pixel mesh: every raster
/// pixel becomes one element and node references scale to match.
fn fine_config(cfg: &RunConfig, sx: usize, sy: usize) -> RunConfig {
    let mut f = cfg.clone();
    f.macro_dims = [cfg.macro_dims[0] * sx, cfg.macro_dims[1] * sy];
    for fix in &mut f.boundary.fixed {
        fix.nodes = scaled_node_set(&fix.nodes, sx, sy);
    }
    for p in &mut f.boundary.prescribed {
        p.nodes = scaled_node_set(&p.nodes, sx, sy);
    }
    for l in &mut f.boundary.loads {
        l.nodes = scaled_node_set(&l.nodes, sx, sy);
    }
    if let MaskSpec::Component { nodes, .. } = &mut f.mask {
        for n in nodes {
            *n = scaled_node_set(n, sx, sy);
        }
    }
    // Passive voids are already baked into the raster.
    f.passive.clear();
    f
}

fn scaled_node_set(set: &NodeSet, sx: usize, sy: usize) -> NodeSet {
    match *set {
        NodeSet::Node { ix, iy } => NodeSet::Node {
            ix: ix * sx,
            iy: iy * sy,
        },
        NodeSet::Edge { side } => NodeSet::Edge { side },
    }
}

fn progress_line(r: &LossReport, epochs: usize) -> String {
    let mut s = format!(
        "epoch {:>4}/{} total {:+.6e} volume {:.3e} alpha {:.1}",
        r.epoch + 1,
        epochs,
        r.total,
        r.volume,
        r.alpha
    );
    if let Some(rmse) = r.rmse {
        s.push_str(&format!(" rmse {rmse:.6e}"));
    }
    s
}

fn check_options(opts: &RunOptions) -> Result<()> {
    if opts.upsamples.is_empty() {
        return Err(Error::Input("at least one upsample factor is required".into()));
    }
    let mut seen = HashSet::new();
    for &s in &opts.upsamples {
        if s == 0 {
            return Err(Error::Input("upsample factors must be at least 1".into()));
        }
        if !seen.insert(s) {
            return Err(Error::Input(format!("duplicate upsample factor {s}")));
        }
    }
    post::check_cutoff(opts.low_cutoff, "low cutoff")?;
    post::check_cutoff(opts.high_cutoff, "high cutoff")?;
    if opts.low_cutoff >= opts.high_cutoff {
        return Err(Error::Input(format!(
            "low cutoff {} must be below high cutoff {}",
            opts.low_cutoff, opts.high_cutoff
        )));
    }
    Ok(())
}

/// Creates the output directory or accepts an existing empty one. Returns
/// whether this call created it.
fn prepare_out_dir(dir: &Path) -> Result<bool> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Input(format!(
                "output path {} is not a directory",
                dir.display()
            )));
        }
        if fs::read_dir(dir)?.next().is_some() {
            return Err(Error::Input(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
        Ok(false)
    } else {
        fs::create_dir_all(dir)?;
        Ok(true)
    }
}

fn clear_dir(dir: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            fs::remove_dir_all(&path)?;
        } else {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}
