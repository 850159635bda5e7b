//! Command line front end: train configs, render and clean checkpointed
//! designs, verify them per pixel, and recompute metrics from run artifacts.
//!
//! Exit codes: 0 on success, 2 for input and config errors, 3 for numerical
//! failures and resource limits.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mstopo::checkpoint::Checkpoint;
use mstopo::config::RunConfig;
use mstopo::error::{Error, Result};
use mstopo::fem::Material;
use mstopo::homog::hs_upper_bound;
use mstopo::pgm;
use mstopo::post::{self, RenderedDesign};
use mstopo::preset;
use mstopo::runner::{self, RunOptions};

#[derive(Parser)]
#[command(
    name = "mstopo",
    version,
    about = "Multiscale topology optimization driven by one coordinate network"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a config and write all run artifacts into a directory.
    Optimize {
        /// Run configuration JSON file.
        config: PathBuf,
        /// Output directory; must be new or empty.
        #[arg(long)]
        out: PathBuf,
        /// Upsample factor to render; repeat for several rasters.
        #[arg(long = "upsample", default_values_t = [1])]
        upsamples: Vec<usize>,
        /// Also solve the first raster per pixel against the target.
        #[arg(long)]
        full_scale: bool,
        /// Cleanup threshold below which pixels never count as solid.
        #[arg(long, default_value_t = 0.3)]
        low: f64,
        /// Stricter threshold deciding which features are load-bearing.
        #[arg(long, default_value_t = 0.5)]
        high: f64,
        /// Cleanup keeps components only at or above this pixel count.
        #[arg(long, default_value_t = 400)]
        min_area: usize,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Render a checkpointed network to a PGM raster.
    Render {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        upsample: usize,
        /// Output PGM file.
        #[arg(long)]
        out: PathBuf,
        /// Refuse rasters above this many pixels.
        #[arg(long, default_value_t = 100_000_000)]
        pixel_budget: u64,
    },
    /// Threshold and clean a rendered raster into a solid mask.
    Postprocess {
        raster: PathBuf,
        /// Output PGM file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        low: f64,
        #[arg(long, default_value_t = 0.5)]
        high: f64,
        #[arg(long, default_value_t = 400)]
        min_area: usize,
    },
    /// Solve a rendered design per pixel against its config's target.
    Verify {
        raster: PathBuf,
        config: PathBuf,
    },
    /// Recompute metrics from a run directory's artifacts.
    Metrics {
        dir: PathBuf,
    },
    /// Print a benchmark preset config as JSON, or list all names.
    Preset {
        /// Preset name; omit to list the available names.
        name: Option<String>,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upper bound on the bulk modulus attainable at a volume fraction.
    HsBound {
        #[arg(long)]
        vf: f64,
        /// Young's modulus of the solid phase.
        #[arg(long, default_value_t = 1.0)]
        e: f64,
        /// Poisson's ratio of the solid phase.
        #[arg(long, default_value_t = 0.3)]
        nu: f64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Optimize {
            config,
            out,
            upsamples,
            full_scale,
            low,
            high,
            min_area,
            quiet,
        } => {
            let cfg = RunConfig::from_json(&fs::read_to_string(config)?)?;
            let opts = RunOptions {
                out_dir: out,
                upsamples,
                full_scale,
                low_cutoff: low,
                high_cutoff: high,
                min_area,
                quiet,
            };
            let summary = runner::run(&cfg, &opts)?;
            println!("{}", to_json(&summary)?);
            Ok(())
        }
        Cmd::Render {
            checkpoint,
            upsample,
            out,
            pixel_budget,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let d = runner::render_checkpoint(&ck, upsample, pixel_budget)?;
            fs::write(&out, pgm::encode(d.width, d.height, &d.raster, &d.comment())?)?;
            println!("wrote {} ({}x{})", out.display(), d.width, d.height);
            Ok(())
        }
        Cmd::Postprocess {
            raster,
            out,
            low,
            high,
            min_area,
        } => {
            let img = pgm::decode(&fs::read(&raster)?)?;
            let comment = img.comments.join("; ");
            // Without a checkpoint the raster is one anonymous cell; cell
            // metadata only matters for seam metrics, not for cleanup.
            let design = RenderedDesign {
                width: img.width,
                height: img.height,
                macro_dims: (1, 1),
                micro_dims: (img.width, img.height),
                upsample: 1,
                raster: img.densities,
                config_hash: [0; 32],
                epoch: 0,
            };
            let clean = post::remove_dangling(&design, low, high, min_area, &[])?;
            fs::write(
                &out,
                pgm::encode_mask(clean.width, clean.height, &clean.mask, &comment)?,
            )?;
            let solid = clean.mask.iter().filter(|&&b| b).count();
            println!(
                "wrote {} ({} of {} pixels solid)",
                out.display(),
                solid,
                clean.mask.len()
            );
            Ok(())
        }
        Cmd::Verify { raster, config } => {
            let cfg = RunConfig::from_json(&fs::read_to_string(config)?)?;
            let img = pgm::decode(&fs::read(&raster)?)?;
            let design = runner::design_from_pgm(
                img,
                cfg.macro_dims(),
                cfg.micro_dims(),
                cfg.hash(),
                0,
            )?;
            let report = runner::full_scale_check(&cfg, &design)?;
            println!("{}", to_json(&report)?);
            Ok(())
        }
        Cmd::Metrics { dir } => {
            let metrics = runner::metrics_from_artifacts(&dir)?;
            println!("{}", to_json(&metrics)?);
            Ok(())
        }
        Cmd::Preset { name, out } => {
            let Some(name) = name else {
                for n in preset::PRESET_NAMES {
                    println!("{n}");
                }
                return Ok(());
            };
            let cfg = preset::by_name(&name)?;
            let json = to_json(&cfg)? + "\n";
            match out {
                Some(path) => {
                    fs::write(&path, json)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{json}"),
            }
            Ok(())
        }
        Cmd::HsBound { vf, e, nu } => {
            if !(0.0..=1.0).contains(&vf) {
                return Err(Error::Input(format!(
                    "volume fraction {vf} must be within [0, 1]"
                )));
            }
            if e.is_nan() || e <= 0.0 {
                return Err(Error::Input(format!("modulus {e} must be positive")));
            }
            // NaN fails this check too.
            if !(nu > -1.0 && nu < 0.5) {
                return Err(Error::Input(format!(
                    "Poisson ratio {nu} must be within (-1, 0.5)"
                )));
            }
            println!("{}", hs_upper_bound(vf, Material::new(e, nu)));
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("serialization: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn optimize_collects_repeated_upsamples() {
        let cli = Cli::try_parse_from([
            "mstopo",
            "optimize",
            "cfg.json",
            "--out",
            "runs/a",
            "--upsample",
            "1",
            "--upsample",
            "4",
            "--full-scale",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Optimize {
                upsamples,
                full_scale,
                low,
                high,
                min_area,
                quiet,
                ..
            } => {
                assert_eq!(upsamples, vec![1, 4]);
                assert!(full_scale);
                assert_eq!((low, high, min_area), (0.3, 0.5, 400));
                assert!(!quiet);
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn render_requires_the_output_flag() {
        assert!(Cli::try_parse_from(["mstopo", "render", "a.ck"]).is_err());
        let cli = Cli::try_parse_from(["mstopo", "render", "a.ck", "--out", "a.pgm"]).unwrap();
        match cli.cmd {
            Cmd::Render {
                upsample,
                pixel_budget,
                ..
            } => {
                assert_eq!(upsample, 1);
                assert_eq!(pixel_budget, 100_000_000);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
