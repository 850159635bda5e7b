//! Rendering and morphological cleanup of trained density fields.
//!
//! [`render`] evaluates the network over every subcell of every macro cell
//! at an arbitrary upsampling factor and tiles the results into one raster
//! (row 0 at the bottom). Cleanup follows a two-threshold procedure: small
//! disconnected islands are deleted outright, then features that separate
//! from the main structure at a higher threshold are masked out. Components
//! touching load or support pixels are never deleted, so cleanup cannot
//! sever a load path. [`connectivity_metric`] quantifies how well the
//! per-cell fields knit together across macro-cell boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FeProblem;
use crate::field::{build_coordinates, forward, TopologyNetwork};

/// A density raster rendered from a network, with provenance.
#[derive(Debug, Clone)]
pub struct RenderedDesign {
    /// Row-major densities in `[0, 1]`, row 0 at the bottom.
    pub raster: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub macro_dims: (usize, usize),
    pub micro_dims: (usize, usize),
    pub upsample: usize,
    /// SHA-256 of the config the network was trained under.
    pub config_hash: [u8; 32],
    pub epoch: u64,
}

impl RenderedDesign {
    /// One-line provenance string for raster file headers.
    pub fn comment(&self) -> String {
        let hex: String = self
            .config_hash
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        format!(
            "config:{hex} epoch:{} upsample:{}",
            self.epoch, self.upsample
        )
    }
}

/// A thresholded raster after cleanup.
#[derive(Debug, Clone)]
pub struct BinaryDesign {
    /// Row-major solid mask, row 0 at the bottom.
    pub mask: Vec<bool>,
    pub width: usize,
    pub height: usize,
    pub threshold: f64,
}

/// Connectivity diagnostics of a thresholded raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    /// Number of solid components at the cutoff.
    pub components: usize,
    /// Fraction of solid pixels in the largest component.
    pub largest_fraction: f64,
    /// Mean absolute density difference across pixel pairs straddling
    /// macro-cell boundaries; 0 when the field is continuous there.
    pub boundary_jump: f64,
}

/// Evaluates the network over the full `(mx·s·ux) x (my·s·uy)` raster.
/// Refuses rasters above `pixel_budget` pixels before allocating anything.
pub fn render(
    net: &TopologyNetwork,
    macro_dims: (usize, usize),
    micro_dims: (usize, usize),
    upsample: usize,
    pixel_budget: u64,
    config_hash: [u8; 32],
    epoch: u64,
) -> Result<RenderedDesign> {
    let (mx, my) = macro_dims;
    let (ux, uy) = micro_dims;
    let width = (mx as u64) * (upsample as u64) * (ux as u64);
    let height = (my as u64) * (upsample as u64) * (uy as u64);
    let requested = width
        .checked_mul(height)
        .ok_or_else(|| Error::Input("raster dimensions overflow".into()))?;
    if requested > pixel_budget {
        return Err(Error::PixelBudget {
            requested,
            budget: pixel_budget,
        });
    }
    let batch = build_coordinates(macro_dims, micro_dims, upsample, None)?;
    let rho = forward(net, &batch)?;
    let (width, height) = (width as usize, height as usize);

    // Batch order: subcell blocks row-major (ix fastest), each a ux x uy
    // micro grid (ex fastest). Retile into one row-major raster.
    let nm = ux * uy;
    let mut raster = vec![0.0; width * height];
    for jy in 0..my * upsample {
        for ix in 0..mx * upsample {
            let block = &rho[(jy * mx * upsample + ix) * nm..][..nm];
            for ey in 0..uy {
                let row = jy * uy + ey;
                let dst = &mut raster[row * width + ix * ux..][..ux];
                dst.copy_from_slice(&block[ey * ux..(ey + 1) * ux]);
            }
        }
    }
    Ok(RenderedDesign {
        raster,
        width,
        height,
        macro_dims,
        micro_dims,
        upsample,
        config_hash,
        epoch,
    })
}

/// Zeroes every pixel of the listed passive macro cells. Training freezes
/// those cells at zero density, so a faithful raster must do the same; the
/// raw field underneath them is unconstrained.
pub fn apply_passive(design: &mut RenderedDesign, passive: &[(usize, usize)]) -> Result<()> {
    let (mx, my) = design.macro_dims;
    let cw = design.micro_dims.0 * design.upsample;
    let ch = design.micro_dims.1 * design.upsample;
    for &(cx, cy) in passive {
        if cx >= mx || cy >= my {
            return Err(Error::Input(format!(
                "passive cell ({cx}, {cy}) outside the {mx}x{my} lattice"
            )));
        }
        for row in cy * ch..(cy + 1) * ch {
            design.raster[row * design.width + cx * cw..][..cw].fill(0.0);
        }
    }
    Ok(())
}

/// Pixels adjacent to loaded, fixed, or prescribed macro nodes: the up-to-4
/// raster pixels meeting at each such node's corner. Components containing
/// any of these survive cleanup.
pub fn bc_pixels(problem: &FeProblem, design: &RenderedDesign) -> Vec<usize> {
    let sx = design.micro_dims.0 * design.upsample;
    let sy = design.micro_dims.1 * design.upsample;
    let mut out = Vec::new();
    let nely = problem.nely;
    for node in 0..(problem.nelx + 1) * (nely + 1) {
        let dofs = [2 * node, 2 * node + 1];
        let marked = dofs.iter().any(|&d| {
            problem.fixed[d] || problem.loads[d] != 0.0 || problem.prescribed[d] != 0.0
        });
        if !marked {
            continue;
        }
        let (ix, iy) = (node / (nely + 1), node % (nely + 1));
        let (px, py) = (ix * sx, iy * sy);
        for dx in [px.wrapping_sub(1), px] {
            for dy in [py.wrapping_sub(1), py] {
                if dx < design.width && dy < design.height {
                    out.push(dy * design.width + dx);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Labels 8-connected solid components. Returns one label per pixel
/// (`usize::MAX` for void) and the component sizes indexed by label.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(mask.len(), width * height, "mask does not match dimensions");
    let mut labels = vec![usize::MAX; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0usize;
        labels[start] = label;
        stack.push(start);
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = (p % width, p / width);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if mask[q] && labels[q] == usize::MAX {
                        labels[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub(crate) fn check_cutoff(c: f64, what: &str) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Input(format!("{what} {c} outside (0, 1)")));
    }
    Ok(())
}

/// Binarizes at `cutoff` and deletes solid components smaller than
/// `min_area` pixels, except components containing a protected pixel.
pub fn remove_islands(
    design: &RenderedDesign,
    cutoff: f64,
    min_area: usize,
    protected: &[usize],
) -> Result<BinaryDesign> {
    check_cutoff(cutoff, "cutoff")?;
    let mut mask: Vec<bool> = design.raster.iter().map(|&d| d >= cutoff).collect();
    let (labels, sizes) = label_components(&mask, design.width, design.height);
    let mut keep: Vec<bool> = sizes.iter().map(|&s| s >= min_area).collect();
    for &p in protected {
        if p < labels.len() && labels[p] != usize::MAX {
            keep[labels[p]] = true;
        }
    }
    for (m, &l) in mask.iter_mut().zip(&labels) {
        if l != usize::MAX && !keep[l] {
            *m = false;
        }
    }
    Ok(BinaryDesign {
        mask,
        width: design.width,
        height: design.height,
        threshold: cutoff,
    })
}

/// Island removal at `low`, then erasure of features that separate from the
/// main structure at `high`: solid pixels not connected to any large
/// component of the high-threshold mask form candidate features; each
/// candidate smaller than `min_area` (and unprotected) is dilated by one
/// pixel and erased. Output is always a subset of island removal at `low`.
pub fn remove_dangling(
    design: &RenderedDesign,
    low: f64,
    high: f64,
    min_area: usize,
    protected: &[usize],
) -> Result<BinaryDesign> {
    check_cutoff(low, "low cutoff")?;
    check_cutoff(high, "high cutoff")?;
    if low >= high {
        return Err(Error::Input(format!(
            "low cutoff {low} must be below high cutoff {high}"
        )));
    }
    let mut base = remove_islands(design, low, min_area, protected)?;
    let (w, h) = (base.width, base.height);

    let high_mask: Vec<bool> = design.raster.iter().map(|&d| d >= high).collect();
    let (high_labels, high_sizes) = label_components(&high_mask, w, h);
    let anchored: Vec<bool> = (0..base.mask.len())
        .map(|p| {
            base.mask[p] && high_labels[p] != usize::MAX && high_sizes[high_labels[p]] >= min_area
        })
        .collect();

    // Dangling candidates: kept at low but not anchored at high.
    let loose: Vec<bool> = base
        .mask
        .iter()
        .zip(&anchored)
        .map(|(&b, &a)| b && !a)
        .collect();
    let (loose_labels, loose_sizes) = label_components(&loose, w, h);
    let mut erase: Vec<bool> = loose_sizes.iter().map(|&s| s < min_area).collect();
    for &p in protected {
        if p < loose_labels.len() && loose_labels[p] != usize::MAX {
            erase[loose_labels[p]] = false;
        }
    }
    // Erase each candidate with a one-pixel fringe.
    let mut cut = vec![false; w * h];
    for (p, &l) in loose_labels.iter().enumerate() {
        if l == usize::MAX || !erase[l] {
            continue;
        }
        let (x, y) = (p % w, p / w);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                    cut[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    for (m, &c) in base.mask.iter_mut().zip(&cut) {
        if c {
            *m = false;
        }
    }
    Ok(base)
}

/// Component count, largest-component fraction, and mean density jump
/// across macro-cell boundaries at the given cutoff.
pub fn connectivity_metric(design: &RenderedDesign, cutoff: f64) -> Result<ConnectivityReport> {
    check_cutoff(cutoff, "cutoff")?;
    let mask: Vec<bool> = design.raster.iter().map(|&d| d >= cutoff).collect();
    let (_, sizes) = label_components(&mask, design.width, design.height);
    let solid: usize = sizes.iter().sum();
    let largest_fraction = if solid == 0 {
        0.0
    } else {
        *sizes.iter().max().unwrap() as f64 / solid as f64
    };

    let (w, h) = (design.width, design.height);
    let cell_w = design.micro_dims.0 * design.upsample;
    let cell_h = design.micro_dims.1 * design.upsample;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for cx in 1..design.macro_dims.0 {
        let x = cx * cell_w;
        for y in 0..h {
            sum += (design.raster[y * w + x] - design.raster[y * w + x - 1]).abs();
            pairs += 1;
        }
    }
    for cy in 1..design.macro_dims.1 {
        let y = cy * cell_h;
        for x in 0..w {
            sum += (design.raster[y * w + x] - design.raster[(y - 1) * w + x]).abs();
            pairs += 1;
        }
    }
    Ok(ConnectivityReport {
        components: sizes.len(),
        largest_fraction,
        boundary_jump: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
    })
}
