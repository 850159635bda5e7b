//! Structural objectives and penalties, with gradients taken with respect to
//! every micro density pixel (the network outputs).
//!
//! All gradients flow through homogenization: an objective differentiates
//! with respect to each cell's effective tensor, then chains through the
//! stored per-element energies. Combined totals follow one formula across
//! modes:
//!
//! ```text
//! total = structural + alpha * volume + bc_scale * alpha * boundary + reg
//! ```
//!
//! where `structural` is the compliance ratio, the (negated) normalized bulk
//! stiffness plus `alpha`-weighted displacement mismatch, or the bulk term
//! alone, depending on the mode.

use crate::error::{Error, Result};
use crate::fem::{
    compliance, tensor_energy_pairs, ConstitutiveTensor, FactoredSystem, FeProblem, Material,
};
use crate::homog::{bulk_modulus, homogenize_sensitivity, HomogenizationResult, Homogenizer, UnitCell};
use serde::{Deserialize, Serialize};

/// Which structural objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Minimize macro compliance normalized by the all-solid baseline.
    Compliance,
    /// Match target displacements while maximizing cell bulk stiffness.
    Displacement,
    /// Maximize cell bulk stiffness only (no macro solve).
    BulkOnly,
}

/// Loss term weights. `alpha` itself ramps per epoch; see [`alpha_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Final value of the constraint weight ramp.
    pub alpha_max: f64,
    /// Boundary loss rides at `bc_scale * alpha`.
    pub bc_scale: f64,
    /// L2 penalty on the readout weights.
    pub l2_weight: f64,
    /// L1 pull toward a base cell inside a designated band (0 disables).
    pub l1_base_weight: f64,
    /// Scale of the bulk stiffness term in displacement/bulk modes.
    pub bulk_multiplier: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_max: 50.0,
            bc_scale: 0.1,
            l2_weight: 1e-5,
            l1_base_weight: 0.0,
            bulk_multiplier: 1.0,
        }
    }
}

/// Constraint weight at `epoch`: linear ramp from 1 to `alpha_max` over the
/// first half of training, constant afterwards.
pub fn alpha_schedule(epoch: usize, total_epochs: usize, alpha_max: f64) -> f64 {
    let half = (total_epochs / 2).max(1);
    if epoch >= half {
        alpha_max
    } else {
        1.0 + (alpha_max - 1.0) * epoch as f64 / half as f64
    }
}

/// Whether a macro cell carries trainable microstructure. Passive void cells
/// (cut-outs) are rendered at zero density and excluded from objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Free,
    PassiveVoid,
}

/// The macro lattice of unit cells for one epoch: per-cell density rasters
/// and their homogenized tensors.
pub struct CellGrid {
    pub macro_dims: (usize, usize),
    pub micro_dims: (usize, usize),
    pub material: Material,
    pub penal: f64,
    pub c0: f64,
    /// Row-major cell rasters, `cells[cy * mx + cx]`, each `ux * uy` pixels.
    pub rho: Vec<Vec<f64>>,
    pub results: Vec<HomogenizationResult>,
    pub kinds: Vec<CellKind>,
}

impl CellGrid {
    /// Homogenize every cell of a density batch (cell-major order, as built
    /// by training-mode coordinates). Passive void cells are forced to zero
    /// density before homogenization.
    #[allow(clippy::too_many_arguments)]
    pub fn from_batch(
        homogenizer: &Homogenizer,
        macro_dims: (usize, usize),
        micro_dims: (usize, usize),
        batch_rho: &[f64],
        material: Material,
        penal: f64,
        c0: f64,
        kinds: &[CellKind],
    ) -> Result<Self> {
        let n_cells = macro_dims.0 * macro_dims.1;
        let nm = micro_dims.0 * micro_dims.1;
        if batch_rho.len() != n_cells * nm {
            return Err(Error::Input(format!(
                "batch has {} densities for {n_cells} cells of {nm} pixels",
                batch_rho.len()
            )));
        }
        assert_eq!(kinds.len(), n_cells);
        let mut rho = Vec::with_capacity(n_cells);
        let mut results = Vec::with_capacity(n_cells);
        for c in 0..n_cells {
            let cell_rho: Vec<f64> = match kinds[c] {
                CellKind::Free => batch_rho[c * nm..(c + 1) * nm].to_vec(),
                CellKind::PassiveVoid => vec![0.0; nm],
            };
            let res = homogenizer
                .homogenize(&cell_rho, material, penal, c0)
                .map_err(|e| match e {
                    Error::Singular(m) => Error::Singular(format!("cell {c}: {m}")),
                    other => other,
                })?;
            rho.push(cell_rho);
            results.push(res);
        }
        Ok(CellGrid {
            macro_dims,
            micro_dims,
            material,
            penal,
            c0,
            rho,
            results,
            kinds: kinds.to_vec(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.rho.len()
    }

    pub fn pixels_per_cell(&self) -> usize {
        self.micro_dims.0 * self.micro_dims.1
    }

    pub fn tensors(&self) -> Vec<ConstitutiveTensor> {
        self.results.iter().map(|r| r.tensor).collect()
    }

    /// Tensor sensitivities of one cell with respect to its density pixels.
    pub fn sensitivities(&self, c: usize) -> Vec<[[f64; 3]; 3]> {
        let cell = UnitCell {
            rho: &self.rho[c],
            nx: self.micro_dims.0,
            ny: self.micro_dims.1,
            material: self.material,
            penal: self.penal,
            c0: self.c0,
        };
        homogenize_sensitivity(&cell, &self.results[c])
    }

    /// Volume fraction of one cell.
    pub fn volume_fraction(&self, c: usize) -> f64 {
        let nm = self.pixels_per_cell() as f64;
        self.rho[c].iter().sum::<f64>() / nm
    }
}

// Clone of `kinds` into the struct keeps the borrow simple.
impl CellGrid {
    fn chain_tensor_grad(&self, per_cell_tensor_grad: &[[[f64; 3]; 3]]) -> Vec<f64> {
        let nm = self.pixels_per_cell();
        let mut grad = vec![0.0; self.n_cells() * nm];
        for c in 0..self.n_cells() {
            if self.kinds[c] == CellKind::PassiveVoid {
                continue;
            }
            let sens = self.sensitivities(c);
            let gt = &per_cell_tensor_grad[c];
            let out = &mut grad[c * nm..(c + 1) * nm];
            for (e, s) in sens.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += gt[a][b] * s[a][b];
                    }
                }
                out[e] = acc;
            }
        }
        grad
    }
}

/// Macro solve of a homogenized cell grid, retaining the factor for adjoints.
pub struct MacroSolve {
    pub u: Vec<f64>,
    pub system: FactoredSystem,
}

/// Factor and solve the macroscale problem with the grid's cell tensors.
pub fn macro_solve(grid: &CellGrid, problem: &FeProblem) -> Result<MacroSolve> {
    assert_eq!(
        (problem.nelx, problem.nely),
        grid.macro_dims,
        "problem mesh must match the cell lattice"
    );
    let asm = problem.assembler();
    let system = problem.factor_homogenized(asm, &grid.tensors())?;
    let u = system.solve(&problem.loads)?;
    Ok(MacroSolve { u, system })
}

/// Compliance objective `F.u / baseline` and its density gradient.
/// `baseline` is the all-solid-cell compliance computed once per run.
pub fn compliance_objective(
    grid: &CellGrid,
    problem: &FeProblem,
    baseline: f64,
) -> Result<(f64, Vec<f64>, MacroSolve)> {
    // NaN fails this check too.
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::Input(format!(
            "compliance baseline must be positive, got {baseline}"
        )));
    }
    let solve = macro_solve(grid, problem)?;
    let c = compliance(&problem.loads, &solve.u);
    let (mx, my) = grid.macro_dims;
    // dc/dD_ab = -u_e' dKe/dD_ab u_e per cell (self-adjoint).
    let mut tensor_grad = vec![[[0.0; 3]; 3]; grid.n_cells()];
    for cy in 0..my {
        for cx in 0..mx {
            let ue = problem.gather_element(&solve.u, cx, cy);
            let pairs = tensor_energy_pairs(&ue, &ue);
            let gt = &mut tensor_grad[cy * mx + cx];
            for a in 0..3 {
                for b in 0..3 {
                    gt[a][b] = -pairs[a][b] / baseline;
                }
            }
        }
    }
    let grad = grid.chain_tensor_grad(&tensor_grad);
    Ok((c / baseline, grad, solve))
}

/// Squared displacement mismatch `sum_i mask_i (u_i - target_i)^2` and its
/// density gradient via one adjoint solve reusing the primary factor.
pub fn displacement_objective(
    grid: &CellGrid,
    problem: &FeProblem,
    target: &[f64],
    mask: &[f64],
) -> Result<(f64, Vec<f64>, MacroSolve)> {
    let n = problem.n_dofs();
    assert_eq!(target.len(), n);
    assert_eq!(mask.len(), n);
    if mask.iter().all(|&m| m == 0.0) {
        return Err(Error::Input(
            "displacement mismatch with an all-zero mask is degenerate".into(),
        ));
    }
    let solve = macro_solve(grid, problem)?;

    let mut value = 0.0;
    let mut adj_rhs = vec![0.0; n];
    for i in 0..n {
        let d = solve.u[i] - target[i];
        value += mask[i] * d * d;
        adj_rhs[i] = mask[i] * d;
    }
    let lambda = solve.system.solve_homogeneous(&adj_rhs)?;

    let (mx, my) = grid.macro_dims;
    let mut tensor_grad = vec![[[0.0; 3]; 3]; grid.n_cells()];
    for cy in 0..my {
        for cx in 0..mx {
            let ue = problem.gather_element(&solve.u, cx, cy);
            let le = problem.gather_element(&lambda, cx, cy);
            let pairs = tensor_energy_pairs(&le, &ue);
            let gt = &mut tensor_grad[cy * mx + cx];
            for a in 0..3 {
                for b in 0..3 {
                    gt[a][b] = -2.0 * pairs[a][b];
                }
            }
        }
    }
    let grad = grid.chain_tensor_grad(&tensor_grad);
    Ok((value, grad, solve))
}

/// Per-cell normalized bulk stiffness `r_c = bulk(E_c) / bulk(solid)` and the
/// density gradient of `mean_c r_c` over active cells.
pub fn bulk_objective(grid: &CellGrid) -> (Vec<f64>, f64, Vec<f64>) {
    let solid = bulk_modulus(&ConstitutiveTensor::plane_stress(grid.material));
    let nm = grid.pixels_per_cell();
    let n_active = grid
        .kinds
        .iter()
        .filter(|&&k| k == CellKind::Free)
        .count()
        .max(1) as f64;
    let mut ratios = Vec::with_capacity(grid.n_cells());
    let mut grad = vec![0.0; grid.n_cells() * nm];
    let mut mean = 0.0;
    for c in 0..grid.n_cells() {
        let r = bulk_modulus(&grid.results[c].tensor) / solid;
        ratios.push(r);
        if grid.kinds[c] != CellKind::Free {
            continue;
        }
        mean += r / n_active;
        let sens = grid.sensitivities(c);
        let out = &mut grad[c * nm..(c + 1) * nm];
        for (e, s) in sens.iter().enumerate() {
            out[e] = (s[0][0] + s[0][1] + s[1][0] + s[1][1]) / (4.0 * solid * n_active);
        }
    }
    (ratios, mean, grad)
}

/// Mean squared volume fraction violation over active cells, with gradient.
pub fn volume_penalty(grid: &CellGrid, targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(targets.len(), grid.n_cells());
    let nm = grid.pixels_per_cell();
    let n_active = grid
        .kinds
        .iter()
        .filter(|&&k| k == CellKind::Free)
        .count()
        .max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; grid.n_cells() * nm];
    for c in 0..grid.n_cells() {
        if grid.kinds[c] != CellKind::Free {
            continue;
        }
        let vstar = targets[c];
        assert!(vstar > 0.0, "volume target must be positive");
        let v = grid.volume_fraction(c);
        let r = v / vstar - 1.0;
        value += r * r / n_active;
        let g = 2.0 * r / (vstar * nm as f64 * n_active);
        for e in 0..nm {
            grad[c * nm + e] = g;
        }
    }
    (value, grad)
}

/// Mean squared density jump across interfaces between adjacent cells of the
/// emitted lattice. Interfaces touching passive cells are skipped.
///
/// `rho` is cell-major; cell `(cx, cy)` occupies block `cy * cells_x + cx`.
pub fn boundary_loss(
    rho: &[f64],
    cells: (usize, usize),
    micro: (usize, usize),
    kinds: &[CellKind],
) -> (f64, Vec<f64>) {
    let (cx_n, cy_n) = cells;
    let (mx, my) = micro;
    let nm = mx * my;
    assert_eq!(rho.len(), cx_n * cy_n * nm);
    assert_eq!(kinds.len(), cx_n * cy_n);
    let active = |c: usize| kinds[c] == CellKind::Free;

    // Count interfaces first so gradients carry the final normalization.
    let mut n_edges = 0usize;
    for cy in 0..cy_n {
        for cx in 0..cx_n {
            let c = cy * cx_n + cx;
            if !active(c) {
                continue;
            }
            if cx + 1 < cx_n && active(c + 1) {
                n_edges += 1;
            }
            if cy + 1 < cy_n && active(c + cx_n) {
                n_edges += 1;
            }
        }
    }
    if n_edges == 0 {
        return (0.0, vec![0.0; rho.len()]);
    }

    let mut value = 0.0;
    let mut grad = vec![0.0; rho.len()];
    let add_pair = |ia: usize, ib: usize, pairs: f64, value: &mut f64, grad: &mut [f64]| {
        let d = rho[ia] - rho[ib];
        *value += d * d / pairs;
        let g = 2.0 * d / pairs;
        grad[ia] += g;
        grad[ib] -= g;
    };
    for cy in 0..cy_n {
        for cx in 0..cx_n {
            let c = cy * cx_n + cx;
            if !active(c) {
                continue;
            }
            // Vertical interface with the right neighbor: right column of c
            // against left column of c+1, averaged over rows, then over edges.
            if cx + 1 < cx_n && active(c + 1) {
                let pairs = (my * n_edges) as f64;
                for ey in 0..my {
                    let ia = c * nm + ey * mx + (mx - 1);
                    let ib = (c + 1) * nm + ey * mx;
                    add_pair(ia, ib, pairs, &mut value, &mut grad);
                }
            }
            // Horizontal interface with the upper neighbor.
            if cy + 1 < cy_n && active(c + cx_n) {
                let pairs = (mx * n_edges) as f64;
                for ex in 0..mx {
                    let ia = c * nm + (my - 1) * mx + ex;
                    let ib = (c + cx_n) * nm + ex;
                    add_pair(ia, ib, pairs, &mut value, &mut grad);
                }
            }
        }
    }
    (value, grad)
}

/// Mean absolute deviation from a base cell raster over a band of cells,
/// with its subgradient. `band[c]` marks participating cells.
pub fn base_cell_l1(
    rho: &[f64],
    base: &[f64],
    band: &[bool],
    micro: (usize, usize),
) -> (f64, Vec<f64>) {
    let nm = micro.0 * micro.1;
    assert_eq!(base.len(), nm);
    assert_eq!(rho.len(), band.len() * nm);
    let n_band = band.iter().filter(|&&b| b).count();
    let mut grad = vec![0.0; rho.len()];
    if n_band == 0 {
        return (0.0, grad);
    }
    let norm = (n_band * nm) as f64;
    let mut value = 0.0;
    for (c, &in_band) in band.iter().enumerate() {
        if !in_band {
            continue;
        }
        for e in 0..nm {
            let d = rho[c * nm + e] - base[e];
            value += d.abs() / norm;
            // signum() maps +-0.0 to +-1.0; an exact match gets subgradient 0.
            grad[c * nm + e] = if d == 0.0 { 0.0 } else { d.signum() / norm };
        }
    }
    (value, grad)
}

/// Squared parameter norm `sum W^2` with gradient `2 W`.
pub fn l2_term(weights: &[f64]) -> (f64, Vec<f64>) {
    let v = weights.iter().map(|w| w * w).sum();
    let g = weights.iter().map(|w| 2.0 * w).collect();
    (v, g)
}

/// Raw per-epoch loss components before combination.
#[derive(Debug, Clone, Default)]
pub struct RawParts {
    pub compliance_ratio: Option<f64>,
    pub mismatch: Option<f64>,
    pub bulk_mean_ratio: Option<f64>,
    pub volume: f64,
    pub boundary: f64,
    /// Unweighted `sum W^2`.
    pub l2: f64,
    /// Unweighted base-cell L1 deviation.
    pub l1_base: f64,
    pub rmse: Option<f64>,
}

/// One epoch's combined loss breakdown, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub total: f64,
    /// Mode-dependent structural term (includes the alpha-weighted mismatch
    /// in displacement mode).
    pub structural: f64,
    /// Raw volume penalty (before its alpha weight).
    pub volume: f64,
    /// Raw boundary loss (before its weight).
    pub boundary: f64,
    /// Weighted regularization: L2 plus any base-cell L1 pull.
    pub regularization: f64,
    pub rmse: Option<f64>,
    pub alpha: f64,
}

/// Combine raw parts into the final scalar under the shared formula.
pub fn combine(
    parts: &RawParts,
    mode: ObjectiveMode,
    alpha: f64,
    weights: &LossWeights,
    epoch: usize,
) -> LossReport {
    let structural = match mode {
        ObjectiveMode::Compliance => parts
            .compliance_ratio
            .expect("compliance mode needs a compliance ratio"),
        ObjectiveMode::Displacement => {
            let bulk = parts.bulk_mean_ratio.expect("displacement mode needs bulk");
            let mm = parts.mismatch.expect("displacement mode needs mismatch");
            -weights.bulk_multiplier * bulk + alpha * mm
        }
        ObjectiveMode::BulkOnly => {
            -weights.bulk_multiplier * parts.bulk_mean_ratio.expect("bulk mode needs bulk")
        }
    };
    let regularization = weights.l2_weight * parts.l2 + weights.l1_base_weight * parts.l1_base;
    let total =
        structural + alpha * parts.volume + weights.bc_scale * alpha * parts.boundary + regularization;
    LossReport {
        epoch,
        total,
        structural,
        volume: parts.volume,
        boundary: parts.boundary,
        regularization,
        rmse: parts.rmse,
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::node_id;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MAT: Material = Material::new(1.0, 0.3);

    fn grid_from(
        macro_dims: (usize, usize),
        micro_dims: (usize, usize),
        batch: &[f64],
    ) -> CellGrid {
        let h = Homogenizer::new(micro_dims.0, micro_dims.1).unwrap();
        let kinds = vec![CellKind::Free; macro_dims.0 * macro_dims.1];
        CellGrid::from_batch(&h, macro_dims, micro_dims, batch, MAT, 3.0, 1e-9, &kinds).unwrap()
    }

    fn cantilever(mx: usize, my: usize) -> FeProblem {
        let mut p = FeProblem::new(mx, my);
        for iy in 0..=my {
            let n = node_id(0, iy, my);
            p.fixed[2 * n] = true;
            p.fixed[2 * n + 1] = true;
        }
        p.loads[2 * node_id(mx, my / 2, my) + 1] = -1.0;
        p
    }

    #[test]
    fn solid_grid_compliance_ratio_is_one() {
        let (mac, mic) = ((2, 2), (4, 4));
        let batch = vec![1.0; 4 * 16];
        let grid = grid_from(mac, mic, &batch);
        let p = cantilever(2, 2);
        let baseline = {
            let s = macro_solve(&grid, &p).unwrap();
            compliance(&p.loads, &s.u)
        };
        let (ratio, _, _) = compliance_objective(&grid, &p, baseline).unwrap();
        assert!((ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compliance_gradient_matches_end_to_end_fd() {
        let (mac, mic) = ((2, 2), (4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(0.3..0.9)).collect();
        let p = cantilever(2, 2);
        let baseline = {
            let grid = grid_from(mac, mic, &vec![1.0; 4 * 16]);
            let s = macro_solve(&grid, &p).unwrap();
            compliance(&p.loads, &s.u)
        };
        let value_of = |b: &[f64]| -> f64 {
            let grid = grid_from(mac, mic, b);
            compliance_objective(&grid, &p, baseline).unwrap().0
        };
        let grid = grid_from(mac, mic, &batch);
        let (_, grad, _) = compliance_objective(&grid, &p, baseline).unwrap();
        let h = 1e-6;
        for &i in &[0usize, 17, 40, 63] {
            let mut up = batch.clone();
            up[i] += h;
            let mut dn = batch.clone();
            dn[i] -= h;
            let fd = (value_of(&up) - value_of(&dn)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-3 * fd.abs().max(1e-3),
                "pixel {i}: analytic {} fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn displacement_gradient_matches_end_to_end_fd() {
        let (mac, mic) = ((2, 2), (4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(0.3..0.9)).collect();
        let p = cantilever(2, 2);
        let n = p.n_dofs();
        // Target: solid-grid displacements scaled up; mask: top edge.
        let solid = grid_from(mac, mic, &vec![1.0; 4 * 16]);
        let target: Vec<f64> = macro_solve(&solid, &p)
            .unwrap()
            .u
            .iter()
            .map(|v| v * 1.5)
            .collect();
        let mut mask = vec![0.0; n];
        for ix in 0..=2 {
            mask[2 * node_id(ix, 2, 2) + 1] = 1.0;
        }
        let value_of = |b: &[f64]| -> f64 {
            let grid = grid_from(mac, mic, b);
            displacement_objective(&grid, &p, &target, &mask).unwrap().0
        };
        let grid = grid_from(mac, mic, &batch);
        let (_, grad, _) = displacement_objective(&grid, &p, &target, &mask).unwrap();
        let h = 1e-6;
        for &i in &[3usize, 20, 45, 60] {
            let mut up = batch.clone();
            up[i] += h;
            let mut dn = batch.clone();
            dn[i] -= h;
            let fd = (value_of(&up) - value_of(&dn)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-3 * fd.abs().max(1e-3),
                "pixel {i}: analytic {} fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn solid_cells_have_unit_bulk_ratio() {
        let grid = grid_from((2, 1), (4, 4), &vec![1.0; 2 * 16]);
        let (ratios, mean, _) = bulk_objective(&grid);
        for r in &ratios {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bulk_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch: Vec<f64> = (0..16).map(|_| rng.gen_range(0.3..0.9)).collect();
        let grid = grid_from((1, 1), (4, 4), &batch);
        let (_, _, grad) = bulk_objective(&grid);
        let h = 1e-6;
        for &i in &[0usize, 7, 15] {
            let mut up = batch.clone();
            up[i] += h;
            let mut dn = batch.clone();
            dn[i] -= h;
            let fu = bulk_objective(&grid_from((1, 1), (4, 4), &up)).1;
            let fd_v = bulk_objective(&grid_from((1, 1), (4, 4), &dn)).1;
            let fd = (fu - fd_v) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-4 * fd.abs().max(1e-4),
                "pixel {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn volume_penalty_example_and_gradient() {
        // A solid cell against a 0.5 target violates by (2 - 1)^2 = 1.
        let grid = grid_from((1, 1), (4, 4), &[1.0; 16]);
        let (v, _) = volume_penalty(&grid, &[0.5]);
        assert!((v - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<f64> = (0..32).map(|_| rng.gen_range(0.2..0.9)).collect();
        let grid = grid_from((2, 1), (4, 4), &batch);
        let targets = [0.4, 0.7];
        let (_, grad) = volume_penalty(&grid, &targets);
        let h = 1e-6;
        for &i in &[0usize, 15, 16, 31] {
            let mut up = batch.to_vec();
            up[i] += h;
            let mut dn = batch.to_vec();
            dn[i] -= h;
            let vu = volume_penalty(&grid_from((2, 1), (4, 4), &up), &targets).0;
            let vd = volume_penalty(&grid_from((2, 1), (4, 4), &dn), &targets).0;
            let fd = (vu - vd) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6, "pixel {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn boundary_loss_of_constant_cells_is_squared_jump() {
        let (mx, my) = (3, 3);
        let nm = mx * my;
        let mut rho = vec![0.2; 2 * nm];
        rho[nm..].iter_mut().for_each(|v| *v = 0.7);
        let kinds = [CellKind::Free, CellKind::Free];
        let (v, grad) = boundary_loss(&rho, (2, 1), (mx, my), &kinds);
        assert!((v - 0.25).abs() < 1e-12, "loss {v}");
        // Gradient: pixels on the shared interface move, others do not.
        let h = 1e-7;
        for &i in &[2usize, 5, 8, 9, 12, 0, 10] {
            let mut up = rho.clone();
            up[i] += h;
            let mut dn = rho.clone();
            dn[i] -= h;
            let fu = boundary_loss(&up, (2, 1), (mx, my), &kinds).0;
            let fd_v = boundary_loss(&dn, (2, 1), (mx, my), &kinds).0;
            let fd = (fu - fd_v) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6, "pixel {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn boundary_loss_skips_passive_interfaces() {
        let nm = 4;
        let rho = vec![0.5; 3 * nm];
        let kinds = [CellKind::Free, CellKind::PassiveVoid, CellKind::Free];
        let (v, _) = boundary_loss(&rho, (3, 1), (2, 2), &kinds);
        assert_eq!(v, 0.0, "no active-active interfaces exist");
    }

    #[test]
    fn base_cell_l1_value_and_subgradient() {
        let base = vec![1.0, 0.0, 0.0, 1.0];
        let rho = vec![
            1.0, 0.0, 0.0, 1.0, // matches base
            0.5, 0.5, 0.0, 1.0, // off by 0.5 twice
        ];
        let band = [true, true];
        let (v, grad) = base_cell_l1(&rho, &base, &band, (2, 2));
        assert!((v - 1.0 / 8.0).abs() < 1e-12);
        assert!(grad[4] < 0.0 && grad[5] > 0.0);
        assert_eq!(grad[0], 0.0); // exact match has zero subgradient
    }

    #[test]
    fn alpha_ramp_endpoints_and_monotonicity() {
        let e = 300;
        assert_eq!(alpha_schedule(0, e, 50.0), 1.0);
        assert_eq!(alpha_schedule(150, e, 50.0), 50.0);
        assert_eq!(alpha_schedule(299, e, 50.0), 50.0);
        let mut prev = 0.0;
        for ep in 0..e {
            let a = alpha_schedule(ep, e, 50.0);
            assert!(a >= prev && a <= 50.0);
            prev = a;
        }
    }

    #[test]
    fn combine_reduces_to_structural_plus_reg_at_zero_alpha() {
        let parts = RawParts {
            compliance_ratio: Some(2.5),
            volume: 0.3,
            boundary: 0.7,
            l2: 10.0,
            ..RawParts::default()
        };
        let w = LossWeights::default();
        let rep = combine(&parts, ObjectiveMode::Compliance, 0.0, &w, 3);
        assert!((rep.total - (2.5 + 1e-5 * 10.0)).abs() < 1e-15);
        assert_eq!(rep.epoch, 3);
    }

    #[test]
    fn combined_total_resums_from_report_fields() {
        let parts = RawParts {
            mismatch: Some(0.8),
            bulk_mean_ratio: Some(0.6),
            volume: 0.2,
            boundary: 0.05,
            l2: 4.0,
            l1_base: 0.3,
            rmse: Some(0.9),
            ..RawParts::default()
        };
        let w = LossWeights {
            l1_base_weight: 2.0,
            ..LossWeights::default()
        };
        let alpha = 25.0;
        let rep = combine(&parts, ObjectiveMode::Displacement, alpha, &w, 10);
        let resum =
            rep.structural + alpha * rep.volume + w.bc_scale * alpha * rep.boundary + rep.regularization;
        assert!(
            (rep.total - resum).abs() < 1e-10,
            "total {} resum {resum}",
            rep.total
        );
    }

    #[test]
    fn passive_cells_are_voided_and_frozen() {
        let h = Homogenizer::new(4, 4).unwrap();
        let kinds = vec![CellKind::Free, CellKind::PassiveVoid];
        let batch = vec![0.8; 2 * 16];
        let grid =
            CellGrid::from_batch(&h, (2, 1), (4, 4), &batch, MAT, 3.0, 1e-9, &kinds).unwrap();
        assert!(grid.rho[1].iter().all(|&r| r == 0.0));
        let (ratios, _, grad) = bulk_objective(&grid);
        assert!(ratios[1] < 1e-6, "void cell keeps floor stiffness only");
        assert!(grad[16..].iter().all(|&g| g == 0.0));
    }
}
