//! Energy-based homogenization of periodic unit cells.
//!
//! A unit cell is meshed with one Q4 element per density pixel. Three unit
//! test strains (uniaxial x, uniaxial y, unit engineering shear) are applied
//! as equivalent nodal loads under periodic boundary conditions; the
//! homogenized tensor is the average mutual energy of the corrected strain
//! fields. The per-element energies are retained so the sensitivity of every
//! tensor entry to every density pixel comes for free.

// Small dense matrices are clearest with explicit index loops.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::fem::{
    element_stiffness, factor, simp_scale, simp_scale_deriv, Assembler, ConstitutiveTensor,
    KeSource, Material, UNIT_STRAIN_U,
};
use std::sync::Arc;

/// A periodic unit cell: density raster plus interpolation parameters.
/// Pixels are row-major with `e = ey * nx + ex`, row `ey = 0` at the bottom.
#[derive(Debug, Clone)]
pub struct UnitCell<'a> {
    pub rho: &'a [f64],
    pub nx: usize,
    pub ny: usize,
    pub material: Material,
    /// SIMP penalization exponent.
    pub penal: f64,
    /// Ersatz stiffness floor keeping void regions positive definite.
    pub c0: f64,
}

/// Homogenized tensor together with the per-element corrected-field energies
/// that drive sensitivities.
#[derive(Debug, Clone)]
pub struct HomogenizationResult {
    pub tensor: ConstitutiveTensor,
    /// `energies[e][a][b]` is the mutual energy of corrected fields `a`, `b`
    /// against the unscaled base element; multiplying by the SIMP derivative
    /// yields the tensor sensitivity.
    pub energies: Vec<[[f64; 3]; 3]>,
    pub nx: usize,
    pub ny: usize,
}

/// Reusable periodic mesh for one cell resolution: fold map, assembler and
/// scatter structure are built once and shared across epochs.
pub struct Homogenizer {
    nx: usize,
    ny: usize,
    asm: Arc<Assembler>,
    /// Folded load scatter: per element, folded dof ids.
    n_folded: usize,
}

/// Position of index `i` in the fold ordering `0, n-1, 1, n-2, ...` which
/// keeps periodically coupled nodes within two positions of each other.
#[inline]
fn fold_pos(i: usize, n: usize) -> usize {
    if 2 * i < n {
        2 * i
    } else {
        2 * (n - 1 - i) + 1
    }
}

impl Homogenizer {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Input(format!(
                "unit cell must be at least 2x2, got {nx}x{ny}"
            )));
        }
        let n_nodes_full = (nx + 1) * (ny + 1);
        let n_folded = 2 * nx * ny;
        // Periodic fold: wrap node coordinates, then renumber with the fold
        // ordering so the skyline profile of the reduced system stays narrow.
        let mut fold = vec![0u32; 2 * n_nodes_full];
        for ix in 0..=nx {
            for iy in 0..=ny {
                let full = ix * (ny + 1) + iy;
                let uid = fold_pos(ix % nx, nx) * ny + fold_pos(iy % ny, ny);
                fold[2 * full] = 2 * uid as u32;
                fold[2 * full + 1] = 2 * uid as u32 + 1;
            }
        }
        // Pin one node to remove the rigid translation left by periodicity.
        let mut fixed = vec![false; n_folded];
        let pin = fold_pos(0, nx) * ny + fold_pos(0, ny);
        fixed[2 * pin] = true;
        fixed[2 * pin + 1] = true;

        let elements = crate::fem::grid_elements(nx, ny);
        let asm = Arc::new(Assembler::new(
            2 * n_nodes_full,
            Some((n_folded, &fold)),
            &fixed,
            &elements,
        ));
        Ok(Homogenizer {
            nx,
            ny,
            asm,
            n_folded,
        })
    }

    /// Homogenize a density raster with the given material and interpolation.
    pub fn homogenize(
        &self,
        rho: &[f64],
        material: Material,
        penal: f64,
        c0: f64,
    ) -> Result<HomogenizationResult> {
        let (nx, ny) = (self.nx, self.ny);
        if rho.len() != nx * ny {
            return Err(Error::Input(format!(
                "density raster has {} pixels, cell is {nx}x{ny}",
                rho.len()
            )));
        }
        for (e, &r) in rho.iter().enumerate() {
            if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
                return Err(Error::Input(format!(
                    "density {r} at pixel {e} outside [0, 1]"
                )));
            }
        }

        let d0 = ConstitutiveTensor::plane_stress(material);
        let k0 = element_stiffness(&d0);
        let scales: Vec<f64> = rho.iter().map(|&r| simp_scale(r, penal, c0)).collect();

        // Equivalent nodal loads of the three unit test strains.
        let mut loads = vec![vec![0.0f64; self.n_folded]; 3];
        let mut f0 = [[0.0f64; 8]; 3];
        for a in 0..3 {
            for i in 0..8 {
                f0[a][i] = (0..8).map(|j| k0[i][j] * UNIT_STRAIN_U[a][j]).sum();
            }
        }
        for e in 0..nx * ny {
            let fd = self.asm.element_folded_dofs(e);
            let s = scales[e];
            for a in 0..3 {
                for k in 0..8 {
                    loads[a][fd[k] as usize] += s * f0[a][k];
                }
            }
        }

        let sys = factor(
            self.asm.clone(),
            KeSource::Scaled {
                k0: Box::new(k0),
                scales: scales.clone(),
            },
            None,
        )
        .map_err(|e| match e {
            Error::Singular(msg) => {
                Error::Singular(format!("periodic cell system: {msg}"))
            }
            other => other,
        })?;
        let mut u = Vec::with_capacity(3);
        for load in &loads {
            u.push(sys.solve(load)?);
        }

        // Corrected fields w = u0 - u~ per element; mutual energies against
        // the unscaled base matrix feed both the tensor and its sensitivity.
        let area = (nx * ny) as f64;
        let mut energies = vec![[[0.0f64; 3]; 3]; nx * ny];
        let mut tensor = [[0.0f64; 3]; 3];
        let mut w = [[0.0f64; 8]; 3];
        let mut kw = [[0.0f64; 8]; 3];
        for e in 0..nx * ny {
            let fd = self.asm.element_folded_dofs(e);
            for a in 0..3 {
                for k in 0..8 {
                    w[a][k] = UNIT_STRAIN_U[a][k] - u[a][fd[k] as usize];
                }
            }
            for a in 0..3 {
                for i in 0..8 {
                    kw[a][i] = (0..8).map(|j| k0[i][j] * w[a][j]).sum();
                }
            }
            let q = &mut energies[e];
            for a in 0..3 {
                for b in a..3 {
                    let v: f64 = (0..8).map(|i| w[a][i] * kw[b][i]).sum();
                    q[a][b] = v;
                    q[b][a] = v;
                }
            }
            let s = scales[e];
            for a in 0..3 {
                for b in a..3 {
                    tensor[a][b] += s * q[a][b];
                }
            }
        }
        for a in 0..3 {
            for b in a..3 {
                let v = tensor[a][b] / area;
                tensor[a][b] = v;
                tensor[b][a] = v;
            }
        }
        for row in &tensor {
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Numerical(
                        "homogenized tensor has non-finite entries".into(),
                    ));
                }
            }
        }
        Ok(HomogenizationResult {
            tensor: ConstitutiveTensor(tensor),
            energies,
            nx,
            ny,
        })
    }
}

/// One-shot homogenization of a cell (builds the periodic mesh internally;
/// reuse [`Homogenizer`] when calling repeatedly at one resolution).
pub fn homogenize(cell: &UnitCell) -> Result<HomogenizationResult> {
    Homogenizer::new(cell.nx, cell.ny)?.homogenize(cell.rho, cell.material, cell.penal, cell.c0)
}

/// Sensitivity of every tensor entry to every density pixel:
/// `out[e][a][b] = d tensor[a][b] / d rho[e]`.
pub fn homogenize_sensitivity(cell: &UnitCell, result: &HomogenizationResult) -> Vec<[[f64; 3]; 3]> {
    assert_eq!(result.energies.len(), cell.rho.len());
    let area = (cell.nx * cell.ny) as f64;
    cell.rho
        .iter()
        .zip(&result.energies)
        .map(|(&r, q)| {
            let ds = simp_scale_deriv(r, cell.penal, cell.c0) / area;
            let mut out = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    out[a][b] = ds * q[a][b];
                }
            }
            out
        })
        .collect()
}

/// Hashin-Shtrikman upper bound on the bulk modulus of a two-phase
/// (material/void) composite at volume fraction `vf`.
pub fn hs_upper_bound(vf: f64, mat: Material) -> f64 {
    let k0 = mat.e / (2.0 * (1.0 - mat.nu));
    let g0 = mat.e / (2.0 * (1.0 + mat.nu));
    vf * k0 * g0 / ((1.0 - vf) * k0 + g0)
}

/// Bulk modulus of a homogenized tensor: mean of the four normal entries.
pub fn bulk_modulus(tensor: &ConstitutiveTensor) -> f64 {
    tensor.bulk()
}
