//! Plane-stress finite elements on regular grids.
//!
//! Meshes are `nelx x nely` grids of unit-square Q4 elements; node `(ix, iy)`
//! has id `ix * (nely + 1) + iy` and two dofs. Row `iy = 0` is the bottom of
//! the domain. Systems are reduced by eliminating constrained dofs (with
//! optional periodic folding of equivalent dofs first), factored by the
//! skyline solver, and polished by iterative refinement until the relative
//! residual on free dofs is at most [`RESIDUAL_CONTRACT`].

// Small dense matrices are clearest with explicit index loops.
#![allow(clippy::needless_range_loop)]

pub mod element;
pub mod skyline;

pub use element::{
    element_stiffness, simp_scale, simp_scale_deriv, tensor_energy_pairs, unit_blocks,
    ConstitutiveTensor, Material, UNIT_STRAIN_U,
};

use crate::error::{Error, Result};
use skyline::{Profile, SkylineMatrix};
use std::sync::Arc;

/// Largest acceptable `|K u - F| / |F|` on free dofs after refinement.
pub const RESIDUAL_CONTRACT: f64 = 1e-8;

const MAX_REFINEMENTS: usize = 4;

/// Total dof count of an `nelx x nely` grid mesh.
pub fn n_dofs(nelx: usize, nely: usize) -> usize {
    2 * (nelx + 1) * (nely + 1)
}

/// Node id of grid node `(ix, iy)`.
#[inline]
pub fn node_id(ix: usize, iy: usize, nely: usize) -> usize {
    ix * (nely + 1) + iy
}

/// Per-element dof ids (8 each, nodes counterclockwise from lower-left) for a
/// grid mesh, elements in row-major order `e = ey * nelx + ex`.
pub fn grid_elements(nelx: usize, nely: usize) -> Vec<[u32; 8]> {
    let mut out = Vec::with_capacity(nelx * nely);
    for ey in 0..nely {
        for ex in 0..nelx {
            let n = [
                node_id(ex, ey, nely),
                node_id(ex + 1, ey, nely),
                node_id(ex + 1, ey + 1, nely),
                node_id(ex, ey + 1, nely),
            ];
            out.push([
                2 * n[0] as u32,
                2 * n[0] as u32 + 1,
                2 * n[1] as u32,
                2 * n[1] as u32 + 1,
                2 * n[2] as u32,
                2 * n[2] as u32 + 1,
                2 * n[3] as u32,
                2 * n[3] as u32 + 1,
            ]);
        }
    }
    out
}

/// Element stiffness source for assembly and residual evaluation.
pub enum KeSource {
    /// One base matrix scaled per element (SIMP fields, homogenization cells).
    Scaled {
        k0: Box<[[f64; 8]; 8]>,
        scales: Vec<f64>,
    },
    /// Arbitrary per-element matrices (homogenized macro cells).
    General(Vec<[[f64; 8]; 8]>),
}

impl KeSource {
    fn apply(&self, e: usize, u: &[f64; 8], out: &mut [f64; 8]) {
        let (ke, s) = match self {
            KeSource::Scaled { k0, scales } => (&**k0, scales[e]),
            KeSource::General(kes) => (&kes[e], 1.0),
        };
        for i in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += ke[i][j] * u[j];
            }
            out[i] = s * acc;
        }
    }

    fn entry(&self, e: usize, a: usize, b: usize) -> f64 {
        match self {
            KeSource::Scaled { k0, scales } => scales[e] * k0[a][b],
            KeSource::General(kes) => kes[e][a][b],
        }
    }
}

/// Precomputed reduction of a mesh: dof folding, constraint elimination,
/// skyline profile, and per-element scatter targets. Built once per mesh
/// structure and reused across many assemblies.
pub struct Assembler {
    /// Folded dof ids per element.
    folded_dofs: Vec<[u32; 8]>,
    /// Folded dof -> reduced index, -1 where constrained.
    red: Vec<i32>,
    /// Reduced index -> folded dof.
    free: Vec<u32>,
    n_folded: usize,
    profile: Arc<Profile>,
    /// Packed value index per `(element, a, b)` or `u32::MAX` to skip.
    scatter: Vec<u32>,
}

impl Assembler {
    /// `fold` maps full dof ids onto `n_folded` equivalence classes
    /// (identity when `None`); `fixed` flags constrained classes.
    pub fn new(
        n_full: usize,
        fold: Option<(usize, &[u32])>,
        fixed: &[bool],
        elements: &[[u32; 8]],
    ) -> Self {
        let n_folded = fold.map_or(n_full, |(n, _)| n);
        assert_eq!(fixed.len(), n_folded);
        let folded_dofs: Vec<[u32; 8]> = elements
            .iter()
            .map(|dofs| {
                let mut f = [0u32; 8];
                for (k, &d) in dofs.iter().enumerate() {
                    f[k] = match fold {
                        Some((_, map)) => map[d as usize],
                        None => d,
                    };
                }
                f
            })
            .collect();

        let mut red = vec![-1i32; n_folded];
        let mut free = Vec::new();
        for (d, &fx) in fixed.iter().enumerate() {
            if !fx {
                red[d] = free.len() as i32;
                free.push(d as u32);
            }
        }
        let n_red = free.len();

        let mut first: Vec<usize> = (0..n_red).collect();
        for fd in &folded_dofs {
            let mut lo = usize::MAX;
            for &d in fd {
                let r = red[d as usize];
                if r >= 0 {
                    lo = lo.min(r as usize);
                }
            }
            if lo == usize::MAX {
                continue;
            }
            for &d in fd {
                let r = red[d as usize];
                if r >= 0 {
                    let rj = r as usize;
                    first[rj] = first[rj].min(lo);
                }
            }
        }
        let profile = Arc::new(Profile::new(first));

        let mut scatter = vec![u32::MAX; folded_dofs.len() * 64];
        for (e, fd) in folded_dofs.iter().enumerate() {
            for a in 0..8 {
                let ra = red[fd[a] as usize];
                if ra < 0 {
                    continue;
                }
                for b in 0..8 {
                    let rb = red[fd[b] as usize];
                    if rb >= 0 && ra <= rb {
                        scatter[e * 64 + a * 8 + b] =
                            profile.pos(ra as usize, rb as usize) as u32;
                    }
                }
            }
        }

        Assembler {
            folded_dofs,
            red,
            free,
            n_folded,
            profile,
            scatter,
        }
    }

    pub fn n_reduced(&self) -> usize {
        self.free.len()
    }

    pub fn n_folded(&self) -> usize {
        self.n_folded
    }

    /// Folded dof ids of one element, for load scatter and solution gather.
    pub fn element_folded_dofs(&self, e: usize) -> &[u32; 8] {
        &self.folded_dofs[e]
    }

    /// Accumulate a full-length dof vector into folded classes.
    pub fn fold_vector(&self, full: &[f64], fold: Option<&[u32]>) -> Vec<f64> {
        match fold {
            None => full.to_vec(),
            Some(map) => {
                let mut out = vec![0.0; self.n_folded];
                for (d, &v) in full.iter().enumerate() {
                    out[map[d] as usize] += v;
                }
                out
            }
        }
    }
}

/// A factored reduced system ready to solve one or more right-hand sides.
pub struct FactoredSystem {
    asm: Arc<Assembler>,
    matrix: SkylineMatrix,
    kes: KeSource,
    /// Prescribed values per folded dof (zero where free).
    prescribed: Vec<f64>,
}

/// Assemble and factor the reduced stiffness system.
///
/// `prescribed` supplies nonzero values for constrained folded dofs; their
/// coupling moves to the right-hand side during [`FactoredSystem::solve`].
pub fn factor(
    asm: Arc<Assembler>,
    kes: KeSource,
    prescribed: Option<Vec<f64>>,
) -> Result<FactoredSystem> {
    let mut matrix = SkylineMatrix::zeros(asm.profile.clone());
    match &kes {
        KeSource::Scaled { k0, scales } => {
            assert_eq!(scales.len(), asm.folded_dofs.len());
            let mut flat = [0.0f64; 64];
            for a in 0..8 {
                for b in 0..8 {
                    flat[a * 8 + b] = k0[a][b];
                }
            }
            for (e, &s) in scales.iter().enumerate() {
                let base = e * 64;
                for (idx, &kv) in flat.iter().enumerate() {
                    let tgt = asm.scatter[base + idx];
                    if tgt != u32::MAX {
                        matrix.vals[tgt as usize] += s * kv;
                    }
                }
            }
        }
        KeSource::General(per_elem) => {
            assert_eq!(per_elem.len(), asm.folded_dofs.len());
            for (e, ke) in per_elem.iter().enumerate() {
                let base = e * 64;
                for a in 0..8 {
                    for b in 0..8 {
                        let tgt = asm.scatter[base + a * 8 + b];
                        if tgt != u32::MAX {
                            matrix.vals[tgt as usize] += ke[a][b];
                        }
                    }
                }
            }
        }
    }
    matrix.factorize()?;
    let prescribed = prescribed.unwrap_or_else(|| vec![0.0; asm.n_folded]);
    Ok(FactoredSystem {
        asm,
        matrix,
        kes,
        prescribed,
    })
}

impl FactoredSystem {
    /// Solve for the folded displacement vector under `loads_folded`,
    /// polishing with iterative refinement until the residual contract holds.
    /// Returns the folded displacements including prescribed values.
    pub fn solve(&self, loads_folded: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(loads_folded, true)
    }

    /// Solve with homogeneous constraints (all fixed dofs held at zero),
    /// regardless of the prescribed values used by the primary solve.
    /// Adjoint systems share the factor but not the boundary values.
    pub fn solve_homogeneous(&self, loads_folded: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(loads_folded, false)
    }

    fn solve_impl(&self, loads_folded: &[f64], with_prescribed: bool) -> Result<Vec<f64>> {
        let asm = &*self.asm;
        assert_eq!(loads_folded.len(), asm.n_folded);
        let n_red = asm.n_reduced();

        // Effective reduced rhs: loads at free dofs minus prescribed coupling.
        let mut b = vec![0.0; n_red];
        for (r, &d) in asm.free.iter().enumerate() {
            b[r] = loads_folded[d as usize];
        }
        let any_prescribed = with_prescribed && self.prescribed.iter().any(|&v| v != 0.0);
        if any_prescribed {
            for (e, fd) in asm.folded_dofs.iter().enumerate() {
                for a in 0..8 {
                    let ra = asm.red[fd[a] as usize];
                    if ra < 0 {
                        continue;
                    }
                    for b_idx in 0..8 {
                        let db = fd[b_idx] as usize;
                        if asm.red[db] < 0 {
                            let v = self.prescribed[db];
                            if v != 0.0 {
                                b[ra as usize] -= self.kes.entry(e, a, b_idx) * v;
                            }
                        }
                    }
                }
            }
        }

        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = b.clone();
        self.matrix.solve_in_place(&mut x);
        let mut u = self.expand(&x, with_prescribed);
        if b_norm == 0.0 {
            return Ok(u);
        }

        for attempt in 0..=MAX_REFINEMENTS {
            let r = self.free_residual(&u, loads_folded);
            let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
            if rel <= RESIDUAL_CONTRACT * 0.01 {
                return Ok(u);
            }
            if attempt == MAX_REFINEMENTS {
                if rel <= RESIDUAL_CONTRACT {
                    return Ok(u);
                }
                return Err(Error::Numerical(format!(
                    "residual {rel:.3e} above contract {RESIDUAL_CONTRACT:.0e} \
                     after {MAX_REFINEMENTS} refinements"
                )));
            }
            let mut dx = r;
            self.matrix.solve_in_place(&mut dx);
            for (r_idx, &d) in self.asm.free.iter().enumerate() {
                u[d as usize] += dx[r_idx];
            }
        }
        unreachable!()
    }

    /// Residual `F - K u` restricted to free dofs, computed element-wise.
    fn free_residual(&self, u_folded: &[f64], loads_folded: &[f64]) -> Vec<f64> {
        let asm = &*self.asm;
        let mut r_folded = loads_folded.to_vec();
        let mut ue = [0.0f64; 8];
        let mut fe = [0.0f64; 8];
        for (e, fd) in asm.folded_dofs.iter().enumerate() {
            for k in 0..8 {
                ue[k] = u_folded[fd[k] as usize];
            }
            self.kes.apply(e, &ue, &mut fe);
            for k in 0..8 {
                r_folded[fd[k] as usize] -= fe[k];
            }
        }
        asm.free
            .iter()
            .map(|&d| r_folded[d as usize])
            .collect()
    }

    /// Expand a reduced solution to folded dofs, inserting prescribed values
    /// (or zeros for homogeneous solves) at constrained dofs.
    fn expand(&self, x: &[f64], with_prescribed: bool) -> Vec<f64> {
        let mut u = if with_prescribed {
            self.prescribed.clone()
        } else {
            vec![0.0; self.prescribed.len()]
        };
        for (r, &d) in self.asm.free.iter().enumerate() {
            u[d as usize] = x[r];
        }
        u
    }
}

// ============================================================================
// Macroscale problems
// ============================================================================

/// Boundary value problem on a grid mesh. `fixed`/`prescribed`/`loads` are
/// indexed by full dof id; prescribed values apply where `fixed` is set.
#[derive(Debug, Clone)]
pub struct FeProblem {
    pub nelx: usize,
    pub nely: usize,
    pub fixed: Vec<bool>,
    pub prescribed: Vec<f64>,
    pub loads: Vec<f64>,
}

impl FeProblem {
    pub fn new(nelx: usize, nely: usize) -> Self {
        let n = n_dofs(nelx, nely);
        FeProblem {
            nelx,
            nely,
            fixed: vec![false; n],
            prescribed: vec![0.0; n],
            loads: vec![0.0; n],
        }
    }

    pub fn n_dofs(&self) -> usize {
        n_dofs(self.nelx, self.nely)
    }

    pub fn check_supported(&self) -> Result<()> {
        if !self.fixed.iter().any(|&f| f) {
            return Err(Error::Input(
                "problem has no constrained dofs; rigid body modes are unremovable".into(),
            ));
        }
        Ok(())
    }

    pub fn assembler(&self) -> Arc<Assembler> {
        let elements = grid_elements(self.nelx, self.nely);
        Arc::new(Assembler::new(self.n_dofs(), None, &self.fixed, &elements))
    }

    /// Factor the system with one constitutive tensor per element
    /// (row-major, `e = ey * nelx + ex`).
    pub fn factor_homogenized(
        &self,
        asm: Arc<Assembler>,
        tensors: &[ConstitutiveTensor],
    ) -> Result<FactoredSystem> {
        assert_eq!(tensors.len(), self.nelx * self.nely);
        self.check_supported()?;
        let kes: Vec<[[f64; 8]; 8]> = tensors.iter().map(element_stiffness).collect();
        factor(asm, KeSource::General(kes), Some(self.prescribed.clone()))
    }

    /// Factor the system with SIMP-scaled densities, one per element.
    pub fn factor_simp(
        &self,
        asm: Arc<Assembler>,
        rho: &[f64],
        mat: Material,
        p: f64,
        c0: f64,
    ) -> Result<FactoredSystem> {
        assert_eq!(rho.len(), self.nelx * self.nely);
        self.check_supported()?;
        let k0 = element_stiffness(&ConstitutiveTensor::plane_stress(mat));
        let scales: Vec<f64> = rho.iter().map(|&r| simp_scale(r, p, c0)).collect();
        factor(
            asm,
            KeSource::Scaled {
                k0: Box::new(k0),
                scales,
            },
            Some(self.prescribed.clone()),
        )
    }

    /// Gather an element's dof values from a full-length vector.
    pub fn gather_element(&self, u: &[f64], ex: usize, ey: usize) -> [f64; 8] {
        let elements = element_dofs(self.nelx, self.nely, ex, ey);
        let mut out = [0.0; 8];
        for (k, &d) in elements.iter().enumerate() {
            out[k] = u[d as usize];
        }
        out
    }
}

/// Dof ids of grid element `(ex, ey)`.
pub fn element_dofs(nelx: usize, nely: usize, ex: usize, ey: usize) -> [u32; 8] {
    debug_assert!(ex < nelx && ey < nely);
    let n = [
        node_id(ex, ey, nely),
        node_id(ex + 1, ey, nely),
        node_id(ex + 1, ey + 1, nely),
        node_id(ex, ey + 1, nely),
    ];
    [
        2 * n[0] as u32,
        2 * n[0] as u32 + 1,
        2 * n[1] as u32,
        2 * n[1] as u32 + 1,
        2 * n[2] as u32,
        2 * n[2] as u32 + 1,
        2 * n[3] as u32,
        2 * n[3] as u32 + 1,
    ]
}

/// External work `F . u` of the applied loads.
pub fn compliance(loads: &[f64], u: &[f64]) -> f64 {
    loads.iter().zip(u).map(|(f, d)| f * d).sum()
}

/// Displacement comparison of a pixel-resolution solve against a target.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    /// Root mean square displacement error over dofs with positive mask.
    pub rmse: f64,
    /// Mean of `sign(target) * (u - target)` over masked dofs; negative means
    /// the structure deflects less than the target on average.
    pub mean_signed_error: f64,
    pub n_masked: usize,
    pub u: Vec<f64>,
}

/// Solve a per-pixel SIMP problem and compare against target displacements.
pub fn full_scale_verify(
    problem: &FeProblem,
    rho: &[f64],
    mat: Material,
    p: f64,
    c0: f64,
    target: &[f64],
    mask: &[f64],
) -> Result<VerifyReport> {
    let n = problem.n_dofs();
    assert_eq!(target.len(), n);
    assert_eq!(mask.len(), n);
    let asm = problem.assembler();
    let sys = problem.factor_simp(asm, rho, mat, p, c0)?;
    let u = sys.solve(&problem.loads)?;

    let mut sq = 0.0;
    let mut wsum = 0.0;
    let mut signed = 0.0;
    let mut n_masked = 0usize;
    for i in 0..n {
        let w = mask[i];
        if w > 0.0 {
            let d = u[i] - target[i];
            sq += w * d * d;
            wsum += w;
            signed += target[i].signum() * d;
            n_masked += 1;
        }
    }
    if n_masked == 0 {
        return Err(Error::Input("verification mask selects no dofs".into()));
    }
    Ok(VerifyReport {
        rmse: (sq / wsum).sqrt(),
        mean_signed_error: signed / n_masked as f64,
        n_masked,
        u,
    })
}
