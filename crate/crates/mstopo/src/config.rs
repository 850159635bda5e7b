//! Run configuration: one versioned JSON document fully determines a run.
//!
//! A config names the lattice, material, network, training schedule, loss
//! weights, boundary conditions, target/mask construction, and per-cell
//! volume targets. Parsing is strict (unknown fields rejected) so that the
//! SHA-256 of the resolved document is trustworthy provenance.

use crate::error::{Error, Result};
use crate::fem::{node_id, FeProblem, Material};
use crate::field::NetworkInit;
use crate::loss::{CellKind, LossWeights, ObjectiveMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

fn default_pixel_budget() -> u64 {
    100_000_000
}

/// Base material of the solid phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub e: f64,
    pub nu: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec { e: 1.0, nu: 0.3 }
    }
}

impl MaterialSpec {
    pub fn material(&self) -> Material {
        Material::new(self.e, self.nu)
    }
}

/// Network architecture and initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub local_kernels_per_dim: usize,
    pub global_kernels_per_dim: usize,
    pub local_range: (f64, f64),
    pub global_range: (f64, f64),
    pub weight_init: f64,
    pub weight_jitter: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let d = NetworkInit::default();
        NetworkSpec {
            local_kernels_per_dim: d.local_kernels_per_dim,
            global_kernels_per_dim: d.global_kernels_per_dim,
            local_range: d.local_range,
            global_range: d.global_range,
            weight_init: d.weight_init,
            weight_jitter: d.weight_jitter,
        }
    }
}

impl NetworkSpec {
    pub fn init(&self) -> NetworkInit {
        NetworkInit {
            local_kernels_per_dim: self.local_kernels_per_dim,
            global_kernels_per_dim: self.global_kernels_per_dim,
            local_range: self.local_range,
            global_range: self.global_range,
            weight_init: self.weight_init,
            weight_jitter: self.weight_jitter,
        }
    }
}

/// Optimizer schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Mini-epoch subcell factor; 1 disables subcell cycling.
    pub upsample: usize,
    /// Progress line cadence on standard output.
    pub log_every: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            epochs: 300,
            learning_rate: 0.001,
            upsample: 1,
            log_every: 10,
        }
    }
}

/// Density-to-stiffness interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationSpec {
    pub penal: f64,
    pub stiffness_floor: f64,
}

impl Default for InterpolationSpec {
    fn default() -> Self {
        InterpolationSpec {
            penal: 3.0,
            stiffness_floor: 1e-9,
        }
    }
}

/// Per-cell volume fraction targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum VolumeSpec {
    /// Same target for every cell.
    Uniform { target: f64 },
    /// Target varies linearly with the cell column, `from` at the left edge.
    LinearX { from: f64, to: f64 },
    /// Explicit per-cell targets, row-major `cy * mx + cx`.
    PerCell { targets: Vec<f64> },
}

impl VolumeSpec {
    pub fn targets(&self, macro_dims: (usize, usize)) -> Vec<f64> {
        let (mx, my) = macro_dims;
        match self {
            VolumeSpec::Uniform { target } => vec![*target; mx * my],
            VolumeSpec::LinearX { from, to } => {
                let mut t = Vec::with_capacity(mx * my);
                for _cy in 0..my {
                    for cx in 0..mx {
                        let s = if mx > 1 { cx as f64 / (mx - 1) as f64 } else { 0.0 };
                        t.push(from + (to - from) * s);
                    }
                }
                t
            }
            VolumeSpec::PerCell { targets } => targets.clone(),
        }
    }
}

/// One side of the rectangular macro domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// A set of mesh nodes, in macro node coordinates `(ix, iy)` with
/// `0 <= ix <= nelx`, `0 <= iy <= nely`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum NodeSet {
    Node { ix: usize, iy: usize },
    Edge { side: Side },
}

impl NodeSet {
    pub fn resolve(&self, nelx: usize, nely: usize) -> Result<Vec<(usize, usize)>> {
        match *self {
            NodeSet::Node { ix, iy } => {
                if ix > nelx || iy > nely {
                    return Err(Error::Config(format!(
                        "node ({ix}, {iy}) outside the {nelx}x{nely} element grid"
                    )));
                }
                Ok(vec![(ix, iy)])
            }
            NodeSet::Edge { side } => Ok(match side {
                Side::Left => (0..=nely).map(|iy| (0, iy)).collect(),
                Side::Right => (0..=nely).map(|iy| (nelx, iy)).collect(),
                Side::Bottom => (0..=nelx).map(|ix| (ix, 0)).collect(),
                Side::Top => (0..=nelx).map(|ix| (ix, nely)).collect(),
            }),
        }
    }
}

/// Displacement component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn offset(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Which components a support constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixDir {
    X,
    Y,
    Both,
}

/// Zero-displacement support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSpec {
    pub nodes: NodeSet,
    pub dir: FixDir,
}

/// Nonzero prescribed displacement on one component of a node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrescribedSpec {
    pub nodes: NodeSet,
    pub dir: Axis,
    pub value: f64,
}

/// Point load applied per node of a node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub nodes: NodeSet,
    pub dir: Axis,
    pub value: f64,
}

/// Macroscale boundary conditions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySpec {
    pub fixed: Vec<FixedSpec>,
    pub prescribed: Vec<PrescribedSpec>,
    pub loads: Vec<LoadSpec>,
}

impl BoundarySpec {
    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty() && self.prescribed.is_empty() && self.loads.is_empty()
    }

    /// Apply the conditions to a problem of matching dimensions.
    pub fn apply(&self, p: &mut FeProblem) -> Result<()> {
        let (nx, ny) = (p.nelx, p.nely);
        for f in &self.fixed {
            for (ix, iy) in f.nodes.resolve(nx, ny)? {
                let n = node_id(ix, iy, ny);
                match f.dir {
                    FixDir::X => p.fixed[2 * n] = true,
                    FixDir::Y => p.fixed[2 * n + 1] = true,
                    FixDir::Both => {
                        p.fixed[2 * n] = true;
                        p.fixed[2 * n + 1] = true;
                    }
                }
            }
        }
        for s in &self.prescribed {
            for (ix, iy) in s.nodes.resolve(nx, ny)? {
                let d = 2 * node_id(ix, iy, ny) + s.dir.offset();
                p.fixed[d] = true;
                p.prescribed[d] = s.value;
            }
        }
        for l in &self.loads {
            for (ix, iy) in l.nodes.resolve(nx, ny)? {
                let d = 2 * node_id(ix, iy, ny) + l.dir.offset();
                p.loads[d] += l.value;
            }
        }
        Ok(())
    }
}

/// How the target displacement field is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum TargetSpec {
    /// No target (compliance and bulk-only modes).
    None,
    /// Vertical bump profile `amplitude * sin(pi * ix / nelx)` on top-edge
    /// vertical dofs; zero elsewhere.
    TopEdgeBump { amplitude: f64 },
    /// Displacements of the same problem solved with a hypothetical
    /// homogeneous material (negative-ratio designs).
    HypotheticalMaterial { e: f64, nu: f64 },
    /// Displacements of the domain tiled everywhere with the base cell
    /// (holes ignored); requires `base_cell`.
    BaseCellFill,
    /// Displacements of the solid homogeneous domain.
    SolidFill,
}

/// Which dofs the displacement mismatch and RMSE are measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum MaskSpec {
    /// No mask (compliance and bulk-only modes).
    None,
    /// Every free dof.
    AllFree,
    /// One displacement component of a node set (free dofs only).
    Component { nodes: Vec<NodeSet>, dir: Axis },
    /// Both components of every node of the outermost macro cell ring.
    OuterCellRing,
}

impl MaskSpec {
    /// Mask weights over full dofs; fixed dofs always get weight zero.
    pub fn build(&self, p: &FeProblem, macro_dims: (usize, usize)) -> Result<Option<Vec<f64>>> {
        let n = p.n_dofs();
        let mut m = match self {
            MaskSpec::None => return Ok(None),
            MaskSpec::AllFree => vec![1.0; n],
            MaskSpec::Component { nodes, dir } => {
                let mut m = vec![0.0; n];
                for set in nodes {
                    for (ix, iy) in set.resolve(p.nelx, p.nely)? {
                        m[2 * node_id(ix, iy, p.nely) + dir.offset()] = 1.0;
                    }
                }
                m
            }
            MaskSpec::OuterCellRing => {
                let (mx, my) = macro_dims;
                if !p.nelx.is_multiple_of(mx) || !p.nely.is_multiple_of(my) {
                    return Err(Error::Config(format!(
                        "mesh {}x{} is not a refinement of the {mx}x{my} cell lattice",
                        p.nelx, p.nely
                    )));
                }
                // Elements per cell; 1 on the cell-resolution mesh itself.
                let (px, py) = (p.nelx / mx, p.nely / my);
                let mut m = vec![0.0; n];
                for iy in 0..=p.nely {
                    for ix in 0..=p.nelx {
                        // Nodes touching any boundary-ring cell: those within
                        // one cell of the domain border.
                        let on_ring = ix <= px
                            || iy <= py
                            || ix >= p.nelx - px
                            || iy >= p.nely - py;
                        if on_ring {
                            let nid = node_id(ix, iy, p.nely);
                            m[2 * nid] = 1.0;
                            m[2 * nid + 1] = 1.0;
                        }
                    }
                }
                m
            }
        };
        for (d, &fixed) in p.fixed.iter().enumerate() {
            if fixed {
                m[d] = 0.0;
            }
        }
        if m.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("mask selects no free dofs".into()));
        }
        Ok(Some(m))
    }
}

/// Base cell raster construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum BaseCellPattern {
    /// Solid plus-shaped cell: pixels within `arm_fraction / 2` of either
    /// local axis are solid. Arms reach all four edges.
    Cross { arm_fraction: f64 },
}

impl BaseCellPattern {
    pub fn raster(&self, micro_dims: (usize, usize)) -> Vec<f64> {
        let (mx, my) = micro_dims;
        match *self {
            BaseCellPattern::Cross { arm_fraction } => {
                let half = arm_fraction / 2.0;
                let mut r = Vec::with_capacity(mx * my);
                for ey in 0..my {
                    for ex in 0..mx {
                        let u = -0.5 + (ex as f64 + 0.5) / mx as f64;
                        let w = -0.5 + (ey as f64 + 0.5) / my as f64;
                        r.push(if u.abs() <= half || w.abs() <= half {
                            1.0
                        } else {
                            0.0
                        });
                    }
                }
                r
            }
        }
    }
}

/// Base cell and the macro band it is enforced on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseCellSpec {
    pub pattern: BaseCellPattern,
    /// Width (in cells) of the outermost ring the L1 pull applies to.
    pub band_width: usize,
}

impl BaseCellSpec {
    /// Band membership per macro cell, row-major.
    pub fn band(&self, macro_dims: (usize, usize)) -> Vec<bool> {
        let (mx, my) = macro_dims;
        let w = self.band_width;
        let mut band = vec![false; mx * my];
        for cy in 0..my {
            for cx in 0..mx {
                let edge = cx.min(cy).min(mx - 1 - cx).min(my - 1 - cy);
                band[cy * mx + cx] = edge < w;
            }
        }
        band
    }
}

/// Loss weight configuration; mirrors the runtime weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSpec {
    pub alpha_max: f64,
    pub bc_scale: f64,
    pub l2_weight: f64,
    pub l1_base_weight: f64,
    pub bulk_multiplier: f64,
}

impl Default for WeightsSpec {
    fn default() -> Self {
        let d = LossWeights::default();
        WeightsSpec {
            alpha_max: d.alpha_max,
            bc_scale: d.bc_scale,
            l2_weight: d.l2_weight,
            l1_base_weight: d.l1_base_weight,
            bulk_multiplier: d.bulk_multiplier,
        }
    }
}

impl WeightsSpec {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_max: self.alpha_max,
            bc_scale: self.bc_scale,
            l2_weight: self.l2_weight,
            l1_base_weight: self.l1_base_weight,
            bulk_multiplier: self.bulk_multiplier,
        }
    }
}

/// The complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub mode: ObjectiveMode,
    pub macro_dims: [usize; 2],
    pub micro_dims: [usize; 2],
    #[serde(default)]
    pub material: MaterialSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub interpolation: InterpolationSpec,
    pub volume: VolumeSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default = "target_none")]
    pub target: TargetSpec,
    #[serde(default = "mask_none")]
    pub mask: MaskSpec,
    /// Macro cells rendered as passive voids, `[cx, cy]`.
    #[serde(default)]
    pub passive: Vec<[usize; 2]>,
    #[serde(default)]
    pub base_cell: Option<BaseCellSpec>,
    /// Upper bound on rendered raster size, in pixels.
    #[serde(default = "default_pixel_budget")]
    pub pixel_budget: u64,
}

fn target_none() -> TargetSpec {
    TargetSpec::None
}

fn mask_none() -> MaskSpec {
    MaskSpec::None
}

impl RunConfig {
    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved canonical form with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact canonical serialization.
    pub fn hash(&self) -> [u8; 32] {
        let compact = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&compact);
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.macro_dims[0] * self.macro_dims[1]
    }

    pub fn macro_dims(&self) -> (usize, usize) {
        (self.macro_dims[0], self.macro_dims[1])
    }

    pub fn micro_dims(&self) -> (usize, usize) {
        (self.micro_dims[0], self.micro_dims[1])
    }

    /// Whether the run involves a macroscale solve at all.
    pub fn needs_macro_solve(&self) -> bool {
        self.mode != ObjectiveMode::BulkOnly
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return fail(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.name.is_empty() {
            return fail("name must not be empty".into());
        }
        let (mx, my) = self.macro_dims();
        let (ux, uy) = self.micro_dims();
        if mx == 0 || my == 0 {
            return fail(format!("macro_dims {:?} must be positive", self.macro_dims));
        }
        if ux < 2 || uy < 2 {
            return fail(format!(
                "micro_dims {:?} must be at least 2x2",
                self.micro_dims
            ));
        }
        if self.material.e <= 0.0 || !self.material.e.is_finite() {
            return fail(format!("material.e {} must be positive", self.material.e));
        }
        if !(self.material.nu > -1.0 && self.material.nu < 0.5) {
            return fail(format!(
                "material.nu {} outside (-1, 0.5)",
                self.material.nu
            ));
        }
        let net = &self.network;
        if net.local_kernels_per_dim == 0 || net.global_kernels_per_dim == 0 {
            return fail("network kernel counts must be positive".into());
        }
        for (lo, hi, label) in [
            (net.local_range.0, net.local_range.1, "local_range"),
            (net.global_range.0, net.global_range.1, "global_range"),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!("network.{label} ({lo}, {hi}) is not an interval"));
            }
        }
        if !net.weight_init.is_finite() || !net.weight_jitter.is_finite() || net.weight_jitter < 0.0
        {
            return fail("network weight initialization invalid".into());
        }
        let t = &self.training;
        if t.epochs == 0 {
            return fail("training.epochs must be at least 1".into());
        }
        if t.learning_rate <= 0.0 || !t.learning_rate.is_finite() {
            return fail(format!(
                "training.learning_rate {} must be positive",
                t.learning_rate
            ));
        }
        if t.upsample == 0 {
            return fail("training.upsample must be at least 1".into());
        }
        if t.log_every == 0 {
            return fail("training.log_every must be at least 1".into());
        }
        let w = &self.weights;
        for (v, label) in [
            (w.alpha_max, "alpha_max"),
            (w.bc_scale, "bc_scale"),
            (w.l2_weight, "l2_weight"),
            (w.l1_base_weight, "l1_base_weight"),
            (w.bulk_multiplier, "bulk_multiplier"),
        ] {
            if v < 0.0 || !v.is_finite() {
                return fail(format!("weights.{label} {v} must be non-negative"));
            }
        }
        if w.alpha_max < 1.0 {
            return fail(format!("weights.alpha_max {} must be at least 1", w.alpha_max));
        }
        if self.interpolation.penal < 1.0 || !self.interpolation.penal.is_finite() {
            return fail(format!(
                "interpolation.penal {} must be at least 1",
                self.interpolation.penal
            ));
        }
        let floor = self.interpolation.stiffness_floor;
        if !(floor > 0.0 && floor < 1.0) {
            return fail(format!(
                "interpolation.stiffness_floor {floor} outside (0, 1)"
            ));
        }
        let targets = self.volume.targets(self.macro_dims());
        if targets.len() != self.n_cells() {
            return fail(format!(
                "volume targets cover {} cells, lattice has {}",
                targets.len(),
                self.n_cells()
            ));
        }
        for (c, &v) in targets.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("volume target {v} at cell {c} outside (0, 1]"));
            }
        }
        for &[cx, cy] in &self.passive {
            if cx >= mx || cy >= my {
                return fail(format!(
                    "passive cell ({cx}, {cy}) outside the {mx}x{my} lattice"
                ));
            }
        }
        if let Some(bc) = &self.base_cell {
            if bc.band_width == 0 {
                return fail("base_cell.band_width must be at least 1".into());
            }
            match bc.pattern {
                BaseCellPattern::Cross { arm_fraction } => {
                    if !(arm_fraction > 0.0 && arm_fraction <= 1.0) {
                        return fail(format!(
                            "base_cell arm_fraction {arm_fraction} outside (0, 1]"
                        ));
                    }
                }
            }
        }
        if self.pixel_budget == 0 {
            return fail("pixel_budget must be positive".into());
        }
        for s in &self.boundary.prescribed {
            if !s.value.is_finite() {
                return fail(format!("prescribed displacement {} is not finite", s.value));
            }
        }
        for l in &self.boundary.loads {
            if !l.value.is_finite() {
                return fail(format!("load value {} is not finite", l.value));
            }
        }
        match self.target {
            TargetSpec::TopEdgeBump { amplitude } if !amplitude.is_finite() => {
                return fail(format!("target amplitude {amplitude} is not finite"));
            }
            TargetSpec::HypotheticalMaterial { e, nu } => {
                if e <= 0.0 || !e.is_finite() {
                    return fail(format!("target material e {e} must be positive"));
                }
                if !(nu > -1.0 && nu < 0.5) {
                    return fail(format!("target material nu {nu} outside (-1, 0.5)"));
                }
            }
            _ => {}
        }

        // Mode consistency.
        match self.mode {
            ObjectiveMode::Compliance => {
                if self.target != TargetSpec::None {
                    return fail("compliance mode takes no displacement target".into());
                }
                if self.boundary.loads.is_empty() {
                    return fail("compliance mode needs applied loads".into());
                }
            }
            ObjectiveMode::Displacement => {
                if self.target == TargetSpec::None {
                    return fail("displacement mode needs a target".into());
                }
                if self.mask == MaskSpec::None {
                    return fail("displacement mode needs a mask".into());
                }
                if self.target == TargetSpec::BaseCellFill && self.base_cell.is_none() {
                    return fail("base_cell_fill target needs a base_cell".into());
                }
            }
            ObjectiveMode::BulkOnly => {
                if self.target != TargetSpec::None || self.mask != MaskSpec::None {
                    return fail("bulk-only mode takes no target or mask".into());
                }
            }
        }
        if self.needs_macro_solve() {
            if self.boundary.fixed.is_empty() && self.boundary.prescribed.is_empty() {
                return fail("macroscale problem needs supports".into());
            }
            // Node references must resolve.
            let mut probe = FeProblem::new(mx, my);
            self.boundary.apply(&mut probe)?;
        }
        Ok(())
    }

    /// The macroscale problem with boundary conditions applied.
    pub fn problem(&self) -> Result<FeProblem> {
        let (mx, my) = self.macro_dims();
        let mut p = FeProblem::new(mx, my);
        self.boundary.apply(&mut p)?;
        p.check_supported()?;
        Ok(p)
    }

    /// Per-cell kind map, row-major.
    pub fn kinds(&self) -> Vec<CellKind> {
        let (mx, my) = self.macro_dims();
        let mut kinds = vec![CellKind::Free; mx * my];
        for &[cx, cy] in &self.passive {
            kinds[cy * mx + cx] = CellKind::PassiveVoid;
        }
        kinds
    }

    pub fn volume_targets(&self) -> Vec<f64> {
        self.volume.targets(self.macro_dims())
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.weights.weights()
    }

    pub fn network_init(&self) -> NetworkInit {
        self.network.init()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_bulk_json() -> String {
        r#"{
            "version": 1,
            "name": "t",
            "seed": 7,
            "mode": "bulk_only",
            "macro_dims": [2, 1],
            "micro_dims": [4, 4],
            "volume": { "uniform": { "target": 0.5 } }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(&minimal_bulk_json()).unwrap();
        assert_eq!(cfg.training.epochs, 300);
        assert_eq!(cfg.network.local_kernels_per_dim, 10);
        assert_eq!(cfg.weights.alpha_max, 50.0);
        assert_eq!(cfg.pixel_budget, 100_000_000);
        assert_eq!(cfg.volume_targets(), vec![0.5, 0.5]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal_bulk_json().replace("\"seed\": 7,", "\"seed\": 7, \"extra\": 1,");
        let err = RunConfig::from_json(&text).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("extra"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = minimal_bulk_json().replace("\"version\": 1", "\"version\": 9");
        let err = RunConfig::from_json(&text).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("version 9"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn resolved_form_round_trips_and_hashes_stably() {
        let cfg = RunConfig::from_json(&minimal_bulk_json()).unwrap();
        let json = cfg.to_json();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash_hex().len(), 64);
        // Any content change moves the hash.
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn linear_volume_ramp_spans_inclusive_endpoints() {
        let spec = VolumeSpec::LinearX { from: 0.4, to: 0.7 };
        let t = spec.targets((8, 1));
        assert_eq!(t.len(), 8);
        assert!((t[0] - 0.4).abs() < 1e-15);
        assert!((t[7] - 0.7).abs() < 1e-15);
        let step = t[1] - t[0];
        for w in t.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_spec_applies_supports_loads_and_prescribed() {
        let spec = BoundarySpec {
            fixed: vec![FixedSpec {
                nodes: NodeSet::Edge { side: Side::Left },
                dir: FixDir::Both,
            }],
            prescribed: vec![PrescribedSpec {
                nodes: NodeSet::Edge { side: Side::Right },
                dir: Axis::X,
                value: 1.0,
            }],
            loads: vec![LoadSpec {
                nodes: NodeSet::Node { ix: 1, iy: 0 },
                dir: Axis::Y,
                value: -2.0,
            }],
        };
        let mut p = FeProblem::new(2, 2);
        spec.apply(&mut p).unwrap();
        for iy in 0..=2 {
            let n = node_id(0, iy, 2);
            assert!(p.fixed[2 * n] && p.fixed[2 * n + 1]);
            let r = node_id(2, iy, 2);
            assert!(p.fixed[2 * r]);
            assert_eq!(p.prescribed[2 * r], 1.0);
            assert!(!p.fixed[2 * r + 1]);
        }
        assert_eq!(p.loads[2 * node_id(1, 0, 2) + 1], -2.0);
    }

    #[test]
    fn out_of_range_node_is_a_config_error() {
        let set = NodeSet::Node { ix: 5, iy: 0 };
        assert!(set.resolve(2, 2).is_err());
    }

    #[test]
    fn cross_base_cell_reaches_all_edges() {
        let raster = BaseCellPattern::Cross { arm_fraction: 0.34 }.raster((6, 6));
        // Center row and column are solid through the full span.
        for e in 0..6 {
            assert_eq!(raster[2 * 6 + e], 1.0);
            assert_eq!(raster[e * 6 + 2], 1.0);
            assert_eq!(raster[3 * 6 + e], 1.0);
            assert_eq!(raster[e * 6 + 3], 1.0);
        }
        // Corners are void.
        assert_eq!(raster[0], 0.0);
        assert_eq!(raster[5], 0.0);
        assert_eq!(raster[30], 0.0);
        assert_eq!(raster[35], 0.0);
    }

    #[test]
    fn band_marks_outer_ring_only() {
        let spec = BaseCellSpec {
            pattern: BaseCellPattern::Cross { arm_fraction: 0.3 },
            band_width: 1,
        };
        let band = spec.band((4, 3));
        let expect = [
            true, true, true, true, //
            true, false, false, true, //
            true, true, true, true,
        ];
        assert_eq!(band, expect);
    }

    #[test]
    fn mode_consistency_is_enforced() {
        // Displacement mode without a target.
        let text = minimal_bulk_json().replace("\"bulk_only\"", "\"displacement\"");
        assert!(RunConfig::from_json(&text).is_err());
        // Compliance mode without loads.
        let text = minimal_bulk_json().replace("\"bulk_only\"", "\"compliance\"");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn non_finite_boundary_and_target_values_are_rejected() {
        let base = r#"{
            "version": 1,
            "name": "t",
            "seed": 7,
            "mode": "displacement",
            "macro_dims": [2, 1],
            "micro_dims": [4, 4],
            "volume": { "uniform": { "target": 0.5 } },
            "boundary": {
                "fixed": [{ "nodes": { "edge": { "side": "left" } }, "dir": "both" }],
                "prescribed": [{ "nodes": { "edge": { "side": "right" } }, "dir": "x", "value": PVAL }],
                "loads": [{ "nodes": { "node": { "ix": 1, "iy": 0 } }, "dir": "y", "value": LVAL }]
            },
            "target": TGT,
            "mask": "all_free"
        }"#;
        let fill = |p: &str, l: &str, tgt: &str| {
            base.replace("PVAL", p)
                .replace("LVAL", l)
                .replace("TGT", tgt)
        };
        let hypo = r#"{ "hypothetical_material": { "e": 1.0, "nu": 0.3 } }"#;
        assert!(RunConfig::from_json(&fill("0.5", "-1.0", hypo)).is_ok());
        // Out-of-range JSON floats parse as infinities; validation must stop them.
        assert!(RunConfig::from_json(&fill("1e999", "-1.0", hypo)).is_err());
        assert!(RunConfig::from_json(&fill("0.5", "-1e999", hypo)).is_err());
        let bad_e = r#"{ "hypothetical_material": { "e": 1e999, "nu": 0.3 } }"#;
        assert!(RunConfig::from_json(&fill("0.5", "-1.0", bad_e)).is_err());
        let bad_nu = r#"{ "hypothetical_material": { "e": 1.0, "nu": 0.5 } }"#;
        assert!(RunConfig::from_json(&fill("0.5", "-1.0", bad_nu)).is_err());
        let bad_bump = r#"{ "top_edge_bump": { "amplitude": 1e999 } }"#;
        assert!(RunConfig::from_json(&fill("0.5", "-1.0", bad_bump)).is_err());
    }

    #[test]
    fn mask_component_selects_free_dofs_only() {
        let mut p = FeProblem::new(2, 2);
        for iy in 0..=2 {
            let n = node_id(0, iy, 2);
            p.fixed[2 * n] = true;
            p.fixed[2 * n + 1] = true;
        }
        let mask = MaskSpec::Component {
            nodes: vec![NodeSet::Edge { side: Side::Top }],
            dir: Axis::Y,
        };
        let m = mask.build(&p, (2, 2)).unwrap().unwrap();
        // Top edge y-dofs are selected except the fixed left corner.
        assert_eq!(m[2 * node_id(0, 2, 2) + 1], 0.0);
        assert_eq!(m[2 * node_id(1, 2, 2) + 1], 1.0);
        assert_eq!(m[2 * node_id(2, 2, 2) + 1], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn passive_cells_map_to_kinds() {
        let mut cfg = RunConfig::from_json(&minimal_bulk_json()).unwrap();
        cfg.passive = vec![[1, 0]];
        let kinds = cfg.kinds();
        assert_eq!(kinds[0], CellKind::Free);
        assert_eq!(kinds[1], CellKind::PassiveVoid);
    }
}
