//! Implicit neural density field over two-scale coordinates.
//!
//! Every density pixel is addressed by `X = (x, y, u, w)`: the global center
//! of its (sub)cell and its local position inside the cell. The field is
//!
//! ```text
//! rho(X) = sigmoid( sum_k W_k * sin(K_k . X + 1) )
//! ```
//!
//! with trainable frequency kernels `K` and weights `W`. Because rows of one
//! cell share `(x, y)` and all cells share one local grid, the phase splits
//! as `K.X + 1 = theta_{k,e} + phi_{k,cell}`; forward and backward passes
//! build `sin/cos` tables of `theta` once and combine them per cell, which
//! keeps the cost linear in `kernels x local pixels + kernels x cells`.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shared local coordinate grid: element centers of an `mx x my` raster
/// mapped to `[-0.5, 0.5]^2`, row-major with `e = ey * mx + ex`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroGrid {
    pub mx: usize,
    pub my: usize,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl MicroGrid {
    pub fn new(mx: usize, my: usize) -> Self {
        let mut u = Vec::with_capacity(mx * my);
        let mut w = Vec::with_capacity(mx * my);
        for ey in 0..my {
            for ex in 0..mx {
                u.push(-0.5 + (ex as f64 + 0.5) / mx as f64);
                w.push(-0.5 + (ey as f64 + 0.5) / my as f64);
            }
        }
        MicroGrid { mx, my, u, w }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Global center of one rendered (sub)cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCoordinate {
    pub x: f64,
    pub y: f64,
}

/// Batch of field evaluation points: one row per `(cell, local pixel)` pair.
/// Rows of a cell are contiguous and share the cell's `(x, y)`.
#[derive(Debug, Clone)]
pub struct CoordinateBatch {
    pub cells: Vec<CellCoordinate>,
    pub micro: MicroGrid,
}

impl CoordinateBatch {
    pub fn n_rows(&self) -> usize {
        self.cells.len() * self.micro.len()
    }

    /// Cell owning a row; rows are grouped by cell in emission order.
    pub fn cell_index(&self, row: usize) -> usize {
        row / self.micro.len()
    }

    /// Full coordinate `(x, y, u, w)` of one row.
    pub fn row(&self, r: usize) -> [f64; 4] {
        let nm = self.micro.len();
        let c = self.cells[r / nm];
        let e = r % nm;
        [c.x, c.y, self.micro.u[e], self.micro.w[e]]
    }
}

/// Build the evaluation batch for a macro lattice of `macro_dims` cells with
/// `micro_dims` pixels each at the given upsampling factor.
///
/// The global domain is scaled so the longer macro axis spans a unit length
/// centered at the origin; subcell centers at upsampling `s` are the centers
/// of an `s x s` split of each cell.
///
/// With a `selector`, one subcell per macro cell is emitted (training mode),
/// cells in row-major order `cy * mx + cx`. Without, every subcell of every
/// cell is emitted (rendering mode) in row-major subcell order over the
/// `(mx * s) x (my * s)` lattice.
pub fn build_coordinates(
    macro_dims: (usize, usize),
    micro_dims: (usize, usize),
    upsample: usize,
    selector: Option<&[(usize, usize)]>,
) -> Result<CoordinateBatch> {
    let (mx, my) = macro_dims;
    let (ux, uy) = micro_dims;
    if mx == 0 || my == 0 || ux == 0 || uy == 0 || upsample == 0 {
        return Err(Error::Input(format!(
            "dimensions must be positive: macro {macro_dims:?}, micro {micro_dims:?}, \
             upsample {upsample}"
        )));
    }
    let s = upsample;
    let l = mx.max(my) as f64;
    let center = |i: usize, dim: usize| -> f64 {
        ((i as f64 + 0.5) / s as f64 - dim as f64 / 2.0) / l
    };

    let mut cells = Vec::new();
    match selector {
        Some(sel) => {
            if sel.len() != mx * my {
                return Err(Error::Input(format!(
                    "selector has {} entries for {} macro cells",
                    sel.len(),
                    mx * my
                )));
            }
            for cy in 0..my {
                for cx in 0..mx {
                    let (sx, sy) = sel[cy * mx + cx];
                    if sx >= s || sy >= s {
                        return Err(Error::Input(format!(
                            "subcell ({sx},{sy}) outside upsample {s} at cell ({cx},{cy})"
                        )));
                    }
                    cells.push(CellCoordinate {
                        x: center(cx * s + sx, mx),
                        y: center(cy * s + sy, my),
                    });
                }
            }
        }
        None => {
            for jy in 0..my * s {
                for ix in 0..mx * s {
                    cells.push(CellCoordinate {
                        x: center(ix, mx),
                        y: center(jy, my),
                    });
                }
            }
        }
    }
    Ok(CoordinateBatch {
        cells,
        micro: MicroGrid::new(ux, uy),
    })
}

/// Network initialization parameters. Kernels start on a regular 4D mesh
/// grid over the frequency ranges; weights start at a small constant,
/// optionally perturbed to break symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkInit {
    pub local_kernels_per_dim: usize,
    pub global_kernels_per_dim: usize,
    pub local_range: (f64, f64),
    pub global_range: (f64, f64),
    pub weight_init: f64,
    /// Relative uniform perturbation of the initial weights; 0 disables.
    pub weight_jitter: f64,
}

impl Default for NetworkInit {
    fn default() -> Self {
        NetworkInit {
            local_kernels_per_dim: 10,
            global_kernels_per_dim: 6,
            local_range: (-0.4, 0.4),
            global_range: (-0.6, 0.6),
            weight_init: 0.1,
            weight_jitter: 0.0,
        }
    }
}

/// The coordinate network: one layer of sine feature kernels and a linear
/// readout through a sigmoid. Kernels are `(kx, ky, ku, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyNetwork {
    pub kernels: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub init: NetworkInit,
}

/// Gradients with the same shapes as the trainable parameters.
#[derive(Debug, Clone)]
pub struct NetworkGradients {
    pub kernels: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl TopologyNetwork {
    pub fn n_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != self.weights.len() || self.kernels.is_empty() {
            return Err(Error::Input(format!(
                "network has {} kernels and {} weights",
                self.kernels.len(),
                self.weights.len()
            )));
        }
        let finite = self
            .kernels
            .iter()
            .all(|k| k.iter().all(|v| v.is_finite()))
            && self.weights.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical(
                "network parameters contain non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// `n` evenly spaced values covering `[lo, hi]` inclusive; a single value
/// sits at the midpoint.
fn linspace(n: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    match n {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => (0..n)
            .map(|i| lo + i as f64 * (hi - lo) / (n - 1) as f64)
            .collect(),
    }
}

/// Build a fresh network from its initialization description. The kernel
/// mesh grid enumerates local-u fastest, then local-w, global-x, global-y.
pub fn init_network(init: &NetworkInit, seed: u64) -> Result<TopologyNetwork> {
    let nl = init.local_kernels_per_dim;
    let ng = init.global_kernels_per_dim;
    if nl == 0 || ng == 0 {
        return Err(Error::Input(
            "kernel counts per dimension must be positive".into(),
        ));
    }
    // NaN fails this check too.
    if init.weight_jitter.is_nan() || init.weight_jitter < 0.0 {
        return Err(Error::Input("weight jitter must be non-negative".into()));
    }
    let lg = linspace(ng, init.global_range);
    let ll = linspace(nl, init.local_range);
    let mut kernels = Vec::with_capacity(ng * ng * nl * nl);
    for &ky in &lg {
        for &kx in &lg {
            for &kw in &ll {
                for &ku in &ll {
                    kernels.push([kx, ky, ku, kw]);
                }
            }
        }
    }
    let n_k = kernels.len();
    let mut weights = vec![init.weight_init; n_k];
    if init.weight_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut weights {
            *w *= 1.0 + init.weight_jitter * rng.gen_range(-1.0..1.0);
        }
    }
    Ok(TopologyNetwork {
        kernels,
        weights,
        init: *init,
    })
}

/// Numerically stable logistic function.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest representable density strictly below one.
const RHO_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Intermediate state of a forward pass: pre-activations plus the local
/// phase tables, reusable by [`backward`] within the same epoch.
pub struct ForwardCache {
    z: Vec<f64>,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
}

fn theta_tables(net: &TopologyNetwork, micro: &MicroGrid) -> (Vec<f64>, Vec<f64>) {
    let nm = micro.len();
    let n_k = net.n_kernels();
    let mut st = vec![0.0f64; n_k * nm];
    let mut ct = vec![0.0f64; n_k * nm];
    for (k, kern) in net.kernels.iter().enumerate() {
        let (ku, kw) = (kern[2], kern[3]);
        let srow = &mut st[k * nm..(k + 1) * nm];
        let crow = &mut ct[k * nm..(k + 1) * nm];
        for e in 0..nm {
            let (s, c) = (ku * micro.u[e] + kw * micro.w[e]).sin_cos();
            srow[e] = s;
            crow[e] = c;
        }
    }
    (st, ct)
}

fn forward_impl(net: &TopologyNetwork, batch: &CoordinateBatch) -> Result<ForwardCache> {
    net.validate()?;
    if batch.cells.is_empty() || batch.micro.is_empty() {
        return Err(Error::Input("empty coordinate batch".into()));
    }
    let nm = batch.micro.len();
    let n_cells = batch.cells.len();
    let (sin_theta, cos_theta) = theta_tables(net, &batch.micro);
    let mut z = vec![0.0f64; n_cells * nm];
    // Kernel-outer order: one theta row stays in cache while every cell's
    // accumulator is updated.
    for (k, kern) in net.kernels.iter().enumerate() {
        let (kx, ky) = (kern[0], kern[1]);
        let wk = net.weights[k];
        let srow = &sin_theta[k * nm..(k + 1) * nm];
        let crow = &cos_theta[k * nm..(k + 1) * nm];
        for (c, cell) in batch.cells.iter().enumerate() {
            let (sp, cp) = (kx * cell.x + ky * cell.y + 1.0).sin_cos();
            // sin(theta + phi) = sin(theta) cos(phi) + cos(theta) sin(phi)
            let a = wk * cp;
            let b = wk * sp;
            let zrow = &mut z[c * nm..(c + 1) * nm];
            for e in 0..nm {
                zrow[e] += a * srow[e] + b * crow[e];
            }
        }
    }
    Ok(ForwardCache {
        z,
        sin_theta,
        cos_theta,
    })
}

/// Evaluate densities for every batch row. Outputs are strictly inside
/// `(0, 1)`: the sigmoid is clamped away from exact 0 and 1.
pub fn forward(net: &TopologyNetwork, batch: &CoordinateBatch) -> Result<Vec<f64>> {
    Ok(forward_cached(net, batch)?.0)
}

/// [`forward`] that also returns the reusable intermediate state.
pub fn forward_cached(
    net: &TopologyNetwork,
    batch: &CoordinateBatch,
) -> Result<(Vec<f64>, ForwardCache)> {
    let cache = forward_impl(net, batch)?;
    let rho = cache
        .z
        .iter()
        .map(|&z| sigmoid(z).clamp(f64::MIN_POSITIVE, RHO_MAX))
        .collect();
    Ok((rho, cache))
}

/// Backpropagate `d loss / d rho` (one entry per batch row) to parameter
/// gradients. `cache` may come from [`forward_cached`] with the same network
/// and batch; without it the pass recomputes what it needs.
pub fn backward(
    net: &TopologyNetwork,
    batch: &CoordinateBatch,
    upstream: &[f64],
    cache: Option<&ForwardCache>,
) -> Result<NetworkGradients> {
    if upstream.len() != batch.n_rows() {
        return Err(Error::Input(format!(
            "upstream has {} entries for {} batch rows",
            upstream.len(),
            batch.n_rows()
        )));
    }
    let owned;
    let cache = match cache {
        Some(c) => {
            if c.z.len() != batch.n_rows() {
                return Err(Error::Input(
                    "forward cache does not match the coordinate batch".into(),
                ));
            }
            c
        }
        None => {
            owned = forward_impl(net, batch)?;
            &owned
        }
    };
    let nm = batch.micro.len();
    let n_cells = batch.cells.len();
    let n_k = net.n_kernels();

    // g = upstream * sigmoid'(z); also premultiplied by the local coords for
    // the ku/kw gradient dot products.
    let mut g = vec![0.0f64; n_cells * nm];
    let mut gu = vec![0.0f64; n_cells * nm];
    let mut gw = vec![0.0f64; n_cells * nm];
    for c in 0..n_cells {
        for e in 0..nm {
            let i = c * nm + e;
            let s = sigmoid(cache.z[i]);
            let gi = upstream[i] * s * (1.0 - s);
            g[i] = gi;
            gu[i] = gi * batch.micro.u[e];
            gw[i] = gi * batch.micro.w[e];
        }
    }

    let mut dk = vec![[0.0f64; 4]; n_k];
    let mut dw = vec![0.0f64; n_k];
    for (k, kern) in net.kernels.iter().enumerate() {
        let (kx, ky) = (kern[0], kern[1]);
        let wk = net.weights[k];
        let srow = &cache.sin_theta[k * nm..(k + 1) * nm];
        let crow = &cache.cos_theta[k * nm..(k + 1) * nm];
        let (mut dkx, mut dky, mut dku, mut dkw, mut dwk) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (c, cell) in batch.cells.iter().enumerate() {
            let (sp, cp) = (kx * cell.x + ky * cell.y + 1.0).sin_cos();
            let base = c * nm;
            let (mut sg, mut cg) = (0.0f64, 0.0f64);
            let (mut sgu, mut cgu) = (0.0f64, 0.0f64);
            let (mut sgw, mut cgw) = (0.0f64, 0.0f64);
            for e in 0..nm {
                let gi = g[base + e];
                sg += gi * srow[e];
                cg += gi * crow[e];
                let giu = gu[base + e];
                sgu += giu * srow[e];
                cgu += giu * crow[e];
                let giw = gw[base + e];
                sgw += giw * srow[e];
                cgw += giw * crow[e];
            }
            // d z / d W_k sums sin(theta+phi); d z / d K_k sums the cosine
            // times the matching coordinate.
            let sin_sum = cp * sg + sp * cg;
            let cos_sum = cp * cg - sp * sg;
            dwk += sin_sum;
            dkx += cos_sum * cell.x;
            dky += cos_sum * cell.y;
            dku += cp * cgu - sp * sgu;
            dkw += cp * cgw - sp * sgw;
        }
        dk[k] = [wk * dkx, wk * dky, wk * dku, wk * dkw];
        dw[k] = dwk;
    }
    Ok(NetworkGradients {
        kernels: dk,
        weights: dw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn single_point_batch(x: f64, y: f64) -> CoordinateBatch {
        // A 1x1 micro grid has its element center at the local origin.
        CoordinateBatch {
            cells: vec![CellCoordinate { x, y }],
            micro: MicroGrid::new(1, 1),
        }
    }

    fn random_net(n_k: usize, seed: u64) -> TopologyNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TopologyNetwork {
            kernels: (0..n_k)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
            weights: (0..n_k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            init: NetworkInit::default(),
        }
    }

    #[test]
    fn micro_grid_centers_span_the_cell() {
        let g = MicroGrid::new(4, 4);
        let want = [-0.375, -0.125, 0.125, 0.375];
        for (ex, &w) in want.iter().enumerate() {
            assert!((g.u[ex] - w).abs() < 1e-15);
            assert!((g.w[4 * ex] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn training_batch_has_one_subcell_per_cell() {
        let sel = vec![(0usize, 0usize); 2];
        let b = build_coordinates((2, 1), (4, 4), 1, Some(&sel)).unwrap();
        assert_eq!(b.n_rows(), 32);
        // Longer axis has 2 cells: centers at -1/4 and +1/4 of the unit span.
        assert!((b.cells[0].x + 0.25).abs() < 1e-15);
        assert!((b.cells[1].x - 0.25).abs() < 1e-15);
        assert_eq!(b.cells[0].y, 0.0);
        // All rows of a cell share its global coordinates.
        for r in 0..16 {
            assert_eq!(b.cell_index(r), 0);
            assert_eq!(b.row(r)[0], b.cells[0].x);
        }
    }

    #[test]
    fn upsampled_selector_targets_subcell_centers() {
        // A 2x split of the unit domain has subcell centers at +-0.25.
        let sel = vec![(0usize, 0usize)];
        let b = build_coordinates((1, 1), (2, 2), 2, Some(&sel)).unwrap();
        assert_eq!(b.n_rows(), 4);
        assert!((b.cells[0].x + 0.25).abs() < 1e-15);
        assert!((b.cells[0].y + 0.25).abs() < 1e-15);

        let sel = vec![(1usize, 0usize)];
        let b = build_coordinates((1, 1), (2, 2), 2, Some(&sel)).unwrap();
        assert!((b.cells[0].x - 0.25).abs() < 1e-15);
        assert!((b.cells[0].y + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rendering_mode_emits_every_subcell() {
        let b = build_coordinates((1, 1), (2, 2), 2, None).unwrap();
        assert_eq!(b.cells.len(), 4);
        assert_eq!(b.n_rows(), 16);
        let got: Vec<(f64, f64)> = b.cells.iter().map(|c| (c.x, c.y)).collect();
        let want = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-15 && (g.1 - w.1).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_upsample_center_subcell_coincides_with_cell_center() {
        let sel1 = vec![(0usize, 0usize); 4];
        let b1 = build_coordinates((2, 2), (3, 3), 1, Some(&sel1)).unwrap();
        let sel3 = vec![(1usize, 1usize); 4];
        let b3 = build_coordinates((2, 2), (3, 3), 3, Some(&sel3)).unwrap();
        for (a, b) in b1.cells.iter().zip(&b3.cells) {
            assert!((a.x - b.x).abs() < 1e-15 && (a.y - b.y).abs() < 1e-15);
        }
    }

    #[test]
    fn selector_validation() {
        let sel = vec![(0usize, 0usize); 3];
        assert!(build_coordinates((2, 1), (2, 2), 1, Some(&sel)).is_err());
        let sel = vec![(1usize, 0usize), (0, 0)];
        assert!(build_coordinates((2, 1), (2, 2), 1, Some(&sel)).is_err());
        assert!(build_coordinates((0, 1), (2, 2), 1, None).is_err());
    }

    #[test]
    fn single_kernel_scalar_evaluation() {
        let net = TopologyNetwork {
            kernels: vec![[1.0, 0.0, 0.0, 0.0]],
            weights: vec![1.0],
            init: NetworkInit::default(),
        };
        let batch = single_point_batch(0.5, 0.0);
        let rho = forward(&net, &batch).unwrap();
        // sigmoid(sin(0.5 + 1))
        assert!(
            (rho[0] - 0.7305657781258151).abs() < 1e-12,
            "rho = {}",
            rho[0]
        );
    }

    #[test]
    fn forward_matches_direct_evaluation() {
        // The phase-split fast path must agree with evaluating
        // sigmoid(sum W sin(K.X + 1)) row by row.
        let net = random_net(7, 3);
        let sel = vec![(0usize, 0usize); 6];
        let batch = build_coordinates((3, 2), (4, 3), 1, Some(&sel)).unwrap();
        let rho = forward(&net, &batch).unwrap();
        for (r, &got) in rho.iter().enumerate() {
            let xr = batch.row(r);
            let mut z = 0.0;
            for (k, kern) in net.kernels.iter().enumerate() {
                let dot = kern[0] * xr[0] + kern[1] * xr[1] + kern[2] * xr[2] + kern[3] * xr[3];
                z += net.weights[k] * (dot + 1.0).sin();
            }
            let want = sigmoid(z);
            assert!((got - want).abs() < 1e-12, "row {r}: {got} vs {want}");
        }
    }

    #[test]
    fn outputs_stay_strictly_inside_unit_interval() {
        let mut net = random_net(5, 9);
        net.weights = vec![1e6, -1e6, 1e6, 1e6, 1e6];
        let batch = build_coordinates((2, 2), (3, 3), 1, Some(&[(0, 0); 4])).unwrap();
        let rho = forward(&net, &batch).unwrap();
        for &r in &rho {
            assert!(r > 0.0 && r < 1.0 && r.is_finite(), "rho = {r}");
        }
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut net = random_net(3, 1);
        net.weights[1] = f64::NAN;
        let batch = single_point_batch(0.0, 0.0);
        assert!(forward(&net, &batch).is_err());
    }

    #[test]
    fn init_mesh_grid_enumerates_local_fastest() {
        let init = NetworkInit {
            local_kernels_per_dim: 2,
            global_kernels_per_dim: 2,
            local_range: (-0.4, 0.4),
            global_range: (-0.6, 0.6),
            weight_init: 0.1,
            weight_jitter: 0.0,
        };
        let net = init_network(&init, 0).unwrap();
        assert_eq!(net.n_kernels(), 16);
        assert_eq!(net.kernels[0], [-0.6, -0.6, -0.4, -0.4]);
        // local u advances first, then local w, then global x, then global y
        assert_eq!(net.kernels[1], [-0.6, -0.6, 0.4, -0.4]);
        assert_eq!(net.kernels[2], [-0.6, -0.6, -0.4, 0.4]);
        assert_eq!(net.kernels[4], [0.6, -0.6, -0.4, -0.4]);
        assert_eq!(net.kernels[8], [-0.6, 0.6, -0.4, -0.4]);
        assert!(net.weights.iter().all(|&w| w == 0.1));
    }

    #[test]
    fn singleton_kernel_count_uses_range_midpoint() {
        let init = NetworkInit {
            local_kernels_per_dim: 1,
            global_kernels_per_dim: 1,
            local_range: (-0.4, 0.4),
            global_range: (0.2, 0.6),
            weight_init: 0.1,
            weight_jitter: 0.0,
        };
        let net = init_network(&init, 0).unwrap();
        assert_eq!(net.n_kernels(), 1);
        let k = net.kernels[0];
        assert!((k[0] - 0.4).abs() < 1e-15 && (k[1] - 0.4).abs() < 1e-15);
        assert_eq!(k[2], 0.0);
        assert_eq!(k[3], 0.0);
    }

    #[test]
    fn weight_jitter_is_seeded_and_bounded() {
        let init = NetworkInit {
            weight_jitter: 0.3,
            ..NetworkInit::default()
        };
        let a = init_network(&init, 42).unwrap();
        let b = init_network(&init, 42).unwrap();
        let c = init_network(&init, 43).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
        for &w in &a.weights {
            assert!((w - 0.1).abs() <= 0.1 * 0.3 + 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let net = random_net(6, seed);
            let sel = vec![(0usize, 0usize); 4];
            let batch = build_coordinates((2, 2), (3, 3), 1, Some(&sel)).unwrap();
            let n = batch.n_rows();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let upstream: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss = |net: &TopologyNetwork| -> f64 {
                let rho = forward(net, &batch).unwrap();
                rho.iter().zip(&upstream).map(|(r, u)| r * u).sum()
            };
            let grads = backward(&net, &batch, &upstream, None).unwrap();

            let h = 1e-6;
            for k in 0..net.n_kernels() {
                for d in 0..4 {
                    let mut up = net.clone();
                    up.kernels[k][d] += h;
                    let mut dn = net.clone();
                    dn.kernels[k][d] -= h;
                    let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                    let got = grads.kernels[k][d];
                    assert!(
                        (got - fd).abs() < 1e-6 * fd.abs().max(1.0),
                        "seed {seed} kernel {k} dim {d}: {got} vs {fd}"
                    );
                }
                let mut up = net.clone();
                up.weights[k] += h;
                let mut dn = net.clone();
                dn.weights[k] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!(
                    (grads.weights[k] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "seed {seed} weight {k}: {} vs {fd}",
                    grads.weights[k]
                );
            }
        }
    }

    #[test]
    fn cached_and_recomputed_backward_agree() {
        let net = random_net(8, 17);
        let batch = build_coordinates((2, 1), (4, 4), 1, Some(&[(0, 0); 2])).unwrap();
        let (_, cache) = forward_cached(&net, &batch).unwrap();
        let upstream: Vec<f64> = (0..batch.n_rows()).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = backward(&net, &batch, &upstream, Some(&cache)).unwrap();
        let b = backward(&net, &batch, &upstream, None).unwrap();
        assert_eq!(a.kernels, b.kernels);
        assert_eq!(a.weights, b.weights);
    }
}
