//! Bilinear quadrilateral plane-stress element on the unit square.
//!
//! Nodes are ordered counterclockwise from the lower-left corner:
//! `(0,0), (1,0), (1,1), (0,1)`, with dofs `[u0x, u0y, u1x, u1y, ...]`.
//! Integration uses 2x2 Gauss quadrature, exact for this element.

// Small dense matrices are clearest with explicit index loops.
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

/// Isotropic linear elastic material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus.
    pub e: f64,
    /// Poisson's ratio.
    pub nu: f64,
}

impl Material {
    pub const fn new(e: f64, nu: f64) -> Self {
        Material { e, nu }
    }
}

/// Symmetric 3x3 constitutive tensor in Voigt order `(11, 22, 12)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstitutiveTensor(pub [[f64; 3]; 3]);

impl ConstitutiveTensor {
    /// Plane-stress stiffness of an isotropic material.
    pub fn plane_stress(mat: Material) -> Self {
        let f = mat.e / (1.0 - mat.nu * mat.nu);
        ConstitutiveTensor([
            [f, f * mat.nu, 0.0],
            [f * mat.nu, f, 0.0],
            [0.0, 0.0, f * (1.0 - mat.nu) / 2.0],
        ])
    }

    /// Sum of the four in-plane normal entries divided by four; the 2D bulk
    /// modulus of the tensor.
    pub fn bulk(&self) -> f64 {
        (self.0[0][0] + self.0[0][1] + self.0[1][0] + self.0[1][1]) / 4.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.0;
        for row in &mut out {
            for v in row {
                *v *= s;
            }
        }
        ConstitutiveTensor(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                m = m.max((self.0[a][b] - other.0[a][b]).abs());
            }
        }
        m
    }
}

/// Corner displacements of the three unit test strains: uniaxial x, uniaxial
/// y, and the symmetric shear field `u = (y/2, x/2)` (unit engineering shear).
pub const UNIT_STRAIN_U: [[f64; 8]; 3] = [
    [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0],
];

/// `unit_blocks()[a][b][i][j]` is the integral of `B_row_a[i] * B_row_b[j]`
/// over the element, so that `ke(D) = sum_ab D[a][b] * blocks[a][b]` and
/// `u' * blocks[a][b] * v` is the mutual energy of strain components `a`, `b`.
pub fn unit_blocks() -> &'static [[[[f64; 8]; 8]; 3]; 3] {
    use std::sync::OnceLock;
    static BLOCKS: OnceLock<[[[[f64; 8]; 8]; 3]; 3]> = OnceLock::new();
    BLOCKS.get_or_init(|| {
        let mut blocks = [[[[0.0; 8]; 8]; 3]; 3];
        let g = 1.0 / 3.0f64.sqrt();
        for &(xi, eta) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
            let b = b_matrix(xi, eta);
            for a in 0..3 {
                for c in 0..3 {
                    for i in 0..8 {
                        for j in 0..8 {
                            // weight 1, det J = 1/4 on the unit square
                            blocks[a][c][i][j] += 0.25 * b[a][i] * b[c][j];
                        }
                    }
                }
            }
        }
        blocks
    })
}

/// Strain-displacement matrix at natural coordinates `(xi, eta)`.
fn b_matrix(xi: f64, eta: f64) -> [[f64; 8]; 3] {
    // dN/dxi, dN/deta for the four bilinear shape functions; the unit-square
    // mapping has dxi/dx = deta/dy = 2.
    let dndxi = [
        -(1.0 - eta) / 4.0,
        (1.0 - eta) / 4.0,
        (1.0 + eta) / 4.0,
        -(1.0 + eta) / 4.0,
    ];
    let dndeta = [
        -(1.0 - xi) / 4.0,
        -(1.0 + xi) / 4.0,
        (1.0 + xi) / 4.0,
        (1.0 - xi) / 4.0,
    ];
    let mut b = [[0.0; 8]; 3];
    for i in 0..4 {
        let dx = dndxi[i] * 2.0;
        let dy = dndeta[i] * 2.0;
        b[0][2 * i] = dx;
        b[1][2 * i + 1] = dy;
        b[2][2 * i] = dy;
        b[2][2 * i + 1] = dx;
    }
    b
}

/// Element stiffness for an arbitrary constitutive tensor.
pub fn element_stiffness(d: &ConstitutiveTensor) -> [[f64; 8]; 8] {
    let blocks = unit_blocks();
    let mut ke = [[0.0; 8]; 8];
    for a in 0..3 {
        for b in 0..3 {
            let dab = d.0[a][b];
            if dab == 0.0 {
                continue;
            }
            for i in 0..8 {
                for j in 0..8 {
                    ke[i][j] += dab * blocks[a][b][i][j];
                }
            }
        }
    }
    ke
}

/// Mutual strain energies of two element displacement vectors:
/// `out[a][b] = u' * blocks[a][b] * v`, the derivative of `u' ke(D) v`
/// with respect to `D[a][b]`.
pub fn tensor_energy_pairs(u: &[f64; 8], v: &[f64; 8]) -> [[f64; 3]; 3] {
    let blocks = unit_blocks();
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for i in 0..8 {
                let mut row = 0.0;
                for j in 0..8 {
                    row += blocks[a][b][i][j] * v[j];
                }
                s += u[i] * row;
            }
            out[a][b] = s;
        }
    }
    out
}

/// Modified SIMP interpolation: `c0 + rho^p (1 - c0)`.
/// The floor `c0` keeps void regions positive definite.
pub fn simp_scale(rho: f64, p: f64, c0: f64) -> f64 {
    c0 + rho.powf(p) * (1.0 - c0)
}

/// Derivative of [`simp_scale`] with respect to `rho`.
pub fn simp_scale_deriv(rho: f64, p: f64, c0: f64) -> f64 {
    p * rho.powf(p - 1.0) * (1.0 - c0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const D_SOLID: Material = Material::new(1.0, 0.3);

    #[test]
    fn plane_stress_tensor_entries() {
        let d = ConstitutiveTensor::plane_stress(D_SOLID);
        assert!((d.0[0][0] - 1.0989010989010988).abs() < 1e-15);
        assert!((d.0[0][1] - 0.3296703296703296).abs() < 1e-15);
        assert!((d.0[2][2] - 0.3846153846153845).abs() < 1e-15);
        assert_eq!(d.0[0][2], 0.0);
    }

    #[test]
    fn stiffness_corner_entry_matches_closed_form() {
        // Diagonal x-entry of a corner node, E=1 nu=0.3: E/(1-nu^2)*(1/2-nu/6).
        let ke = element_stiffness(&ConstitutiveTensor::plane_stress(D_SOLID));
        assert!(
            (ke[0][0] - 0.4945054945054945).abs() < 1e-12,
            "ke[0][0] = {}",
            ke[0][0]
        );
    }

    #[test]
    fn uniform_strain_energies_reproduce_tensor() {
        // The element reproduces linear displacement fields exactly, so the
        // energy of each unit test strain equals the matching tensor entry.
        let d = ConstitutiveTensor::plane_stress(D_SOLID);
        let ke = element_stiffness(&d);
        let quad = |u: &[f64; 8], v: &[f64; 8]| -> f64 {
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += u[i] * ke[i][j] * v[j];
                }
            }
            s
        };
        for a in 0..3 {
            for b in 0..3 {
                let got = quad(&UNIT_STRAIN_U[a], &UNIT_STRAIN_U[b]);
                assert!(
                    (got - d.0[a][b]).abs() < 1e-12,
                    "energy ({a},{b}) = {got}, tensor = {}",
                    d.0[a][b]
                );
            }
        }
    }

    #[test]
    fn rigid_translations_have_zero_energy() {
        let ke = element_stiffness(&ConstitutiveTensor::plane_stress(D_SOLID));
        for row in &ke {
            let sx: f64 = (0..4).map(|i| row[2 * i]).sum();
            let sy: f64 = (0..4).map(|i| row[2 * i + 1]).sum();
            assert!(sx.abs() < 1e-14 && sy.abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_scales_linearly_with_youngs_modulus() {
        let d1 = ConstitutiveTensor::plane_stress(Material::new(1.0, 0.3));
        let d2 = ConstitutiveTensor::plane_stress(Material::new(2.5, 0.3));
        let k1 = element_stiffness(&d1);
        let k2 = element_stiffness(&d2);
        for i in 0..8 {
            for j in 0..8 {
                assert!((k2[i][j] - 2.5 * k1[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_blocks_transpose_symmetry() {
        let blocks = unit_blocks();
        for a in 0..3 {
            for b in 0..3 {
                for i in 0..8 {
                    for j in 0..8 {
                        assert!((blocks[a][b][i][j] - blocks[b][a][j][i]).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn energy_pairs_match_stiffness_assembly() {
        let d = ConstitutiveTensor::plane_stress(D_SOLID);
        let ke = element_stiffness(&d);
        let u = [0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.0, 0.15];
        let v = [0.3, 0.1, -0.1, 0.2, 0.25, -0.3, 0.4, 0.0];
        let pairs = tensor_energy_pairs(&u, &v);
        let mut via_pairs = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                via_pairs += d.0[a][b] * pairs[a][b];
            }
        }
        let mut direct = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                direct += u[i] * ke[i][j] * v[j];
            }
        }
        assert!((via_pairs - direct).abs() < 1e-12);
    }

    #[test]
    fn simp_floor_and_midpoint() {
        assert!((simp_scale(0.0, 3.0, 1e-9) - 1e-9).abs() < 1e-24);
        assert!((simp_scale(1.0, 3.0, 1e-9) - 1.0).abs() < 1e-15);
        assert!((simp_scale(0.5, 3.0, 1e-9) - 0.125000000875).abs() < 1e-13);
        // derivative against central differences
        let h = 1e-6;
        for &r in &[0.2, 0.5, 0.9] {
            let fd = (simp_scale(r + h, 3.0, 1e-9) - simp_scale(r - h, 3.0, 1e-9)) / (2.0 * h);
            assert!((simp_scale_deriv(r, 3.0, 1e-9) - fd).abs() < 1e-6);
        }
    }
}
