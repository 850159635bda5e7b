//! Built-in problem presets and target displacement generation.
//!
//! Each preset is a complete, validated [`RunConfig`]: lattice dimensions,
//! boundary conditions, objective mode, volume targets, and training
//! schedule. Load and displacement magnitudes are normalized values chosen
//! for the unit-modulus material; they are part of the preset definition.
//!
//! Presets initialize the network weights at `1 / n_k` instead of a larger
//! constant: with `n_k` kernels whose sine arguments start in `[0, 2]`,
//! every kernel contributes a positive term, so the pre-sigmoid sum scales
//! with `n_k * weight_init`. Keeping that sum near one starts the field
//! mid-range instead of saturated, which would waste epochs crossing the
//! sigmoid plateau.

use crate::config::{
    Axis, BaseCellPattern, BaseCellSpec, BoundarySpec, FixDir, FixedSpec, LoadSpec, MaskSpec,
    MaterialSpec, NetworkSpec, NodeSet, PrescribedSpec, RunConfig, Side, TargetSpec, TrainingSpec,
    VolumeSpec, WeightsSpec, CONFIG_VERSION,
};
use crate::error::{Error, Result};
use crate::fem::{node_id, ConstitutiveTensor, Material};
use crate::homog::Homogenizer;
use crate::loss::ObjectiveMode;

/// Names accepted by [`by_name`].
pub const PRESET_NAMES: [&str; 6] = ["bump", "npr_a", "npr_b", "cloak", "tank", "bulk_bench"];

/// Look up a preset by name.
pub fn by_name(name: &str) -> Result<RunConfig> {
    let cfg = match name {
        "bump" => bump(),
        "npr_a" => npr_a(),
        "npr_b" => npr_b(),
        "cloak" => cloak(),
        "tank" => tank(),
        "bulk_bench" => bulk_bench(),
        _ => {
            return Err(Error::Input(format!(
                "unknown preset {name:?}; expected one of {PRESET_NAMES:?}"
            )));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Shared defaults: every preset trains 3600 kernels from the standard
/// frequency mesh and starts the field mid-range.
fn preset_network() -> NetworkSpec {
    NetworkSpec {
        weight_init: 1.0 / 3600.0,
        ..NetworkSpec::default()
    }
}

fn base(name: &str, seed: u64, mode: ObjectiveMode, macro_dims: [usize; 2]) -> RunConfig {
    RunConfig {
        version: CONFIG_VERSION,
        name: name.to_string(),
        seed,
        mode,
        macro_dims,
        micro_dims: [30, 30],
        material: MaterialSpec::default(),
        network: preset_network(),
        training: TrainingSpec::default(),
        weights: WeightsSpec::default(),
        interpolation: Default::default(),
        volume: VolumeSpec::Uniform { target: 0.5 },
        boundary: BoundarySpec::default(),
        target: TargetSpec::None,
        mask: MaskSpec::None,
        passive: Vec::new(),
        base_cell: None,
        pixel_budget: 100_000_000,
    }
}

/// Displacement matching on a wide plate: both sides clamped, an upward
/// point load at the bottom center, and a bump-shaped vertical target along
/// the top edge.
pub fn bump() -> RunConfig {
    let mut cfg = base("bump", 7, ObjectiveMode::Displacement, [12, 4]);
    cfg.boundary = BoundarySpec {
        fixed: vec![
            FixedSpec {
                nodes: NodeSet::Edge { side: Side::Left },
                dir: FixDir::Both,
            },
            FixedSpec {
                nodes: NodeSet::Edge { side: Side::Right },
                dir: FixDir::Both,
            },
        ],
        prescribed: vec![],
        loads: vec![LoadSpec {
            nodes: NodeSet::Node { ix: 6, iy: 0 },
            dir: Axis::Y,
            value: 1.0,
        }],
    };
    cfg.target = TargetSpec::TopEdgeBump { amplitude: 2.0 };
    cfg.mask = MaskSpec::Component {
        nodes: vec![NodeSet::Edge { side: Side::Top }],
        dir: Axis::Y,
    };
    cfg
}

/// Negative-ratio design, vertical compression: the block is squeezed from
/// the top and must pull its sides inward like a material with ratio -0.3.
/// The mismatch is measured on the side-edge horizontal dofs.
pub fn npr_a() -> RunConfig {
    let mut cfg = base("npr_a", 11, ObjectiveMode::Displacement, [8, 8]);
    cfg.micro_dims = [20, 20];
    cfg.boundary = BoundarySpec {
        fixed: vec![
            FixedSpec {
                nodes: NodeSet::Edge { side: Side::Bottom },
                dir: FixDir::Y,
            },
            // Pin one bottom node against rigid horizontal translation.
            FixedSpec {
                nodes: NodeSet::Node { ix: 4, iy: 0 },
                dir: FixDir::X,
            },
        ],
        prescribed: vec![PrescribedSpec {
            nodes: NodeSet::Edge { side: Side::Top },
            dir: Axis::Y,
            value: -0.5,
        }],
        loads: vec![],
    };
    cfg.target = TargetSpec::HypotheticalMaterial { e: 1.0, nu: -0.3 };
    cfg.mask = MaskSpec::Component {
        nodes: vec![
            NodeSet::Edge { side: Side::Left },
            NodeSet::Edge { side: Side::Right },
        ],
        dir: Axis::X,
    };
    cfg
}

/// Negative-ratio design, horizontal stretch: the block is pulled to the
/// right and must contract its top and bottom faces. The mismatch is
/// measured on the horizontal-edge vertical dofs.
pub fn npr_b() -> RunConfig {
    let mut cfg = base("npr_b", 13, ObjectiveMode::Displacement, [8, 8]);
    cfg.micro_dims = [20, 20];
    cfg.boundary = BoundarySpec {
        fixed: vec![
            FixedSpec {
                nodes: NodeSet::Edge { side: Side::Left },
                dir: FixDir::X,
            },
            // Pin one left node against rigid vertical translation.
            FixedSpec {
                nodes: NodeSet::Node { ix: 0, iy: 4 },
                dir: FixDir::Y,
            },
        ],
        prescribed: vec![PrescribedSpec {
            nodes: NodeSet::Edge { side: Side::Right },
            dir: Axis::X,
            value: 0.5,
        }],
        loads: vec![],
    };
    cfg.target = TargetSpec::HypotheticalMaterial { e: 1.0, nu: -0.3 };
    cfg.mask = MaskSpec::Component {
        nodes: vec![
            NodeSet::Edge { side: Side::Bottom },
            NodeSet::Edge { side: Side::Top },
        ],
        dir: Axis::Y,
    };
    cfg
}

/// Response cloaking: a plate with a 2x2-cell hole, compressed from the
/// top, must deform along its outer ring exactly as the intact plate tiled
/// with the base cell would. Ring cells are additionally pulled toward the
/// base cell geometry; jittered weights give the field undulations to
/// differentiate from.
pub fn cloak() -> RunConfig {
    let mut cfg = base("cloak", 17, ObjectiveMode::Displacement, [10, 10]);
    cfg.micro_dims = [20, 20];
    cfg.network.weight_jitter = 0.3;
    // Volume target equals the base cell fill so the field can settle on it.
    cfg.volume = VolumeSpec::Uniform { target: 0.51 };
    cfg.boundary = BoundarySpec {
        fixed: vec![FixedSpec {
            nodes: NodeSet::Edge { side: Side::Bottom },
            dir: FixDir::Both,
        }],
        prescribed: vec![PrescribedSpec {
            nodes: NodeSet::Edge { side: Side::Top },
            dir: Axis::Y,
            value: -0.5,
        }],
        loads: vec![],
    };
    cfg.passive = vec![[4, 4], [5, 4], [4, 5], [5, 5]];
    cfg.base_cell = Some(BaseCellSpec {
        pattern: BaseCellPattern::Cross { arm_fraction: 0.34 },
        band_width: 1,
    });
    cfg.weights.l1_base_weight = 0.5;
    cfg.target = TargetSpec::BaseCellFill;
    cfg.mask = MaskSpec::OuterCellRing;
    cfg
}

/// Compliance minimization for a hanging pressurized tank: clamped along
/// the top, pushed outward on the sides and downward along the bottom by
/// the propellant, with a concentrated upward engine force at the bottom
/// center. Trains with the 2x subcell schedule.
pub fn tank() -> RunConfig {
    let mut cfg = base("tank", 23, ObjectiveMode::Compliance, [12, 6]);
    cfg.micro_dims = [20, 20];
    cfg.training.upsample = 2;
    cfg.volume = VolumeSpec::Uniform { target: 0.4 };
    cfg.boundary = BoundarySpec {
        fixed: vec![FixedSpec {
            nodes: NodeSet::Edge { side: Side::Top },
            dir: FixDir::Both,
        }],
        prescribed: vec![],
        loads: vec![
            LoadSpec {
                nodes: NodeSet::Edge { side: Side::Left },
                dir: Axis::X,
                value: -0.05,
            },
            LoadSpec {
                nodes: NodeSet::Edge { side: Side::Right },
                dir: Axis::X,
                value: 0.05,
            },
            LoadSpec {
                nodes: NodeSet::Edge { side: Side::Bottom },
                dir: Axis::Y,
                value: -0.05,
            },
            LoadSpec {
                nodes: NodeSet::Node { ix: 6, iy: 0 },
                dir: Axis::Y,
                value: 2.0,
            },
        ],
    };
    cfg
}

/// Stiffness benchmark: a strip of cells maximizing bulk modulus under a
/// volume fraction ramp, for comparison against the theoretical bound.
pub fn bulk_bench() -> RunConfig {
    let mut cfg = base("bulk_bench", 29, ObjectiveMode::BulkOnly, [8, 1]);
    cfg.training.epochs = 1000;
    cfg.volume = VolumeSpec::LinearX { from: 0.4, to: 0.7 };
    cfg
}

/// Companion configuration for full-scale verification: the bump plate
/// re-posed with a unit prescribed stretch on the right edge and the solid
/// plate's response as target. Under prescribed displacements the solid
/// response is attainable by a porous layout, so the homogenized match is
/// tight and the full-scale re-analysis measures the homogenization gap.
pub fn full_scale_config() -> RunConfig {
    let mut cfg = base("full_scale", 7, ObjectiveMode::Displacement, [12, 4]);
    cfg.boundary = BoundarySpec {
        fixed: vec![FixedSpec {
            nodes: NodeSet::Edge { side: Side::Left },
            dir: FixDir::Both,
        }],
        prescribed: vec![PrescribedSpec {
            nodes: NodeSet::Edge { side: Side::Right },
            dir: Axis::X,
            value: 1.0,
        }],
        loads: vec![],
    };
    cfg.target = TargetSpec::SolidFill;
    cfg.mask = MaskSpec::AllFree;
    cfg
}

/// Produces the target displacement field a displacement-mode config trains
/// against. Errors for configs without a target (compliance, bulk-only).
pub fn make_target(cfg: &RunConfig) -> Result<Vec<f64>> {
    match &cfg.target {
        TargetSpec::None => Err(Error::Input(format!(
            "config {:?} has no displacement target",
            cfg.name
        ))),
        TargetSpec::TopEdgeBump { amplitude } => {
            let problem = cfg.problem()?;
            let mut t = vec![0.0; problem.n_dofs()];
            let (nelx, nely) = (problem.nelx, problem.nely);
            for ix in 0..=nelx {
                let profile = (std::f64::consts::PI * ix as f64 / nelx as f64).sin();
                t[2 * node_id(ix, nely, nely) + 1] = amplitude * profile;
            }
            Ok(t)
        }
        TargetSpec::HypotheticalMaterial { e, nu } => {
            let tensor = ConstitutiveTensor::plane_stress(Material::new(*e, *nu));
            uniform_solve(cfg, tensor)
        }
        TargetSpec::SolidFill => {
            let tensor = ConstitutiveTensor::plane_stress(cfg.material.material());
            uniform_solve(cfg, tensor)
        }
        TargetSpec::BaseCellFill => {
            let spec = cfg.base_cell.as_ref().ok_or_else(|| {
                Error::Config("base cell fill target requires a base_cell".into())
            })?;
            let (ux, uy) = cfg.micro_dims();
            let raster = spec.pattern.raster((ux, uy));
            let result = Homogenizer::new(ux, uy)?.homogenize(
                &raster,
                cfg.material.material(),
                cfg.interpolation.penal,
                cfg.interpolation.stiffness_floor,
            )?;
            uniform_solve(cfg, result.tensor)
        }
    }
}

/// Solve the macro problem with one tensor in every element.
fn uniform_solve(cfg: &RunConfig, tensor: ConstitutiveTensor) -> Result<Vec<f64>> {
    let problem = cfg.problem()?;
    let asm = problem.assembler();
    let tensors = vec![tensor; problem.nelx * problem.nely];
    let system = problem.factor_homogenized(asm, &tensors)?;
    system.solve(&problem.loads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    #[test]
    fn every_named_preset_validates_and_round_trips() {
        for name in PRESET_NAMES {
            let cfg = by_name(name).unwrap();
            assert_eq!(cfg.name, name);
            let json = cfg.to_json();
            let back = RunConfig::from_json(&json).unwrap();
            assert_eq!(cfg, back, "{name} must survive the config format");
            assert_eq!(cfg.hash(), back.hash());
        }
        full_scale_config().validate().unwrap();
    }

    #[test]
    fn unknown_names_are_rejected() {
        let err = by_name("warp_core").unwrap_err();
        assert!(err.to_string().contains("unknown preset"), "{err}");
    }

    #[test]
    fn bump_profile_is_a_half_sine_on_the_top_edge() {
        let cfg = bump();
        let t = make_target(&cfg).unwrap();
        let problem = cfg.problem().unwrap();
        let (nelx, nely) = (problem.nelx, problem.nely);
        let top_y = |ix: usize| t[2 * node_id(ix, nely, nely) + 1];
        assert_eq!(top_y(0), 0.0);
        assert!((top_y(nelx / 2) - 2.0).abs() < 1e-12, "peak at the center");
        assert!((top_y(2) - top_y(nelx - 2)).abs() < 1e-12, "symmetric");
        // Only top-edge vertical dofs are set.
        let set = t.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(set, nelx - 1 + 2 - 2 + 1);
        for ix in 0..=nelx {
            assert_eq!(t[2 * node_id(ix, 0, nely)], 0.0);
        }
    }

    #[test]
    fn plain_ratio_hypothetical_target_equals_the_solid_solve() {
        let mut cfg = npr_a();
        cfg.target = TargetSpec::HypotheticalMaterial { e: 1.0, nu: 0.3 };
        let hypothetical = make_target(&cfg).unwrap();
        cfg.target = TargetSpec::SolidFill;
        let solid = make_target(&cfg).unwrap();
        assert_eq!(hypothetical.len(), solid.len());
        for (a, b) in hypothetical.iter().zip(&solid) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn solid_base_cell_target_equals_the_solid_solve() {
        let mut cfg = cloak();
        cfg.base_cell = Some(BaseCellSpec {
            pattern: BaseCellPattern::Cross { arm_fraction: 1.0 },
            band_width: 1,
        });
        let tiled = make_target(&cfg).unwrap();
        cfg.target = TargetSpec::SolidFill;
        let solid = make_target(&cfg).unwrap();
        let norm: f64 = solid.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = tiled
            .iter()
            .zip(&solid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm < 1e-6, "relative gap {}", diff / norm);
    }

    #[test]
    fn targetless_presets_are_rejected() {
        assert!(make_target(&tank()).is_err());
        assert!(make_target(&bulk_bench()).is_err());
    }

    #[test]
    fn negative_ratio_target_contracts_sideways_under_compression() {
        let cfg = npr_a();
        let t = make_target(&cfg).unwrap();
        let problem = cfg.problem().unwrap();
        let (nelx, nely) = (problem.nelx, problem.nely);
        // Squeezed from the top with ratio -0.3, the sides pull inward:
        // the left edge moves right and the right edge moves left.
        let left_mid = t[2 * node_id(0, nely / 2, nely)];
        let right_mid = t[2 * node_id(nelx, nely / 2, nely)];
        assert!(left_mid > 1e-3, "left edge moves inward, got {left_mid}");
        assert!(right_mid < -1e-3, "right edge moves inward, got {right_mid}");
    }

    #[test]
    fn vertical_compression_target_fingerprint_is_stable() {
        let t = make_target(&npr_a()).unwrap();
        let mut hasher = Sha256::new();
        for v in &t {
            hasher.update(v.to_le_bytes());
        }
        let hex: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(
            hex,
            "2f75fdb066b89057a87774dde0e994608fc0d57418be803845c6be4dcdcd7b6c",
            "target field changed; regenerate the fingerprint if intentional"
        );
    }
}
