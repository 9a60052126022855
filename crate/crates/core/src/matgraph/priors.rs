//! The shipped base material graphs: glass for windows, rubber for wheels,
//! and two reflective-metal car body variants (painted and unpainted, which
//! differ mainly in their roughness maps).

use super::{BlendMode, Edge, MaterialGraph, Node, NodeKind, Outputs};

pub const PRIOR_NAMES: [&str; 4] = ["window", "wheel", "body_painted", "body_unpainted"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Window,
    Wheel,
    BodyPainted,
    BodyUnpainted,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Window => "window",
            PriorKind::Wheel => "wheel",
            PriorKind::BodyPainted => "body_painted",
            PriorKind::BodyUnpainted => "body_unpainted",
        }
    }

    pub fn from_name(name: &str) -> Option<PriorKind> {
        match name {
            "window" => Some(PriorKind::Window),
            "wheel" => Some(PriorKind::Wheel),
            "body_painted" => Some(PriorKind::BodyPainted),
            "body_unpainted" => Some(PriorKind::BodyUnpainted),
            _ => None,
        }
    }
}

fn edge(from: &str, to: &str, port: &str) -> Edge {
    Edge {
        from: from.into(),
        to: to.into(),
        port: port.into(),
    }
}

/// Build a shipped prior graph. Infallible for the fixed catalog; panics only
/// on an internal construction bug.
pub fn builtin_prior(kind: PriorKind) -> MaterialGraph {
    match kind {
        PriorKind::Window => glass(),
        PriorKind::Wheel => rubber(),
        PriorKind::BodyPainted => body(true),
        PriorKind::BodyUnpainted => body(false),
    }
}

pub fn builtin_prior_by_name(name: &str) -> Option<MaterialGraph> {
    PriorKind::from_name(name).map(builtin_prior)
}

fn glass() -> MaterialGraph {
    let nodes = vec![
        Node::new(
            "tint",
            NodeKind::UniformColor,
            &[(0.62, 0.0, 1.0), (0.72, 0.0, 1.0), (0.70, 0.0, 1.0)],
        ),
        Node::new(
            "rough",
            NodeKind::ScalarConst { fixed: true },
            &[(0.05, 0.01, 1.0)],
        ),
        Node::new(
            "trans",
            NodeKind::ScalarConst { fixed: false },
            &[(0.9, 0.0, 1.0)],
        ),
    ];
    MaterialGraph::new(
        nodes,
        vec![],
        Outputs {
            albedo: "tint".into(),
            roughness: "rough".into(),
            normal: None,
            transmission: Some("trans".into()),
            metallic: 0.0,
        },
    )
    .expect("glass prior")
}

fn rubber() -> MaterialGraph {
    let nodes = vec![
        Node::new(
            "base",
            NodeKind::UniformColor,
            &[(0.040, 0.0, 1.0), (0.040, 0.0, 1.0), (0.045, 0.0, 1.0)],
        ),
        Node::new(
            "grain",
            NodeKind::FractalNoise {
                octaves: 3,
                seed: 11,
                tileable: true,
            },
            &[(6.0, 1.0, 16.0), (0.9, 0.0, 1.0)],
        ),
        Node::new("speckle", NodeKind::Blend { mode: BlendMode::Mix }, &[(0.25, 0.0, 1.0)]),
        Node::new("bump", NodeKind::HeightToNormal, &[(0.6, 0.0, 4.0)]),
        Node::new(
            "rough",
            NodeKind::ScalarConst { fixed: true },
            &[(0.85, 0.01, 1.0)],
        ),
    ];
    let edges = vec![
        edge("base", "speckle", "a"),
        edge("grain", "speckle", "b"),
        edge("grain", "bump", "input"),
    ];
    MaterialGraph::new(
        nodes,
        edges,
        Outputs {
            albedo: "speckle".into(),
            roughness: "rough".into(),
            normal: Some("bump".into()),
            transmission: None,
            metallic: 0.0,
        },
    )
    .expect("rubber prior")
}

fn body(painted: bool) -> MaterialGraph {
    let (c0, c1) = if painted {
        ([0.55, 0.08, 0.10], [0.70, 0.12, 0.15])
    } else {
        ([0.45, 0.46, 0.48], [0.62, 0.63, 0.65])
    };
    // roughness map range: painted ~[0.10, 0.26], unpainted ~[0.33, 0.63]
    let (r_brightness, r_contrast) = if painted { (-0.32, 0.15) } else { (-0.02, 0.30) };
    let nodes = vec![
        Node::new(
            "pattern",
            NodeKind::FractalNoise {
                octaves: 3,
                seed: 5,
                tileable: true,
            },
            &[(4.0, 1.0, 16.0), (1.0, 0.0, 1.0)],
        ),
        Node::new(
            "ramp",
            NodeKind::ColorRamp,
            &[
                (c0[0], 0.0, 1.0),
                (c0[1], 0.0, 1.0),
                (c0[2], 0.0, 1.0),
                (c1[0], 0.0, 1.0),
                (c1[1], 0.0, 1.0),
                (c1[2], 0.0, 1.0),
            ],
        ),
        Node::new(
            "flake",
            NodeKind::FractalNoise {
                octaves: 2,
                seed: 9,
                tileable: true,
            },
            &[(8.0, 1.0, 32.0), (0.8, 0.0, 1.0)],
        ),
        Node::new(
            "sheen",
            NodeKind::Blend {
                mode: BlendMode::Multiply,
            },
            &[(0.2, 0.0, 1.0)],
        ),
        Node::new(
            "tone",
            NodeKind::BrightnessContrast,
            &[(0.0, -0.5, 0.5), (1.0, 0.5, 2.0)],
        ),
        Node::new(
            "micro",
            NodeKind::FractalNoise {
                octaves: 2,
                seed: 3,
                tileable: true,
            },
            &[(5.0, 1.0, 16.0), (1.0, 0.0, 1.0)],
        ),
        Node::new(
            "rough_map",
            NodeKind::BrightnessContrast,
            &[(r_brightness, -0.5, 0.5), (r_contrast, 0.01, 1.0)],
        ),
        Node::new("bump", NodeKind::HeightToNormal, &[(0.3, 0.0, 4.0)]),
    ];
    let edges = vec![
        edge("pattern", "ramp", "input"),
        edge("ramp", "sheen", "a"),
        edge("flake", "sheen", "b"),
        edge("sheen", "tone", "input"),
        edge("micro", "rough_map", "input"),
        edge("pattern", "bump", "input"),
    ];
    MaterialGraph::new(
        nodes,
        edges,
        Outputs {
            albedo: "tone".into(),
            roughness: "rough_map".into(),
            normal: Some("bump".into()),
            transmission: None,
            metallic: 1.0,
        },
    )
    .expect("body prior")
}
