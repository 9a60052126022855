//! Procedural material graphs: a small node DSL compiled to texture maps with
//! exact reverse-mode gradients of every texel with respect to the continuous
//! node parameters. Topology and discrete parameters are fixed after
//! construction; only the continuous parameters move during optimization.
//!
//! Shading gradients flow into the albedo map only, so parameters that feed
//! just the roughness or normal outputs are excluded from the optimizable set
//! by default; see [`MaterialGraph::optimizable_mask`].

mod eval;
mod io;
mod priors;

pub use eval::{EvalReport, Pullback, TextureCotangent};
pub use io::{read_graph, write_graph, graph_to_string};
pub use priors::{builtin_prior, builtin_prior_by_name, PriorKind, PRIOR_NAMES};


use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Continuous (optimizable) parameter with box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Param {
    pub fn new(name: &'static str, value: f64, lo: f64, hi: f64) -> Param {
        Param { name, value, lo, hi }
    }

    pub fn clamped(&self) -> f64 {
        self.value.clamp(self.lo, self.hi)
    }
}

/// Channel arity of a node's output buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Arity {
    Scalar,
    Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendMode {
    Mix,
    Multiply,
}

/// Discrete node configuration. Continuous parameters live in [`Node::params`]
/// in the canonical order given by [`NodeKind::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// rgb constant; params r, g, b.
    UniformColor,
    /// Scalar constant; param value. `fixed` removes it from theta.
    ScalarConst { fixed: bool },
    /// Multi-octave value noise with C1 interpolation; params scale, amplitude.
    FractalNoise {
        octaves: u32,
        seed: u64,
        tileable: bool,
    },
    /// Two-stop color ramp over a scalar input; params r0,g0,b0,r1,g1,b1.
    ColorRamp,
    /// Binary blend; param weight. Scalar inputs broadcast against rgb.
    Blend { mode: BlendMode },
    /// Integer-repeat tiling of the input buffer.
    Tile { repeats: u32 },
    /// Central-difference height-to-normal; param strength.
    HeightToNormal,
    /// Affine remap around 0.5; params brightness, contrast.
    BrightnessContrast,
}

impl NodeKind {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            NodeKind::UniformColor => &["r", "g", "b"],
            NodeKind::ScalarConst { .. } => &["value"],
            NodeKind::FractalNoise { .. } => &["scale", "amplitude"],
            NodeKind::ColorRamp => &["r0", "g0", "b0", "r1", "g1", "b1"],
            NodeKind::Blend { .. } => &["weight"],
            NodeKind::Tile { .. } => &[],
            NodeKind::HeightToNormal => &["strength"],
            NodeKind::BrightnessContrast => &["brightness", "contrast"],
        }
    }

    pub fn input_ports(&self) -> &'static [&'static str] {
        match self {
            NodeKind::UniformColor
            | NodeKind::ScalarConst { .. }
            | NodeKind::FractalNoise { .. } => &[],
            NodeKind::ColorRamp
            | NodeKind::Tile { .. }
            | NodeKind::HeightToNormal
            | NodeKind::BrightnessContrast => &["input"],
            NodeKind::Blend { .. } => &["a", "b"],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeKind::UniformColor => "uniform_color",
            NodeKind::ScalarConst { .. } => "scalar_const",
            NodeKind::FractalNoise { .. } => "fractal_noise",
            NodeKind::ColorRamp => "color_ramp",
            NodeKind::Blend { .. } => "blend",
            NodeKind::Tile { .. } => "tile",
            NodeKind::HeightToNormal => "height_to_normal",
            NodeKind::BrightnessContrast => "brightness_contrast",
        }
    }

    /// Whether a param is continuous (participates in theta).
    fn param_is_continuous(&self, _idx: usize) -> bool {
        !matches!(self, NodeKind::ScalarConst { fixed: true })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub params: Vec<Param>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, values: &[(f64, f64, f64)]) -> Node {
        let names = kind.param_names();
        assert_eq!(names.len(), values.len(), "param count mismatch");
        let params = names
            .iter()
            .zip(values)
            .map(|(&name, &(value, lo, hi))| Param::new(name, value, lo, hi))
            .collect();
        Node {
            id: id.into(),
            kind,
            params,
        }
    }
}

/// Edge `from` node output -> (`to` node, input `port`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub port: String,
}

/// Designated output ports of the graph. `metallic` is a graph-level scalar
/// constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub albedo: String,
    pub roughness: String,
    pub normal: Option<String>,
    pub transmission: Option<String>,
    pub metallic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    outputs: Outputs,
    /// Topological order over node indices, fixed at construction.
    topo: Vec<usize>,
    /// Per node, per input port slot: index of the feeding node.
    inputs: Vec<Vec<usize>>,
}

/// Reference into the flattened theta vector.
#[derive(Debug, Clone)]
pub struct ParamRef {
    pub node: usize,
    pub param: usize,
    /// `node_id.param_name`
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl MaterialGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, outputs: Outputs) -> Result<MaterialGraph> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate node id `{}`", n.id)));
            }
            let names = n.kind.param_names();
            if n.params.len() != names.len() {
                return Err(Error::Invalid(format!(
                    "node `{}`: expected params {:?}",
                    n.id, names
                )));
            }
            for p in &n.params {
                let bounds_ok = p.lo.is_finite() && p.hi.is_finite() && p.lo <= p.hi;
                if !bounds_ok || !p.value.is_finite() {
                    return Err(Error::Invalid(format!(
                        "node `{}` param `{}`: bad value/bounds",
                        n.id, p.name
                    )));
                }
            }
        }

        // wire input slots
        let mut inputs: Vec<Vec<Option<usize>>> = nodes
            .iter()
            .map(|n| vec![None; n.kind.input_ports().len()])
            .collect();
        for e in &edges {
            let &from = index
                .get(e.from.as_str())
                .ok_or_else(|| Error::Invalid(format!("edge from unknown node `{}`", e.from)))?;
            let &to = index
                .get(e.to.as_str())
                .ok_or_else(|| Error::Invalid(format!("edge to unknown node `{}`", e.to)))?;
            let ports = nodes[to].kind.input_ports();
            let slot = ports.iter().position(|&p| p == e.port).ok_or_else(|| {
                Error::Invalid(format!(
                    "node `{}` has no input port `{}` (has {:?})",
                    e.to, e.port, ports
                ))
            })?;
            if inputs[to][slot].replace(from).is_some() {
                return Err(Error::Invalid(format!(
                    "node `{}` port `{}` has multiple incoming edges",
                    e.to, e.port
                )));
            }
        }
        let inputs: Vec<Vec<usize>> = nodes
            .iter()
            .zip(inputs)
            .map(|(n, slots)| {
                slots
                    .into_iter()
                    .enumerate()
                    .map(|(si, s)| {
                        s.ok_or_else(|| {
                            Error::Invalid(format!(
                                "node `{}` input port `{}` is unconnected",
                                n.id,
                                n.kind.input_ports()[si]
                            ))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        // Kahn topological sort; leftover nodes mean a cycle.
        let mut indegree: Vec<usize> = inputs.iter().map(|i| i.len()).collect();
        let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (to, srcs) in inputs.iter().enumerate() {
            for &from in srcs {
                downstream[from].push(to);
            }
        }
        let mut ready: Vec<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        ready.sort_unstable();
        let mut topo = Vec::with_capacity(nodes.len());
        while let Some(i) = ready.pop() {
            topo.push(i);
            for &d in &downstream[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(d);
                }
            }
        }
        if topo.len() != nodes.len() {
            return Err(Error::Invalid("graph contains a cycle".into()));
        }

        // static arity inference; scalar-only ports must not see rgb
        let mut arity: Vec<Arity> = vec![Arity::Scalar; nodes.len()];
        for &i in &topo {
            let node = &nodes[i];
            let input_arity = |slot: usize| arity[inputs[i][slot]];
            arity[i] = match &node.kind {
                NodeKind::UniformColor => Arity::Rgb,
                NodeKind::ScalarConst { .. } | NodeKind::FractalNoise { .. } => Arity::Scalar,
                NodeKind::ColorRamp | NodeKind::HeightToNormal => {
                    if input_arity(0) != Arity::Scalar {
                        return Err(Error::Invalid(format!(
                            "node `{}` requires a scalar input",
                            node.id
                        )));
                    }
                    Arity::Rgb
                }
                NodeKind::Blend { .. } => {
                    if input_arity(0) == Arity::Rgb || input_arity(1) == Arity::Rgb {
                        Arity::Rgb
                    } else {
                        Arity::Scalar
                    }
                }
                NodeKind::Tile { .. } | NodeKind::BrightnessContrast => input_arity(0),
            };
        }

        // outputs must resolve with the right arity
        let check_out = |id: &str, want: Option<Arity>, what: &str| -> Result<()> {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::Invalid(format!("output references unknown node `{id}`")))?;
            if let Some(want) = want {
                if arity[i] != want {
                    return Err(Error::Invalid(format!(
                        "{what} output `{id}` must be {want:?}"
                    )));
                }
            }
            Ok(())
        };
        check_out(&outputs.albedo, None, "albedo")?;
        check_out(&outputs.roughness, Some(Arity::Scalar), "roughness")?;
        if let Some(n) = &outputs.normal {
            check_out(n, Some(Arity::Rgb), "normal")?;
        }
        if let Some(t) = &outputs.transmission {
            check_out(t, Some(Arity::Scalar), "transmission")?;
        }
        if !(0.0..=1.0).contains(&outputs.metallic) {
            return Err(Error::Invalid("metallic must be in [0,1]".into()));
        }

        Ok(MaterialGraph {
            nodes,
            edges,
            outputs,
            topo,
            inputs,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn outputs(&self) -> &Outputs {
        &self.outputs
    }

    pub(crate) fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub(crate) fn input_nodes(&self, node: usize) -> &[usize] {
        &self.inputs[node]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Flattened continuous parameter layout, node order then param order.
    pub fn theta_layout(&self) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for (ni, n) in self.nodes.iter().enumerate() {
            for (pi, p) in n.params.iter().enumerate() {
                if n.kind.param_is_continuous(pi) {
                    out.push(ParamRef {
                        node: ni,
                        param: pi,
                        name: format!("{}.{}", n.id, p.name),
                        lo: p.lo,
                        hi: p.hi,
                    });
                }
            }
        }
        out
    }

    pub fn get_theta(&self) -> Vec<f64> {
        self.theta_layout()
            .iter()
            .map(|r| self.nodes[r.node].params[r.param].value)
            .collect()
    }

    /// Set raw theta values (clamping happens at evaluation).
    pub fn set_theta(&mut self, theta: &[f64]) {
        let layout = self.theta_layout();
        assert_eq!(layout.len(), theta.len(), "theta length mismatch");
        for (r, &v) in layout.iter().zip(theta) {
            self.nodes[r.node].params[r.param].value = v;
        }
    }

    /// Clamp all stored parameter values into their bounds.
    pub fn clamp_theta(&mut self) {
        for n in &mut self.nodes {
            for p in &mut n.params {
                p.value = p.clamped();
            }
        }
    }

    /// Which theta entries are optimizable. Per-pixel shading gradients reach
    /// the albedo map only, so by default a parameter is optimizable exactly
    /// when its node has a directed path to the albedo output; parameters that
    /// only shape the roughness, normal or transmission outputs are excluded.
    /// `include_all` lifts the restriction and marks every parameter.
    pub fn optimizable_mask(&self, include_all: bool) -> Vec<bool> {
        let layout = self.theta_layout();
        if include_all {
            return vec![true; layout.len()];
        }
        let reach = self.nodes_reaching_albedo();
        layout.iter().map(|r| reach.contains(&r.node)).collect()
    }

    /// Nodes with a directed path to the albedo output.
    fn nodes_reaching_albedo(&self) -> BTreeSet<usize> {
        let mut reach: BTreeSet<usize> = BTreeSet::new();
        let mut stack: Vec<usize> = self.node_index(&self.outputs.albedo).into_iter().collect();
        while let Some(i) = stack.pop() {
            if reach.insert(i) {
                stack.extend(self.inputs[i].iter().copied());
            }
        }
        reach
    }
}

/// Evaluated texture maps at a given resolution. Normals are unit vectors in
/// tangent space; albedo and transmission are clamped to [0,1], roughness to
/// [0.01, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSet {
    pub width: usize,
    pub height: usize,
    pub albedo: Vec<[f64; 3]>,
    pub normal: Vec<[f64; 3]>,
    pub roughness: Vec<f64>,
    pub transmission: Option<Vec<f64>>,
    pub metallic: f64,
}

impl TextureSet {
    pub fn transmission_at(&self, i: usize) -> f64 {
        self.transmission.as_ref().map_or(0.0, |t| t[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> MaterialGraph {
        let nodes = vec![
            Node::new("c", NodeKind::UniformColor, &[(0.5, 0.0, 1.0); 3]),
            Node::new(
                "r",
                NodeKind::ScalarConst { fixed: true },
                &[(0.3, 0.0, 1.0)],
            ),
        ];
        MaterialGraph::new(
            nodes,
            vec![],
            Outputs {
                albedo: "c".into(),
                roughness: "r".into(),
                normal: None,
                transmission: None,
                metallic: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn theta_excludes_fixed_scalar_const() {
        let g = minimal();
        let layout = g.theta_layout();
        assert_eq!(layout.len(), 3);
        assert!(layout.iter().all(|r| r.name.starts_with("c.")));
    }

    #[test]
    fn cycle_is_rejected() {
        let nodes = vec![
            Node::new(
                "a",
                NodeKind::BrightnessContrast,
                &[(0.0, -1.0, 1.0), (1.0, 0.0, 2.0)],
            ),
            Node::new(
                "b",
                NodeKind::BrightnessContrast,
                &[(0.0, -1.0, 1.0), (1.0, 0.0, 2.0)],
            ),
            Node::new("r", NodeKind::ScalarConst { fixed: true }, &[(0.3, 0.0, 1.0)]),
        ];
        let edges = vec![
            Edge {
                from: "a".into(),
                to: "b".into(),
                port: "input".into(),
            },
            Edge {
                from: "b".into(),
                to: "a".into(),
                port: "input".into(),
            },
        ];
        let err = MaterialGraph::new(
            nodes,
            edges,
            Outputs {
                albedo: "a".into(),
                roughness: "r".into(),
                normal: None,
                transmission: None,
                metallic: 0.0,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn unconnected_port_is_rejected() {
        let nodes = vec![
            Node::new("ramp", NodeKind::ColorRamp, &[(0.0, 0.0, 1.0); 6]),
            Node::new("r", NodeKind::ScalarConst { fixed: true }, &[(0.3, 0.0, 1.0)]),
        ];
        let err = MaterialGraph::new(
            nodes,
            vec![],
            Outputs {
                albedo: "ramp".into(),
                roughness: "r".into(),
                normal: None,
                transmission: None,
                metallic: 0.0,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("unconnected"));
    }

    #[test]
    fn roughness_only_params_not_optimizable_by_default() {
        let nodes = vec![
            Node::new("c", NodeKind::UniformColor, &[(0.5, 0.0, 1.0); 3]),
            Node::new("r", NodeKind::ScalarConst { fixed: false }, &[(0.3, 0.0, 1.0)]),
        ];
        let g = MaterialGraph::new(
            nodes,
            vec![],
            Outputs {
                albedo: "c".into(),
                roughness: "r".into(),
                normal: None,
                transmission: None,
                metallic: 0.0,
            },
        )
        .unwrap();
        let mask = g.optimizable_mask(false);
        assert_eq!(mask, vec![true, true, true, false]);
        assert_eq!(g.optimizable_mask(true), vec![true; 4]);
    }
}
