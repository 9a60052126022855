//! Graph file schema: structured text (JSON) listing nodes with discrete
//! configuration and bounded continuous params, edges, and the designated
//! outputs. The writer emits a canonical sorted form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BlendMode, Edge, MaterialGraph, Node, NodeKind, Outputs, Param};

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
    outputs: OutputsDoc,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    #[serde(flatten)]
    kind: KindDoc,
    params: BTreeMap<String, ParamDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KindDoc {
    UniformColor,
    ScalarConst { fixed: bool },
    FractalNoise { octaves: u32, seed: u64, tileable: bool },
    ColorRamp,
    Blend { mode: String },
    Tile { repeats: u32 },
    HeightToNormal,
    BrightnessContrast,
}

#[derive(Serialize, Deserialize)]
struct ParamDoc {
    value: f64,
    lo: f64,
    hi: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    from: String,
    to: String,
    port: String,
}

#[derive(Serialize, Deserialize)]
struct OutputsDoc {
    albedo: String,
    roughness: String,
    normal: Option<String>,
    transmission: Option<String>,
    metallic: f64,
}

fn kind_from_doc(doc: &KindDoc) -> Result<NodeKind> {
    Ok(match doc {
        KindDoc::UniformColor => NodeKind::UniformColor,
        KindDoc::ScalarConst { fixed } => NodeKind::ScalarConst { fixed: *fixed },
        KindDoc::FractalNoise {
            octaves,
            seed,
            tileable,
        } => NodeKind::FractalNoise {
            octaves: *octaves,
            seed: *seed,
            tileable: *tileable,
        },
        KindDoc::ColorRamp => NodeKind::ColorRamp,
        KindDoc::Blend { mode } => NodeKind::Blend {
            mode: match mode.as_str() {
                "mix" => BlendMode::Mix,
                "multiply" => BlendMode::Multiply,
                other => {
                    return Err(Error::Invalid(format!("unknown blend mode `{other}`")));
                }
            },
        },
        KindDoc::Tile { repeats } => NodeKind::Tile { repeats: *repeats },
        KindDoc::HeightToNormal => NodeKind::HeightToNormal,
        KindDoc::BrightnessContrast => NodeKind::BrightnessContrast,
    })
}

fn kind_to_doc(kind: &NodeKind) -> KindDoc {
    match kind {
        NodeKind::UniformColor => KindDoc::UniformColor,
        NodeKind::ScalarConst { fixed } => KindDoc::ScalarConst { fixed: *fixed },
        NodeKind::FractalNoise {
            octaves,
            seed,
            tileable,
        } => KindDoc::FractalNoise {
            octaves: *octaves,
            seed: *seed,
            tileable: *tileable,
        },
        NodeKind::ColorRamp => KindDoc::ColorRamp,
        NodeKind::Blend { mode } => KindDoc::Blend {
            mode: match mode {
                BlendMode::Mix => "mix",
                BlendMode::Multiply => "multiply",
            }
            .to_string(),
        },
        NodeKind::Tile { repeats } => KindDoc::Tile { repeats: *repeats },
        NodeKind::HeightToNormal => KindDoc::HeightToNormal,
        NodeKind::BrightnessContrast => KindDoc::BrightnessContrast,
    }
}

pub fn graph_from_str(text: &str, origin: &Path) -> Result<MaterialGraph> {
    let doc: GraphDoc =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, "graph", e.to_string()))?;
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for nd in &doc.nodes {
        let kind = kind_from_doc(&nd.kind)?;
        let mut params = Vec::new();
        for &name in kind.param_names() {
            let pd = nd.params.get(name).ok_or_else(|| {
                Error::parse(
                    origin,
                    format!("node `{}`", nd.id),
                    format!("missing param `{name}`"),
                )
            })?;
            params.push(Param::new(name, pd.value, pd.lo, pd.hi));
        }
        for key in nd.params.keys() {
            if !kind.param_names().contains(&key.as_str()) {
                return Err(Error::parse(
                    origin,
                    format!("node `{}`", nd.id),
                    format!("unknown param `{key}`"),
                ));
            }
        }
        nodes.push(Node {
            id: nd.id.clone(),
            kind,
            params,
        });
    }
    let edges = doc
        .edges
        .into_iter()
        .map(|e| Edge {
            from: e.from,
            to: e.to,
            port: e.port,
        })
        .collect();
    let outputs = Outputs {
        albedo: doc.outputs.albedo,
        roughness: doc.outputs.roughness,
        normal: doc.outputs.normal,
        transmission: doc.outputs.transmission,
        metallic: doc.outputs.metallic,
    };
    MaterialGraph::new(nodes, edges, outputs)
        .map_err(|e| Error::parse(origin, "graph", e.to_string()))
}

pub fn graph_to_string(graph: &MaterialGraph) -> String {
    let doc = GraphDoc {
        nodes: graph
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                kind: kind_to_doc(&n.kind),
                params: n
                    .params
                    .iter()
                    .map(|p| {
                        (
                            p.name.to_string(),
                            ParamDoc {
                                value: p.value,
                                lo: p.lo,
                                hi: p.hi,
                            },
                        )
                    })
                    .collect(),
            })
            .collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| EdgeDoc {
                from: e.from.clone(),
                to: e.to.clone(),
                port: e.port.clone(),
            })
            .collect(),
        outputs: OutputsDoc {
            albedo: graph.outputs().albedo.clone(),
            roughness: graph.outputs().roughness.clone(),
            normal: graph.outputs().normal.clone(),
            transmission: graph.outputs().transmission.clone(),
            metallic: graph.outputs().metallic,
        },
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("graph serialization");
    text.push('\n');
    text
}

pub fn read_graph(path: &Path) -> Result<MaterialGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_str(&text, path)
}

pub fn write_graph(path: &Path, graph: &MaterialGraph) -> Result<()> {
    std::fs::write(path, graph_to_string(graph)).map_err(|e| Error::io(path, e))
}
