//! JSON file formats for spaces, measures, regions, and point lists, plus
//! the textual point syntax used on the command line.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minimize::Region;
use crate::paf::{DensityPiece, SignedMeasure};
use crate::space::{Edge, Location, MetricGraph, MetricSpace, PointType, SpacePoint, Vertex};

fn default_type() -> String {
    "II".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSpec {
    pub id: String,
    #[serde(rename = "type", default = "default_type")]
    pub ptype: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub u: String,
    pub v: String,
    pub length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub attach: String,
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub leaf_types: HashMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub trees: Vec<TreeSpec>,
}

pub fn parse_space_json(text: &str) -> Result<MetricSpace> {
    let file: SpaceFile = serde_json::from_str(text)
        .map_err(|e| Error::input(format!("space file: {e}")))?;
    build_space(&file)
}

pub fn build_space(file: &SpaceFile) -> Result<MetricSpace> {
    let mut vertices = Vec::new();
    let mut vertex_tree = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let add_vertex = |id: &str, ptype: PointType, tree: Option<usize>,
                          vertices: &mut Vec<Vertex>,
                          vertex_tree: &mut Vec<Option<usize>>,
                          index: &mut HashMap<String, usize>|
     -> Result<usize> {
        if index.contains_key(id) {
            return Err(Error::input(format!("duplicate vertex id {id:?}")));
        }
        vertices.push(Vertex { id: id.to_string(), ptype });
        vertex_tree.push(tree);
        index.insert(id.to_string(), vertices.len() - 1);
        Ok(vertices.len() - 1)
    };
    for v in &file.vertices {
        let pt = PointType::parse(&v.ptype)
            .map_err(|_| Error::input(format!("vertex {:?}: bad type {:?}", v.id, v.ptype)))?;
        add_vertex(&v.id, pt, None, &mut vertices, &mut vertex_tree, &mut index)?;
    }
    let mut edges = Vec::new();
    let mut edge_tree = Vec::new();
    let resolve = |id: &str, index: &HashMap<String, usize>| -> Result<usize> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::input(format!("edge endpoint {id:?} is not a declared vertex")))
    };
    for e in &file.edges {
        edges.push(Edge {
            id: e.id.clone(),
            u: resolve(&e.u, &index)?,
            v: resolve(&e.v, &index)?,
            length: e.length,
        });
        edge_tree.push(None);
    }
    let mut tree_attach = Vec::new();
    for (ti, t) in file.trees.iter().enumerate() {
        let attach = *index
            .get(&t.attach)
            .ok_or_else(|| Error::input(format!("tree attach {:?} is not a skeleton vertex", t.attach)))?;
        if vertex_tree[attach].is_some() {
            return Err(Error::input(format!(
                "tree attach {:?} must be a skeleton vertex",
                t.attach
            )));
        }
        tree_attach.push(attach);
        for v in &t.vertices {
            let named = t.leaf_types.get(&v.id).cloned().unwrap_or_else(|| v.ptype.clone());
            let pt = PointType::parse(&named)
                .map_err(|_| Error::input(format!("tree vertex {:?}: bad type {:?}", v.id, named)))?;
            add_vertex(&v.id, pt, Some(ti), &mut vertices, &mut vertex_tree, &mut index)?;
        }
        for key in t.leaf_types.keys() {
            if !index.contains_key(key) {
                return Err(Error::input(format!(
                    "leaf_types names unknown vertex {key:?}"
                )));
            }
        }
        for e in &t.edges {
            edges.push(Edge {
                id: e.id.clone(),
                u: resolve(&e.u, &index)?,
                v: resolve(&e.v, &index)?,
                length: e.length,
            });
            edge_tree.push(Some(ti));
        }
    }
    let graph = MetricGraph::new(vertices, edges)?;
    MetricSpace::from_parts(graph, vertex_tree, edge_tree, tree_attach)
}

pub fn space_to_file(space: &MetricSpace) -> SpaceFile {
    let g = &space.graph;
    let vs = |v: usize| VertexSpec {
        id: g.vertices[v].id.clone(),
        ptype: g.vertices[v].ptype.as_str().to_string(),
    };
    let es = |e: usize| EdgeSpec {
        id: g.edges[e].id.clone(),
        u: g.vertices[g.edges[e].u].id.clone(),
        v: g.vertices[g.edges[e].v].id.clone(),
        length: g.edges[e].length,
    };
    let vertices = (0..g.vertices.len())
        .filter(|&v| space.vertex_tree[v].is_none())
        .map(vs)
        .collect();
    let edges = (0..g.edges.len())
        .filter(|&e| space.edge_tree[e].is_none())
        .map(es)
        .collect();
    let trees = space
        .tree_attach
        .iter()
        .enumerate()
        .map(|(ti, &attach)| TreeSpec {
            attach: g.vertices[attach].id.clone(),
            vertices: (0..g.vertices.len())
                .filter(|&v| space.vertex_tree[v] == Some(ti))
                .map(vs)
                .collect(),
            edges: (0..g.edges.len())
                .filter(|&e| space.edge_tree[e] == Some(ti))
                .map(es)
                .collect(),
            leaf_types: HashMap::new(),
        })
        .collect();
    SpaceFile { vertices, edges, trees }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum PointSpec {
    Vertex { vertex: String },
    Interior { edge: String, offset: f64 },
    /// Arc position on a circle skeleton (elliptic models only).
    Circle { circle: f64 },
}

pub fn resolve_point(space: &MetricSpace, spec: &PointSpec) -> Result<SpacePoint> {
    match spec {
        PointSpec::Vertex { vertex } => space
            .vertex_by_id(vertex)
            .map(SpacePoint::vertex)
            .ok_or_else(|| Error::input(format!("unknown vertex {vertex:?}"))),
        PointSpec::Interior { edge, offset } => {
            let e = space
                .edge_by_id(edge)
                .ok_or_else(|| Error::input(format!("unknown edge {edge:?}")))?;
            space.on_edge(e, *offset)
        }
        PointSpec::Circle { .. } => Err(Error::input(
            "circle positions are only valid for elliptic models",
        )),
    }
}

pub fn point_to_spec(space: &MetricSpace, p: SpacePoint) -> PointSpec {
    match p.loc {
        Location::Vertex(v) => PointSpec::Vertex { vertex: space.graph.vertices[v].id.clone() },
        Location::Interior { edge, offset } => PointSpec::Interior {
            edge: space.graph.edges[edge].id.clone(),
            offset,
        },
    }
}

/// CLI point syntax: a vertex id, or `edge:offset`.
pub fn parse_point_str(space: &MetricSpace, s: &str) -> Result<SpacePoint> {
    if let Some(v) = space.vertex_by_id(s) {
        return Ok(SpacePoint::vertex(v));
    }
    if let Some((eid, off)) = s.rsplit_once(':') {
        let e = space
            .edge_by_id(eid)
            .ok_or_else(|| Error::input(format!("point {s:?}: unknown edge {eid:?}")))?;
        let t: f64 = off
            .parse()
            .map_err(|_| Error::input(format!("point {s:?}: bad offset {off:?}")))?;
        return space.on_edge(e, t);
    }
    Err(Error::input(format!("point {s:?}: not a vertex id or edge:offset")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: PointSpec,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub edge: String,
    pub from: f64,
    pub to: f64,
    pub density: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub densities: Vec<DensitySpec>,
}

pub fn parse_measure_json(space: &MetricSpace, text: &str) -> Result<SignedMeasure> {
    let file: MeasureFile = serde_json::from_str(text)
        .map_err(|e| Error::input(format!("measure file: {e}")))?;
    build_measure(space, &file)
}

pub fn build_measure(space: &MetricSpace, file: &MeasureFile) -> Result<SignedMeasure> {
    let mut m = SignedMeasure::default();
    for a in &file.atoms {
        m.atoms.push((resolve_point(space, &a.point)?, a.weight));
    }
    for d in &file.densities {
        let e = space
            .edge_by_id(&d.edge)
            .ok_or_else(|| Error::input(format!("density: unknown edge {:?}", d.edge)))?;
        m.densities.push(DensityPiece { edge: e, from: d.from, to: d.to, density: d.density });
    }
    m.validate(space)?;
    Ok(m)
}

pub fn measure_to_file(space: &MetricSpace, m: &SignedMeasure) -> MeasureFile {
    MeasureFile {
        atoms: m
            .atoms
            .iter()
            .map(|&(p, w)| AtomSpec { point: point_to_spec(space, p), weight: w })
            .collect(),
        densities: m
            .densities
            .iter()
            .map(|d| DensitySpec {
                edge: space.graph.edges[d.edge].id.clone(),
                from: d.from,
                to: d.to,
                density: d.density,
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub edge: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionFile {
    #[serde(default)]
    pub vertices: Vec<String>,
    #[serde(default)]
    pub segments: Vec<SegmentSpec>,
}

pub fn parse_region_json(space: &MetricSpace, text: &str) -> Result<Region> {
    let file: RegionFile = serde_json::from_str(text)
        .map_err(|e| Error::input(format!("region file: {e}")))?;
    let mut region = Region::default();
    for v in &file.vertices {
        region.vertices.push(
            space
                .vertex_by_id(v)
                .ok_or_else(|| Error::input(format!("region: unknown vertex {v:?}")))?,
        );
    }
    for s in &file.segments {
        let e = space
            .edge_by_id(&s.edge)
            .ok_or_else(|| Error::input(format!("region: unknown edge {:?}", s.edge)))?;
        let len = space.graph.edges[e].length;
        if !(s.from >= 0.0 && s.to <= len && s.from < s.to) {
            return Err(Error::input(format!(
                "region segment [{}, {}] invalid on edge {:?}",
                s.from, s.to, s.edge
            )));
        }
        region.segments.push((e, s.from, s.to));
    }
    if region.vertices.is_empty() && region.segments.is_empty() {
        return Err(Error::input("region is empty"));
    }
    Ok(region)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsFile {
    pub points: Vec<PointSpec>,
}

pub fn parse_points_json(text: &str) -> Result<PointsFile> {
    serde_json::from_str(text).map_err(|e| Error::input(format!("points file: {e}")))
}
