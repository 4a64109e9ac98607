//! Metric graphs and the ambient spaces they sit in.
//!
//! A `MetricGraph` is a connected multigraph with positive edge lengths and no
//! loop edges (parallel edges are allowed; a circle is two parallel edges).
//! A `MetricSpace` is a skeleton graph together with finitely many hanging
//! trees, each attached to the skeleton at a single vertex.  Points carry a
//! type tag: edge-interior points are type III, vertices default to type II,
//! and leaves of hanging trees may be tagged type I.

use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};

pub const GEOM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointType {
    I,
    II,
    III,
}

impl PointType {
    pub fn parse(s: &str) -> Result<PointType> {
        match s {
            "I" => Ok(PointType::I),
            "II" => Ok(PointType::II),
            "III" => Ok(PointType::III),
            other => Err(Error::input(format!("unknown point type {other:?}"))),
        }
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            PointType::I => "I",
            PointType::II => "II",
            PointType::III => "III",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Vertex {
    pub id: String,
    pub ptype: PointType,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub id: String,
    pub u: usize,
    pub v: usize,
    pub length: f64,
}

/// Connected multigraph with positive edge lengths and no loop edges.
#[derive(Clone, Debug)]
pub struct MetricGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>, // vertex -> [(edge index, neighbor)]
}

impl MetricGraph {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Result<MetricGraph> {
        if vertices.is_empty() {
            return Err(Error::input("graph must have at least one vertex"));
        }
        let mut seen = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if seen.insert(v.id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vertex id {:?}", v.id)));
            }
        }
        let mut eids = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            if eids.insert(e.id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate edge id {:?}", e.id)));
            }
            if e.u >= vertices.len() || e.v >= vertices.len() {
                return Err(Error::input(format!("edge {:?} references a missing vertex", e.id)));
            }
            if e.u == e.v {
                return Err(Error::input(format!("edge {:?} is a loop edge (u == v)", e.id)));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(Error::input(format!(
                    "edge {:?} has non-positive length {}",
                    e.id, e.length
                )));
            }
        }
        let mut adj = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            adj[e.u].push((i, e.v));
            adj[e.v].push((i, e.u));
        }
        let g = MetricGraph { vertices, edges, adj };
        if !g.is_connected() {
            return Err(Error::input("graph is not connected"));
        }
        Ok(g)
    }

    pub fn adjacency(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(_, w) in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().all(|&b| b)
    }

    /// True for acyclic connected graphs.
    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.vertices.len()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Single-source shortest path distances over the vertex set.
    pub fn dijkstra(&self, src: usize) -> Vec<f64> {
        self.dijkstra_pred(src).0
    }

    /// Distances plus predecessor links `(previous vertex, via edge)`.
    pub fn dijkstra_pred(&self, src: usize) -> (Vec<f64>, Vec<Option<(usize, usize)>>) {
        let n = self.vertices.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem { dist: 0.0, vertex: src });
        while let Some(HeapItem { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] + GEOM_TOL {
                continue;
            }
            for &(e, w) in &self.adj[v] {
                let nd = d + self.edges[e].length;
                if nd < dist[w] {
                    dist[w] = nd;
                    pred[w] = Some((v, e));
                    heap.push(HeapItem { dist: nd, vertex: w });
                }
            }
        }
        (dist, pred)
    }
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: usize,
}
impl Eq for HeapItem {}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap by distance, tie-break on vertex index for determinism
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.vertex.cmp(&self.vertex))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A point of a metric space: either a vertex or an edge-interior position.
/// Constructors canonicalize offsets 0 and `length` to the endpoint vertices,
/// so equality and hashing are exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    Vertex(usize),
    Interior { edge: usize, offset: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct SpacePoint {
    pub loc: Location,
}

impl PartialEq for SpacePoint {
    fn eq(&self, other: &Self) -> bool {
        match (self.loc, other.loc) {
            (Location::Vertex(a), Location::Vertex(b)) => a == b,
            (
                Location::Interior { edge: e1, offset: t1 },
                Location::Interior { edge: e2, offset: t2 },
            ) => e1 == e2 && t1.to_bits() == t2.to_bits(),
            _ => false,
        }
    }
}
impl Eq for SpacePoint {}
impl std::hash::Hash for SpacePoint {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self.loc {
            Location::Vertex(v) => {
                0u8.hash(state);
                v.hash(state);
            }
            Location::Interior { edge, offset } => {
                1u8.hash(state);
                edge.hash(state);
                offset.to_bits().hash(state);
            }
        }
    }
}

impl SpacePoint {
    pub fn vertex(v: usize) -> SpacePoint {
        SpacePoint { loc: Location::Vertex(v) }
    }
}

/// Result of a shortest-path query: the distance and the breakpoints of one
/// geodesic realizing it (endpoints included).
#[derive(Clone, Debug)]
pub struct PathMetricResult {
    pub distance: f64,
    pub path: Vec<SpacePoint>,
}

/// Skeleton plus hanging trees, stored as one combined graph with provenance
/// tags.  Vertex/edge index spaces are shared between skeleton and trees.
#[derive(Clone, Debug)]
pub struct MetricSpace {
    pub graph: MetricGraph,
    /// For each vertex: `None` if on the skeleton, else the hanging tree index.
    pub vertex_tree: Vec<Option<usize>>,
    /// Same tagging for edges.
    pub edge_tree: Vec<Option<usize>>,
    /// Attach vertex (a skeleton vertex) of each hanging tree.
    pub tree_attach: Vec<usize>,
    vertex_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
}

impl MetricSpace {
    /// A space whose skeleton is the whole graph (no hanging trees).
    pub fn skeleton_only(graph: MetricGraph) -> MetricSpace {
        let nv = graph.vertices.len();
        let ne = graph.edges.len();
        let mut s = MetricSpace {
            graph,
            vertex_tree: vec![None; nv],
            edge_tree: vec![None; ne],
            tree_attach: Vec::new(),
            vertex_index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        s.rebuild_index();
        s
    }

    pub fn from_parts(
        graph: MetricGraph,
        vertex_tree: Vec<Option<usize>>,
        edge_tree: Vec<Option<usize>>,
        tree_attach: Vec<usize>,
    ) -> Result<MetricSpace> {
        let mut s = MetricSpace {
            graph,
            vertex_tree,
            edge_tree,
            tree_attach,
            vertex_index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        s.rebuild_index();
        s.validate()?;
        Ok(s)
    }

    fn rebuild_index(&mut self) {
        self.vertex_index = self
            .graph
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
        self.edge_index = self
            .graph
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
    }

    fn validate(&self) -> Result<()> {
        let g = &self.graph;
        if self.vertex_tree.len() != g.vertices.len() || self.edge_tree.len() != g.edges.len() {
            return Err(Error::input("provenance tags do not match graph size"));
        }
        for (i, t) in self.tree_attach.iter().enumerate() {
            if *t >= g.vertices.len() || self.vertex_tree[*t].is_some() {
                return Err(Error::input(format!(
                    "tree {i} attach vertex must be a skeleton vertex"
                )));
            }
        }
        // Tree edges must connect vertices of the same tree (or its attach vertex),
        // and each tree (with its attach vertex) must be acyclic and connected.
        for (ti, &attach) in self.tree_attach.iter().enumerate() {
            let verts: Vec<usize> = (0..g.vertices.len())
                .filter(|&v| self.vertex_tree[v] == Some(ti))
                .collect();
            let edges: Vec<usize> = (0..g.edges.len())
                .filter(|&e| self.edge_tree[e] == Some(ti))
                .collect();
            if edges.len() != verts.len() {
                return Err(Error::input(format!("tree {ti} is not a tree (edge count)")));
            }
            for &e in &edges {
                let ed = &g.edges[e];
                for &end in &[ed.u, ed.v] {
                    let ok = end == attach || self.vertex_tree[end] == Some(ti);
                    if !ok {
                        return Err(Error::input(format!(
                            "tree {ti} edge {:?} leaves the tree",
                            ed.id
                        )));
                    }
                }
            }
            // connectivity of the tree component
            let mut seen: HashMap<usize, bool> = verts.iter().map(|&v| (v, false)).collect();
            seen.insert(attach, true);
            let mut stack = vec![attach];
            while let Some(v) = stack.pop() {
                for &(e, w) in g.adjacency(v) {
                    if self.edge_tree[e] == Some(ti) {
                        if let Some(flag) = seen.get_mut(&w) {
                            if !*flag {
                                *flag = true;
                                stack.push(w);
                            }
                        }
                    }
                }
            }
            if seen.values().any(|&b| !b) {
                return Err(Error::input(format!("tree {ti} is not connected to its attach vertex")));
            }
        }
        // skeleton edges must join skeleton vertices
        for (e, t) in self.edge_tree.iter().enumerate() {
            if t.is_none() {
                let ed = &g.edges[e];
                if self.vertex_tree[ed.u].is_some() || self.vertex_tree[ed.v].is_some() {
                    return Err(Error::input(format!(
                        "skeleton edge {:?} touches a tree vertex",
                        ed.id
                    )));
                }
            }
        }
        // type-I tags only on hanging-tree leaves
        for (v, vx) in g.vertices.iter().enumerate() {
            if vx.ptype == PointType::I {
                let on_tree = self.vertex_tree[v].is_some();
                if !on_tree || g.degree(v) != 1 {
                    return Err(Error::input(format!(
                        "vertex {:?} is type I but not a hanging-tree leaf",
                        vx.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vertex_by_id(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }
    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    /// Canonical point on an edge: offsets at the ends collapse to vertices.
    pub fn on_edge(&self, edge: usize, offset: f64) -> Result<SpacePoint> {
        let e = self
            .graph
            .edges
            .get(edge)
            .ok_or_else(|| Error::input(format!("edge index {edge} out of range")))?;
        if !offset.is_finite() || offset < -GEOM_TOL || offset > e.length + GEOM_TOL {
            return Err(Error::input(format!(
                "offset {offset} outside [0, {}] on edge {:?}",
                e.length, e.id
            )));
        }
        if offset <= GEOM_TOL {
            Ok(SpacePoint::vertex(e.u))
        } else if offset >= e.length - GEOM_TOL {
            Ok(SpacePoint::vertex(e.v))
        } else {
            Ok(SpacePoint { loc: Location::Interior { edge, offset } })
        }
    }

    pub fn point_type(&self, p: SpacePoint) -> PointType {
        match p.loc {
            Location::Vertex(v) => self.graph.vertices[v].ptype,
            Location::Interior { .. } => PointType::III,
        }
    }

    /// Tree index of the point's location, `None` if on the skeleton.
    pub fn tree_of(&self, p: SpacePoint) -> Option<usize> {
        match p.loc {
            Location::Vertex(v) => self.vertex_tree[v],
            Location::Interior { edge, .. } => self.edge_tree[edge],
        }
    }

    pub fn describe_point(&self, p: SpacePoint) -> String {
        match p.loc {
            Location::Vertex(v) => self.graph.vertices[v].id.clone(),
            Location::Interior { edge, offset } => {
                format!("{}:{}", self.graph.edges[edge].id, offset)
            }
        }
    }

    /// Endpoint vertices of the point's edge with the distance to each;
    /// a vertex point is its own single "endpoint" at distance zero.
    fn anchor(&self, p: SpacePoint) -> Vec<(usize, f64)> {
        match p.loc {
            Location::Vertex(v) => vec![(v, 0.0)],
            Location::Interior { edge, offset } => {
                let e = &self.graph.edges[edge];
                vec![(e.u, offset), (e.v, e.length - offset)]
            }
        }
    }

    /// Shortest-path (skeletal) distance.
    pub fn rho(&self, x: SpacePoint, y: SpacePoint) -> f64 {
        if x == y {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        if let (Location::Interior { edge: e1, offset: t1 }, Location::Interior { edge: e2, offset: t2 }) =
            (x.loc, y.loc)
        {
            if e1 == e2 {
                best = (t1 - t2).abs();
            }
        }
        let ax = self.anchor(x);
        let ay = self.anchor(y);
        for &(a, da) in &ax {
            let dist = self.graph.dijkstra(a);
            for &(b, db) in &ay {
                let d = da + dist[b] + db;
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// Distance with the breakpoints of one realizing geodesic.
    pub fn rho_path(&self, x: SpacePoint, y: SpacePoint) -> PathMetricResult {
        if x == y {
            return PathMetricResult { distance: 0.0, path: vec![x] };
        }
        let mut best = f64::INFINITY;
        let mut direct = false;
        if let (Location::Interior { edge: e1, offset: t1 }, Location::Interior { edge: e2, offset: t2 }) =
            (x.loc, y.loc)
        {
            if e1 == e2 {
                best = (t1 - t2).abs();
                direct = true;
            }
        }
        let ax = self.anchor(x);
        let ay = self.anchor(y);
        let mut chosen: Option<(usize, f64, usize, f64, Vec<Option<(usize, usize)>>)> = None;
        for &(a, da) in &ax {
            let (dist, pred) = self.graph.dijkstra_pred(a);
            for &(b, db) in &ay {
                let d = da + dist[b] + db;
                if d < best - GEOM_TOL {
                    best = d;
                    direct = false;
                    chosen = Some((a, da, b, db, pred.clone()));
                }
            }
        }
        if direct || chosen.is_none() {
            return PathMetricResult { distance: best, path: vec![x, y] };
        }
        let (a, _da, b, _db, pred) = chosen.unwrap();
        let mut verts = vec![b];
        let mut cur = b;
        while cur != a {
            let (p, _) = pred[cur].expect("predecessor chain broken");
            verts.push(p);
            cur = p;
        }
        verts.reverse(); // a ... b
        let mut path = Vec::new();
        if x != SpacePoint::vertex(a) {
            path.push(x);
        }
        for v in verts {
            path.push(SpacePoint::vertex(v));
        }
        if y != SpacePoint::vertex(b) {
            path.push(y);
        }
        PathMetricResult { distance: best, path }
    }

    /// Retraction onto the skeleton: identity for skeleton points, attach
    /// vertex for points on a hanging tree.
    pub fn retract(&self, p: SpacePoint) -> SpacePoint {
        match self.tree_of(p) {
            None => p,
            Some(t) => SpacePoint::vertex(self.tree_attach[t]),
        }
    }

    /// Distance from each vertex to an arbitrary point.
    pub fn dist_to_point(&self, target: SpacePoint) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.graph.vertices.len()];
        for (a, da) in self.anchor(target) {
            let dist = self.graph.dijkstra(a);
            for (v, o) in out.iter_mut().enumerate() {
                let d = da + dist[v];
                if d < *o {
                    *o = d;
                }
            }
        }
        out
    }

    /// The point at distance `s` from `x` along a shortest path to `target`.
    /// `s` is clamped to `[0, rho(x, target)]`.
    pub fn walk_toward(&self, x: SpacePoint, target: SpacePoint, s: f64) -> SpacePoint {
        let total = self.rho(x, target);
        if s <= GEOM_TOL {
            return x;
        }
        if s >= total - GEOM_TOL {
            return target;
        }
        let dt = self.dist_to_point(target);
        let mut cur = x;
        let mut rem = s;
        loop {
            match cur.loc {
                Location::Interior { edge, offset } => {
                    let e = &self.graph.edges[edge];
                    // candidate moves: toward u, toward v, or straight to the
                    // target if it sits on the same edge
                    let mut best_total = offset + dt[e.u];
                    let mut leg = offset;
                    let mut next = 0usize; // 0: to u, 1: to v, 2: direct
                    let mut aim_u = true;
                    let tv = (e.length - offset) + dt[e.v];
                    if tv < best_total {
                        best_total = tv;
                        leg = e.length - offset;
                        next = 1;
                        aim_u = false;
                    }
                    if let Location::Interior { edge: e2, offset: tt } = target.loc {
                        if e2 == edge {
                            let td = (offset - tt).abs();
                            if td < best_total {
                                leg = td;
                                next = 2;
                                aim_u = tt < offset;
                            }
                        }
                    }
                    if rem <= leg + GEOM_TOL {
                        let no = if aim_u { offset - rem } else { offset + rem };
                        return self.on_edge(edge, no).expect("walk stayed on edge");
                    }
                    rem -= leg;
                    cur = match next {
                        0 => SpacePoint::vertex(e.u),
                        1 => SpacePoint::vertex(e.v),
                        _ => unreachable!("direct move always absorbs the remainder"),
                    };
                }
                Location::Vertex(w) => {
                    let mut best_total = f64::INFINITY;
                    let mut choice: Option<(usize, f64, usize, bool)> = None; // (edge, leg, nextvertex, from_u)
                    for &(eidx, z) in self.graph.adjacency(w) {
                        let e = &self.graph.edges[eidx];
                        let from_u = e.u == w;
                        // through the whole edge
                        let t = e.length + dt[z];
                        if t < best_total {
                            best_total = t;
                            choice = Some((eidx, e.length, z, from_u));
                        }
                        // ending inside this edge at the target
                        if let Location::Interior { edge: e2, offset: tt } = target.loc {
                            if e2 == eidx {
                                let leg = if from_u { tt } else { e.length - tt };
                                if leg < best_total {
                                    best_total = leg;
                                    choice = Some((eidx, leg, z, from_u));
                                }
                            }
                        }
                    }
                    let (eidx, leg, z, from_u) =
                        choice.expect("walk from vertex with no incident edges");
                    if rem <= leg + GEOM_TOL {
                        let e = &self.graph.edges[eidx];
                        let no = if from_u { rem } else { e.length - rem };
                        return self.on_edge(eidx, no).expect("walk stayed on edge");
                    }
                    rem -= leg;
                    cur = SpacePoint::vertex(z);
                }
            }
        }
    }

    /// First common point of the paths from `x` and from `y` to `zeta`, for
    /// queries inside a uniquely path-connected region.
    pub fn meet(&self, zeta: SpacePoint, x: SpacePoint, y: SpacePoint) -> Result<SpacePoint> {
        let tree_ok = self.graph.is_tree();
        let fiber_ok = {
            let r = self.retract(x);
            r == self.retract(y) && r == self.retract(zeta)
        };
        if !tree_ok && !fiber_ok {
            return Err(Error::domain(
                "meet point requires a uniquely path-connected region \
                 (a tree, or one retraction fiber)",
            ));
        }
        let dxz = self.rho(x, zeta);
        let dyz = self.rho(y, zeta);
        let dxy = self.rho(x, y);
        let m = 0.5 * (dxz + dyz - dxy); // distance from zeta to the meet
        let w = self.walk_toward(x, zeta, (dxz - m).max(0.0));
        let w2 = self.walk_toward(y, zeta, (dyz - m).max(0.0));
        if self.rho(w, w2) > 1e-9 {
            return Err(Error::domain("meet point is ambiguous (paths disagree)"));
        }
        Ok(w)
    }

    /// New space with the given points added as vertices (type III for edge
    /// interiors).  Lengths of subdivided edges sum to the original length.
    pub fn refine(&self, points: &[SpacePoint]) -> MetricSpace {
        let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); self.graph.edges.len()];
        for p in points {
            if let Location::Interior { edge, offset } = p.loc {
                cuts[edge].push(offset);
            }
        }
        let mut vertices = self.graph.vertices.clone();
        let mut vertex_tree = self.vertex_tree.clone();
        let mut edges = Vec::new();
        let mut edge_tree = Vec::new();
        for (eidx, e) in self.graph.edges.iter().enumerate() {
            let mut c = cuts[eidx].clone();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            c.dedup_by(|a, b| (*a - *b).abs() <= GEOM_TOL);
            c.retain(|&t| t > GEOM_TOL && t < e.length - GEOM_TOL);
            if c.is_empty() {
                edges.push(e.clone());
                edge_tree.push(self.edge_tree[eidx]);
                continue;
            }
            let mut nodes = vec![(e.u, 0.0)];
            for (k, &t) in c.iter().enumerate() {
                let vid = format!("{}@{}", e.id, k);
                vertices.push(Vertex { id: vid, ptype: PointType::III });
                vertex_tree.push(self.edge_tree[eidx]);
                nodes.push((vertices.len() - 1, t));
            }
            nodes.push((e.v, e.length));
            for k in 0..nodes.len() - 1 {
                let (a, ta) = nodes[k];
                let (b, tb) = nodes[k + 1];
                edges.push(Edge {
                    id: format!("{}#{}", e.id, k),
                    u: a,
                    v: b,
                    length: tb - ta,
                });
                edge_tree.push(self.edge_tree[eidx]);
            }
        }
        let graph = MetricGraph::new(vertices, edges).expect("refinement preserves validity");
        MetricSpace::from_parts(graph, vertex_tree, edge_tree, self.tree_attach.clone())
            .expect("refinement preserves structure")
    }

    /// Vertices (except type-I leaves) plus equally spaced edge-interior
    /// points so that consecutive mesh points along an edge are at most `h`
    /// apart: `ceil(length/h) - 1` interior points per edge.
    pub fn mesh(&self, h: f64) -> Vec<SpacePoint> {
        assert!(h > 0.0, "mesh spacing must be positive");
        let mut out = Vec::new();
        for (v, vx) in self.graph.vertices.iter().enumerate() {
            if vx.ptype != PointType::I {
                out.push(SpacePoint::vertex(v));
            }
        }
        for (eidx, e) in self.graph.edges.iter().enumerate() {
            let k = (e.length / h - GEOM_TOL).ceil().max(1.0) as usize;
            let step = e.length / k as f64;
            for i in 1..k {
                out.push(SpacePoint {
                    loc: Location::Interior { edge: eidx, offset: step * i as f64 },
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn segment(l: f64) -> MetricSpace {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![Edge { id: "e".into(), u: 0, v: 1, length: l }],
        )
        .unwrap();
        MetricSpace::skeleton_only(g)
    }

    fn circle(l0: f64, l1: f64) -> MetricSpace {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![
                Edge { id: "e0".into(), u: 0, v: 1, length: l0 },
                Edge { id: "e1".into(), u: 0, v: 1, length: l1 },
            ],
        )
        .unwrap();
        MetricSpace::skeleton_only(g)
    }

    /// Segment with a hanging Y-tree at "b": b--c (len d), c--p and c--q.
    fn tree_space(d: f64, a: f64, c: f64) -> MetricSpace {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
                Vertex { id: "c".into(), ptype: PointType::II },
                Vertex { id: "p".into(), ptype: PointType::I },
                Vertex { id: "q".into(), ptype: PointType::I },
            ],
            vec![
                Edge { id: "e".into(), u: 0, v: 1, length: 1.0 },
                Edge { id: "t0".into(), u: 1, v: 2, length: d },
                Edge { id: "t1".into(), u: 2, v: 3, length: a },
                Edge { id: "t2".into(), u: 2, v: 4, length: c },
            ],
        )
        .unwrap();
        MetricSpace::from_parts(
            g,
            vec![None, None, Some(0), Some(0), Some(0)],
            vec![None, Some(0), Some(0), Some(0)],
            vec![1],
        )
        .unwrap()
    }

    #[test]
    fn rejects_loops_and_disconnected() {
        let err = MetricGraph::new(
            vec![Vertex { id: "a".into(), ptype: PointType::II }],
            vec![Edge { id: "e".into(), u: 0, v: 0, length: 1.0 }],
        );
        assert!(err.is_err());
        let err = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![],
        );
        assert!(err.is_err());
        let err = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![Edge { id: "e".into(), u: 0, v: 1, length: 0.0 }],
        );
        assert!(err.is_err());
    }

    #[test]
    fn type_i_only_on_leaves() {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::I },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![Edge { id: "e".into(), u: 0, v: 1, length: 1.0 }],
        )
        .unwrap();
        assert!(MetricSpace::from_parts(g, vec![None, None], vec![None], vec![]).is_err());
    }

    #[test]
    fn rho_on_segment_and_circle() {
        let s = segment(2.0);
        let x = s.on_edge(0, 0.5).unwrap();
        let y = s.on_edge(0, 1.75).unwrap();
        assert!((s.rho(x, y) - 1.25).abs() < 1e-15);
        assert!((s.rho(SpacePoint::vertex(0), SpacePoint::vertex(1)) - 2.0).abs() < 1e-15);

        let c = circle(1.0, 2.0);
        // points near both ends of the long edge: shorter to go around
        let p = c.on_edge(1, 0.1).unwrap();
        let q = c.on_edge(1, 1.9).unwrap();
        assert!((c.rho(p, q) - 1.2).abs() < 1e-12);
        // same edge direct
        let r = c.on_edge(1, 0.6).unwrap();
        assert!((c.rho(p, r) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rho_metric_axioms_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let s = crate::testgen::random_space(&mut rng, 7);
            for _ in 0..10 {
                let x = crate::testgen::random_point(&mut rng, &s, true);
                let y = crate::testgen::random_point(&mut rng, &s, true);
                let z = crate::testgen::random_point(&mut rng, &s, true);
                assert!((s.rho(x, y) - s.rho(y, x)).abs() <= 1e-12);
                assert!(s.rho(x, x).abs() <= 1e-12);
                assert!(s.rho(x, z) <= s.rho(x, y) + s.rho(y, z) + 1e-12);
            }
        }
    }

    #[test]
    fn path_gaps_sum_to_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = crate::testgen::random_space(&mut rng, 6);
            let x = crate::testgen::random_point(&mut rng, &s, true);
            let y = crate::testgen::random_point(&mut rng, &s, true);
            let r = s.rho_path(x, y);
            let sum: f64 = r
                .path
                .windows(2)
                .map(|w| s.rho(w[0], w[1]))
                .sum();
            assert!((sum - r.distance).abs() <= 1e-9, "gap sum {sum} vs {}", r.distance);
        }
    }

    #[test]
    fn retract_and_idempotence() {
        let s = tree_space(0.5, 0.25, 0.75);
        let p = SpacePoint::vertex(3);
        let r = s.retract(p);
        assert_eq!(r, SpacePoint::vertex(1));
        assert_eq!(s.retract(r), r);
        // skeleton point is fixed
        let x = s.on_edge(0, 0.3).unwrap();
        assert_eq!(s.retract(x), x);
    }

    #[test]
    fn meet_on_segment() {
        // segment [0,3]: zeta at 0, x at 1, y at 2 -> meet at 1
        let s = segment(3.0);
        let zeta = SpacePoint::vertex(0);
        let x = s.on_edge(0, 1.0).unwrap();
        let y = s.on_edge(0, 2.0).unwrap();
        let w = s.meet(zeta, x, y).unwrap();
        assert!((s.rho(w, x)).abs() < 1e-12);
    }

    #[test]
    fn meet_in_fiber_and_ambiguous() {
        let s = tree_space(0.5, 0.25, 0.75);
        // P and Q branch at c, distance 0.5 below the attachment b
        let w = s.meet(SpacePoint::vertex(1), SpacePoint::vertex(3), SpacePoint::vertex(4)).unwrap();
        assert_eq!(w, SpacePoint::vertex(2));
        // a circle is not uniquely path connected
        let c = circle(1.0, 1.0);
        assert!(c
            .meet(SpacePoint::vertex(0), c.on_edge(0, 0.5).unwrap(), c.on_edge(1, 0.5).unwrap())
            .is_err());
    }

    #[test]
    fn refine_adds_vertices_and_preserves_rho() {
        let s = segment(2.0);
        let cut = s.on_edge(0, 0.75).unwrap();
        let r = s.refine(&[cut]);
        assert_eq!(r.graph.vertices.len(), 3);
        assert_eq!(r.graph.edges.len(), 2);
        let total: f64 = r.graph.edges.iter().map(|e| e.length).sum();
        assert!((total - 2.0).abs() <= 1e-12);
        // refining at an existing vertex is a no-op
        let r2 = s.refine(&[SpacePoint::vertex(0)]);
        assert_eq!(r2.graph.vertices.len(), 2);
        // distances preserved between original vertices
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let sp = crate::testgen::random_space(&mut rng, 6);
            let p = crate::testgen::random_point(&mut rng, &sp, true);
            let rp = sp.refine(&[p]);
            for a in 0..sp.graph.vertices.len() {
                for b in 0..sp.graph.vertices.len() {
                    let d0 = sp.rho(SpacePoint::vertex(a), SpacePoint::vertex(b));
                    let d1 = rp.rho(SpacePoint::vertex(a), SpacePoint::vertex(b));
                    assert!((d0 - d1).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mesh_counts() {
        // segment [0,1], h=0.5: endpoints plus one interior point
        let s = segment(1.0);
        assert_eq!(s.mesh(0.5).len(), 3);
        // ceil(length/h) - 1 interior points per edge
        let c = circle(1.0, 2.0);
        let m = c.mesh(0.5);
        assert_eq!(m.len(), 2 + 1 + 3);
        // type-I leaves excluded, incident edges still meshed
        let t = tree_space(0.5, 0.25, 0.75);
        let mt = t.mesh(10.0);
        assert!(mt.iter().all(|&p| t.point_type(p) != PointType::I));
        assert_eq!(mt.len(), 3); // only the non-type-I vertices at this coarse spacing
        // edges into type-I leaves still receive interior points
        let fine = t.mesh(0.2);
        assert!(fine
            .iter()
            .any(|&p| matches!(p.loc, Location::Interior { edge: 2, .. })));
    }

    proptest::proptest! {
        #[test]
        fn rho_is_a_metric_on_the_circle(
            ea in 0usize..2, ta in 0.0f64..1.0,
            eb in 0usize..2, tb in 0.0f64..1.0,
            ec in 0usize..2, tc in 0.0f64..1.0,
        ) {
            let g = MetricGraph::new(
                vec![
                    Vertex { id: "o".into(), ptype: PointType::II },
                    Vertex { id: "m".into(), ptype: PointType::II },
                ],
                vec![
                    Edge { id: "c0".into(), u: 0, v: 1, length: 1.0 },
                    Edge { id: "c1".into(), u: 0, v: 1, length: 1.0 },
                ],
            )
            .unwrap();
            let s = MetricSpace::skeleton_only(g);
            let a = s.on_edge(ea, ta).unwrap();
            let b = s.on_edge(eb, tb).unwrap();
            let c = s.on_edge(ec, tc).unwrap();
            proptest::prop_assert!(s.rho(a, a).abs() <= 1e-12);
            proptest::prop_assert!((s.rho(a, b) - s.rho(b, a)).abs() <= 1e-12);
            proptest::prop_assert!(s.rho(a, b) <= s.rho(a, c) + s.rho(c, b) + 1e-12);
            // circle distances never exceed half the circumference
            proptest::prop_assert!(s.rho(a, b) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn walk_toward_matches_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let s = crate::testgen::random_space(&mut rng, 6);
            let x = crate::testgen::random_point(&mut rng, &s, true);
            let y = crate::testgen::random_point(&mut rng, &s, true);
            let d = s.rho(x, y);
            for frac in [0.0, 0.3, 0.7, 1.0] {
                let w = s.walk_toward(x, y, frac * d);
                assert!((s.rho(x, w) - frac * d).abs() <= 1e-9);
                assert!((s.rho(x, w) + s.rho(w, y) - d).abs() <= 1e-9);
            }
        }
    }
}
