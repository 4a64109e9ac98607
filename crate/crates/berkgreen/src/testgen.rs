//! Deterministic random generators for spaces, points, functions, and
//! measures, plus an independent effective-resistance oracle.  Used by the
//! test suites and the `check` subcommand.

use rand::Rng;

use crate::paf::{DensityPiece, PiecewiseAffineFn, SignedMeasure};
use crate::space::{Edge, Location, MetricGraph, MetricSpace, PointType, SpacePoint, Vertex};

/// Random connected multigraph (no loops, parallel edges allowed) wrapped as
/// a skeleton-only space.
pub fn random_multigraph<R: Rng>(rng: &mut R, max_vertices: usize) -> MetricSpace {
    let nv = rng.gen_range(2..=max_vertices.max(2));
    let mut vertices = Vec::new();
    for i in 0..nv {
        vertices.push(Vertex { id: format!("v{i}"), ptype: PointType::II });
    }
    let mut edges = Vec::new();
    // spanning tree first, then extra edges (possibly parallel)
    for i in 1..nv {
        let j = rng.gen_range(0..i);
        edges.push(Edge {
            id: format!("e{}", edges.len()),
            u: j,
            v: i,
            length: rng.gen_range(0.2..2.5),
        });
    }
    let extra = rng.gen_range(0..=nv);
    for _ in 0..extra {
        let a = rng.gen_range(0..nv);
        let mut b = rng.gen_range(0..nv);
        if a == b {
            b = (b + 1) % nv;
        }
        edges.push(Edge {
            id: format!("e{}", edges.len()),
            u: a,
            v: b,
            length: rng.gen_range(0.2..2.5),
        });
    }
    MetricSpace::skeleton_only(MetricGraph::new(vertices, edges).expect("generated graph valid"))
}

/// Random space: a multigraph skeleton with up to two hanging trees whose
/// leaves are type I.
pub fn random_space<R: Rng>(rng: &mut R, max_vertices: usize) -> MetricSpace {
    let base = random_multigraph(rng, max_vertices);
    let mut vertices = base.graph.vertices.clone();
    let mut edges = base.graph.edges.clone();
    let mut vertex_tree = base.vertex_tree.clone();
    let mut edge_tree = base.edge_tree.clone();
    let mut tree_attach = Vec::new();
    let ntrees = rng.gen_range(0..=2);
    let nskel = vertices.len();
    for ti in 0..ntrees {
        let attach = rng.gen_range(0..nskel);
        tree_attach.push(attach);
        // a small random tree grown from the attach vertex
        let size = rng.gen_range(1..=3);
        let mut nodes = vec![attach];
        for k in 0..size {
            let parent = nodes[rng.gen_range(0..nodes.len())];
            vertices.push(Vertex {
                id: format!("t{ti}n{k}"),
                ptype: PointType::II,
            });
            vertex_tree.push(Some(ti));
            let vid = vertices.len() - 1;
            edges.push(Edge {
                id: format!("t{ti}e{k}"),
                u: parent,
                v: vid,
                length: rng.gen_range(0.2..1.5),
            });
            edge_tree.push(Some(ti));
            nodes.push(vid);
        }
        // tag the leaves of this tree type I with probability 1/2 each
        for v in nskel..vertices.len() {
            if vertex_tree[v] == Some(ti) {
                let deg = edges.iter().filter(|e| e.u == v || e.v == v).count();
                if deg == 1 && rng.gen_bool(0.5) {
                    vertices[v].ptype = PointType::I;
                }
            }
        }
    }
    let graph = MetricGraph::new(vertices, edges).expect("generated space valid");
    MetricSpace::from_parts(graph, vertex_tree, edge_tree, tree_attach).expect("valid space")
}

/// Random point; optionally avoiding type-I leaves.
pub fn random_point<R: Rng>(rng: &mut R, space: &MetricSpace, allow_type_i: bool) -> SpacePoint {
    loop {
        let p = if space.graph.edges.is_empty() || rng.gen_bool(0.4) {
            SpacePoint::vertex(rng.gen_range(0..space.graph.vertices.len()))
        } else {
            let e = rng.gen_range(0..space.graph.edges.len());
            let len = space.graph.edges[e].length;
            space
                .on_edge(e, rng.gen_range(0.0..len))
                .expect("random offset valid")
        };
        if allow_type_i || space.point_type(p) != PointType::I {
            return p;
        }
    }
}

/// Random point on the skeleton.
pub fn random_skeleton_point<R: Rng>(rng: &mut R, space: &MetricSpace) -> SpacePoint {
    loop {
        let p = random_point(rng, space, false);
        if space.tree_of(p).is_none() {
            return p;
        }
    }
}

/// Random continuous piecewise-affine function with a few interior kinks.
pub fn random_paf<R: Rng>(rng: &mut R, space: &MetricSpace) -> PiecewiseAffineFn {
    let vals: Vec<f64> = (0..space.graph.vertices.len())
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let mut f = PiecewiseAffineFn::from_vertex_values(space, &vals).expect("sizes match");
    for (eidx, e) in space.graph.edges.iter().enumerate() {
        let k = rng.gen_range(0..3);
        let mut ts: Vec<f64> = (0..k)
            .map(|_| rng.gen_range(0.05 * e.length..0.95 * e.length))
            .collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        f.breaks[eidx] = ts
            .into_iter()
            .map(|t| (t, rng.gen_range(-2.0..2.0)))
            .collect();
    }
    f
}

/// Random atomic probability measure on non-type-I points.
pub fn random_atomic_probability<R: Rng>(
    rng: &mut R,
    space: &MetricSpace,
    n: usize,
) -> SignedMeasure {
    let mut atoms: Vec<(SpacePoint, f64)> = Vec::new();
    while atoms.len() < n {
        let p = random_point(rng, space, false);
        if atoms.iter().all(|&(q, _)| q != p) {
            atoms.push((p, rng.gen_range(0.1..1.0)));
        }
    }
    let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
    for a in &mut atoms {
        a.1 /= total;
    }
    SignedMeasure { atoms, densities: Vec::new() }
}

/// Random probability measure with a density component on a skeleton edge.
pub fn random_mixed_probability<R: Rng>(rng: &mut R, space: &MetricSpace) -> SignedMeasure {
    let n_atoms = rng.gen_range(1..=3);
    let mut m = random_atomic_probability(rng, space, n_atoms);
    let skeleton_edges: Vec<usize> = (0..space.graph.edges.len())
        .filter(|&e| space.edge_tree[e].is_none())
        .collect();
    if skeleton_edges.is_empty() {
        return m;
    }
    let e = skeleton_edges[rng.gen_range(0..skeleton_edges.len())];
    let len = space.graph.edges[e].length;
    let from = rng.gen_range(0.0..0.5 * len);
    let to = rng.gen_range(0.6 * len..len);
    let share = rng.gen_range(0.2..0.8);
    for a in &mut m.atoms {
        a.1 *= 1.0 - share;
    }
    m.densities.push(DensityPiece { edge: e, from, to, density: share / (to - from) });
    m
}

/// Effective resistance between two vertices by star-mesh (node) elimination
/// on the conductance matrix.  Independent of the linear-algebra solver used
/// by the kernel.
pub fn effective_resistance(space: &MetricSpace, s: usize, t: usize) -> f64 {
    let n = space.graph.vertices.len();
    assert!(s != t, "effective resistance needs distinct terminals");
    let mut w = vec![vec![0.0f64; n]; n];
    for e in &space.graph.edges {
        let c = 1.0 / e.length;
        w[e.u][e.v] += c;
        w[e.v][e.u] += c;
    }
    let mut alive: Vec<usize> = (0..n).collect();
    while alive.len() > 2 {
        let &k = alive.iter().find(|&&v| v != s && v != t).unwrap();
        let deg: f64 = alive.iter().filter(|&&j| j != k).map(|&j| w[k][j]).sum();
        if deg > 0.0 {
            let others: Vec<usize> = alive.iter().copied().filter(|&j| j != k).collect();
            for (ai, &i) in others.iter().enumerate() {
                for &j in others.iter().skip(ai + 1) {
                    let add = w[i][k] * w[k][j] / deg;
                    w[i][j] += add;
                    w[j][i] += add;
                }
            }
        }
        alive.retain(|&v| v != k);
    }
    1.0 / w[s][t]
}

/// Effective resistance between two arbitrary points: refine so both are
/// vertices, then eliminate.  Refined interior points become vertices named
/// `<edge>@<k>` with `k` the rank of their offset among the cuts on the edge.
pub fn effective_resistance_points(space: &MetricSpace, x: SpacePoint, y: SpacePoint) -> f64 {
    let refined = space.refine(&[x, y]);
    let find = |p: SpacePoint| -> usize {
        match p.loc {
            Location::Vertex(v) => v, // original indices are preserved
            Location::Interior { edge, offset } => {
                let mut cuts: Vec<f64> = [x, y]
                    .iter()
                    .filter_map(|q| match q.loc {
                        Location::Interior { edge: e2, offset: t } if e2 == edge => Some(t),
                        _ => None,
                    })
                    .collect();
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
                let k = cuts
                    .iter()
                    .position(|&t| (t - offset).abs() <= 1e-12)
                    .expect("cut present");
                let id = format!("{}@{}", space.graph.edges[edge].id, k);
                refined.vertex_by_id(&id).expect("refined vertex exists")
            }
        }
    };
    let s = find(x);
    let t = find(y);
    effective_resistance(&refined, s, t)
}
