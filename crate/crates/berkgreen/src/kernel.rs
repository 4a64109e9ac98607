//! Potential kernels.
//!
//! On a metric graph the kernel with base `zeta` and pole `y` is the unique
//! piecewise-affine function with Laplacian `delta_zeta - delta_y` vanishing
//! at `zeta`; its diagonal value equals the effective resistance between the
//! base and the pole.  On a space with hanging trees the kernel extends by
//! retraction: values only change along a tree through the distance from the
//! meet point to the attachment.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::paf::PiecewiseAffineFn;
use crate::space::{Location, MetricSpace, PointType, SpacePoint, GEOM_TOL};

/// Sub-interval of an edge carried by two solver nodes.
#[derive(Clone, Copy, Debug)]
struct Seg {
    from: f64,
    to: f64,
    a: usize,
    b: usize,
}

/// Node layout for a (refined) subgraph: one node per subgraph vertex plus
/// one per interior cut point.
#[derive(Clone, Debug)]
struct SolveGrid {
    vert_node: Vec<Option<usize>>,
    /// Per combined-graph edge: its segments, empty if outside the subgraph.
    segs: Vec<Vec<Seg>>,
    n: usize,
}

impl SolveGrid {
    fn build(
        space: &MetricSpace,
        in_gamma_edge: &[bool],
        in_gamma_vertex: &[bool],
        cuts: &[SpacePoint],
    ) -> SolveGrid {
        let nv = space.graph.vertices.len();
        let mut vert_node = vec![None; nv];
        let mut n = 0;
        for v in 0..nv {
            if in_gamma_vertex[v] {
                vert_node[v] = Some(n);
                n += 1;
            }
        }
        let mut cut_by_edge: Vec<Vec<f64>> = vec![Vec::new(); space.graph.edges.len()];
        for c in cuts {
            if let Location::Interior { edge, offset } = c.loc {
                cut_by_edge[edge].push(offset);
            }
        }
        let mut segs = vec![Vec::new(); space.graph.edges.len()];
        for (eidx, e) in space.graph.edges.iter().enumerate() {
            if !in_gamma_edge[eidx] {
                continue;
            }
            let mut ts = cut_by_edge[eidx].clone();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ts.dedup_by(|a, b| (*a - *b).abs() <= GEOM_TOL);
            let mut nodes = vec![(0.0, vert_node[e.u].unwrap())];
            for t in ts {
                nodes.push((t, n));
                n += 1;
            }
            nodes.push((e.length, vert_node[e.v].unwrap()));
            for k in 0..nodes.len() - 1 {
                segs[eidx].push(Seg {
                    from: nodes[k].0,
                    to: nodes[k + 1].0,
                    a: nodes[k].1,
                    b: nodes[k + 1].1,
                });
            }
        }
        SolveGrid { vert_node, segs, n }
    }

    fn node_of(&self, p: SpacePoint) -> Option<usize> {
        match p.loc {
            Location::Vertex(v) => self.vert_node[v],
            Location::Interior { edge, offset } => self.segs[edge]
                .iter()
                .find(|s| (s.from - offset).abs() <= GEOM_TOL)
                .map(|s| s.a),
        }
    }
}

/// Solved kernel on a subgraph: base, pole, and node values.  Evaluation
/// interpolates affinely inside segments (the solution has kinks only at the
/// base and the pole, which are always nodes).
#[derive(Clone, Debug)]
pub struct KernelSolve {
    pub zeta: SpacePoint,
    pub pole: SpacePoint,
    grid: SolveGrid,
    values: Vec<f64>,
}

impl KernelSolve {
    pub fn eval(&self, _space: &MetricSpace, p: SpacePoint) -> f64 {
        match p.loc {
            Location::Vertex(v) => {
                let node = self.grid.vert_node[v].expect("point outside solved subgraph");
                self.values[node]
            }
            Location::Interior { edge, offset } => {
                let seg = self.grid.segs[edge]
                    .iter()
                    .find(|s| offset >= s.from - GEOM_TOL && offset <= s.to + GEOM_TOL)
                    .expect("point outside solved subgraph");
                let va = self.values[seg.a];
                let vb = self.values[seg.b];
                va + (offset - seg.from) / (seg.to - seg.from) * (vb - va)
            }
        }
    }

    /// Exact integral of the solution along `[from, to]` of a subgraph edge.
    pub fn integral_on(&self, edge: usize, from: f64, to: f64) -> f64 {
        let mut total = 0.0;
        for s in &self.grid.segs[edge] {
            let a = from.max(s.from);
            let b = to.min(s.to);
            if b <= a {
                continue;
            }
            let va = self.values[s.a];
            let vb = self.values[s.b];
            let lerp = |t: f64| va + (t - s.from) / (s.to - s.from) * (vb - va);
            total += 0.5 * (lerp(a) + lerp(b)) * (b - a);
        }
        total
    }

    /// The solution as a piecewise-affine function on the full space: solved
    /// values on the subgraph, constant along each hanging tree outside it.
    pub fn to_paf(&self, space: &MetricSpace) -> PiecewiseAffineFn {
        let nv = space.graph.vertices.len();
        let mut vertex_values = vec![f64::NAN; nv];
        for v in 0..nv {
            if let Some(node) = self.grid.vert_node[v] {
                vertex_values[v] = self.values[node];
            }
        }
        // off-subgraph vertices take the value at their tree's attachment
        for v in 0..nv {
            if vertex_values[v].is_nan() {
                let t = space.vertex_tree[v].expect("unsolved vertex must be on a tree");
                let attach = space.tree_attach[t];
                let node = self.grid.vert_node[attach].expect("attachment is on the subgraph");
                vertex_values[v] = self.values[node];
            }
        }
        let mut breaks = vec![Vec::new(); space.graph.edges.len()];
        for (eidx, segs) in self.grid.segs.iter().enumerate() {
            for s in segs.iter().skip(1) {
                breaks[eidx].push((s.from, self.values[s.a]));
            }
        }
        PiecewiseAffineFn { vertex_values, breaks }
    }
}

/// Kernel of a fixed base point on a metric space, with cached subgraph
/// solves keyed by pole.  Thread-safe: values may be queried concurrently.
pub struct KernelHandle {
    pub space: Arc<MetricSpace>,
    pub zeta0: SpacePoint,
    in_gamma_edge: Vec<bool>,
    in_gamma_vertex: Vec<bool>,
    cache: Mutex<HashMap<SpacePoint, Arc<KernelSolve>>>,
}

impl KernelHandle {
    /// The computation subgraph is the skeleton, enlarged by the hanging tree
    /// containing the base point when the base sits on a tree.
    pub fn new(space: Arc<MetricSpace>, zeta0: SpacePoint) -> Result<KernelHandle> {
        if space.point_type(zeta0) == PointType::I {
            return Err(Error::input("kernel base point must not be type I"));
        }
        let base_tree = space.tree_of(zeta0);
        let in_gamma_edge: Vec<bool> = space
            .edge_tree
            .iter()
            .map(|t| t.is_none() || (base_tree.is_some() && *t == base_tree))
            .collect();
        let in_gamma_vertex: Vec<bool> = space
            .vertex_tree
            .iter()
            .map(|t| t.is_none() || (base_tree.is_some() && *t == base_tree))
            .collect();
        Ok(KernelHandle {
            space,
            zeta0,
            in_gamma_edge,
            in_gamma_vertex,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn in_gamma(&self, p: SpacePoint) -> bool {
        match p.loc {
            Location::Vertex(v) => self.in_gamma_vertex[v],
            Location::Interior { edge, .. } => self.in_gamma_edge[edge],
        }
    }

    /// Retraction onto the computation subgraph.
    pub fn tau(&self, p: SpacePoint) -> SpacePoint {
        if self.in_gamma(p) {
            p
        } else {
            self.space.retract(p)
        }
    }

    /// Solve (or fetch) the kernel with the given pole, which must lie on the
    /// computation subgraph.
    pub fn solve_for_pole(&self, pole: SpacePoint) -> Arc<KernelSolve> {
        debug_assert!(self.in_gamma(pole), "pole must be on the computation subgraph");
        if let Some(s) = self.cache.lock().unwrap().get(&pole) {
            return s.clone();
        }
        let solve = Arc::new(self.solve(pole));
        self.cache
            .lock()
            .unwrap()
            .entry(pole)
            .or_insert(solve)
            .clone()
    }

    fn solve(&self, pole: SpacePoint) -> KernelSolve {
        let space = &*self.space;
        let grid = SolveGrid::build(
            space,
            &self.in_gamma_edge,
            &self.in_gamma_vertex,
            &[self.zeta0, pole],
        );
        let n = grid.n;
        let zeta_node = grid.node_of(self.zeta0).expect("base is on the subgraph");
        let mut values = vec![0.0; n];
        if pole != self.zeta0 {
            let pole_node = grid.node_of(pole).expect("pole is on the subgraph");
            let mut l = DMatrix::<f64>::zeros(n, n);
            for segs in &grid.segs {
                for s in segs {
                    let w = 1.0 / (s.to - s.from);
                    l[(s.a, s.a)] += w;
                    l[(s.b, s.b)] += w;
                    l[(s.a, s.b)] -= w;
                    l[(s.b, s.a)] -= w;
                }
            }
            let mut rhs = DVector::<f64>::zeros(n);
            rhs[pole_node] += 1.0;
            rhs[zeta_node] -= 1.0;
            // pin the base value to zero
            for j in 0..n {
                l[(zeta_node, j)] = 0.0;
            }
            l[(zeta_node, zeta_node)] = 1.0;
            rhs[zeta_node] = 0.0;
            let sol = l.lu().solve(&rhs).expect("kernel system is nonsingular");
            values = sol.iter().copied().collect();
        }
        KernelSolve { zeta: self.zeta0, pole, grid, values }
    }

    /// Kernel value `g_{zeta0}(x, y)`, `+inf` on the type-I diagonal.
    pub fn value(&self, x: SpacePoint, y: SpacePoint) -> f64 {
        let space = &*self.space;
        if x == y && space.point_type(x) == PointType::I {
            return f64::INFINITY;
        }
        let tx = self.tau(x);
        let ty = self.tau(y);
        if tx != ty {
            self.solve_for_pole(ty).eval(space, tx)
        } else {
            let p = tx;
            let w = self.fiber_meet(p, x, y);
            self.solve_for_pole(p).eval(space, p) + space.rho(w, p)
        }
    }

    /// Meet of `x` and `y` toward the common retraction `p` inside one fiber.
    fn fiber_meet(&self, p: SpacePoint, x: SpacePoint, y: SpacePoint) -> SpacePoint {
        if x == p || y == p {
            return p;
        }
        let space = &*self.space;
        if space.tree_of(x) != space.tree_of(y) {
            return p;
        }
        let dxp = space.rho(x, p);
        let dyp = space.rho(y, p);
        let dxy = space.rho(x, y);
        let m = 0.5 * (dxp + dyp - dxy);
        space.walk_toward(x, p, (dxp - m).max(0.0))
    }

    /// Full-space extension of one solve as a piecewise-affine function.
    pub fn solve_paf(&self, pole: SpacePoint) -> PiecewiseAffineFn {
        self.solve_for_pole(pole).to_paf(&self.space)
    }

    /// Three-variable kernel `g(x, y) - g(x, zeta) - g(y, zeta)`.
    /// `+inf` on the type-I diagonal `x = y = zeta`; an indeterminate
    /// `inf - inf` combination outside that case is a domain error.
    pub fn three_var(&self, zeta: SpacePoint, x: SpacePoint, y: SpacePoint) -> Result<f64> {
        let ti = |p: SpacePoint| self.space.point_type(p) == PointType::I;
        if x == y && x == zeta && ti(x) {
            return Ok(f64::INFINITY);
        }
        let v = self.value(x, y) - self.value(x, zeta) - self.value(y, zeta);
        if v.is_nan() {
            return Err(Error::domain(
                "three-variable kernel is indeterminate for these arguments",
            ));
        }
        Ok(v)
    }
}

/// Kernel on a bare metric graph (a space without hanging trees): base
/// `zeta`, pole `y`, solved over the whole graph.
pub fn solve_graph_kernel(
    space: &Arc<MetricSpace>,
    zeta: SpacePoint,
    y: SpacePoint,
) -> Result<KernelSolve> {
    let handle = KernelHandle::new(space.clone(), zeta)?;
    if !handle.in_gamma(y) {
        return Err(Error::input("pole must lie on the graph"));
    }
    Ok((*handle.solve_for_pole(y)).clone())
}

/// Residual of the base-change identity
/// `g_z(x,y) = g_w(x,y) - g_w(x,z) - g_w(y,z) + g_w(z,z)`.
pub fn base_change_residual(
    space: &Arc<MetricSpace>,
    zeta: SpacePoint,
    zeta_prime: SpacePoint,
    x: SpacePoint,
    y: SpacePoint,
) -> Result<f64> {
    let h = KernelHandle::new(space.clone(), zeta)?;
    let hp = KernelHandle::new(space.clone(), zeta_prime)?;
    let lhs = h.value(x, y);
    let rhs = hp.value(x, y) - hp.value(x, zeta) - hp.value(y, zeta) + hp.value(zeta, zeta);
    if lhs.is_infinite() && rhs.is_infinite() {
        return Ok(0.0);
    }
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Edge, MetricGraph, Vertex};
    use crate::testgen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn segment(l: f64) -> Arc<MetricSpace> {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
            ],
            vec![Edge { id: "e".into(), u: 0, v: 1, length: l }],
        )
        .unwrap();
        Arc::new(MetricSpace::skeleton_only(g))
    }

    fn parallel(l0: f64, l1: f64) -> Arc<MetricSpace> {
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
        Arc::new(MetricSpace::skeleton_only(g))
    }

    /// Skeleton segment a--b with a Y-tree hanging at b.
    fn tree_space(d: f64, la: f64, lc: f64) -> Arc<MetricSpace> {
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
                Edge { id: "t1".into(), u: 2, v: 3, length: la },
                Edge { id: "t2".into(), u: 2, v: 4, length: lc },
            ],
        )
        .unwrap();
        Arc::new(
            MetricSpace::from_parts(
                g,
                vec![None, None, Some(0), Some(0), Some(0)],
                vec![None, Some(0), Some(0), Some(0)],
                vec![1],
            )
            .unwrap(),
        )
    }

    #[test]
    fn segment_kernel_is_distance_from_base() {
        let s = segment(2.0);
        let zeta = SpacePoint::vertex(0);
        let y = SpacePoint::vertex(1);
        let solve = solve_graph_kernel(&s, zeta, y).unwrap();
        for t in [0.0, 0.3, 1.0, 1.7, 2.0] {
            let p = s.on_edge(0, t).unwrap();
            assert!((solve.eval(&s, p) - t).abs() <= 1e-12, "g({t}) != {t}");
        }
        // Laplacian is exactly delta_zeta - delta_y
        let paf = solve.to_paf(&s);
        let lap = paf.laplacian(&s);
        assert_eq!(lap.atoms.len(), 2);
        for (p, w) in lap.atoms {
            if p == zeta {
                assert!((w - 1.0).abs() <= 1e-10);
            } else {
                assert_eq!(p, y);
                assert!((w + 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn coincident_base_and_pole_gives_zero() {
        let s = segment(2.0);
        let z = s.on_edge(0, 0.7).unwrap();
        let solve = solve_graph_kernel(&s, z, z).unwrap();
        for t in [0.0, 0.5, 2.0] {
            assert_eq!(solve.eval(&s, s.on_edge(0, t).unwrap()), 0.0);
        }
    }

    #[test]
    fn parallel_edges_effective_resistance() {
        // lengths 1 and 2 in parallel: R = (1*2)/(1+2) = 2/3
        let s = parallel(1.0, 2.0);
        let h = KernelHandle::new(s.clone(), SpacePoint::vertex(0)).unwrap();
        let y = SpacePoint::vertex(1);
        assert!((h.value(y, y) - 2.0 / 3.0).abs() <= 1e-12);
        // independent oracle agrees
        let r = testgen::effective_resistance(&s, 0, 1);
        assert!((h.value(y, y) - r).abs() <= 1e-12);
    }

    #[test]
    fn diagonal_matches_resistance_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..15 {
            let s = Arc::new(testgen::random_multigraph(&mut rng, 8));
            let nv = s.graph.vertices.len();
            let a = rng.gen_range(0..nv);
            let mut b = rng.gen_range(0..nv);
            if a == b {
                b = (b + 1) % nv;
            }
            let h = KernelHandle::new(s.clone(), SpacePoint::vertex(a)).unwrap();
            let g = h.value(SpacePoint::vertex(b), SpacePoint::vertex(b));
            let r = testgen::effective_resistance(&s, a, b);
            assert!((g - r).abs() <= 1e-9, "diag {g} vs oracle {r}");
        }
    }

    #[test]
    fn kernel_nonnegative_bounded_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let s = Arc::new(testgen::random_space(&mut rng, 6));
            let zeta = testgen::random_point(&mut rng, &s, false);
            let h = KernelHandle::new(s.clone(), zeta).unwrap();
            let bound = s.graph.total_length() * 4.0;
            for _ in 0..10 {
                let x = testgen::random_point(&mut rng, &s, true);
                let y = testgen::random_point(&mut rng, &s, true);
                let a = h.value(x, y);
                let b = h.value(y, x);
                if a.is_infinite() {
                    assert!(x == y && s.point_type(x) == PointType::I);
                    continue;
                }
                assert!(a >= -1e-12, "kernel negative: {a}");
                assert!(a <= bound, "kernel above diameter bound: {a}");
                assert!((a - b).abs() <= 1e-9, "symmetry residual {}", (a - b).abs());
                assert!(h.value(zeta, y).abs() <= 1e-12, "g(zeta, y) != 0");
            }
        }
    }

    #[test]
    fn base_change_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let s = Arc::new(testgen::random_space(&mut rng, 6));
            let z = testgen::random_point(&mut rng, &s, false);
            let zp = testgen::random_point(&mut rng, &s, false);
            let x = testgen::random_point(&mut rng, &s, true);
            let y = testgen::random_point(&mut rng, &s, true);
            let r = base_change_residual(&s, z, zp, x, y).unwrap();
            assert!(r <= 1e-9, "base change residual {r}");
        }
        // zeta' = zeta is exactly zero
        let s = segment(2.0);
        let z = SpacePoint::vertex(0);
        let x = s.on_edge(0, 0.5).unwrap();
        let y = s.on_edge(0, 1.5).unwrap();
        assert_eq!(base_change_residual(&s, z, z, x, y).unwrap(), 0.0);
    }

    #[test]
    fn tree_identity_distance_to_meet() {
        // on a tree, g_zeta(x, y) = rho(zeta, meet_zeta(x, y))
        let s = tree_space(0.5, 0.7, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let zeta = SpacePoint::vertex(0);
        let h = KernelHandle::new(s.clone(), zeta).unwrap();
        for _ in 0..30 {
            let x = testgen::random_point(&mut rng, &s, true);
            let y = testgen::random_point(&mut rng, &s, true);
            if x == y && s.point_type(x) == PointType::I {
                continue;
            }
            let w = s.meet(zeta, x, y).unwrap();
            let expect = s.rho(zeta, w);
            let got = h.value(x, y);
            assert!((got - expect).abs() <= 1e-10, "tree identity {got} vs {expect}");
        }
    }

    #[test]
    fn retraction_formula_exact() {
        let s = tree_space(0.5, 0.7, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let zeta = s.on_edge(0, 0.25).unwrap();
        let h = KernelHandle::new(s.clone(), zeta).unwrap();
        for _ in 0..30 {
            let x = testgen::random_skeleton_point(&mut rng, &s);
            let y = testgen::random_point(&mut rng, &s, true);
            let a = h.value(x, y);
            let b = h.value(x, s.retract(y));
            assert!((a - b).abs() <= 1e-12, "retraction residual {}", (a - b).abs());
        }
    }

    #[test]
    fn type_i_diagonal_and_three_var() {
        let s = tree_space(0.5, 0.7, 0.9);
        let zeta0 = SpacePoint::vertex(0);
        let h = KernelHandle::new(s.clone(), zeta0).unwrap();
        let p = SpacePoint::vertex(3);
        assert!(h.value(p, p).is_infinite());
        assert!(h.value(p, SpacePoint::vertex(4)).is_finite());
        // base point must not be type I
        assert!(KernelHandle::new(s.clone(), p).is_err());
        // three-variable kernel: g_zeta(zeta, x, y) = g_zeta(x, y)
        let x = s.on_edge(0, 0.3).unwrap();
        let y = SpacePoint::vertex(4);
        let tv = h.three_var(zeta0, x, y).unwrap();
        assert!((tv - h.value(x, y)).abs() <= 1e-12);
        // x = y = zeta all type I
        assert!(h.three_var(p, p, p).unwrap().is_infinite());
        // dd^c in the middle slot pairs like delta_zeta - delta_y
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let zeta = s.on_edge(0, 0.8).unwrap();
        let y = s.on_edge(3, 0.4).unwrap(); // interior point: kernel finite everywhere
        for _ in 0..5 {
            let f = testgen::random_paf(&mut rng, &s);
            let lap = f.laplacian(&s);
            let mut lhs = 0.0;
            for &(pt, w) in &lap.atoms {
                lhs += w * h.three_var(zeta, pt, y).unwrap();
            }
            let rhs = f.eval(&s, zeta) - f.eval(&s, y);
            assert!((lhs - rhs).abs() <= 1e-8, "three-var pairing residual {}", (lhs - rhs).abs());
        }
    }

    #[test]
    fn base_on_hanging_tree() {
        let s = tree_space(0.5, 0.7, 0.9);
        // base point inside the tree: kernel still symmetric and zero at base
        let zeta = s.on_edge(1, 0.25).unwrap();
        let h = KernelHandle::new(s.clone(), zeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let x = testgen::random_point(&mut rng, &s, true);
            let y = testgen::random_point(&mut rng, &s, true);
            let a = h.value(x, y);
            let b = h.value(y, x);
            if a.is_finite() {
                assert!((a - b).abs() <= 1e-9);
                assert!(a >= -1e-12);
            }
            assert!(h.value(zeta, y).abs() <= 1e-12);
        }
    }
}
