//! Energy minimization over probability measures on a mesh: quadratic
//! programs on the simplex, equilibrium measures, Robin constants, and
//! capacities, plus a bounded-Lipschitz distance for comparing measures.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green::GreenFunction;
use crate::kernel::KernelHandle;
use crate::paf::{pair, PiecewiseAffineFn, SignedMeasure};
use crate::space::{Location, MetricSpace, PointType, SpacePoint, GEOM_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    FrankWolfe,
    ProjectedGradient,
}

#[derive(Clone, Copy, Debug)]
pub struct MinimizeOpts {
    pub max_iter: usize,
    pub tol: f64,
    pub solver: SolverKind,
}

impl Default for MinimizeOpts {
    fn default() -> Self {
        MinimizeOpts { max_iter: 100_000, tol: 1e-8, solver: SolverKind::FrankWolfe }
    }
}

/// Quadratic form `w^T G w` over the probability simplex on a point mesh.
pub struct SimplexQp {
    pub mesh: Vec<SpacePoint>,
    pub gram: DMatrix<f64>,
}

/// Outcome of one minimization run.
#[derive(Clone, Debug)]
pub struct EquilibriumResult {
    pub mesh: Vec<SpacePoint>,
    pub weights: Vec<f64>,
    pub minimizer: SignedMeasure,
    pub value: f64,
    pub robin_constant: f64,
    pub capacity: f64,
    pub frostman_deviation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SimplexQp {
    /// Gram matrix of a Green's function on a mesh of spacing `h`.
    pub fn for_green(g: &GreenFunction, mesh_h: f64) -> SimplexQp {
        let mesh = g.space.mesh(mesh_h);
        let n = mesh.len();
        // warm the per-point caches in parallel, then fill symmetrically
        let u: Vec<f64> = mesh.par_iter().map(|&p| g.potential_of_mu(p)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..=i)
                    .map(|j| g.handle.value(mesh[i], mesh[j]) - u[i] - u[j] + g.c)
                    .collect()
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                gram[(i, j)] = rows[i][j];
                gram[(j, i)] = rows[i][j];
            }
        }
        SimplexQp { mesh, gram }
    }

    /// Gram matrix of the three-variable kernel over a region mesh, for
    /// capacity problems.
    pub fn for_capacity(
        handle: &KernelHandle,
        zeta: SpacePoint,
        mesh: Vec<SpacePoint>,
    ) -> Result<SimplexQp> {
        let n = mesh.len();
        let gz: Vec<f64> = mesh.iter().map(|&p| handle.value(p, zeta)).collect();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = handle.value(mesh[i], mesh[j]) - gz[i] - gz[j];
                if !v.is_finite() {
                    return Err(Error::domain("capacity kernel is infinite on the mesh"));
                }
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(SimplexQp { mesh, gram })
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.gram * w)[(0, 0)]
    }

    /// Minimize over the simplex.  Returns `(weights, value, iterations,
    /// converged)`; non-convergence is reported, not raised.
    pub fn minimize(&self, opts: &MinimizeOpts) -> (DVector<f64>, f64, usize, bool) {
        match opts.solver {
            SolverKind::FrankWolfe => self.frank_wolfe(opts),
            SolverKind::ProjectedGradient => self.projected_gradient(opts),
        }
    }

    /// Frank-Wolfe with exact line search on the quadratic; the linear
    /// minimization oracle picks the lowest-index minimizing coordinate.
    fn frank_wolfe(&self, opts: &MinimizeOpts) -> (DVector<f64>, f64, usize, bool) {
        let n = self.mesh.len();
        let mut w = DVector::from_element(n, 1.0 / n as f64);
        let mut gw = &self.gram * &w; // maintained incrementally
        let mut converged = false;
        let mut iters = 0;
        for it in 0..opts.max_iter {
            iters = it + 1;
            // LMO over the simplex: the smallest gradient coordinate
            let mut best = 0usize;
            for i in 1..n {
                if gw[i] < gw[best] {
                    best = i;
                }
            }
            let wgw = w.dot(&gw);
            let gap = 2.0 * (wgw - gw[best]);
            if gap <= opts.tol {
                converged = true;
                break;
            }
            // d = e_best - w; exact line search for w^T G w along w + t d
            let col = self.gram.column(best);
            let dgd = self.gram[(best, best)] - 2.0 * gw[best] + wgw;
            let num = gw[best] - wgw;
            let t = if dgd <= 0.0 { 1.0 } else { (-num / dgd).clamp(0.0, 1.0) };
            if t <= 0.0 {
                converged = true;
                break;
            }
            // w <- (1 - t) w + t e_best, and Gw accordingly
            w *= 1.0 - t;
            w[best] += t;
            gw *= 1.0 - t;
            gw.axpy(t, &col.clone_owned(), 1.0);
        }
        let value = self.objective(&w);
        (w, value, iters, converged)
    }

    /// Projected gradient with backtracking, as an independent cross-check.
    fn projected_gradient(&self, opts: &MinimizeOpts) -> (DVector<f64>, f64, usize, bool) {
        let n = self.mesh.len();
        let mut w = DVector::from_element(n, 1.0 / n as f64);
        let mut value = self.objective(&w);
        let mut converged = false;
        let mut iters = 0;
        let mut step = 1.0;
        for it in 0..opts.max_iter {
            iters = it + 1;
            let grad = 2.0 * (&self.gram * &w);
            // simplex duality gap, same certificate as Frank-Wolfe
            let best = (0..n)
                .min_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap())
                .unwrap();
            let gap = grad.dot(&w) - grad[best];
            if gap <= opts.tol {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let cand = project_simplex(&(&w - step * &grad));
                let cv = self.objective(&cand);
                if cv <= value - 1e-18 {
                    w = cand;
                    value = cv;
                    accepted = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (w, value, iters, converged)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut s: Vec<f64> = v.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = (s.iter().sum::<f64>() - 1.0) / n as f64;
    for (i, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    DVector::from_iterator(n, v.iter().map(|&x| (x - theta).max(0.0)))
}

/// Maximum deviation of the minimizer's potential from the minimized value:
/// over the whole mesh for equilibrium problems, over the support of the
/// minimizer for capacity problems.
pub fn frostman_deviation(
    qp: &SimplexQp,
    w: &DVector<f64>,
    value: f64,
    support_only: bool,
) -> f64 {
    let u = &qp.gram * w;
    let mut dev: f64 = 0.0;
    for i in 0..w.len() {
        if support_only && w[i] <= 1e-9 {
            continue;
        }
        dev = dev.max((u[i] - value).abs());
    }
    dev
}

fn result_from(
    qp: SimplexQp,
    w: DVector<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
    support_only: bool,
) -> EquilibriumResult {
    let frostman = frostman_deviation(&qp, &w, value, support_only);
    let atoms: Vec<(SpacePoint, f64)> = qp
        .mesh
        .iter()
        .zip(w.iter())
        .filter(|(_, &wi)| wi > 1e-15)
        .map(|(&p, &wi)| (p, wi))
        .collect();
    EquilibriumResult {
        mesh: qp.mesh,
        weights: w.iter().copied().collect(),
        minimizer: SignedMeasure { atoms, densities: Vec::new() },
        value,
        robin_constant: value,
        capacity: (-value).exp(),
        frostman_deviation: frostman,
        iterations,
        converged,
    }
}

/// Equilibrium measure of `g`: minimize the energy over probability measures
/// on the mesh of spacing `mesh_h`.
pub fn minimize_energy(
    g: &GreenFunction,
    mesh_h: f64,
    opts: &MinimizeOpts,
) -> Result<EquilibriumResult> {
    let qp = SimplexQp::for_green(g, mesh_h);
    if qp.mesh.is_empty() {
        return Err(Error::input("mesh is empty"));
    }
    let (w, value, iters, converged) = qp.minimize(opts);
    Ok(result_from(qp, w, value, iters, converged, false))
}

/// Robin constant: the minimized energy value.
pub fn robin_constant(g: &GreenFunction, mesh_h: f64, opts: &MinimizeOpts) -> Result<f64> {
    Ok(minimize_energy(g, mesh_h, opts)?.value)
}

/// Compact region for capacity problems: whole vertices plus edge segments.
#[derive(Clone, Debug, Default)]
pub struct Region {
    pub vertices: Vec<usize>,
    pub segments: Vec<(usize, f64, f64)>, // (edge, from, to)
}

impl Region {
    pub fn contains(&self, space: &MetricSpace, p: SpacePoint) -> bool {
        match p.loc {
            Location::Vertex(v) => {
                self.vertices.contains(&v)
                    || self.segments.iter().any(|&(e, from, to)| {
                        let ed = &space.graph.edges[e];
                        (ed.u == v && from <= GEOM_TOL)
                            || (ed.v == v && to >= ed.length - GEOM_TOL)
                    })
            }
            Location::Interior { edge, offset } => self
                .segments
                .iter()
                .any(|&(e, from, to)| e == edge && offset >= from - GEOM_TOL && offset <= to + GEOM_TOL),
        }
    }

    /// Mesh of the region at spacing `h`: listed vertices plus points along
    /// each segment (segment endpoints included), excluding type-I leaves.
    pub fn mesh(&self, space: &MetricSpace, h: f64) -> Vec<SpacePoint> {
        let mut out = Vec::new();
        let mut push = |p: SpacePoint| {
            if space.point_type(p) != PointType::I && !out.contains(&p) {
                out.push(p);
            }
        };
        for &v in &self.vertices {
            push(SpacePoint::vertex(v));
        }
        for &(e, from, to) in &self.segments {
            let len = to - from;
            let k = (len / h - GEOM_TOL).ceil().max(1.0) as usize;
            for i in 0..=k {
                let t = from + len * i as f64 / k as f64;
                push(space.on_edge(e, t).expect("segment point on edge"));
            }
        }
        out
    }
}

/// Capacity of a region `E` relative to `zeta`, seen from the base `zeta0`:
/// minimize the three-variable kernel energy over probability measures on
/// `E`, then `capacity = exp(-value)`.
pub fn capacity(
    space: &Arc<MetricSpace>,
    zeta0: SpacePoint,
    zeta: SpacePoint,
    region: &Region,
    mesh_h: f64,
    opts: &MinimizeOpts,
) -> Result<EquilibriumResult> {
    if region.contains(space, zeta) {
        return Err(Error::input("zeta must lie outside the region"));
    }
    let handle = KernelHandle::new(space.clone(), zeta0)?;
    let mesh = region.mesh(space, mesh_h);
    if mesh.is_empty() {
        return Err(Error::input("region mesh is empty"));
    }
    let qp = SimplexQp::for_capacity(&handle, zeta, mesh)?;
    let (w, value, iters, converged) = qp.minimize(opts);
    Ok(result_from(qp, w, value, iters, converged, true))
}

/// Bounded-Lipschitz-style distance between two measures: the maximum
/// disagreement of their integrals over a fixed dictionary of 64 slope-one
/// distance functions with deterministically chosen centers.
pub fn bl_distance(space: &MetricSpace, a: &SignedMeasure, b: &SignedMeasure) -> f64 {
    let mut best: f64 = 0.0;
    for f in bl_dictionary(space) {
        let d = (pair(space, &f, a) - pair(space, &f, b)).abs();
        best = best.max(d);
    }
    best
}

/// The 64 test functions `x -> rho(x, c)` for centers spread over a mesh.
pub fn bl_dictionary(space: &MetricSpace) -> Vec<PiecewiseAffineFn> {
    let total = space.graph.total_length().max(GEOM_TOL);
    let mesh = space.mesh(total / 64.0);
    let m = mesh.len();
    let count = m.min(64);
    let centers: Vec<SpacePoint> = (0..count).map(|i| mesh[i * m / count]).collect();
    centers.into_iter().map(|c| distance_paf(space, c)).collect()
}

/// `rho(., c)` as a piecewise-affine function (slope at most one).
pub fn distance_paf(space: &MetricSpace, c: SpacePoint) -> PiecewiseAffineFn {
    let dv = space.dist_to_point(c);
    let mut breaks = vec![Vec::new(); space.graph.edges.len()];
    for (eidx, e) in space.graph.edges.iter().enumerate() {
        let mut cand = Vec::new();
        // kink of the two-endpoint envelope
        let t_star = 0.5 * (dv[e.v] + e.length - dv[e.u]);
        cand.push(t_star);
        if let Location::Interior { edge, offset } = c.loc {
            if edge == eidx {
                // kinks of min(|t - offset|, t + d(u), (len - t) + d(v))
                cand.push(offset);
                cand.push(0.5 * (offset - dv[e.u]));
                cand.push(0.5 * (e.length + dv[e.v] + offset));
            }
        }
        cand.retain(|&t| t > GEOM_TOL && t < e.length - GEOM_TOL);
        cand.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cand.dedup_by(|x, y| (*x - *y).abs() <= GEOM_TOL);
        breaks[eidx] = cand
            .into_iter()
            .map(|t| {
                let p = space.on_edge(eidx, t).expect("candidate on edge");
                (t, space.rho(p, c))
            })
            .collect();
    }
    PiecewiseAffineFn { vertex_values: dv, breaks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_build;
    use crate::paf::DensityPiece;
    use crate::space::{Edge, MetricGraph, PointType, Vertex};
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

    fn circle(l: f64) -> Arc<MetricSpace> {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "o".into(), ptype: PointType::II },
                Vertex { id: "m".into(), ptype: PointType::II },
            ],
            vec![
                Edge { id: "c0".into(), u: 0, v: 1, length: l / 2.0 },
                Edge { id: "c1".into(), u: 0, v: 1, length: l / 2.0 },
            ],
        )
        .unwrap();
        Arc::new(MetricSpace::skeleton_only(g))
    }

    fn haar(space: &MetricSpace) -> SignedMeasure {
        let l = space.graph.total_length();
        SignedMeasure {
            atoms: vec![],
            densities: space
                .graph
                .edges
                .iter()
                .enumerate()
                .map(|(i, e)| DensityPiece { edge: i, from: 0.0, to: e.length, density: 1.0 / l })
                .collect(),
        }
    }

    #[test]
    fn simplex_projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let p = project_simplex(&v);
            assert!((p.sum() - 1.0).abs() <= 1e-10);
            assert!(p.iter().all(|&x| x >= -1e-12));
            // projection is the closest simplex point: no single transfer improves it
            for i in 0..n {
                for j in 0..n {
                    if i == j || p[j] < 1e-6 {
                        continue;
                    }
                    let eps = 1e-4;
                    let mut q = p.clone();
                    q[i] += eps;
                    q[j] -= eps;
                    assert!((&q - &v).norm_squared() + 1e-12 >= (&p - &v).norm_squared());
                }
            }
        }
    }

    #[test]
    fn dirac_mu_minimizer_is_base_atom() {
        // with mu = delta_z, g_mu = g_z which vanishes at z: delta_z minimizes
        let s = circle(2.0);
        let z = SpacePoint::vertex(0);
        let g = green_build(s.clone(), SignedMeasure::dirac(z), z, 0.01).unwrap();
        let res = minimize_energy(&g, 0.05, &MinimizeOpts::default()).unwrap();
        assert!(res.converged);
        assert!(res.value.abs() <= 1e-6, "value {}", res.value);
        let mass_at_z: f64 = res
            .mesh
            .iter()
            .zip(&res.weights)
            .filter(|(p, _)| **p == z)
            .map(|(_, w)| *w)
            .sum();
        assert!(mass_at_z >= 0.999, "mass at base {mass_at_z}");
    }

    #[test]
    fn haar_circle_equilibrium() {
        // the equilibrium measure on the whole circle for g_mu with mu = Haar
        // is Haar itself with value 0
        let s = circle(2.0);
        let g = green_build(s.clone(), haar(&s), SpacePoint::vertex(0), 0.01).unwrap();
        let res = minimize_energy(&g, 0.05, &MinimizeOpts::default()).unwrap();
        assert!(res.value.abs() <= 1e-3, "value {}", res.value);
        assert!(res.frostman_deviation <= 0.05, "deviation {}", res.frostman_deviation);
        let bl = bl_distance(&s, &res.minimizer, &haar(&s));
        assert!(bl <= 0.05, "bl {bl}");
    }

    #[test]
    fn objective_decreases_along_iterations() {
        let s = circle(3.0);
        let g = green_build(s.clone(), haar(&s), SpacePoint::vertex(0), 0.01).unwrap();
        let qp = SimplexQp::for_green(&g, 0.1);
        let n = qp.mesh.len();
        let uniform = DVector::from_element(n, 1.0 / n as f64);
        let start = qp.objective(&uniform);
        let (w, value, _, _) = qp.minimize(&MinimizeOpts::default());
        assert!(value <= start + 1e-12);
        assert!((qp.objective(&w) - value).abs() <= 1e-9);
        // projected-gradient route lands at the same value
        let pg = MinimizeOpts { solver: SolverKind::ProjectedGradient, ..Default::default() };
        let (_, v2, _, _) = qp.minimize(&pg);
        assert!((value - v2).abs() <= 1e-5, "solver disagreement {} vs {}", value, v2);
    }

    #[test]
    fn capacity_point_target() {
        // segment [0,2], zeta = 0, E = {2}: only nu = delta_2,
        // I = g_0(2,2) = 2, capacity e^{-2}
        let s = segment(2.0);
        let z = SpacePoint::vertex(0);
        let region = Region { vertices: vec![1], segments: vec![] };
        let res = capacity(&s, z, z, &region, 0.05, &MinimizeOpts::default()).unwrap();
        assert!((res.value - 2.0).abs() <= 1e-9);
        assert!((res.capacity - (-2.0f64).exp()).abs() <= 1e-9);
    }

    #[test]
    fn capacity_interval_target() {
        // segment [0,2], zeta = 0, E = [1.5, 2]: the kernel g_0(x,y) =
        // min(x,y) is minimized at the near endpoint, so nu = delta_1.5
        let s = segment(2.0);
        let z = SpacePoint::vertex(0);
        let region = Region { vertices: vec![], segments: vec![(0, 1.5, 2.0)] };
        let res = capacity(&s, z, z, &region, 0.01, &MinimizeOpts::default()).unwrap();
        assert!((res.value - 1.5).abs() <= 1e-6, "value {}", res.value);
        let near = s.on_edge(0, 1.5).unwrap();
        let mass: f64 = res
            .mesh
            .iter()
            .zip(&res.weights)
            .filter(|(p, _)| **p == near)
            .map(|(_, w)| *w)
            .sum();
        assert!(mass >= 0.999, "mass at 1.5: {mass}");
        // frostman: potential is constant (= value) on the support
        assert!(res.frostman_deviation <= 0.1, "deviation {}", res.frostman_deviation);
    }

    #[test]
    fn capacity_monotone_in_region() {
        let s = segment(2.0);
        let z = SpacePoint::vertex(0);
        let small = Region { vertices: vec![], segments: vec![(0, 1.8, 2.0)] };
        let big = Region { vertices: vec![], segments: vec![(0, 1.2, 2.0)] };
        let opts = MinimizeOpts::default();
        let a = capacity(&s, z, z, &small, 0.02, &opts).unwrap();
        let b = capacity(&s, z, z, &big, 0.02, &opts).unwrap();
        assert!(a.capacity <= b.capacity + 1e-9);
    }

    #[test]
    fn capacity_rejects_zeta_inside() {
        let s = segment(2.0);
        let z = SpacePoint::vertex(0);
        let region = Region { vertices: vec![0], segments: vec![] };
        assert!(capacity(&s, z, z, &region, 0.1, &MinimizeOpts::default()).is_err());
    }

    #[test]
    fn bl_distance_basics() {
        let s = circle(2.0);
        let h = haar(&s);
        assert!(bl_distance(&s, &h, &h).abs() <= 1e-12);
        let d = SignedMeasure::dirac(SpacePoint::vertex(0));
        let far = bl_distance(&s, &d, &h);
        assert!(far > 0.05, "dirac vs haar should be far: {far}");
        // many equispaced atoms approximate haar
        let n = 64;
        let atoms: Vec<(SpacePoint, f64)> = (0..n)
            .map(|i| {
                let t = 2.0 * i as f64 / n as f64;
                let p = if t <= 1.0 {
                    s.on_edge(0, t).unwrap()
                } else {
                    s.on_edge(1, 2.0 - t).unwrap()
                };
                (p, 1.0 / n as f64)
            })
            .collect();
        let eq = SignedMeasure { atoms, densities: vec![] };
        assert!(bl_distance(&s, &eq, &h) <= 0.05);
    }
}
