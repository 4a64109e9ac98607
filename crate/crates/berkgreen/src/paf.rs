//! Piecewise-affine functions and measures on a metric space, and the
//! discrete Laplacian that links them.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::space::{Location, MetricSpace, PointType, SpacePoint, GEOM_TOL};

/// Laplacian atoms smaller than this are dropped.
pub const MASS_TOL: f64 = 1e-12;

/// Continuous function that is affine between breakpoints on every edge.
/// Breakpoints are stored per edge as `(offset, value)` with the endpoints
/// always present; vertex values are stored once and shared by all incident
/// edges.
#[derive(Clone, Debug)]
pub struct PiecewiseAffineFn {
    pub vertex_values: Vec<f64>,
    /// Per edge: interior breakpoints only, sorted by offset.
    pub breaks: Vec<Vec<(f64, f64)>>,
}

impl PiecewiseAffineFn {
    pub fn constant(space: &MetricSpace, c: f64) -> PiecewiseAffineFn {
        PiecewiseAffineFn {
            vertex_values: vec![c; space.graph.vertices.len()],
            breaks: vec![Vec::new(); space.graph.edges.len()],
        }
    }

    /// Affine interpolation of prescribed vertex values along each edge.
    pub fn from_vertex_values(space: &MetricSpace, vals: &[f64]) -> Result<PiecewiseAffineFn> {
        if vals.len() != space.graph.vertices.len() {
            return Err(Error::input("vertex value count does not match graph"));
        }
        Ok(PiecewiseAffineFn {
            vertex_values: vals.to_vec(),
            breaks: vec![Vec::new(); space.graph.edges.len()],
        })
    }

    /// Build from explicit data; validates ordering and range.
    pub fn new(
        space: &MetricSpace,
        vertex_values: Vec<f64>,
        breaks: Vec<Vec<(f64, f64)>>,
    ) -> Result<PiecewiseAffineFn> {
        if vertex_values.len() != space.graph.vertices.len()
            || breaks.len() != space.graph.edges.len()
        {
            return Err(Error::input("breakpoint table does not match graph"));
        }
        for (eidx, list) in breaks.iter().enumerate() {
            let len = space.graph.edges[eidx].length;
            let mut prev = 0.0;
            for &(t, v) in list {
                if !(t > prev + GEOM_TOL && t < len - GEOM_TOL) {
                    return Err(Error::input(format!(
                        "breakpoint offset {t} out of order on edge {:?}",
                        space.graph.edges[eidx].id
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::input("non-finite breakpoint value"));
                }
                prev = t;
            }
        }
        Ok(PiecewiseAffineFn { vertex_values, breaks })
    }

    pub fn eval(&self, space: &MetricSpace, p: SpacePoint) -> f64 {
        match p.loc {
            Location::Vertex(v) => self.vertex_values[v],
            Location::Interior { edge, offset } => {
                let (t0, v0, t1, v1) = self.bracket(space, edge, offset);
                if (t1 - t0).abs() <= GEOM_TOL {
                    return v0;
                }
                v0 + (offset - t0) / (t1 - t0) * (v1 - v0)
            }
        }
    }

    /// Surrounding breakpoints `(t0, v0, t1, v1)` of an offset on an edge.
    fn bracket(&self, space: &MetricSpace, edge: usize, offset: f64) -> (f64, f64, f64, f64) {
        let e = &space.graph.edges[edge];
        let mut t0 = 0.0;
        let mut v0 = self.vertex_values[e.u];
        for &(t, v) in &self.breaks[edge] {
            if t <= offset {
                t0 = t;
                v0 = v;
            } else {
                return (t0, v0, t, v);
            }
        }
        (t0, v0, e.length, self.vertex_values[e.v])
    }

    /// One-sided slope at `x` along the given edge in the given direction.
    /// `x` must lie on the edge; `increasing` means toward larger offsets.
    pub fn outgoing_slope(
        &self,
        space: &MetricSpace,
        x: SpacePoint,
        edge: usize,
        increasing: bool,
    ) -> Result<f64> {
        let e = &space.graph.edges[edge];
        let offset = match x.loc {
            Location::Vertex(v) if v == e.u => 0.0,
            Location::Vertex(v) if v == e.v => e.length,
            Location::Interior { edge: e2, offset } if e2 == edge => offset,
            _ => {
                return Err(Error::input(format!(
                    "point is not on edge {:?}",
                    e.id
                )))
            }
        };
        if increasing && offset >= e.length - GEOM_TOL {
            return Err(Error::input("no increasing direction at the far endpoint"));
        }
        if !increasing && offset <= GEOM_TOL {
            return Err(Error::input("no decreasing direction at the near endpoint"));
        }
        // nudge into the open side and take the secant of that affine piece
        let probe = if increasing { offset + GEOM_TOL * 2.0 } else { offset - GEOM_TOL * 2.0 };
        let (t0, v0, t1, v1) = self.bracket(space, edge, probe.clamp(0.0, e.length));
        let slope = (v1 - v0) / (t1 - t0);
        Ok(if increasing { slope } else { -slope })
    }

    pub fn scale(&self, a: f64) -> PiecewiseAffineFn {
        PiecewiseAffineFn {
            vertex_values: self.vertex_values.iter().map(|v| a * v).collect(),
            breaks: self
                .breaks
                .iter()
                .map(|l| l.iter().map(|&(t, v)| (t, a * v)).collect())
                .collect(),
        }
    }

    /// Pointwise sum; breakpoint sets are merged per edge.
    pub fn add(&self, space: &MetricSpace, other: &PiecewiseAffineFn) -> PiecewiseAffineFn {
        let vertex_values = self
            .vertex_values
            .iter()
            .zip(&other.vertex_values)
            .map(|(a, b)| a + b)
            .collect();
        let mut breaks = Vec::with_capacity(self.breaks.len());
        for eidx in 0..self.breaks.len() {
            let mut ts: Vec<f64> = self.breaks[eidx]
                .iter()
                .chain(other.breaks[eidx].iter())
                .map(|&(t, _)| t)
                .collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ts.dedup_by(|a, b| (*a - *b).abs() <= GEOM_TOL);
            let list = ts
                .into_iter()
                .map(|t| {
                    let p = SpacePoint { loc: Location::Interior { edge: eidx, offset: t } };
                    (t, self.eval(space, p) + other.eval(space, p))
                })
                .collect();
            breaks.push(list);
        }
        PiecewiseAffineFn { vertex_values, breaks }
    }

    /// Distribution `dd^c f`: a pure atomic measure.  At an interior
    /// breakpoint the atom is the slope kink; at a vertex it is the sum of
    /// outgoing slopes over all incident edge-ends.  Atoms below `MASS_TOL`
    /// in absolute value are dropped.
    pub fn laplacian(&self, space: &MetricSpace) -> LaplacianMeasure {
        let mut atoms = Vec::new();
        for (eidx, e) in space.graph.edges.iter().enumerate() {
            let mut nodes = vec![(0.0, self.vertex_values[e.u])];
            nodes.extend(self.breaks[eidx].iter().copied());
            nodes.push((e.length, self.vertex_values[e.v]));
            for k in 1..nodes.len() - 1 {
                let (tl, vl) = nodes[k - 1];
                let (t, v) = nodes[k];
                let (tr, vr) = nodes[k + 1];
                let sl = (v - vl) / (t - tl);
                let sr = (vr - v) / (tr - t);
                let w = sr - sl;
                if w.abs() >= MASS_TOL {
                    atoms.push((
                        SpacePoint { loc: Location::Interior { edge: eidx, offset: t } },
                        w,
                    ));
                }
            }
        }
        for v in 0..space.graph.vertices.len() {
            let mut w = 0.0;
            for &(eidx, _) in space.graph.adjacency(v) {
                let e = &space.graph.edges[eidx];
                let mut nodes = vec![(0.0, self.vertex_values[e.u])];
                nodes.extend(self.breaks[eidx].iter().copied());
                nodes.push((e.length, self.vertex_values[e.v]));
                if e.u == v {
                    let (t0, v0) = nodes[0];
                    let (t1, v1) = nodes[1];
                    w += (v1 - v0) / (t1 - t0);
                } else {
                    let (t0, v0) = nodes[nodes.len() - 2];
                    let (t1, v1) = nodes[nodes.len() - 1];
                    w -= (v1 - v0) / (t1 - t0);
                }
            }
            if w.abs() >= MASS_TOL {
                atoms.push((SpacePoint::vertex(v), w));
            }
        }
        LaplacianMeasure { atoms }
    }
}

/// Atomic measure arising as a Laplacian.
#[derive(Clone, Debug)]
pub struct LaplacianMeasure {
    pub atoms: Vec<(SpacePoint, f64)>,
}

impl LaplacianMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|&(_, w)| w).sum()
    }
    pub fn to_signed(&self) -> SignedMeasure {
        SignedMeasure { atoms: self.atoms.clone(), densities: Vec::new() }
    }
}

/// Constant density on a sub-segment of an edge.
#[derive(Clone, Copy, Debug)]
pub struct DensityPiece {
    pub edge: usize,
    pub from: f64,
    pub to: f64,
    pub density: f64,
}

/// Finitely many atoms plus piecewise-constant edge densities.
#[derive(Clone, Debug, Default)]
pub struct SignedMeasure {
    pub atoms: Vec<(SpacePoint, f64)>,
    pub densities: Vec<DensityPiece>,
}

impl SignedMeasure {
    pub fn dirac(p: SpacePoint) -> SignedMeasure {
        SignedMeasure { atoms: vec![(p, 1.0)], densities: Vec::new() }
    }

    pub fn validate(&self, space: &MetricSpace) -> Result<()> {
        for &(p, w) in &self.atoms {
            if !w.is_finite() {
                return Err(Error::input("non-finite atom weight"));
            }
            match p.loc {
                Location::Vertex(v) if v < space.graph.vertices.len() => {}
                Location::Interior { edge, offset }
                    if edge < space.graph.edges.len()
                        && offset > 0.0
                        && offset < space.graph.edges[edge].length => {}
                _ => return Err(Error::input("atom at an invalid point")),
            }
        }
        for d in &self.densities {
            if d.edge >= space.graph.edges.len() {
                return Err(Error::input(format!("density references missing edge {}", d.edge)));
            }
            let len = space.graph.edges[d.edge].length;
            if !(d.from >= -GEOM_TOL && d.to <= len + GEOM_TOL && d.from < d.to) {
                return Err(Error::input(format!(
                    "density interval [{}, {}] invalid on edge {:?}",
                    d.from, d.to, space.graph.edges[d.edge].id
                )));
            }
            if !d.density.is_finite() {
                return Err(Error::input("non-finite density"));
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        let a: f64 = self.atoms.iter().map(|&(_, w)| w).sum();
        let d: f64 = self.densities.iter().map(|p| p.density * (p.to - p.from)).sum();
        a + d
    }

    /// Nonnegative with total mass 1 (within 1e-12).
    pub fn is_probability(&self) -> bool {
        self.atoms.iter().all(|&(_, w)| w >= -MASS_TOL)
            && self.densities.iter().all(|p| p.density >= -MASS_TOL)
            && (self.total_mass() - 1.0).abs() <= 1e-12
    }

    /// Replace each density piece by midpoint atoms on cells of width at most
    /// `h`.  Total mass is preserved up to rounding.
    pub fn atomize(&self, space: &MetricSpace, h: f64) -> SignedMeasure {
        assert!(h > 0.0, "atomization scale must be positive");
        let mut atoms = self.atoms.clone();
        for p in &self.densities {
            let len = p.to - p.from;
            let k = (len / h - GEOM_TOL).ceil().max(1.0) as usize;
            let cell = len / k as f64;
            for i in 0..k {
                let mid = p.from + cell * (i as f64 + 0.5);
                let pt = space.on_edge(p.edge, mid).expect("midpoint stays on edge");
                atoms.push((pt, p.density * cell));
            }
        }
        SignedMeasure { atoms, densities: Vec::new() }
    }

    /// Atoms merged by location (exact point equality), in first-seen order.
    pub fn merged_atoms(&self) -> Vec<(SpacePoint, f64)> {
        let mut out: Vec<(SpacePoint, f64)> = Vec::new();
        for &(p, w) in &self.atoms {
            if let Some(slot) = out.iter_mut().find(|(q, _)| *q == p) {
                slot.1 += w;
            } else {
                out.push((p, w));
            }
        }
        out
    }

    pub fn has_type_i_atom(&self, space: &MetricSpace) -> bool {
        self.atoms
            .iter()
            .any(|&(p, w)| w.abs() > MASS_TOL && space.point_type(p) == PointType::I)
    }
}

/// Exact integral of a piecewise-affine function against a measure: atoms are
/// evaluated pointwise, densities by the trapezoid rule across breakpoints
/// (exact for affine pieces).
pub fn pair(space: &MetricSpace, f: &PiecewiseAffineFn, m: &SignedMeasure) -> f64 {
    let mut total = 0.0;
    for &(p, w) in &m.atoms {
        total += w * f.eval(space, p);
    }
    for d in &m.densities {
        total += d.density * integrate_on(space, f, d.edge, d.from, d.to);
    }
    total
}

/// Exact integral of `f` along `[from, to]` on one edge.
pub fn integrate_on(
    space: &MetricSpace,
    f: &PiecewiseAffineFn,
    edge: usize,
    from: f64,
    to: f64,
) -> f64 {
    let mut ts = vec![from, to];
    for &(t, _) in &f.breaks[edge] {
        if t > from + GEOM_TOL && t < to - GEOM_TOL {
            ts.push(t);
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let val = |t: f64| -> f64 {
        let p = space.on_edge(edge, t).expect("offset on edge");
        f.eval(space, p)
    };
    let mut total = 0.0;
    for k in 0..ts.len() - 1 {
        let (a, b) = (ts[k], ts[k + 1]);
        total += 0.5 * (val(a) + val(b)) * (b - a);
    }
    total
}

/// Closed region given by vertex and edge index sets.
#[derive(Clone, Debug, Default)]
pub struct GraphRegion {
    pub vertices: HashSet<usize>,
    pub edges: HashSet<usize>,
}

/// True when every Laplacian atom of `f` in the interior of the region is
/// at least `-1e-12`.
pub fn is_subharmonic(space: &MetricSpace, f: &PiecewiseAffineFn, region: &GraphRegion) -> bool {
    for (p, w) in f.laplacian(space).atoms {
        let inside = match p.loc {
            Location::Vertex(v) => region.vertices.contains(&v),
            Location::Interior { edge, .. } => region.edges.contains(&edge),
        };
        if inside && w < -1e-12 {
            return false;
        }
    }
    true
}
