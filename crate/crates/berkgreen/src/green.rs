//! Green's functions normalized against a background probability measure,
//! potential functions, and energy integrals.
//!
//! For a probability measure `mu` with continuous potentials the normalized
//! Green's function is
//! `g_mu(x,y) = g(x,y) - u(x) - u(y) + C`,
//! where `g` is the potential kernel of the chosen base point,
//! `u(x) = \int g(x,.) dmu` and `C = \int\int g dmu dmu`; the constant makes
//! the double integral of `g_mu` against `mu` vanish, and the result does not
//! depend on the base point.
//!
//! Integrals against measures supported on the computation subgraph are
//! evaluated in closed form: single integrals by exact integration of the
//! solved kernel, double integrals by Simpson quadrature on cells where the
//! potential is exactly quadratic (its second derivative is the negated
//! density).  Density pieces on hanging trees outside the subgraph are
//! replaced by midpoint atoms at scale `h` first.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::kernel::KernelHandle;
use crate::paf::{DensityPiece, SignedMeasure, MASS_TOL};
use crate::space::{Location, MetricSpace, PointType, SpacePoint, GEOM_TOL};

/// Sufficient condition for `mu` to have continuous potentials: no atom at a
/// type-I leaf.
pub fn has_continuous_potentials(space: &MetricSpace, mu: &SignedMeasure) -> bool {
    !mu.has_type_i_atom(space)
}

/// A measure split for closed-form integration: merged atoms plus density
/// pieces lying on the computation subgraph.
#[derive(Clone, Debug)]
pub(crate) struct SplitMeasure {
    pub atoms: Vec<(SpacePoint, f64)>,
    pub pieces: Vec<DensityPiece>,
    pub mass: f64,
}

pub(crate) fn split_measure(handle: &KernelHandle, m: &SignedMeasure, h: f64) -> SplitMeasure {
    let space = &*handle.space;
    let mut off = SignedMeasure::default();
    let mut pieces = Vec::new();
    for d in &m.densities {
        if handle.in_gamma(SpacePoint { loc: Location::Interior { edge: d.edge, offset: 0.5 * (d.from + d.to) } }) {
            pieces.push(*d);
        } else {
            off.densities.push(*d);
        }
    }
    let mut atoms = SignedMeasure {
        atoms: m.atoms.clone(),
        densities: Vec::new(),
    };
    atoms.atoms.extend(off.atomize(space, h).atoms);
    SplitMeasure { atoms: atoms.merged_atoms(), pieces, mass: m.total_mass() }
}

/// `\int g_{zeta0}(x, y) dm(y)` for a split measure.
pub(crate) fn potential(handle: &KernelHandle, m: &SplitMeasure, x: SpacePoint) -> f64 {
    let mut total = 0.0;
    for &(p, w) in &m.atoms {
        total += w * handle.value(x, p);
    }
    if !m.pieces.is_empty() {
        let solve = handle.solve_for_pole(handle.tau(x));
        for d in &m.pieces {
            total += d.density * solve.integral_on(d.edge, d.from, d.to);
        }
    }
    total
}

/// `\int\int g_{zeta0}(x, y) da(x) db(y)`, exact for subgraph densities.
///
/// The inner potential of `b` restricted to an edge is piecewise quadratic
/// with breakpoints at the base point, at retractions of atoms of `b`, and at
/// density-piece boundaries of `b`; Simpson quadrature on the resulting cells
/// is exact.
pub(crate) fn pair_integral(handle: &KernelHandle, a: &SplitMeasure, b: &SplitMeasure) -> f64 {
    let space = &*handle.space;
    let mut total = 0.0;
    for &(p, w) in &a.atoms {
        total += w * potential(handle, b, p);
    }
    for d in &a.pieces {
        let mut cuts = vec![d.from, d.to];
        for &(p, _) in &b.atoms {
            if let Location::Interior { edge, offset } = handle.tau(p).loc {
                if edge == d.edge {
                    cuts.push(offset);
                }
            }
        }
        for bp in &b.pieces {
            if bp.edge == d.edge {
                cuts.push(bp.from);
                cuts.push(bp.to);
            }
        }
        if let Location::Interior { edge, offset } = handle.zeta0.loc {
            if edge == d.edge {
                cuts.push(offset);
            }
        }
        cuts.retain(|&t| t >= d.from - GEOM_TOL && t <= d.to + GEOM_TOL);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup_by(|x, y| (*x - *y).abs() <= GEOM_TOL);
        let u = |t: f64| -> f64 {
            let p = space.on_edge(d.edge, t).expect("cut stays on edge");
            potential(handle, b, p)
        };
        for k in 0..cuts.len() - 1 {
            let (s, t) = (cuts[k], cuts[k + 1]);
            let mid = 0.5 * (s + t);
            total += d.density * (t - s) / 6.0 * (u(s) + 4.0 * u(mid) + u(t));
        }
    }
    total
}

/// Green's function of a background probability measure, anchored at a base
/// point whose choice does not affect values.
pub struct GreenFunction {
    pub space: Arc<MetricSpace>,
    pub mu: SignedMeasure,
    pub zeta0: SpacePoint,
    pub handle: KernelHandle,
    /// Normalization constant: the double integral of the kernel against mu.
    pub c: f64,
    /// Atomization scale used for off-subgraph densities.
    pub h: f64,
    mu_split: SplitMeasure,
    u_cache: Mutex<HashMap<SpacePoint, f64>>,
}

pub fn green_build(
    space: Arc<MetricSpace>,
    mu: SignedMeasure,
    zeta0: SpacePoint,
    h: f64,
) -> Result<GreenFunction> {
    mu.validate(&space)?;
    if !mu.is_probability() {
        return Err(Error::input("mu must be a probability measure"));
    }
    if !has_continuous_potentials(&space, &mu) {
        return Err(Error::input("mu must have continuous potentials (no type-I atoms)"));
    }
    let handle = KernelHandle::new(space.clone(), zeta0)?;
    let mu_split = split_measure(&handle, &mu, h);
    let c = pair_integral(&handle, &mu_split, &mu_split);
    Ok(GreenFunction {
        space,
        mu,
        zeta0,
        handle,
        c,
        h,
        mu_split,
        u_cache: Mutex::new(HashMap::new()),
    })
}

/// Energy of a measure against a Green's function, with its decomposition
/// into atomic diagonal, atomic off-diagonal, and density-involving parts.
#[derive(Clone, Copy, Debug)]
pub struct EnergyReport {
    pub value: f64,
    pub diagonal: f64,
    pub off_diagonal: f64,
    pub density: f64,
    pub h: f64,
}

impl GreenFunction {
    /// `u(x) = \int g_{zeta0}(x, .) dmu`.
    pub fn potential_of_mu(&self, x: SpacePoint) -> f64 {
        if let Some(v) = self.u_cache.lock().unwrap().get(&x) {
            return *v;
        }
        let v = potential(&self.handle, &self.mu_split, x);
        self.u_cache.lock().unwrap().insert(x, v);
        v
    }

    /// `g_mu(x, y)`; `+inf` exactly on the type-I diagonal.
    pub fn eval(&self, x: SpacePoint, y: SpacePoint) -> f64 {
        if x == y && self.space.point_type(x) == PointType::I {
            return f64::INFINITY;
        }
        self.handle.value(x, y) - self.potential_of_mu(x) - self.potential_of_mu(y) + self.c
    }

    /// Energy `I(nu) = \int\int g_mu dnu dnu`.  `+inf` when `nu` carries an
    /// atom at a type-I leaf.
    pub fn energy(&self, nu: &SignedMeasure, h: f64) -> Result<EnergyReport> {
        nu.validate(&self.space)?;
        if nu.has_type_i_atom(&self.space) {
            return Ok(EnergyReport {
                value: f64::INFINITY,
                diagonal: f64::INFINITY,
                off_diagonal: 0.0,
                density: 0.0,
                h,
            });
        }
        let snu = split_measure(&self.handle, nu, h);
        let mass = snu.mass;
        // g_mu(x,y) = g(x,y) - u(x) - u(y) + C, so
        // I(nu) = A - 2*mass*B + mass^2*C with A = iint g dnu dnu and
        // B = int u dnu = iint g dnu dmu.
        let a = pair_integral(&self.handle, &snu, &snu);
        let b = pair_integral(&self.handle, &snu, &self.mu_split);
        let total = a - 2.0 * mass * b + mass * mass * self.c;
        let upts: Vec<f64> = snu.atoms.iter().map(|&(p, _)| self.potential_of_mu(p)).collect();
        let mut diagonal = 0.0;
        let mut off_diagonal = 0.0;
        for (i, &(pi, wi)) in snu.atoms.iter().enumerate() {
            diagonal += wi * wi * (self.handle.value(pi, pi) - 2.0 * upts[i] + self.c);
            for (j, &(pj, wj)) in snu.atoms.iter().enumerate() {
                if j >= i {
                    break;
                }
                off_diagonal += 2.0
                    * wi
                    * wj
                    * (self.handle.value(pi, pj) - upts[i] - upts[j] + self.c);
            }
        }
        let density = total - diagonal - off_diagonal;
        Ok(EnergyReport { value: diagonal + off_diagonal + density, diagonal, off_diagonal, density, h })
    }

    /// Prepared generalized potential `x -> \int g_mu(x, .) dnu`.
    pub fn prepare_potential(&self, nu: &SignedMeasure) -> Result<MuPotential<'_>> {
        nu.validate(&self.space)?;
        let snu = split_measure(&self.handle, nu, self.h);
        let b = pair_integral(&self.handle, &snu, &self.mu_split);
        Ok(MuPotential { g: self, mass: snu.mass, b, snu })
    }

    /// `\int g_mu(x, .) dnu` at one point.
    pub fn generalized_potential(&self, nu: &SignedMeasure, x: SpacePoint) -> Result<f64> {
        Ok(self.prepare_potential(nu)?.eval(x))
    }
}

/// Generalized potential with its `nu`-dependent constants precomputed.
pub struct MuPotential<'a> {
    g: &'a GreenFunction,
    snu: SplitMeasure,
    mass: f64,
    b: f64,
}

impl MuPotential<'_> {
    pub fn eval(&self, x: SpacePoint) -> f64 {
        potential(&self.g.handle, &self.snu, x) - self.mass * self.g.potential_of_mu(x) - self.b
            + self.mass * self.g.c
    }
}

/// Potential function `u(x, zeta) = \int g_{zeta0}(zeta, x, y) dnu(y)` built
/// on the three-variable kernel.  Densities of `nu` are atomized at scale `h`.
pub fn potential_function(
    space: &Arc<MetricSpace>,
    zeta0: SpacePoint,
    nu: &SignedMeasure,
    zeta: SpacePoint,
    x: SpacePoint,
    h: f64,
) -> Result<f64> {
    nu.validate(space)?;
    if space.point_type(zeta) == PointType::I {
        let hit = nu
            .atoms
            .iter()
            .any(|&(p, w)| p == zeta && w.abs() > MASS_TOL);
        if hit {
            return Err(Error::domain(
                "zeta is a type-I point in the support of nu",
            ));
        }
    }
    let handle = KernelHandle::new(space.clone(), zeta0)?;
    let atoms = nu.atomize(space, h).merged_atoms();
    let mut total = 0.0;
    for (y, w) in atoms {
        total += w * handle.three_var(zeta, x, y)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paf::DensityPiece;
    use crate::space::{Edge, MetricGraph, PointType, Vertex};
    use crate::testgen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
    fn dirac_mu_reduces_to_kernel() {
        let s = circle(2.0);
        let z = SpacePoint::vertex(0);
        let g = green_build(s.clone(), SignedMeasure::dirac(z), z, 0.01).unwrap();
        assert!(g.c.abs() <= 1e-12);
        let h = KernelHandle::new(s.clone(), z).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let x = s.on_edge(0, t).unwrap();
            let y = s.on_edge(1, t).unwrap();
            assert!((g.eval(x, y) - h.value(x, y)).abs() <= 1e-10);
        }
    }

    #[test]
    fn mu_energy_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let s = Arc::new(testgen::random_space(&mut rng, 6));
            let mu = testgen::random_mixed_probability(&mut rng, &s);
            let z = testgen::random_skeleton_point(&mut rng, &s);
            let g = green_build(s.clone(), mu.clone(), z, 0.01).unwrap();
            let rep = g.energy(&mu, 0.01).unwrap();
            assert!(rep.value.abs() <= 1e-9, "energy of mu against itself: {}", rep.value);
        }
    }

    #[test]
    fn circle_haar_closed_form() {
        for l in [1.0, 3.0] {
            let s = circle(l);
            let g = green_build(s.clone(), haar(&s), SpacePoint::vertex(0), 0.005).unwrap();
            let closed = |d: f64| d * d / (2.0 * l) - d / 2.0 + l / 12.0;
            for (ta, tb) in [(0.0, 0.3), (0.1, 0.45), (0.25, 0.25)] {
                let x = s.on_edge(0, ta * l).unwrap();
                let y = s.on_edge(0, tb * l).unwrap();
                let d = s.rho(x, y).min(l - s.rho(x, y));
                let got = g.eval(x, y);
                assert!((got - closed(d)).abs() <= 1e-9, "haar green {got} vs {}", closed(d));
            }
            // both-edge points
            let x = s.on_edge(0, 0.2 * l).unwrap();
            let y = s.on_edge(1, 0.3 * l).unwrap();
            let d = s.rho(x, y);
            assert!((g.eval(x, y) - closed(d)).abs() <= 1e-9);
        }
    }

    #[test]
    fn base_point_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..8 {
            let s = Arc::new(testgen::random_space(&mut rng, 6));
            let mu = testgen::random_atomic_probability(&mut rng, &s, 3);
            let z1 = testgen::random_skeleton_point(&mut rng, &s);
            let z2 = testgen::random_skeleton_point(&mut rng, &s);
            let g1 = green_build(s.clone(), mu.clone(), z1, 0.01).unwrap();
            let g2 = green_build(s.clone(), mu.clone(), z2, 0.01).unwrap();
            for _ in 0..6 {
                let x = testgen::random_point(&mut rng, &s, false);
                let y = testgen::random_point(&mut rng, &s, false);
                let a = g1.eval(x, y);
                let b = g2.eval(x, y);
                assert!((a - b).abs() <= 1e-8, "base dependence {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn green_pairing_with_laplacians() {
        // integrating dd^c f against g_mu(., y) recovers f(y) - int f dmu
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..8 {
            let s = Arc::new(testgen::random_space(&mut rng, 5));
            let mu = testgen::random_atomic_probability(&mut rng, &s, 2);
            let z = testgen::random_skeleton_point(&mut rng, &s);
            let g = green_build(s.clone(), mu.clone(), z, 0.01).unwrap();
            let y = testgen::random_point(&mut rng, &s, false);
            let f = testgen::random_paf(&mut rng, &s);
            let lap = f.laplacian(&s);
            let mut lhs = 0.0;
            for &(p, w) in &lap.atoms {
                lhs += w * g.eval(p, y);
            }
            let fmu: f64 = mu.atoms.iter().map(|&(p, w)| w * f.eval(&s, p)).sum();
            let rhs = fmu - f.eval(&s, y);
            assert!((lhs - rhs).abs() <= 1e-8, "pairing residual {}", (lhs - rhs).abs());
        }
    }

    #[test]
    fn point_mass_energy_is_diagonal() {
        let s = circle(2.0);
        let g = green_build(s.clone(), haar(&s), SpacePoint::vertex(0), 0.005).unwrap();
        let x = s.on_edge(0, 0.3).unwrap();
        let rep = g.energy(&SignedMeasure::dirac(x), 0.005).unwrap();
        let expect = g.eval(x, x);
        assert!((rep.value - expect).abs() <= 1e-9);
        assert!((rep.diagonal - expect).abs() <= 1e-9);
        assert!(rep.off_diagonal.abs() <= 1e-12);
        assert!(rep.density.abs() <= 1e-9);
    }

    #[test]
    fn type_i_atom_energy_infinite() {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".into(), ptype: PointType::II },
                Vertex { id: "b".into(), ptype: PointType::II },
                Vertex { id: "p".into(), ptype: PointType::I },
            ],
            vec![
                Edge { id: "e".into(), u: 0, v: 1, length: 1.0 },
                Edge { id: "t".into(), u: 1, v: 2, length: 0.5 },
            ],
        )
        .unwrap();
        let s = Arc::new(
            MetricSpace::from_parts(g, vec![None, None, Some(0)], vec![None, Some(0)], vec![1])
                .unwrap(),
        );
        let z = SpacePoint::vertex(0);
        let mu = SignedMeasure::dirac(z);
        let gr = green_build(s.clone(), mu, z, 0.01).unwrap();
        let nu = SignedMeasure::dirac(SpacePoint::vertex(2));
        let rep = gr.energy(&nu, 0.01).unwrap();
        assert!(rep.value.is_infinite());
        // a type-I atom in mu itself is rejected
        let bad = SignedMeasure::dirac(SpacePoint::vertex(2));
        assert!(green_build(s.clone(), bad, z, 0.01).is_err());
    }

    #[test]
    fn generalized_potential_matches_direct() {
        let s = circle(2.0);
        let mu = haar(&s);
        let g = green_build(s.clone(), mu, SpacePoint::vertex(0), 0.005).unwrap();
        let nu = SignedMeasure {
            atoms: vec![
                (s.on_edge(0, 0.2).unwrap(), 0.4),
                (s.on_edge(1, 0.6).unwrap(), 0.6),
            ],
            densities: vec![],
        };
        let pot = g.prepare_potential(&nu).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let x = s.on_edge(0, t).unwrap();
            let direct: f64 =
                nu.atoms.iter().map(|&(p, w)| w * g.eval(x, p)).sum();
            assert!((pot.eval(x) - direct).abs() <= 1e-9);
        }
    }

    #[test]
    fn potential_function_identities() {
        // dd^c u_nu pairs like mass * delta_zeta - nu
        let s = circle(2.0);
        let nu = SignedMeasure {
            atoms: vec![(s.on_edge(0, 0.3).unwrap(), 1.0)],
            densities: vec![],
        };
        let z0 = SpacePoint::vertex(0);
        let zeta = s.on_edge(0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..5 {
            let f = testgen::random_paf(&mut rng, &s);
            let lap = f.laplacian(&s);
            let mut lhs = 0.0;
            for &(p, w) in &lap.atoms {
                lhs += w * potential_function(&s, z0, &nu, zeta, p, 0.01).unwrap();
            }
            let fnu: f64 = nu.atoms.iter().map(|&(p, w)| w * f.eval(&s, p)).sum();
            let rhs = f.eval(&s, zeta) - fnu;
            assert!((lhs - rhs).abs() <= 1e-8, "potential pairing residual {}", (lhs - rhs).abs());
        }
    }
}
