//! Local models of elliptic curves and the discrepancy of point
//! configurations against the canonical measure.
//!
//! Good reduction: the skeleton is a single vertex carrying a point mass.
//! Multiplicative reduction: the skeleton is a circle of circumference
//! `L = max(log|j|, 0)` carrying the uniform (Haar) density; on that circle
//! the normalized Green's function has the closed form
//! `g(d) = d^2/(2L) - d/2 + L/12` in the distance `d` between the points.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green::{green_build, GreenFunction};
use crate::minimize::bl_distance;
use crate::paf::{DensityPiece, SignedMeasure};
use crate::space::{MetricGraph, MetricSpace, PointType, SpacePoint, Vertex, Edge, GEOM_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Good,
    Multiplicative,
}

/// Skeleton model of an elliptic curve over a local field, with its
/// canonical measure.
pub struct EllipticModel {
    pub reduction: Reduction,
    pub log_abs_j: f64,
    /// Circle circumference (`0` for good reduction).
    pub circumference: f64,
    pub space: Arc<MetricSpace>,
    pub mu: SignedMeasure,
    pub zeta0: SpacePoint,
    /// Atomization scale used when building the Green's function.
    pub h: f64,
    pub green: GreenFunction,
}

/// Build the model.  `trees` lets callers hang extra trees on the skeleton by
/// building the space themselves; the plain constructors cover the two
/// standard skeletons.
pub fn build_elliptic(reduction: Reduction, log_abs_j: f64, h: f64) -> Result<EllipticModel> {
    let (space, mu, zeta0, circumference) = match reduction {
        Reduction::Good => {
            let graph = MetricGraph::new(
                vec![Vertex { id: "o".into(), ptype: PointType::II }],
                Vec::new(),
            )?;
            let space = Arc::new(MetricSpace::skeleton_only(graph));
            let zeta0 = SpacePoint::vertex(0);
            (space, SignedMeasure::dirac(zeta0), zeta0, 0.0)
        }
        Reduction::Multiplicative => {
            let l = log_abs_j.max(0.0);
            if l <= 0.0 {
                return Err(Error::input(
                    "multiplicative reduction requires log|j| > 0",
                ));
            }
            let graph = MetricGraph::new(
                vec![
                    Vertex { id: "o".into(), ptype: PointType::II },
                    Vertex { id: "m".into(), ptype: PointType::II },
                ],
                vec![
                    Edge { id: "c0".into(), u: 0, v: 1, length: l / 2.0 },
                    Edge { id: "c1".into(), u: 0, v: 1, length: l / 2.0 },
                ],
            )?;
            let space = Arc::new(MetricSpace::skeleton_only(graph));
            let mu = SignedMeasure {
                atoms: Vec::new(),
                densities: vec![
                    DensityPiece { edge: 0, from: 0.0, to: l / 2.0, density: 1.0 / l },
                    DensityPiece { edge: 1, from: 0.0, to: l / 2.0, density: 1.0 / l },
                ],
            };
            (space, mu, SpacePoint::vertex(0), l)
        }
    };
    let green = green_build(space.clone(), mu.clone(), zeta0, h)?;
    Ok(EllipticModel { reduction, log_abs_j, circumference, space, mu, zeta0, h, green })
}

/// Attach a model built on a caller-provided space (e.g. with hanging trees);
/// the canonical measure must still be supplied correctly by the caller.
pub fn build_elliptic_on(
    reduction: Reduction,
    log_abs_j: f64,
    space: Arc<MetricSpace>,
    mu: SignedMeasure,
    zeta0: SpacePoint,
    h: f64,
) -> Result<EllipticModel> {
    let circumference = match reduction {
        Reduction::Good => 0.0,
        Reduction::Multiplicative => log_abs_j.max(0.0),
    };
    let green = green_build(space.clone(), mu.clone(), zeta0, h)?;
    Ok(EllipticModel { reduction, log_abs_j, circumference, space, mu, zeta0, h, green })
}

impl EllipticModel {
    /// Point at arc position `s` (mod `L`) on the circle skeleton.  Arc
    /// position runs through edge `c0` from `o` to `m`, then back along `c1`.
    pub fn circle_point(&self, s: f64) -> Result<SpacePoint> {
        if self.reduction != Reduction::Multiplicative {
            return Err(Error::input("circle points require multiplicative reduction"));
        }
        let l = self.circumference;
        let mut t = s % l;
        if t < 0.0 {
            t += l;
        }
        if t <= l / 2.0 {
            self.space.on_edge(0, t)
        } else {
            self.space.on_edge(1, l - t)
        }
    }

    /// Local discrepancy of a configuration of distinct points:
    /// `(1/N^2) * (sum_{i != j} g_mu(P_i, P_j) + (N/12) * max(log|j|, 0))`.
    pub fn local_discrepancy(&self, pts: &[SpacePoint]) -> Result<f64> {
        let n = pts.len();
        if n == 0 {
            return Err(Error::input("configuration must be nonempty"));
        }
        for i in 0..n {
            for j in 0..i {
                if pts[i] == pts[j] {
                    return Err(Error::input(format!(
                        "configuration points {} and {} coincide",
                        j, i
                    )));
                }
            }
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += self.green.eval(pts[i], pts[j]);
                }
            }
        }
        let l_plus = self.log_abs_j.max(0.0);
        Ok((sum + n as f64 / 12.0 * l_plus) / (n as f64 * n as f64))
    }
}

/// How to generate an n-point configuration on the circle.
#[derive(Clone, Debug)]
pub enum PointGenerator {
    Equispaced,
    RandomUniform,
    /// Points drawn uniformly from an arc of the given width.
    Clustered { width: f64 },
    /// Caller-provided configurations, one per requested n (matched by size).
    Custom(Vec<Vec<SpacePoint>>),
}

/// One row of an equidistribution trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub n: usize,
    pub discrepancy: f64,
    pub bl: f64,
    pub seed: u64,
    pub h: f64,
}

/// Discrepancy and bounded-Lipschitz distance to the canonical measure for a
/// family of configurations.  Deterministic given the seed.
pub fn equidistribution_experiment(
    model: &EllipticModel,
    generator: &PointGenerator,
    ns: &[usize],
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let configs: Vec<Vec<SpacePoint>> = ns
        .iter()
        .map(|&n| generate_points(model, generator, n, seed))
        .collect::<Result<_>>()?;
    let rows: Vec<Result<TraceRow>> = ns
        .par_iter()
        .zip(configs.par_iter())
        .map(|(&n, pts)| {
            let d = model.local_discrepancy(pts)?;
            let nu = SignedMeasure {
                atoms: pts.iter().map(|&p| (p, 1.0 / n as f64)).collect(),
                densities: Vec::new(),
            };
            let bl = bl_distance(&model.space, &nu, &model.mu);
            Ok(TraceRow { n, discrepancy: d, bl, seed, h: model.h })
        })
        .collect();
    rows.into_iter().collect()
}

/// Generate one configuration of `n` distinct points.
pub fn generate_points(
    model: &EllipticModel,
    generator: &PointGenerator,
    n: usize,
    seed: u64,
) -> Result<Vec<SpacePoint>> {
    if n == 0 {
        return Err(Error::input("configuration size must be positive"));
    }
    let l = model.circumference;
    match generator {
        PointGenerator::Custom(list) => list
            .iter()
            .find(|c| c.len() == n)
            .cloned()
            .ok_or_else(|| Error::input(format!("no custom configuration with {n} points"))),
        PointGenerator::Equispaced => (0..n)
            .map(|k| model.circle_point(l * k as f64 / n as f64))
            .collect(),
        PointGenerator::RandomUniform => {
            draw_distinct(model, n, seed, |rng| rng.gen::<f64>() * l)
        }
        PointGenerator::Clustered { width } => {
            if !(*width > 0.0) {
                return Err(Error::input("cluster width must be positive"));
            }
            let w = *width;
            draw_distinct(model, n, seed, move |rng| rng.gen::<f64>() * w)
        }
    }
}

fn draw_distinct(
    model: &EllipticModel,
    n: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> Result<Vec<SpacePoint>> {
    // mix n into the stream so different sizes are independent
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut pts: Vec<SpacePoint> = Vec::with_capacity(n);
    let mut tries = 0;
    while pts.len() < n {
        let p = model.circle_point(draw(&mut rng))?;
        if pts.iter().all(|&q| model.space.rho(p, q) > GEOM_TOL) {
            pts.push(p);
        } else {
            tries += 1;
            if tries > 100 * n {
                return Err(Error::input("could not draw distinct points"));
            }
        }
    }
    Ok(pts)
}
