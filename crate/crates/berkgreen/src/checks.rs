//! Invariant residual suite behind the `check` subcommand: samples random
//! points on a given space and reports the worst residual of each core
//! identity.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernel::{base_change_residual, KernelHandle};
use crate::paf::pair;
use crate::space::MetricSpace;
use crate::testgen::{random_paf, random_point, random_skeleton_point};

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub rows: Vec<(String, f64)>,
}

pub fn run_checks(space: &Arc<MetricSpace>, samples: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    // metric axioms and geodesic consistency
    let mut metric_res: f64 = 0.0;
    for _ in 0..samples {
        let x = random_point(&mut rng, space, true);
        let y = random_point(&mut rng, space, true);
        let z = random_point(&mut rng, space, true);
        let dxy = space.rho(x, y);
        let dyx = space.rho(y, x);
        metric_res = metric_res.max((dxy - dyx).abs());
        metric_res = metric_res.max((space.rho(x, x)).abs());
        let tri = space.rho(x, z) - dxy - space.rho(y, z);
        metric_res = metric_res.max(tri.max(0.0));
        let w = space.walk_toward(x, y, 0.5 * dxy);
        metric_res = metric_res.max((space.rho(x, w) + space.rho(w, y) - dxy).abs());
    }
    rows.push(("metric".to_string(), metric_res));

    // kernel symmetry
    let mut sym_res: f64 = 0.0;
    for _ in 0..samples {
        let zeta = random_point(&mut rng, space, false);
        let handle = KernelHandle::new(space.clone(), zeta)?;
        let x = random_point(&mut rng, space, true);
        let y = random_point(&mut rng, space, true);
        let a = handle.value(x, y);
        let b = handle.value(y, x);
        if a.is_finite() && b.is_finite() {
            sym_res = sym_res.max((a - b).abs());
        }
    }
    rows.push(("kernel_symmetry".to_string(), sym_res));

    // base-change identity
    let mut bc_res: f64 = 0.0;
    for _ in 0..samples {
        let zeta = random_point(&mut rng, space, false);
        let zeta_p = random_point(&mut rng, space, false);
        let x = random_point(&mut rng, space, true);
        let y = random_point(&mut rng, space, true);
        bc_res = bc_res.max(base_change_residual(space, zeta, zeta_p, x, y)?);
    }
    rows.push(("base_change".to_string(), bc_res));

    // retraction formula (skeleton evaluation sees only retractions)
    let mut ret_res: f64 = 0.0;
    if space.graph.edges.iter().enumerate().any(|(e, _)| space.edge_tree[e].is_none())
        || space.vertex_tree.iter().any(|t| t.is_none())
    {
        for _ in 0..samples {
            let zeta = random_skeleton_point(&mut rng, space);
            let handle = KernelHandle::new(space.clone(), zeta)?;
            let x = random_skeleton_point(&mut rng, space);
            let y = random_point(&mut rng, space, true);
            let a = handle.value(x, y);
            let b = handle.value(x, space.retract(y));
            ret_res = ret_res.max((a - b).abs());
        }
    }
    rows.push(("retraction_formula".to_string(), ret_res));

    // Laplacian of a solved kernel pairs like delta_zeta - delta_y
    let mut lap_res: f64 = 0.0;
    for _ in 0..samples.min(20) {
        let zeta = random_skeleton_point(&mut rng, space);
        let handle = KernelHandle::new(space.clone(), zeta)?;
        let y = random_skeleton_point(&mut rng, space);
        let gk = handle.solve_paf(y);
        let lap = gk.laplacian(space);
        lap_res = lap_res.max(lap.total_mass().abs());
        let f = random_paf(&mut rng, space);
        let lhs = pair(space, &f, &lap.to_signed());
        let rhs = f.eval(space, zeta) - f.eval(space, y);
        if zeta != y {
            lap_res = lap_res.max((lhs - rhs).abs());
        }
    }
    rows.push(("kernel_laplacian".to_string(), lap_res));

    Ok(CheckReport { rows })
}
