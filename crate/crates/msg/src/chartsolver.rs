//! First-order manifold ODE integrator that re-centers a chart at every step.
//! Each step maps the current point's neighborhood to its tangent space, takes
//! an Euler step of the field there, and shoots back with the exp map. One
//! step with a constant field is exactly one manifold spiking layer, which is
//! what makes the solver a useful cross-check; it is not on the training path.

use crate::error::{MsgError, Result};
use crate::geometry::{exp_map, ManifoldPoint, TangentVector, TANGENT_TOL};

/// A time-dependent tangent vector field. The returned vector must be tangent
/// at the queried point.
pub trait VectorField {
    fn eval(&self, z: &ManifoldPoint, tau: f64) -> Result<TangentVector>;
}

impl<F> VectorField for F
where
    F: Fn(&ManifoldPoint, f64) -> Result<TangentVector>,
{
    fn eval(&self, z: &ManifoldPoint, tau: f64) -> Result<TangentVector> {
        self(z, tau)
    }
}

fn checked_step(z: &ManifoldPoint, field: &impl VectorField, tau: f64, eps: f64) -> Result<ManifoldPoint> {
    let u = field.eval(z, tau)?;
    if u.base() != z {
        return Err(MsgError::Contract("vector field output is based at a different point".into()));
    }
    // per-factor tangency, with tolerance scaled to the summand magnitudes so
    // large coordinates along hyperbolic flows do not trip on rounding
    for (range, factor) in z.spec().factor_slices() {
        let zs = z.coords().slice_move(ndarray::s![range.clone()]);
        let us = u.coords().slice_move(ndarray::s![range]);
        let (q, scale) = match factor.kind() {
            crate::geometry::ManifoldKind::Lorentz => (
                -zs[0] * us[0] + zs.iter().skip(1).zip(us.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>(),
                1.0 + zs.iter().zip(us.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>(),
            ),
            crate::geometry::ManifoldKind::Sphere => (
                zs.iter().zip(us.iter()).map(|(a, b)| a * b).sum::<f64>(),
                1.0 + zs.iter().zip(us.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>(),
            ),
            _ => (0.0, 1.0),
        };
        if q.abs() > TANGENT_TOL * scale {
            return Err(MsgError::Contract(format!(
                "vector field output is not tangent at the queried point (residual {:e})",
                q.abs()
            )));
        }
    }
    let step = TangentVector::new_unchecked(z.clone(), u.coords().to_owned() * eps);
    exp_map(z, &step)
}

/// Integrate the field from `z0` over `[0, t_end]` using `num_charts` equal
/// chart steps; returns the endpoint.
pub fn dynamic_chart_solve(
    field: &impl VectorField,
    z0: &ManifoldPoint,
    t_end: f64,
    num_charts: usize,
) -> Result<ManifoldPoint> {
    Ok(dynamic_chart_trajectory(field, z0, t_end, num_charts)?
        .pop()
        .expect("trajectory includes the start point"))
}

/// As [`dynamic_chart_solve`] but keeping every intermediate point,
/// `num_charts + 1` entries starting at `z0`.
pub fn dynamic_chart_trajectory(
    field: &impl VectorField,
    z0: &ManifoldPoint,
    t_end: f64,
    num_charts: usize,
) -> Result<Vec<ManifoldPoint>> {
    if num_charts < 1 {
        return Err(MsgError::Config("need at least one chart step".into()));
    }
    if !(t_end > 0.0) {
        return Err(MsgError::Config("integration time must be positive".into()));
    }
    let eps = t_end / num_charts as f64;
    let mut out = Vec::with_capacity(num_charts + 1);
    out.push(z0.clone());
    let mut z = z0.clone();
    for k in 0..num_charts {
        z = checked_step(&z, field, k as f64 * eps, eps)?;
        out.push(z.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        coords, distance, proj_tangent, random_point, random_tangent, ManifoldSpec,
    };
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_field_is_stationary() {
        let spec = ManifoldSpec::lorentz(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let z0 = random_point(&spec, &mut rng);
        let field = |z: &ManifoldPoint, _tau: f64| {
            Ok(TangentVector::new_unchecked(z.clone(), Array1::zeros(5)))
        };
        for k in [1usize, 7, 64] {
            let end = dynamic_chart_solve(&field, &z0, 1.0, k).unwrap();
            assert_eq!(end.coords().to_vec(), z0.coords().to_vec());
        }
    }

    #[test]
    fn one_step_equals_direct_exp() {
        let spec = ManifoldSpec::sphere(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let z0 = random_point(&spec, &mut rng);
        let c = Array1::from_iter((0..4).map(|i| 0.3 * (i as f64 + 1.0)));
        let field = |z: &ManifoldPoint, _tau: f64| proj_tangent(z, c.view());
        let eps = 0.1;
        let end = dynamic_chart_solve(&field, &z0, eps, 1).unwrap();
        let direct = {
            let u = proj_tangent(&z0, c.view()).unwrap();
            let step = TangentVector::new_unchecked(z0.clone(), u.coords().to_owned() * eps);
            crate::geometry::exp_map(&z0, &step).unwrap()
        };
        assert_eq!(end.coords().to_vec(), direct.coords().to_vec());
    }

    #[test]
    fn non_tangent_field_is_contract_violation() {
        let spec = ManifoldSpec::lorentz(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let z0 = random_point(&spec, &mut rng);
        let field = |z: &ManifoldPoint, _tau: f64| {
            let mut bad = Array1::zeros(4);
            bad[0] = 1.0;
            Ok(TangentVector::new_unchecked(z.clone(), bad))
        };
        assert!(matches!(
            dynamic_chart_solve(&field, &z0, 1.0, 4),
            Err(MsgError::Contract(_))
        ));
    }

    #[test]
    fn intermediate_points_stay_on_manifold() {
        let spec = ManifoldSpec::product(vec![
            ManifoldSpec::lorentz(2).unwrap(),
            ManifoldSpec::sphere(2).unwrap(),
        ])
        .unwrap();
        // start at the origin with a modest field: this flow accelerates on
        // the Lorentz factor and blows up in finite time if pushed too hard
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let z0 = crate::geometry::origin(&spec);
        let c = random_tangent(&z0, 0.4, &mut rng).into_coords();
        let field = |z: &ManifoldPoint, _tau: f64| proj_tangent(z, c.view());
        let path = dynamic_chart_trajectory(&field, &z0, 1.0, 32).unwrap();
        assert_eq!(path.len(), 33);
        for p in &path {
            coords::check_point(&spec, p.coords()).unwrap();
        }
    }

    #[test]
    fn first_order_convergence_rate() {
        // projected constant-direction field; reference at K=4096
        for spec in [ManifoldSpec::lorentz(3).unwrap(), ManifoldSpec::sphere(3).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(104);
            let z0 = random_point(&spec, &mut rng);
            let c = random_tangent(&z0, 0.7, &mut rng).into_coords();
            let field = |z: &ManifoldPoint, _tau: f64| proj_tangent(z, c.view());
            let reference = dynamic_chart_solve(&field, &z0, 1.0, 4096).unwrap();
            let ks = [8usize, 16, 32, 64, 128, 256, 512, 1024];
            let errs: Vec<f64> = ks
                .iter()
                .map(|&k| {
                    let end = dynamic_chart_solve(&field, &z0, 1.0, k).unwrap();
                    distance(&end, &reference).unwrap()
                })
                .collect();
            for pair in errs.windows(2) {
                let ratio = pair[0] / pair[1];
                assert!((1.5..=3.0).contains(&ratio), "{spec}: halving ratio {ratio}");
            }
            // least-squares slope of log err against log K
            let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
            let ys: Vec<f64> = errs.iter().map(|&e| e.ln()).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let slope = xs
                .iter()
                .zip(ys.iter())
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
            assert!((-1.3..=-0.7).contains(&slope), "{spec}: slope {slope}");
        }
    }
}
