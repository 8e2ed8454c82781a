//! Coordinate kernels: exp/log maps, projections and distances per factor.
//!
//! All functions take ambient-coordinate views and assume (but do not
//! re-validate) that point inputs satisfy the manifold constraint; the typed
//! wrappers in the parent module validate at construction time.

use ndarray::{Array1, ArrayView1};

use crate::error::{MsgError, Result};

use super::{ManifoldKind, ManifoldSpec, CLAMP_TOL, POINT_TOL, TANGENT_TOL};

/// Switch point below which 0/0 coefficients are replaced by Taylor series.
pub(crate) const SERIES_TOL: f64 = 1e-4;

pub(crate) fn minkowski(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let mut acc = -u[0] * v[0];
    for i in 1..u.len() {
        acc += u[i] * v[i];
    }
    acc
}

fn dot(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

fn inner(kind: ManifoldKind, u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    match kind {
        ManifoldKind::Lorentz => minkowski(u, v),
        _ => dot(u, v),
    }
}

/// `sinh(t)/t`, finite at 0.
pub(crate) fn sinhc(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        let t2 = t * t;
        1.0 + t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sinh() / t
    }
}

/// `sin(t)/t`, finite at 0.
pub(crate) fn sinc(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

/// `t/sinh(t)`, finite at 0; the log-map coefficient on Lorentz.
pub(crate) fn inv_sinhc(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        let t2 = t * t;
        1.0 - t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    } else {
        t / t.sinh()
    }
}

/// `t/sin(t)`, finite at 0; the log-map coefficient on the sphere.
pub(crate) fn inv_sinc(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        let t2 = t * t;
        1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    } else {
        t / t.sin()
    }
}

/// `(t*cosh(t) - sinh(t)) / t^3`, the rank-one coefficient of the Lorentz
/// exp-map Jacobian.
pub(crate) fn lorentz_jac_coeff(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        1.0 / 3.0 + t * t / 30.0
    } else {
        (t * t.cosh() - t.sinh()) / (t * t * t)
    }
}

/// `(t*cos(t) - sin(t)) / t^3`, the sphere counterpart.
pub(crate) fn sphere_jac_coeff(t: f64) -> f64 {
    if t.abs() < SERIES_TOL {
        -1.0 / 3.0 + t * t / 30.0
    } else {
        (t * t.cos() - t.sin()) / (t * t * t)
    }
}

fn clamp_acosh_arg(alpha: f64) -> Result<f64> {
    if alpha < 1.0 {
        if alpha > 1.0 - CLAMP_TOL {
            Ok(1.0)
        } else {
            Err(MsgError::Domain(format!(
                "Lorentz inner product out of range: -<z,x>_L = {alpha} < 1 (off-manifold input)"
            )))
        }
    } else {
        Ok(alpha)
    }
}

fn clamp_acos_arg(alpha: f64) -> Result<f64> {
    if alpha.abs() <= 1.0 {
        Ok(alpha)
    } else if alpha.abs() < 1.0 + CLAMP_TOL {
        Ok(alpha.clamp(-1.0, 1.0))
    } else {
        Err(MsgError::Domain(format!(
            "sphere inner product out of range: <z,x> = {alpha} (off-manifold input)"
        )))
    }
}

pub fn check_point(spec: &ManifoldSpec, z: ArrayView1<'_, f64>) -> Result<()> {
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(ndarray::s![range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let q = minkowski(zs, zs);
                if (q + 1.0).abs() > POINT_TOL {
                    return Err(MsgError::Domain(format!(
                        "point off the hyperboloid: <z,z>_L = {q}"
                    )));
                }
                if zs[0] <= 0.0 {
                    return Err(MsgError::Domain("point on the lower hyperboloid sheet: z0 <= 0".into()));
                }
            }
            ManifoldKind::Sphere => {
                let q = dot(zs, zs);
                if (q - 1.0).abs() > POINT_TOL {
                    return Err(MsgError::Domain(format!("point off the unit sphere: <z,z> = {q}")));
                }
            }
            ManifoldKind::Euclidean => {
                if zs.iter().any(|x| !x.is_finite()) {
                    return Err(MsgError::Numeric("non-finite Euclidean coordinates".into()));
                }
            }
            ManifoldKind::Product => unreachable!("factors are non-product"),
        }
    }
    Ok(())
}

pub fn check_tangent(spec: &ManifoldSpec, z: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<()> {
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(ndarray::s![range.clone()]);
        let vs = v.slice(ndarray::s![range]);
        match factor.kind() {
            ManifoldKind::Lorentz | ManifoldKind::Sphere => {
                let q = inner(factor.kind(), zs, vs);
                if q.abs() > TANGENT_TOL {
                    return Err(MsgError::Domain(format!(
                        "vector not tangent at base point: <z,v> = {q}"
                    )));
                }
            }
            ManifoldKind::Euclidean => {
                if vs.iter().any(|x| !x.is_finite()) {
                    return Err(MsgError::Numeric("non-finite tangent coordinates".into()));
                }
            }
            ManifoldKind::Product => unreachable!(),
        }
    }
    Ok(())
}

pub fn origin_coords(spec: &ManifoldSpec) -> Array1<f64> {
    let mut out = Array1::zeros(spec.ambient_dim());
    for (range, factor) in spec.factor_slices() {
        match factor.kind() {
            ManifoldKind::Lorentz => out[range.start] = 1.0,
            ManifoldKind::Sphere => out[range.start] = -1.0,
            ManifoldKind::Euclidean => {}
            ManifoldKind::Product => unreachable!(),
        }
    }
    out
}

/// Norm of a tangent vector in the manifold metric; the Minkowski form is
/// non-negative on tangent spaces of the hyperboloid.
pub fn tangent_norm(spec: &ManifoldSpec, v: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (range, factor) in spec.factor_slices() {
        let vs = v.slice(ndarray::s![range]);
        acc += inner(factor.kind(), vs, vs).max(0.0);
    }
    acc.sqrt()
}

pub fn proj_tangent_coords(
    spec: &ManifoldSpec,
    z: ArrayView1<'_, f64>,
    u: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let mut out = u.to_owned();
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(ndarray::s![range.clone()]);
        let us = u.slice(ndarray::s![range.clone()]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let c = minkowski(zs, us);
                let mut os = out.slice_mut(ndarray::s![range]);
                os += &(&zs * c);
            }
            ManifoldKind::Sphere => {
                let c = dot(zs, us);
                let mut os = out.slice_mut(ndarray::s![range]);
                os -= &(&zs * c);
            }
            ManifoldKind::Euclidean => {}
            ManifoldKind::Product => unreachable!(),
        }
    }
    out
}

pub fn exp_coords(
    spec: &ManifoldSpec,
    z: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MsgError::Numeric("exp_map: non-finite tangent vector".into()));
    }
    let mut out = Array1::zeros(z.len());
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(ndarray::s![range.clone()]);
        let vs = v.slice(ndarray::s![range.clone()]);
        let mut os = out.slice_mut(ndarray::s![range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let t = minkowski(vs, vs).max(0.0).sqrt();
                if t == 0.0 && vs.iter().all(|&x| x == 0.0) {
                    os.assign(&zs);
                    continue;
                }
                let mut res = &zs * t.cosh() + &vs * sinhc(t);
                // Rescale onto the hyperboloid to cancel floating-point drift.
                let q = -minkowski(res.view(), res.view());
                res *= 1.0 / q.sqrt();
                os.assign(&res);
            }
            ManifoldKind::Sphere => {
                let t = dot(vs, vs).sqrt();
                if t == 0.0 {
                    os.assign(&zs);
                    continue;
                }
                let mut res = &zs * t.cos() + &vs * sinc(t);
                let n = dot(res.view(), res.view()).sqrt();
                res *= 1.0 / n;
                os.assign(&res);
            }
            ManifoldKind::Euclidean => {
                os.assign(&(&zs + &vs));
            }
            ManifoldKind::Product => unreachable!(),
        }
    }
    Ok(out)
}

pub fn log_coords(
    spec: &ManifoldSpec,
    z: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(z.len());
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(ndarray::s![range.clone()]);
        let xs = x.slice(ndarray::s![range.clone()]);
        let mut os = out.slice_mut(ndarray::s![range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let alpha = clamp_acosh_arg(-minkowski(zs, xs))?;
                let d = alpha.acosh();
                let coef = inv_sinhc(d);
                os.assign(&((&xs - &(&zs * alpha)) * coef));
            }
            ManifoldKind::Sphere => {
                let alpha = clamp_acos_arg(dot(zs, xs))?;
                if 1.0 + alpha < CLAMP_TOL {
                    return Err(MsgError::Domain(
                        "log_map undefined at antipodal points on the sphere".into(),
                    ));
                }
                let d = alpha.acos();
                let coef = inv_sinc(d);
                os.assign(&((&xs - &(&zs * alpha)) * coef));
            }
            ManifoldKind::Euclidean => {
                os.assign(&(&xs - &zs));
            }
            ManifoldKind::Product => unreachable!(),
        }
    }
    Ok(out)
}

/// Geodesic distance per factor, summed over factors.
pub fn distance_coords(
    spec: &ManifoldSpec,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (range, factor) in spec.factor_slices() {
        let xs = x.slice(ndarray::s![range.clone()]);
        let ys = y.slice(ndarray::s![range]);
        total += match factor.kind() {
            ManifoldKind::Lorentz => clamp_acosh_arg(-minkowski(xs, ys))?.acosh(),
            ManifoldKind::Sphere => clamp_acos_arg(dot(xs, ys))?.acos(),
            ManifoldKind::Euclidean => {
                xs.iter().zip(ys.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            ManifoldKind::Product => unreachable!(),
        };
    }
    Ok(total)
}
