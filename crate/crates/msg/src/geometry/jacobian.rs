//! Closed-form ambient Jacobians of the exp and log maps, plus the tangent
//! projection Jacobians consumed by the backward pass. Products assemble as
//! block diagonals of factor Jacobians.

use std::cell::Cell;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{MsgError, Result};

use super::maps::{
    inv_sinc, inv_sinhc, lorentz_jac_coeff, minkowski, sinc, sinhc, sphere_jac_coeff, SERIES_TOL,
};
use super::{ManifoldKind, ManifoldSpec, CLAMP_TOL};

thread_local! {
    static JAC_V_EVALS: Cell<u64> = const { Cell::new(0) };
    static JAC_Z_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Running per-thread counts of `(jac_exp_v, jac_exp_z)` evaluations; used to
/// assert the backward pass is recurrence-free in the time dimension.
pub fn jacobian_eval_counts() -> (u64, u64) {
    (JAC_V_EVALS.with(|c| c.get()), JAC_Z_EVALS.with(|c| c.get()))
}

pub fn reset_jacobian_eval_counts() {
    JAC_V_EVALS.with(|c| c.set(0));
    JAC_Z_EVALS.with(|c| c.set(0));
}

fn dot(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Flip the sign of the time coordinate: `[v0, v1, ..] -> [-v0, v1, ..]`.
fn minkowski_flip(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = v.to_owned();
    out[0] = -out[0];
    out
}

/// `out[block] += a * b^T` restricted to a diagonal block.
fn add_outer(block: &mut ndarray::ArrayViewMut2<'_, f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            block[[i, j]] += ai * bj;
        }
    }
}

fn add_scaled_identity(block: &mut ndarray::ArrayViewMut2<'_, f64>, c: f64) {
    for i in 0..block.nrows() {
        block[[i, i]] += c;
    }
}

/// Ambient Jacobian of `w -> Exp_z(w)` at `w = v`.
pub fn jac_exp_v(spec: &ManifoldSpec, z: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Array2<f64> {
    JAC_V_EVALS.with(|c| c.set(c.get() + 1));
    let n = spec.ambient_dim();
    let mut out = Array2::zeros((n, n));
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(s![range.clone()]);
        let vs = v.slice(s![range.clone()]);
        let mut block = out.slice_mut(s![range.clone(), range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let t = minkowski(vs, vs).max(0.0).sqrt();
                let vhat = minkowski_flip(vs);
                let sc = sinhc(t);
                // a(t) v vhat^T + sinhc(t) (I + z vhat^T)
                add_outer(&mut block, vs, vhat.view());
                block *= lorentz_jac_coeff(t) / sc.max(f64::MIN_POSITIVE);
                add_scaled_identity(&mut block, 1.0);
                add_outer(&mut block, zs, vhat.view());
                block *= sc;
            }
            ManifoldKind::Sphere => {
                let t = dot(vs, vs).sqrt();
                let sc = sinc(t);
                let mut tmp = Array2::zeros((block.nrows(), block.ncols()));
                {
                    let mut tv = tmp.view_mut();
                    add_outer(&mut tv, vs, vs);
                    tv *= sphere_jac_coeff(t);
                    add_scaled_identity(&mut tv, sc);
                    let mut zo = Array2::zeros((block.nrows(), block.ncols()));
                    let mut zv = zo.view_mut();
                    add_outer(&mut zv, zs, vs);
                    tv -= &(&zo * sc);
                }
                block.assign(&tmp);
            }
            ManifoldKind::Euclidean => add_scaled_identity(&mut block, 1.0),
            ManifoldKind::Product => unreachable!(),
        }
    }
    out
}

/// Ambient Jacobian of `p -> Exp_p(v)` at `p = z`: `cosh(|v|) I` on Lorentz,
/// `cos(|v|) I` on the sphere, identity in Euclidean space.
pub fn jac_exp_z(spec: &ManifoldSpec, _z: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Array2<f64> {
    JAC_Z_EVALS.with(|c| c.set(c.get() + 1));
    let n = spec.ambient_dim();
    let mut out = Array2::zeros((n, n));
    for (range, factor) in spec.factor_slices() {
        let vs = v.slice(s![range.clone()]);
        let mut block = out.slice_mut(s![range.clone(), range]);
        let c = match factor.kind() {
            ManifoldKind::Lorentz => minkowski(vs, vs).max(0.0).sqrt().cosh(),
            ManifoldKind::Sphere => dot(vs, vs).sqrt().cos(),
            ManifoldKind::Euclidean => 1.0,
            ManifoldKind::Product => unreachable!(),
        };
        add_scaled_identity(&mut block, c);
    }
    out
}

/// Ambient Jacobian of `x -> Log_z(x)` at `x`, by analytic differentiation of
/// the closed-form log expression.
pub fn jac_log(spec: &ManifoldSpec, z: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    let n = spec.ambient_dim();
    let mut out = Array2::zeros((n, n));
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(s![range.clone()]);
        let xs = x.slice(s![range.clone()]);
        let mut block = out.slice_mut(s![range.clone(), range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let alpha = (-minkowski(zs, xs)).max(1.0);
                let d = alpha.acosh();
                let c = inv_sinhc(d);
                // d/d(alpha) of d/sinh(d); series near the coincident point.
                let cp = if d < SERIES_TOL {
                    -1.0 / 3.0 + 2.0 * d * d / 15.0
                } else {
                    let sh = d.sinh();
                    (sh - d * d.cosh()) / (sh * sh * sh)
                };
                let resid = &xs.to_owned() - &(&zs * alpha);
                let zhat = minkowski_flip(zs);
                // -cp * (x - alpha z) zhat^T + c (I + z zhat^T)
                add_outer(&mut block, resid.view(), zhat.view());
                block *= -cp;
                let mut zz = Array2::zeros((block.nrows(), block.ncols()));
                let mut zzv = zz.view_mut();
                add_outer(&mut zzv, zs, zhat.view());
                add_scaled_identity(&mut zzv, 1.0);
                block += &(&zz * c);
            }
            ManifoldKind::Sphere => {
                let alpha = dot(zs, xs).clamp(-1.0, 1.0);
                if 1.0 + alpha < CLAMP_TOL {
                    return Err(MsgError::Domain(
                        "jacobian_log undefined at antipodal points on the sphere".into(),
                    ));
                }
                let d = alpha.acos();
                let c = inv_sinc(d);
                let cp = if d < SERIES_TOL {
                    -1.0 / 3.0 - 2.0 * d * d / 15.0
                } else {
                    let sn = d.sin();
                    -(sn - d * d.cos()) / (sn * sn * sn)
                };
                let resid = &xs.to_owned() - &(&zs * alpha);
                // cp * (x - alpha z) z^T + c (I - z z^T)
                add_outer(&mut block, resid.view(), zs);
                block *= cp;
                let mut zz = Array2::zeros((block.nrows(), block.ncols()));
                let mut zzv = zz.view_mut();
                add_outer(&mut zzv, zs, zs);
                add_scaled_identity(&mut zzv, -1.0);
                block -= &(&zz * c);
            }
            ManifoldKind::Euclidean => add_scaled_identity(&mut block, 1.0),
            ManifoldKind::Product => unreachable!(),
        }
    }
    Ok(out)
}

/// Jacobian of `u -> Proj_z(u)` (a linear map, so independent of `u`):
/// `I + z (eta z)^T` on Lorentz, `I - z z^T` on the sphere.
pub fn jac_proj(spec: &ManifoldSpec, z: ArrayView1<'_, f64>) -> Array2<f64> {
    let n = spec.ambient_dim();
    let mut out = Array2::zeros((n, n));
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(s![range.clone()]);
        let mut block = out.slice_mut(s![range.clone(), range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let zhat = minkowski_flip(zs);
                add_outer(&mut block, zs, zhat.view());
                add_scaled_identity(&mut block, 1.0);
            }
            ManifoldKind::Sphere => {
                add_outer(&mut block, zs, zs);
                block *= -1.0;
                add_scaled_identity(&mut block, 1.0);
            }
            ManifoldKind::Euclidean => add_scaled_identity(&mut block, 1.0),
            ManifoldKind::Product => unreachable!(),
        }
    }
    out
}

/// Jacobian of `z -> Proj_z(u)` with `u` held fixed:
/// `z uhat^T + <z,u>_L I` on Lorentz, `-(z u^T + <z,u> I)` on the sphere.
pub fn jac_proj_wrt_z(spec: &ManifoldSpec, z: ArrayView1<'_, f64>, u: ArrayView1<'_, f64>) -> Array2<f64> {
    let n = spec.ambient_dim();
    let mut out = Array2::zeros((n, n));
    for (range, factor) in spec.factor_slices() {
        let zs = z.slice(s![range.clone()]);
        let us = u.slice(s![range.clone()]);
        let mut block = out.slice_mut(s![range.clone(), range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let uhat = minkowski_flip(us);
                add_outer(&mut block, zs, uhat.view());
                add_scaled_identity(&mut block, minkowski(zs, us));
            }
            ManifoldKind::Sphere => {
                add_outer(&mut block, zs, us);
                add_scaled_identity(&mut block, dot(zs, us));
                block *= -1.0;
            }
            ManifoldKind::Euclidean => {}
            ManifoldKind::Product => unreachable!(),
        }
    }
    out
}

/// Ambient gradient of the squared geodesic distance `d(x,y)^2` with respect
/// to `x`; on products `d` is the sum of factor distances.
pub fn grad_dist_sq_wrt_x(
    spec: &ManifoldSpec,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let slices = spec.factor_slices();
    let mut dists = Vec::with_capacity(slices.len());
    for (range, factor) in &slices {
        let xs = x.slice(s![range.clone()]);
        let ys = y.slice(s![range.clone()]);
        dists.push(super::maps::distance_coords(factor, xs, ys)?);
    }
    let d_total: f64 = dists.iter().sum();

    let mut out = Array1::zeros(spec.ambient_dim());
    for ((range, factor), &dk) in slices.iter().zip(dists.iter()) {
        // The factor term is non-smooth when one factor coincides while the
        // total distance does not; that set has measure zero and gets a zero
        // subgradient here.
        let ratio = if dk < 1e-9 {
            if slices.len() == 1 {
                1.0
            } else {
                continue;
            }
        } else {
            d_total / dk
        };
        let xs = x.slice(s![range.clone()]);
        let ys = y.slice(s![range.clone()]);
        let mut os = out.slice_mut(s![range.clone()]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let yhat = minkowski_flip(ys);
                os.assign(&(&yhat * (-2.0 * ratio * inv_sinhc(dk))));
            }
            ManifoldKind::Sphere => {
                os.assign(&(&ys * (-2.0 * ratio * inv_sinc(dk))));
            }
            ManifoldKind::Euclidean => {
                os.assign(&((&xs.to_owned() - &ys) * (2.0 * ratio)));
            }
            ManifoldKind::Product => unreachable!(),
        }
    }
    Ok(out)
}
