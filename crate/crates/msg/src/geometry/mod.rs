//! Constant-curvature manifold kernels: points, tangent vectors, exp/log maps,
//! projections, distances, and the closed-form Jacobians used by the backward pass.
//!
//! Three model spaces are supported, all at standard curvature:
//! the Lorentz model (curvature -1, hyperboloid `<z,z>_L = -1, z0 > 0` in
//! Minkowski space), the unit sphere (curvature +1) and Euclidean space
//! (curvature 0), plus Cartesian products of these as depth-1 factor lists.

mod jacobian;
mod maps;
mod random;

pub use jacobian::{jacobian_eval_counts, reset_jacobian_eval_counts};
pub use random::{random_point, random_tangent};

use std::fmt;
use std::ops::Range;

use ndarray::{Array1, ArrayView1};

use crate::error::{MsgError, Result};

/// Tolerance on the on-manifold constraint, e.g. `|<z,z>_L + 1|` for Lorentz.
pub const POINT_TOL: f64 = 1e-9;
/// Tolerance on tangency, `|<z,v>|` in the ambient bilinear form.
pub const TANGENT_TOL: f64 = 1e-9;
/// Below this, an inner product within tolerance of its domain boundary is clamped.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Lorentz,
    Sphere,
    Euclidean,
    Product,
}

/// Which manifold a value lives on: kind, intrinsic dimension and (for
/// products) the ordered factor list. Curvature is fixed by the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    intrinsic_dim: usize,
    factors: Vec<ManifoldSpec>,
}

impl ManifoldSpec {
    pub fn lorentz(d: usize) -> Result<Self> {
        Self::simple(ManifoldKind::Lorentz, d)
    }

    pub fn sphere(d: usize) -> Result<Self> {
        Self::simple(ManifoldKind::Sphere, d)
    }

    pub fn euclidean(d: usize) -> Result<Self> {
        Self::simple(ManifoldKind::Euclidean, d)
    }

    fn simple(kind: ManifoldKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(MsgError::Config("intrinsic dimension must be positive".into()));
        }
        Ok(ManifoldSpec {
            kind,
            intrinsic_dim: d,
            factors: Vec::new(),
        })
    }

    /// Cartesian product of non-product factors (flat list, depth 1).
    pub fn product(factors: Vec<ManifoldSpec>) -> Result<Self> {
        if factors.is_empty() {
            return Err(MsgError::Config("product manifold needs at least one factor".into()));
        }
        if factors.iter().any(|f| f.kind == ManifoldKind::Product) {
            return Err(MsgError::Config("product factors must themselves be non-product".into()));
        }
        let intrinsic_dim = factors.iter().map(|f| f.intrinsic_dim).sum();
        Ok(ManifoldSpec {
            kind: ManifoldKind::Product,
            intrinsic_dim,
            factors,
        })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn factors(&self) -> &[ManifoldSpec] {
        &self.factors
    }

    /// Ambient coordinate dimension: d+1 for the curved models, d for
    /// Euclidean, sum of factor ambients for products.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Lorentz | ManifoldKind::Sphere => self.intrinsic_dim + 1,
            ManifoldKind::Euclidean => self.intrinsic_dim,
            ManifoldKind::Product => self.factors.iter().map(|f| f.ambient_dim()).sum(),
        }
    }

    /// Ambient coordinate range of each factor. A non-product manifold is its
    /// own single factor covering the whole range.
    pub fn factor_slices(&self) -> Vec<(Range<usize>, &ManifoldSpec)> {
        match self.kind {
            ManifoldKind::Product => {
                let mut out = Vec::with_capacity(self.factors.len());
                let mut offset = 0;
                for f in &self.factors {
                    let a = f.ambient_dim();
                    out.push((offset..offset + a, f));
                    offset += a;
                }
                out
            }
            _ => vec![(0..self.ambient_dim(), self)],
        }
    }

    pub fn check_ambient_len(&self, len: usize) -> Result<()> {
        if len != self.ambient_dim() {
            return Err(MsgError::Dimension(format!(
                "expected ambient dimension {}, got {}",
                self.ambient_dim(),
                len
            )));
        }
        Ok(())
    }

    /// Parse a config string: `lorentz:32`, `sphere:32`, `euclidean:32`,
    /// `product:lorentz:16+sphere:16`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("product:") {
            let factors = rest
                .split('+')
                .map(Self::parse_simple)
                .collect::<Result<Vec<_>>>()?;
            Self::product(factors)
        } else {
            Self::parse_simple(s)
        }
    }

    fn parse_simple(s: &str) -> Result<Self> {
        let (name, dim) = s
            .split_once(':')
            .ok_or_else(|| MsgError::Parse(format!("manifold spec `{s}` is missing `:dim`")))?;
        let d: usize = dim
            .parse()
            .map_err(|_| MsgError::Parse(format!("invalid dimension `{dim}` in manifold spec")))?;
        match name {
            "lorentz" => Self::lorentz(d),
            "sphere" => Self::sphere(d),
            "euclidean" => Self::euclidean(d),
            other => Err(MsgError::Parse(format!("unknown manifold kind `{other}`"))),
        }
    }
}

impl fmt::Display for ManifoldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ManifoldKind::Lorentz => write!(f, "lorentz:{}", self.intrinsic_dim),
            ManifoldKind::Sphere => write!(f, "sphere:{}", self.intrinsic_dim),
            ManifoldKind::Euclidean => write!(f, "euclidean:{}", self.intrinsic_dim),
            ManifoldKind::Product => {
                write!(f, "product:")?;
                for (i, fac) in self.factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{fac}")?;
                }
                Ok(())
            }
        }
    }
}

/// Ambient-coordinate vector constrained to the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    spec: ManifoldSpec,
    coords: Array1<f64>,
}

impl ManifoldPoint {
    /// Validates the manifold constraint before wrapping.
    pub fn new(spec: ManifoldSpec, coords: Array1<f64>) -> Result<Self> {
        spec.check_ambient_len(coords.len())?;
        maps::check_point(&spec, coords.view())?;
        Ok(ManifoldPoint { spec, coords })
    }

    /// Wrap coordinates produced by a manifold-preserving operation.
    pub(crate) fn new_unchecked(spec: ManifoldSpec, coords: Array1<f64>) -> Self {
        ManifoldPoint { spec, coords }
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array1<f64> {
        self.coords
    }
}

/// Ambient-coordinate vector in the tangent space of its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: ManifoldPoint,
    coords: Array1<f64>,
}

impl TangentVector {
    /// Validates tangency at the base point before wrapping.
    pub fn new(base: ManifoldPoint, coords: Array1<f64>) -> Result<Self> {
        base.spec().check_ambient_len(coords.len())?;
        maps::check_tangent(base.spec(), base.coords(), coords.view())?;
        Ok(TangentVector { base, coords })
    }

    pub(crate) fn new_unchecked(base: ManifoldPoint, coords: Array1<f64>) -> Self {
        TangentVector { base, coords }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array1<f64> {
        self.coords
    }

    /// Norm in the base manifold's metric (Minkowski norm on Lorentz factors).
    pub fn norm(&self) -> f64 {
        maps::tangent_norm(self.base.spec(), self.coords.view())
    }
}

// ---------------------------------------------------------------------------
// Typed operations (validated wrappers over the coordinate kernels below).
// ---------------------------------------------------------------------------

/// Minkowski inner product `-u0*v0 + sum_{i>=1} ui*vi`.
pub fn minkowski_inner(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(MsgError::Dimension(format!(
            "minkowski_inner: lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(MsgError::Dimension("minkowski_inner: length must be >= 2".into()));
    }
    Ok(maps::minkowski(u, v))
}

/// The base point of the manifold: `[1,0,..]` on Lorentz, `[-1,0,..]` on the
/// sphere (the south pole), zeros in Euclidean space, concatenation for products.
pub fn origin(spec: &ManifoldSpec) -> ManifoldPoint {
    ManifoldPoint::new_unchecked(spec.clone(), maps::origin_coords(spec))
}

/// Project an ambient vector into the tangent space at `z`.
pub fn proj_tangent(z: &ManifoldPoint, u: ArrayView1<'_, f64>) -> Result<TangentVector> {
    z.spec().check_ambient_len(u.len())?;
    let coords = maps::proj_tangent_coords(z.spec(), z.coords(), u);
    Ok(TangentVector::new_unchecked(z.clone(), coords))
}

/// Geodesic shooting map: follow the geodesic from the base of `v` with
/// initial velocity `v` for unit time.
pub fn exp_map(z: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
    if v.base() != z {
        return Err(MsgError::Domain("exp_map: tangent vector is not based at z".into()));
    }
    let coords = maps::exp_coords(z.spec(), z.coords(), v.coords())?;
    Ok(ManifoldPoint::new_unchecked(z.spec().clone(), coords))
}

/// Inverse of [`exp_map`]: the tangent vector at `z` pointing to `x`.
pub fn log_map(z: &ManifoldPoint, x: &ManifoldPoint) -> Result<TangentVector> {
    if z.spec() != x.spec() {
        return Err(MsgError::Domain("log_map: points live on different manifolds".into()));
    }
    let coords = maps::log_coords(z.spec(), z.coords(), x.coords())?;
    Ok(TangentVector::new_unchecked(z.clone(), coords))
}

/// Geodesic distance; sums over factors on products.
pub fn distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    if x.spec() != y.spec() {
        return Err(MsgError::Domain("distance: points live on different manifolds".into()));
    }
    maps::distance_coords(x.spec(), x.coords(), y.coords())
}

/// Ambient Jacobian of `w -> exp_map(z, w)` at `w = v`.
pub fn jacobian_exp_wrt_v(z: &ManifoldPoint, v: &TangentVector) -> ndarray::Array2<f64> {
    jacobian::jac_exp_v(z.spec(), z.coords(), v.coords())
}

/// Ambient Jacobian of `p -> exp_map(p, v)` at `p = z` (a scalar multiple of
/// the identity on each factor).
pub fn jacobian_exp_wrt_z(z: &ManifoldPoint, v: &TangentVector) -> ndarray::Array2<f64> {
    jacobian::jac_exp_z(z.spec(), z.coords(), v.coords())
}

/// Ambient Jacobian of `x -> log_map(z, x)` at `x`.
pub fn jacobian_log(z: &ManifoldPoint, x: &ManifoldPoint) -> Result<ndarray::Array2<f64>> {
    jacobian::jac_log(z.spec(), z.coords(), x.coords())
}

// Coordinate-level kernels for batched callers (model / backprop work on
// matrix rows and skip per-row wrapper churn).
pub mod coords {
    pub use super::jacobian::{
        grad_dist_sq_wrt_x, jac_exp_v, jac_exp_z, jac_log, jac_proj, jac_proj_wrt_z,
    };
    pub use super::maps::{
        check_point, check_tangent, distance_coords, exp_coords, log_coords, origin_coords,
        proj_tangent_coords, tangent_norm,
    };
}
