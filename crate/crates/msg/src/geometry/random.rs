//! Seeded sampling of points and tangent vectors, used by initialization and
//! by the finite-difference test harnesses.

use ndarray::{s, Array1};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{maps, ManifoldKind, ManifoldPoint, ManifoldSpec, TangentVector};

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw a point on the manifold: spatial Gaussian lifted to the hyperboloid on
/// Lorentz factors, normalized Gaussian on sphere factors, plain Gaussian in
/// Euclidean factors.
pub fn random_point<R: Rng + ?Sized>(spec: &ManifoldSpec, rng: &mut R) -> ManifoldPoint {
    let mut coords = Array1::zeros(spec.ambient_dim());
    for (range, factor) in spec.factor_slices() {
        let mut cs = coords.slice_mut(s![range]);
        match factor.kind() {
            ManifoldKind::Lorentz => {
                let spatial = gaussian(rng, cs.len() - 1);
                let sq: f64 = spatial.iter().map(|x| x * x).sum();
                cs[0] = (1.0 + sq).sqrt();
                cs.slice_mut(s![1..]).assign(&spatial);
            }
            ManifoldKind::Sphere => {
                let mut g = gaussian(rng, cs.len());
                let mut n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n < 1e-12 {
                    g[0] = 1.0;
                    n = 1.0;
                }
                cs.assign(&(&g / n));
            }
            ManifoldKind::Euclidean => cs.assign(&gaussian(rng, cs.len())),
            ManifoldKind::Product => unreachable!(),
        }
    }
    ManifoldPoint::new_unchecked(spec.clone(), coords)
}

/// Draw a tangent vector at `z` by projecting an ambient Gaussian into the
/// tangent space and scaling by `scale`.
pub fn random_tangent<R: Rng + ?Sized>(z: &ManifoldPoint, scale: f64, rng: &mut R) -> TangentVector {
    let ambient = gaussian(rng, z.spec().ambient_dim());
    let mut coords = maps::proj_tangent_coords(z.spec(), z.coords(), ambient.view());
    coords *= scale;
    TangentVector::new_unchecked(z.clone(), coords)
}
