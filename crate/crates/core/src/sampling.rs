//! Random samplers for group elements and generators, used by tests,
//! benches and Monte Carlo experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::groups::{rotation_exp, so_dim, Dims, GroupElement, SimAlgebraElement};

/// Rotation `exp(theta * axis^x)` with a uniformly drawn direction and
/// angle in `(-pi, pi)`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let k = so_dim(d);
    let mut axis = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    let norm = axis.norm();
    if norm < 1e-6 {
        axis = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    } else {
        axis /= norm;
    }
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    rotation_exp(axis.as_slice(), d, angle).expect("valid rotation dimension")
}

/// Group element with a random rotation and `W` entries in `(-scale, scale)`.
pub fn random_group_element<R: Rng + ?Sized>(rng: &mut R, dims: Dims, scale: f64) -> GroupElement {
    let rot = random_rotation(rng, dims.d);
    let w = DMatrix::from_fn(dims.d, dims.vectors(), |_, _| {
        rng.random_range(-scale..scale)
    });
    GroupElement::new(dims, rot, w).expect("sampled element is valid")
}

/// Sim-algebra element with entries in `(-scale, scale)`.
pub fn random_sim<R: Rng + ?Sized>(rng: &mut R, dims: Dims, scale: f64) -> SimAlgebraElement {
    let k = dims.vectors();
    SimAlgebraElement::new(
        dims,
        DVector::from_fn(dims.rot_dim(), |_, _| rng.random_range(-scale..scale)),
        DMatrix::from_fn(dims.d, k, |_, _| rng.random_range(-scale..scale)),
        DMatrix::from_fn(k, k, |_, _| rng.random_range(-scale..scale)),
    )
    .expect("dimensions are consistent")
}
