//! Matrix Lie group arithmetic for SO(d), the two-frame group TFG(d,n,m)
//! and the extended similarity algebra sim_{n+m}(d).
//!
//! Every element is stored in block form and can be embedded as the dense
//! `(d+n+m)x(d+n+m)` matrix
//!
//! ```text
//! TFG:  [ R  W ]      tfg:  [ w^x  rho ]      sim:  [ W^x  gamma ]
//!       [ 0  I ]            [ 0    0   ]            [ 0    L     ]
//! ```
//!
//! All group operations are defined through that embedding, so the dense
//! matrix product is the reference every test compares against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Orthonormality and determinant tolerance for rotation blocks.
pub const ORTHO_TOL: f64 = 1e-9;
/// Tolerance for operations that are exact up to rounding.
pub const EXACT_TOL: f64 = 1e-12;

/// Dimensions of a two-frame group `TFG(d, n, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    /// Ambient dimension of the rotation, 2 or 3.
    pub d: usize,
    /// Number of world-frame vectors.
    pub n: usize,
    /// Number of body-frame vectors.
    pub m: usize,
}

impl Dims {
    pub fn new(d: usize, n: usize, m: usize) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidArgument(format!(
                "rotation dimension must be 2 or 3, got {d}"
            )));
        }
        Ok(Self { d, n, m })
    }

    /// Number of vector columns `n + m`.
    pub fn vectors(&self) -> usize {
        self.n + self.m
    }

    /// Size `N = d + n + m` of the embedding matrix.
    pub fn size(&self) -> usize {
        self.d + self.n + self.m
    }

    /// Dimension `d(d-1)/2` of so(d).
    pub fn rot_dim(&self) -> usize {
        so_dim(self.d)
    }

    /// Dimension of the Lie algebra tfg(d,n,m), i.e. of a bias vector.
    pub fn algebra_dim(&self) -> usize {
        self.rot_dim() + self.d * self.vectors()
    }
}

/// Dimension of so(d).
pub fn so_dim(d: usize) -> usize {
    d * (d.saturating_sub(1)) / 2
}

/// Skew-symmetric embedding of a vector of length `d(d-1)/2` into so(d).
pub fn hat(v: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if d != 2 && d != 3 {
        return Err(Error::InvalidArgument(format!(
            "hat map is defined for d = 2 or 3, got {d}"
        )));
    }
    dim_check("hat vector length", so_dim(d), v.len())?;
    Ok(hat_unchecked(v, d))
}

pub(crate) fn hat_unchecked(v: &[f64], d: usize) -> DMatrix<f64> {
    if d == 2 {
        DMatrix::from_row_slice(2, 2, &[0.0, -v[0], v[0], 0.0])
    } else {
        DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0],
        )
    }
}

/// Which action of a group element on a homogeneous vector to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `T v`
    Left,
    /// `T^{-1} v`
    Inverse,
}

/// An element of `TFG(d, n, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    dims: Dims,
    rot: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl GroupElement {
    /// Builds an element from its rotation and vector blocks, checking the
    /// group invariants.
    pub fn new(dims: Dims, rot: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        dim_check("rotation rows", dims.d, rot.nrows())?;
        dim_check("rotation cols", dims.d, rot.ncols())?;
        dim_check("W rows", dims.d, w.nrows())?;
        dim_check("W cols", dims.vectors(), w.ncols())?;
        check_rotation(&rot)?;
        Ok(Self { dims, rot, w })
    }

    pub fn identity(dims: Dims) -> Self {
        Self {
            dims,
            rot: DMatrix::identity(dims.d, dims.d),
            w: DMatrix::zeros(dims.d, dims.vectors()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rot
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Dense `(d+n+m)`-square embedding.
    pub fn embed(&self) -> DMatrix<f64> {
        let (d, k) = (self.dims.d, self.dims.vectors());
        let mut out = DMatrix::identity(d + k, d + k);
        out.view_mut((0, 0), (d, d)).copy_from(&self.rot);
        out.view_mut((0, d), (d, k)).copy_from(&self.w);
        out
    }

    /// Parses a dense matrix back into a group element, validating the
    /// block structure.
    pub fn from_matrix(mat: &DMatrix<f64>, dims: Dims) -> Result<Self> {
        let size = dims.size();
        dim_check("matrix rows", size, mat.nrows())?;
        dim_check("matrix cols", size, mat.ncols())?;
        let d = dims.d;
        let k = dims.vectors();
        let lower_left = mat.view((d, 0), (k, d));
        let lower_right = mat.view((d, d), (k, k));
        let ll = lower_left.amax();
        let lr = (lower_right - DMatrix::<f64>::identity(k, k)).amax();
        if ll > ORTHO_TOL || lr > ORTHO_TOL {
            return Err(Error::NotInGroup(format!(
                "bottom rows deviate from [0 I] (lower-left {ll:e}, lower-right {lr:e})"
            )));
        }
        Self::new(
            dims,
            mat.view((0, 0), (d, d)).into_owned(),
            mat.view((0, d), (d, k)).into_owned(),
        )
    }

    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "compose {:?} with {:?}",
                self.dims, other.dims
            )));
        }
        Ok(GroupElement {
            dims: self.dims,
            rot: &self.rot * &other.rot,
            w: &self.rot * &other.w + &self.w,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        let rt = self.rot.transpose();
        let w = -(&rt * &self.w);
        GroupElement {
            dims: self.dims,
            rot: rt,
            w,
        }
    }

    /// Linear action on a homogeneous vector of length `d+n+m`.
    pub fn act(&self, v: &DVector<f64>, side: Side) -> Result<DVector<f64>> {
        dim_check("homogeneous vector length", self.dims.size(), v.len())?;
        let d = self.dims.d;
        let k = self.dims.vectors();
        let top = v.rows(0, d);
        let bottom = v.rows(d, k);
        let new_top = match side {
            Side::Left => &self.rot * top + &self.w * bottom,
            Side::Inverse => self.rot.tr_mul(&(top - &self.w * bottom)),
        };
        let mut out = v.clone();
        out.rows_mut(0, d).copy_from(&new_top);
        Ok(out)
    }

    /// Re-checks the rotation invariants.
    pub fn check_invariants(&self) -> Result<()> {
        check_rotation(&self.rot)
    }
}

fn check_rotation(rot: &DMatrix<f64>) -> Result<()> {
    let d = rot.nrows();
    let ortho = (rot.tr_mul(rot) - DMatrix::<f64>::identity(d, d)).amax();
    if ortho > ORTHO_TOL {
        return Err(Error::NotInGroup(format!(
            "rotation block not orthonormal (|R^T R - I| = {ortho:e})"
        )));
    }
    let det = rot.determinant();
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::NotInGroup(format!(
            "rotation block determinant {det} != 1"
        )));
    }
    Ok(())
}

/// An element of the Lie algebra tfg(d,n,m): the input `(omega, rho)` of a
/// two-frame system, or a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    dims: Dims,
    pub omega: DVector<f64>,
    pub rho: DMatrix<f64>,
}

impl AlgebraElement {
    pub fn new(dims: Dims, omega: DVector<f64>, rho: DMatrix<f64>) -> Result<Self> {
        dim_check("omega length", dims.rot_dim(), omega.len())?;
        dim_check("rho rows", dims.d, rho.nrows())?;
        dim_check("rho cols", dims.vectors(), rho.ncols())?;
        Ok(Self { dims, omega, rho })
    }

    pub fn zero(dims: Dims) -> Self {
        Self {
            dims,
            omega: DVector::zeros(dims.rot_dim()),
            rho: DMatrix::zeros(dims.d, dims.vectors()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn omega_hat(&self) -> DMatrix<f64> {
        hat_unchecked(self.omega.as_slice(), self.dims.d)
    }

    /// Stacks `(omega, vec(rho))` with `rho` vectorized column-major.
    pub fn to_vector(&self) -> DVector<f64> {
        let r = self.dims.rot_dim();
        let mut v = DVector::zeros(self.dims.algebra_dim());
        v.rows_mut(0, r).copy_from(&self.omega);
        v.rows_mut(r, self.rho.len())
            .copy_from_slice(self.rho.as_slice());
        v
    }

    /// Inverse of [`AlgebraElement::to_vector`].
    pub fn from_vector(dims: Dims, v: &DVector<f64>) -> Result<Self> {
        dim_check("algebra vector length", dims.algebra_dim(), v.len())?;
        let r = dims.rot_dim();
        let omega = v.rows(0, r).into_owned();
        let rho = DMatrix::from_column_slice(dims.d, dims.vectors(), &v.as_slice()[r..]);
        Ok(Self { dims, omega, rho })
    }

    pub fn add(&self, other: &AlgebraElement) -> AlgebraElement {
        AlgebraElement {
            dims: self.dims,
            omega: &self.omega + &other.omega,
            rho: &self.rho + &other.rho,
        }
    }

    pub fn embed(&self) -> DMatrix<f64> {
        let (d, k) = (self.dims.d, self.dims.vectors());
        let mut out = DMatrix::zeros(d + k, d + k);
        out.view_mut((0, 0), (d, d)).copy_from(&self.omega_hat());
        out.view_mut((0, d), (d, k)).copy_from(&self.rho);
        out
    }

    /// Closed-form exponential `exp(t * self)`.
    pub fn exp(&self, t: f64) -> GroupElement {
        let d = self.dims.d;
        let k = hat_unchecked((&self.omega * t).as_slice(), d);
        let theta = self.omega.norm() * t.abs();
        let (a, b, c) = rodrigues_coefficients(theta);
        let k2 = &k * &k;
        let eye = DMatrix::<f64>::identity(d, d);
        let rot = &eye + &k * a + &k2 * b;
        let v = &eye + &k * b + &k2 * c;
        GroupElement {
            dims: self.dims,
            rot,
            w: v * &self.rho * t,
        }
    }
}

/// Returns `(sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)` with series
/// expansions near zero.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Rotation `exp(t * hat(omega))` in closed form (Rodrigues for d = 3).
pub fn rotation_exp(omega: &[f64], d: usize, t: f64) -> Result<DMatrix<f64>> {
    let k = hat(omega, d)? * t;
    let theta = omega.iter().map(|x| x * x).sum::<f64>().sqrt() * t.abs();
    let (a, b, _) = rodrigues_coefficients(theta);
    Ok(DMatrix::identity(d, d) + &k * a + &k * &k * b)
}

/// An element `[Omega^x, gamma; 0, L]` of sim_{n+m}(d).
#[derive(Clone, Debug, PartialEq)]
pub struct SimAlgebraElement {
    dims: Dims,
    pub omega: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl SimAlgebraElement {
    pub fn new(
        dims: Dims,
        omega: DVector<f64>,
        gamma: DMatrix<f64>,
        l: DMatrix<f64>,
    ) -> Result<Self> {
        dim_check("Omega length", dims.rot_dim(), omega.len())?;
        dim_check("gamma rows", dims.d, gamma.nrows())?;
        dim_check("gamma cols", dims.vectors(), gamma.ncols())?;
        dim_check("L rows", dims.vectors(), l.nrows())?;
        dim_check("L cols", dims.vectors(), l.ncols())?;
        Ok(Self {
            dims,
            omega,
            gamma,
            l,
        })
    }

    pub fn zero(dims: Dims) -> Self {
        let k = dims.vectors();
        Self {
            dims,
            omega: DVector::zeros(dims.rot_dim()),
            gamma: DMatrix::zeros(dims.d, k),
            l: DMatrix::zeros(k, k),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn omega_hat(&self) -> DMatrix<f64> {
        hat_unchecked(self.omega.as_slice(), self.dims.d)
    }

    pub fn embed(&self) -> DMatrix<f64> {
        let (d, k) = (self.dims.d, self.dims.vectors());
        let mut out = DMatrix::zeros(d + k, d + k);
        out.view_mut((0, 0), (d, d)).copy_from(&self.omega_hat());
        out.view_mut((0, d), (d, k)).copy_from(&self.gamma);
        out.view_mut((d, d), (k, k)).copy_from(&self.l);
        out
    }
}

/// Conjugates a two-frame group element by an element `S` of the extended
/// similarity group: `S T S^{-1}`. TFG is normal in SIM, so the result must
/// parse back into TFG.
pub fn sim_conjugate(s: &DMatrix<f64>, t: &GroupElement) -> Result<GroupElement> {
    let dims = t.dims();
    let size = dims.size();
    dim_check("S rows", size, s.nrows())?;
    dim_check("S cols", size, s.ncols())?;
    let d = dims.d;
    let k = dims.vectors();
    if s.view((d, 0), (k, d)).amax() > ORTHO_TOL {
        return Err(Error::InvalidArgument(
            "S has a non-zero lower-left block".into(),
        ));
    }
    check_rotation(&s.view((0, 0), (d, d)).into_owned())
        .map_err(|e| Error::InvalidArgument(format!("S rotation block: {e}")))?;
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("S is not invertible".into()))?;
    let conj = s * t.embed() * s_inv;
    GroupElement::from_matrix(&conj, dims)
        .map_err(|e| Error::InternalConsistency(format!("conjugate left the two-frame group: {e}")))
}

/// Dense matrix exponential by scaling and squaring with a truncated
/// Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..64 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Matrix exponential of `t * a` for a dense algebra element.
///
/// Elements of tfg (zero bottom rows, skew upper-left block) use the closed
/// form; anything else goes through [`expm`].
pub fn group_exp(a: &DMatrix<f64>, dims: Dims, t: f64) -> Result<DMatrix<f64>> {
    let size = dims.size();
    dim_check("algebra rows", size, a.nrows())?;
    dim_check("algebra cols", size, a.ncols())?;
    let d = dims.d;
    let k = dims.vectors();
    let upper = a.view((0, 0), (d, d));
    let skew = (upper + upper.transpose()).amax() <= EXACT_TOL;
    if skew && a.rows(d, k).amax() == 0.0 {
        let omega: Vec<f64> = if d == 2 {
            vec![upper[(1, 0)]]
        } else {
            vec![upper[(2, 1)], upper[(0, 2)], upper[(1, 0)]]
        };
        let elem = AlgebraElement::new(
            dims,
            DVector::from_vec(omega),
            a.view((0, d), (d, k)).into_owned(),
        )?;
        return Ok(elem.exp(t).embed());
    }
    Ok(expm(&(a * t)))
}

/// Singular value decomposition with singular values sorted descending.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("singular value decomposition did not converge".into()))?;
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD returned no V".into()))?;
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    let s_sorted = DVector::from_fn(order.len(), |i, _| sigma[order[i]]);
    Ok((u_sorted, s_sorted, v_sorted))
}

/// Rotation maximizing `tr(R^T M)` for square `M = U S V^T`:
/// `R = U diag(1,..,1,det(U)det(V)) V^T`. Returns the rotation, the sorted
/// singular values and whether the reflection correction was applied.
pub fn procrustes_rotation(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, bool)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "procrustes needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let (u, sigma, v) = sorted_svd(m)?;
    let reflect = u.determinant() * v.determinant() < 0.0;
    let d = m.nrows();
    let mut s = DMatrix::<f64>::identity(d, d);
    if reflect {
        s[(d - 1, d - 1)] = -1.0;
    }
    Ok((u * s * v.transpose(), sigma, reflect))
}

/// Nearest rotation to a square matrix in the Frobenius sense.
pub fn nearest_rotation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, sigma, _) = procrustes_rotation(m)?;
    let smax = sigma.max();
    if !(smax > 0.0) || sigma.min() <= EXACT_TOL * smax {
        return Err(Error::Degenerate(format!(
            "rotation block is singular (singular values {:?})",
            sigma.as_slice()
        )));
    }
    Ok(r)
}

/// Projects a matrix close to a TFG element back onto the group: the
/// rotation block is replaced by its polar factor, `W` is kept and the
/// bottom rows are reset to `[0 I]`.
pub fn project_to_group(m: &DMatrix<f64>, dims: Dims) -> Result<GroupElement> {
    let size = dims.size();
    dim_check("matrix rows", size, m.nrows())?;
    dim_check("matrix cols", size, m.ncols())?;
    let d = dims.d;
    let rot = nearest_rotation(&m.view((0, 0), (d, d)).into_owned())?;
    Ok(GroupElement {
        dims,
        rot,
        w: m.view((0, d), (d, dims.vectors())).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_group_element, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(d: usize, n: usize, m: usize) -> Dims {
        Dims::new(d, n, m).unwrap()
    }

    #[test]
    fn hat_examples() {
        let h2 = hat(&[1.5], 2).unwrap();
        assert_eq!(h2, DMatrix::from_row_slice(2, 2, &[0.0, -1.5, 1.5, 0.0]));
        assert_eq!(hat(&[0.0, 0.0, 0.0], 3).unwrap(), DMatrix::zeros(3, 3));
        let h3 = hat(&[1.0, 2.0, 3.0], 3).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0]);
        assert_eq!(h3, expected);
    }

    #[test]
    fn hat_rejects_bad_lengths() {
        assert!(matches!(
            hat(&[1.0, 2.0], 3),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(hat(&[1.0], 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hat_is_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = nalgebra::Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let lhs = hat(&v, 3).unwrap() * DVector::from_column_slice(w.as_slice());
            let cross = nalgebra::Vector3::new(v[0], v[1], v[2]).cross(&w);
            assert!((lhs - DVector::from_column_slice(cross.as_slice())).amax() < 1e-14);
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dm = dims(3, 2, 1);
        let t = random_group_element(&mut rng, dm, 5.0);
        let id = GroupElement::identity(dm);
        let c = t.compose(&id).unwrap();
        assert!((c.embed() - t.embed()).amax() < EXACT_TOL);
        let e = t.compose(&t.inverse()).unwrap();
        assert!((e.embed() - id.embed()).amax() < EXACT_TOL);
        assert!((t.inverse().inverse().embed() - t.embed()).amax() < EXACT_TOL);
        assert_eq!(id.inverse(), id);
    }

    #[test]
    fn compose_and_inverse_match_dense_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, n, m) in &[(2, 1, 0), (3, 2, 0), (3, 5, 0), (3, 1, 2)] {
            let dm = dims(d, n, m);
            for _ in 0..20 {
                let a = random_group_element(&mut rng, dm, 10.0);
                let b = random_group_element(&mut rng, dm, 10.0);
                let ab = a.compose(&b).unwrap();
                assert!((ab.embed() - a.embed() * b.embed()).amax() < 1e-12);
                let inv = a.embed().try_inverse().unwrap();
                assert!((a.inverse().embed() - inv).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn compose_rejects_mismatched_dims() {
        let a = GroupElement::identity(dims(3, 2, 0));
        let b = GroupElement::identity(dims(3, 1, 0));
        assert!(matches!(a.compose(&b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn act_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dm = dims(3, 2, 1);
        let id = GroupElement::identity(dm);
        let v = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
        assert_eq!(id.act(&v, Side::Left).unwrap(), v);
        for _ in 0..20 {
            let t = random_group_element(&mut rng, dm, 4.0);
            let v = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            assert!((t.act(&v, Side::Left).unwrap() - t.embed() * &v).amax() < 1e-12);
            let inv = t.embed().try_inverse().unwrap();
            assert!((t.act(&v, Side::Inverse).unwrap() - inv * &v).amax() < 1e-10);
            let zero = DVector::zeros(6);
            assert_eq!(t.act(&zero, Side::Left).unwrap(), zero);
        }
        assert!(id.act(&DVector::zeros(4), Side::Left).is_err());
    }

    #[test]
    fn sim_conjugation_preserves_tfg() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dm = dims(3, 2, 0);
        let t = random_group_element(&mut rng, dm, 3.0);
        let same = sim_conjugate(&DMatrix::identity(5, 5), &t).unwrap();
        assert!((same.embed() - t.embed()).amax() < EXACT_TOL);
        let s_tfg = random_group_element(&mut rng, dm, 3.0).embed();
        let c = sim_conjugate(&s_tfg, &t).unwrap();
        c.check_invariants().unwrap();
    }

    #[test]
    fn sim_conjugate_rejects_non_sim() {
        let t = GroupElement::identity(dims(3, 2, 0));
        let mut s = DMatrix::<f64>::identity(5, 5);
        s[(4, 0)] = 1.0;
        assert!(sim_conjugate(&s, &t).is_err());
    }

    #[test]
    fn exp_examples() {
        let dm = dims(3, 2, 0);
        let zero = AlgebraElement::zero(dm);
        assert!((zero.exp(3.0).embed() - DMatrix::identity(5, 5)).amax() < EXACT_TOL);
        let theta: f64 = 0.7;
        let rz = rotation_exp(&[0.0, 0.0, theta], 3, 1.0).unwrap();
        let (s, c) = theta.sin_cos();
        let oracle = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        assert!((rz - oracle).amax() < 1e-15);
    }

    #[test]
    fn closed_form_exp_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &(d, n, m) in &[(2, 1, 1), (3, 2, 0), (3, 5, 0)] {
            let dm = dims(d, n, m);
            for _ in 0..10 {
                let omega = DVector::from_fn(dm.rot_dim(), |_, _| rng.random_range(-2.0..2.0));
                let rho = DMatrix::from_fn(d, dm.vectors(), |_, _| rng.random_range(-2.0..2.0));
                let a = AlgebraElement::new(dm, omega, rho).unwrap();
                let t = rng.random_range(-1.5..1.5);
                let closed = a.exp(t).embed();
                let series = expm(&(a.embed() * t));
                assert!((closed - &series).amax() < 1e-11);
                let g = a.exp(t);
                g.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn expm_inverse_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let prod = expm(&a) * expm(&(-&a));
            assert!((prod - DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
        }
    }

    #[test]
    fn projection_fixes_group_and_repairs_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dm = dims(3, 2, 0);
        let t = random_group_element(&mut rng, dm, 5.0);
        let p = project_to_group(&t.embed(), dm).unwrap();
        assert!((p.embed() - t.embed()).amax() < EXACT_TOL);

        let mut scaled = t.embed();
        scaled.view_mut((0, 0), (3, 3)).scale_mut(1.001);
        let p = project_to_group(&scaled, dm).unwrap();
        p.check_invariants().unwrap();
        // Polar factor of a scaled rotation is the rotation itself.
        assert!((p.rotation() - t.rotation()).amax() < 1e-12);
    }

    #[test]
    fn projection_corrects_reflections() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rotation(&mut rng, 3);
        let mut refl = r.clone();
        refl.column_mut(2).neg_mut();
        let mut m = DMatrix::<f64>::identity(4, 4);
        m.view_mut((0, 0), (3, 3)).copy_from(&refl);
        let p = project_to_group(&m, dims(3, 1, 0)).unwrap();
        assert!((p.rotation().determinant() - 1.0).abs() < 1e-12);
        p.check_invariants().unwrap();
    }

    #[test]
    fn projection_rejects_singular_blocks() {
        let mut m = DMatrix::<f64>::identity(4, 4);
        m[(2, 2)] = 0.0;
        assert!(matches!(
            project_to_group(&m, dims(3, 1, 0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn from_matrix_rejects_bad_bottom_rows() {
        let mut m = DMatrix::<f64>::identity(5, 5);
        m[(4, 4)] = 2.0;
        assert!(matches!(
            GroupElement::from_matrix(&m, dims(3, 2, 0)),
            Err(Error::NotInGroup(_))
        ));
    }

    #[test]
    fn algebra_vector_round_trip_is_column_major() {
        let dm = dims(3, 2, 0);
        let a = AlgebraElement::new(
            dm,
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_row_slice(3, 2, &[4.0, 7.0, 5.0, 8.0, 6.0, 9.0]),
        )
        .unwrap();
        let v = a.to_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(AlgebraElement::from_vector(dm, &v).unwrap(), a);
    }
}
