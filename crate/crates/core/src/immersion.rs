//! Immersion of a two-frame group system into a linear time-varying system.
//!
//! Case 1 systems evolve as `dT/dt = A T + T [w^x, rho; 0, -L]` and are
//! measured through `y = T^{-1} d`; Case 2 systems evolve as
//! `dT/dt = [w^x, rho; 0, L] T - T A` and are measured through `y = T d`.
//! In both cases the blocks `z_j = T^{-1} A^j d` (resp. `T A^j d`) satisfy a
//! linear ODE closed by the Cayley-Hamilton coefficients of `A`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::groups::{hat_unchecked, AlgebraElement, Dims, GroupElement, SimAlgebraElement};

/// Relative singular value threshold used for all rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Tolerance used when deciding that two direction columns coincide.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Left-invariant input, measurements `T^{-1} d`.
    Case1,
    /// Right-invariant input, measurements `T d`.
    Case2,
}

impl Case {
    /// Sign multiplying the input terms of the reduced immersed dynamics.
    pub fn input_sign(self) -> f64 {
        match self {
            Case::Case1 => -1.0,
            Case::Case2 => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Landmark,
    Bearing,
    Range,
}

/// One measured direction `d = [d_bar; d_under]` and how it is observed.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSpec {
    pub kind: MeasurementKind,
    pub d_bar: DVector<f64>,
    pub d_under: DVector<f64>,
    /// Per-channel noise standard deviation (metres for landmark and range,
    /// unit-vector components for bearing).
    pub noise_std: f64,
}

impl MeasurementSpec {
    pub fn new(
        kind: MeasurementKind,
        d_bar: DVector<f64>,
        d_under: DVector<f64>,
        noise_std: f64,
    ) -> Self {
        Self {
            kind,
            d_bar,
            d_under,
            noise_std,
        }
    }

    pub fn landmark(d_bar: DVector<f64>, d_under: DVector<f64>) -> Self {
        Self::new(MeasurementKind::Landmark, d_bar, d_under, 0.0)
    }

    /// Homogeneous direction vector of length `d+n+m`.
    pub fn direction(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.d_bar.len() + self.d_under.len());
        v.rows_mut(0, self.d_bar.len()).copy_from(&self.d_bar);
        v.rows_mut(self.d_bar.len(), self.d_under.len())
            .copy_from(&self.d_under);
        v
    }
}

/// Everything needed to immerse and observe a two-frame system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub case: Case,
    pub dims: Dims,
    pub generator: SimAlgebraElement,
    pub measurements: Vec<MeasurementSpec>,
    /// Merge immersed blocks whose defining directions coincide.
    pub merge_shared: bool,
}

impl SystemSpec {
    pub fn new(
        case: Case,
        dims: Dims,
        generator: SimAlgebraElement,
        measurements: Vec<MeasurementSpec>,
    ) -> Result<Self> {
        let spec = Self {
            case,
            dims,
            generator,
            measurements,
            merge_shared: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_merging(mut self, merge: bool) -> Self {
        self.merge_shared = merge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.size() < 2 {
            return Err(Error::InvalidArgument("N must be at least 2".into()));
        }
        if self.generator.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "generator dims {:?} vs system dims {:?}",
                self.generator.dims(),
                self.dims
            )));
        }
        if self.measurements.is_empty() {
            return Err(Error::InvalidArgument("no measurements".into()));
        }
        for (i, m) in self.measurements.iter().enumerate() {
            dim_check(
                &format!("measurement {i} d_bar"),
                self.dims.d,
                m.d_bar.len(),
            )?;
            dim_check(
                &format!("measurement {i} d_under"),
                self.dims.vectors(),
                m.d_under.len(),
            )?;
            if !(m.noise_std >= 0.0) || !m.noise_std.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "measurement {i} noise_std must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn n_meas(&self) -> usize {
        self.measurements.len()
    }

    pub fn big_n(&self) -> usize {
        self.dims.size()
    }

    pub fn has_range(&self) -> bool {
        self.measurements
            .iter()
            .any(|m| m.kind == MeasurementKind::Range)
    }
}

/// Coefficients `a_l` with `A^N = sum_l a_l A^l`.
#[derive(Clone, Debug, PartialEq)]
pub struct CayleyCoefficients {
    pub a: Vec<f64>,
}

impl CayleyCoefficients {
    /// Norm of `A^N - sum_l a_l A^l` and the scale it should be compared to,
    /// `max(1, |A|^N)`.
    pub fn residual(&self, a: &DMatrix<f64>) -> (f64, f64) {
        let n = a.nrows();
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut combo = DMatrix::<f64>::zeros(n, n);
        for &c in &self.a {
            combo += &power * c;
            power = &power * a;
        }
        let scale = a.norm().powi(n as i32).max(1.0);
        ((power - combo).norm(), scale)
    }
}

/// Characteristic-polynomial coefficients of the embedded generator.
pub fn cayley_coefficients(generator: &SimAlgebraElement) -> CayleyCoefficients {
    cayley_coefficients_dense(&generator.embed())
}

/// Faddeev-LeVerrier recursion on a dense square matrix.
pub fn cayley_coefficients_dense(a: &DMatrix<f64>) -> CayleyCoefficients {
    let n = a.nrows();
    // c[k] is the coefficient of lambda^k in det(lambda I - A); c[n] = 1.
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + &eye * c[n - k + 1];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    CayleyCoefficients {
        a: c[..n].iter().map(|x| -x).collect(),
    }
}

/// The constant directions `d_j^(i) = A^j d^(i)` split into barred and
/// underlined parts, stored at index `i * N + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionTable {
    dims: Dims,
    n_meas: usize,
    d_bar: Vec<DVector<f64>>,
    d_under: Vec<DVector<f64>>,
}

impl DirectionTable {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_meas(&self) -> usize {
        self.n_meas
    }

    pub fn big_n(&self) -> usize {
        self.dims.size()
    }

    /// Total number of columns `M N`.
    pub fn columns(&self) -> usize {
        self.n_meas * self.big_n()
    }

    pub fn d_bar(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.d_bar[i * self.big_n() + j]
    }

    pub fn d_under(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.d_under[i * self.big_n() + j]
    }

    pub fn d_full(&self, i: usize, j: usize) -> DVector<f64> {
        let (d, k) = (self.dims.d, self.dims.vectors());
        let mut v = DVector::zeros(d + k);
        v.rows_mut(0, d).copy_from(self.d_bar(i, j));
        v.rows_mut(d, k).copy_from(self.d_under(i, j));
        v
    }

    /// `d x MN` matrix of barred directions.
    pub fn d_bar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.d_bar)
    }

    /// `(n+m) x MN` matrix of underlined directions.
    pub fn d_under_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.d_under)
    }

    /// `N x MN` matrix of full directions.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<_> = (0..self.n_meas)
            .flat_map(|i| (0..self.big_n()).map(move |j| (i, j)))
            .map(|(i, j)| self.d_full(i, j))
            .collect();
        DMatrix::from_columns(&cols)
    }

    /// Singular values of `D`, descending.
    pub fn singular_values(&self) -> DVector<f64> {
        let mut s = self.d_matrix().singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Numerical rank of `D` with threshold `RANK_TOL * sigma_1`.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values())
    }
}

pub(crate) fn numerical_rank(sorted: &DVector<f64>) -> usize {
    let top = sorted.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sorted.iter().filter(|&&s| s >= RANK_TOL * top).count()
}

/// Builds the direction table by the barred/underlined recursion
/// `d_under_{j} = L^j d_under`, `d_bar_{j+1} = Omega^x d_bar_j + gamma d_under_j`.
pub fn direction_table(spec: &SystemSpec) -> DirectionTable {
    let n = spec.big_n();
    let g = &spec.generator;
    let om = g.omega_hat();
    let mut d_bar = Vec::with_capacity(n * spec.n_meas());
    let mut d_under = Vec::with_capacity(n * spec.n_meas());
    for m in &spec.measurements {
        let mut bar = m.d_bar.clone();
        let mut under = m.d_under.clone();
        for _ in 0..n {
            d_bar.push(bar.clone());
            d_under.push(under.clone());
            let next_bar = &om * &bar + &g.gamma * &under;
            under = &g.l * &under;
            bar = next_bar;
        }
    }
    DirectionTable {
        dims: spec.dims,
        n_meas: spec.n_meas(),
        d_bar,
        d_under,
    }
}

/// Barred immersed blocks `z_bar_j^(i)` stored at index `i * N + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImmersedState {
    pub big_n: usize,
    pub blocks: Vec<DVector<f64>>,
}

impl ImmersedState {
    pub fn block(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.blocks[i * self.big_n + j]
    }

    /// `d x MN` matrix with the blocks as columns.
    pub fn zbar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.blocks)
    }

    /// Stacks the blocks according to a layout (representatives only).
    pub fn stacked(&self, layout: &StateLayout) -> DVector<f64> {
        let d = layout.d;
        let mut out = DVector::zeros(layout.state_dim());
        for (s, &(i, j)) in layout.representatives.iter().enumerate() {
            out.rows_mut(s * d, d).copy_from(self.block(i, j));
        }
        out
    }
}

/// Full homogeneous immersion `z_j^(i)`, each of length `N`.
pub fn immerse_full(t: &GroupElement, table: &DirectionTable, case: Case) -> Vec<DVector<f64>> {
    let tm = match case {
        Case::Case1 => t.inverse().embed(),
        Case::Case2 => t.embed(),
    };
    (0..table.n_meas())
        .flat_map(|i| (0..table.big_n()).map(move |j| (i, j)))
        .map(|(i, j)| &tm * table.d_full(i, j))
        .collect()
}

/// Barred immersion: Case 1 `z_bar = R^T (d_bar - W d_under)`,
/// Case 2 `z_bar = R d_bar + W d_under`.
pub fn immerse(t: &GroupElement, table: &DirectionTable, case: Case) -> ImmersedState {
    let r = t.rotation();
    let w = t.w();
    let blocks = (0..table.columns())
        .map(|c| {
            let bar = &table.d_bar[c];
            let under = &table.d_under[c];
            match case {
                Case::Case1 => r.tr_mul(&(bar - w * under)),
                Case::Case2 => r * bar + w * under,
            }
        })
        .collect();
    ImmersedState {
        big_n: table.big_n(),
        blocks,
    }
}

/// Where an immersed block `(i, j)` lives in the reduced state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlotRef {
    /// `z_bar_j^(i) = sign * slot[index]`.
    Slot { index: usize, sign: f64 },
    /// The defining direction is zero, so the block vanishes identically.
    Zero,
}

/// Mapping from `(i, j)` blocks to slots of the (possibly reduced) state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateLayout {
    pub d: usize,
    pub n_meas: usize,
    pub big_n: usize,
    map: Vec<SlotRef>,
    /// The `(i, j)` block each slot is taken from.
    pub representatives: Vec<(usize, usize)>,
}

impl StateLayout {
    /// One slot per `(i, j)` block.
    pub fn identity(d: usize, n_meas: usize, big_n: usize) -> Self {
        let count = n_meas * big_n;
        Self {
            d,
            n_meas,
            big_n,
            map: (0..count)
                .map(|index| SlotRef::Slot { index, sign: 1.0 })
                .collect(),
            representatives: (0..n_meas)
                .flat_map(|i| (0..big_n).map(move |j| (i, j)))
                .collect(),
        }
    }

    pub fn for_spec(spec: &SystemSpec, table: &DirectionTable) -> Self {
        if spec.merge_shared {
            shared_state_reduction(table)
        } else {
            Self::identity(spec.dims.d, spec.n_meas(), spec.big_n())
        }
    }

    pub fn slot(&self, i: usize, j: usize) -> SlotRef {
        self.map[i * self.big_n + j]
    }

    pub fn slots(&self) -> usize {
        self.representatives.len()
    }

    pub fn state_dim(&self) -> usize {
        self.slots() * self.d
    }

    pub fn is_identity(&self) -> bool {
        self.slots() == self.n_meas * self.big_n
            && self.map.iter().enumerate().all(
                |(c, s)| matches!(s, SlotRef::Slot { index, sign } if *index == c && *sign == 1.0),
            )
    }

    /// Matrix `E` with `z_full = E z_reduced`, of size `MNd x slots*d`.
    pub fn expansion(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut e = DMatrix::zeros(self.n_meas * self.big_n * d, self.state_dim());
        for (c, s) in self.map.iter().enumerate() {
            if let SlotRef::Slot { index, sign } = *s {
                for k in 0..d {
                    e[(c * d + k, index * d + k)] = sign;
                }
            }
        }
        e
    }

    /// Expands a reduced state into the `d x MN` matrix of all blocks.
    pub fn expand_to_matrix(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let d = self.d;
        let mut out = DMatrix::zeros(d, self.n_meas * self.big_n);
        for (c, s) in self.map.iter().enumerate() {
            if let SlotRef::Slot { index, sign } = *s {
                out.column_mut(c).copy_from(&(z.rows(index * d, d) * sign));
            }
        }
        out
    }

    /// Block `(i, j)` read out of a reduced state.
    pub fn block(&self, z: &DVector<f64>, i: usize, j: usize) -> DVector<f64> {
        match self.slot(i, j) {
            SlotRef::Slot { index, sign } => z.rows(index * self.d, self.d) * sign,
            SlotRef::Zero => DVector::zeros(self.d),
        }
    }
}

/// Merges blocks whose defining columns `A^j d^(i)` coincide (up to sign)
/// and drops blocks whose column vanishes.
pub fn shared_state_reduction(table: &DirectionTable) -> StateLayout {
    let big_n = table.big_n();
    let mut map = Vec::with_capacity(table.columns());
    let mut reps: Vec<(usize, usize)> = Vec::new();
    let mut rep_cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..table.n_meas() {
        for j in 0..big_n {
            let col = table.d_full(i, j);
            let norm = col.norm();
            if norm <= MERGE_TOL {
                map.push(SlotRef::Zero);
                continue;
            }
            let tol = MERGE_TOL * norm.max(1.0);
            let found = rep_cols.iter().enumerate().find_map(|(s, rc)| {
                if (rc - &col).amax() <= tol {
                    Some(SlotRef::Slot {
                        index: s,
                        sign: 1.0,
                    })
                } else if (rc + &col).amax() <= tol {
                    Some(SlotRef::Slot {
                        index: s,
                        sign: -1.0,
                    })
                } else {
                    None
                }
            });
            match found {
                Some(slot) => map.push(slot),
                None => {
                    map.push(SlotRef::Slot {
                        index: reps.len(),
                        sign: 1.0,
                    });
                    reps.push((i, j));
                    rep_cols.push(col);
                }
            }
        }
    }
    StateLayout {
        d: table.dims().d,
        n_meas: table.n_meas(),
        big_n,
        map,
        representatives: reps,
    }
}

/// `dz/dt = F z + C`, `y = H z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtvSystem {
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
    pub h: DMatrix<f64>,
}

impl LtvSystem {
    pub fn rhs(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.f * z + &self.c
    }
}

/// Diagonal block `S_u` of the general immersion, so that
/// `dz_j/dt = -S_u z_j - z_{j+1}`.
pub fn general_s_u(case: Case, u: &AlgebraElement, generator: &SimAlgebraElement) -> DMatrix<f64> {
    let dims = u.dims();
    let (d, k) = (dims.d, dims.vectors());
    let mut s = u.embed();
    match case {
        Case::Case1 => {
            let mut block = s.view_mut((d, d), (k, k));
            block -= &generator.l;
        }
        Case::Case2 => {
            let mut block = s.view_mut((d, d), (k, k));
            block += &generator.l;
            s.neg_mut();
        }
    }
    s
}

/// Unreduced homogeneous immersed system of dimension `M N^2`.
pub fn build_ltv_general(
    u: &AlgebraElement,
    spec: &SystemSpec,
    coeffs: &CayleyCoefficients,
) -> Result<LtvSystem> {
    if u.dims() != spec.dims {
        return Err(Error::DimensionMismatch("input dims".into()));
    }
    let n = spec.big_n();
    let m = spec.n_meas();
    let s_u = general_s_u(spec.case, u, &spec.generator);
    let dim = m * n * n;
    let mut f = DMatrix::zeros(dim, dim);
    let mut h = DMatrix::zeros(m * n, dim);
    let eye = DMatrix::<f64>::identity(n, n);
    for i in 0..m {
        let base = i * n * n;
        for j in 0..n {
            let r = base + j * n;
            f.view_mut((r, r), (n, n)).copy_from(&(-&s_u));
            if j + 1 < n {
                let mut blk = f.view_mut((r, r + n), (n, n));
                blk -= &eye;
            } else {
                for (l, &a) in coeffs.a.iter().enumerate() {
                    let mut blk = f.view_mut((r, base + l * n), (n, n));
                    blk -= &eye * a;
                }
            }
        }
        h.view_mut((i * n, base), (n, n)).copy_from(&eye);
    }
    Ok(LtvSystem {
        f,
        c: DVector::zeros(dim),
        h,
    })
}

fn add_slot_block(f: &mut DMatrix<f64>, row: usize, slot: SlotRef, coeff: f64, d: usize) {
    if let SlotRef::Slot { index, sign } = slot {
        for k in 0..d {
            f[(row + k, index * d + k)] += coeff * sign;
        }
    }
}

/// Reduced barred immersed system on the slots of `layout`.
///
/// Case 1: `dz_j/dt = -w^x z_j - rho d_under_j - z_{j+1}`, closed by
/// `-sum_l a_l z_l`; Case 2 flips the sign of the two input terms.
/// `H` stacks `[I 0 .. 0]` for every measurement.
pub fn build_ltv_tfg(
    u: &AlgebraElement,
    case: Case,
    table: &DirectionTable,
    coeffs: &CayleyCoefficients,
    layout: &StateLayout,
) -> Result<LtvSystem> {
    if u.dims() != table.dims() {
        return Err(Error::DimensionMismatch("input dims".into()));
    }
    let d = layout.d;
    let n = table.big_n();
    let dim = layout.state_dim();
    let sign = case.input_sign();
    let w = u.omega_hat() * sign;
    let mut f = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    for (s, &(i, j)) in layout.representatives.iter().enumerate() {
        let r = s * d;
        f.view_mut((r, r), (d, d)).copy_from(&w);
        c.rows_mut(r, d)
            .copy_from(&(&u.rho * table.d_under(i, j) * sign));
        if j + 1 < n {
            add_slot_block(&mut f, r, layout.slot(i, j + 1), -1.0, d);
        } else {
            for (l, &a) in coeffs.a.iter().enumerate() {
                if a != 0.0 {
                    add_slot_block(&mut f, r, layout.slot(i, l), -a, d);
                }
            }
        }
    }
    let h = measurement_matrix(layout);
    Ok(LtvSystem { f, c, h })
}

/// `H` with one `d`-row block per measurement selecting `z_bar_0^(i)`.
pub fn measurement_matrix(layout: &StateLayout) -> DMatrix<f64> {
    let d = layout.d;
    let mut h = DMatrix::zeros(layout.n_meas * d, layout.state_dim());
    for i in 0..layout.n_meas {
        add_slot_block(&mut h, i * d, layout.slot(i, 0), 1.0, d);
    }
    h
}

/// Partial derivative of the reduced dynamics with respect to a bias
/// `(b_w, vec(b_rho))`: rows of `b_w^x z_bar + b_rho d_under_j` per slot,
/// multiplied by the case sign.
pub fn bias_jacobian(
    z: &DVector<f64>,
    case: Case,
    table: &DirectionTable,
    layout: &StateLayout,
) -> DMatrix<f64> {
    let dims = table.dims();
    let d = dims.d;
    let r = dims.rot_dim();
    let k = dims.vectors();
    let sign = case.input_sign();
    let mut j_mat = DMatrix::zeros(layout.state_dim(), dims.algebra_dim());
    let mut e = vec![0.0; r];
    let gens: Vec<DMatrix<f64>> = (0..r)
        .map(|q| {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[q] = 1.0;
            hat_unchecked(&e, d)
        })
        .collect();
    for (s, &(i, j)) in layout.representatives.iter().enumerate() {
        let row = s * d;
        let zb = z.rows(row, d);
        for (q, g) in gens.iter().enumerate() {
            j_mat.view_mut((row, q), (d, 1)).copy_from(&(g * zb * sign));
        }
        let under = table.d_under(i, j);
        for col in 0..k {
            let coef = under[col] * sign;
            if coef != 0.0 {
                for a in 0..d {
                    j_mat[(row + a, r + col * d + a)] = coef;
                }
            }
        }
    }
    j_mat
}

/// Rank condition `rank(D) >= N` together with the smallest of the first
/// `N` singular values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub required: usize,
    pub ges_eligible: bool,
    pub sigma_min: f64,
}

pub fn rank_condition(table: &DirectionTable) -> RankReport {
    let s = table.singular_values();
    let required = table.big_n();
    let rank = numerical_rank(&s);
    let sigma_min = if s.len() >= required {
        s[required - 1]
    } else {
        0.0
    };
    RankReport {
        rank,
        required,
        ges_eligible: rank >= required,
        sigma_min,
    }
}
