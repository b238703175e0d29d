//! Kalman observers on the immersed state.
//!
//! The observer state is `x = [z; s; b]`: the reduced barred blocks, the
//! quadratic range scalars `s_{j,k} = 1/2 z_j^T z_k` for every range
//! measurement, and an optional input bias. State and gain matrix `P` are
//! integrated jointly with one RK4 step, the input and the measurements
//! being sampled at the start, middle and end of the step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::groups::{AlgebraElement, Dims, GroupElement};
use crate::immersion::{
    bias_jacobian, build_ltv_tfg, cayley_coefficients, direction_table, immerse, Case,
    CayleyCoefficients, DirectionTable, MeasurementKind, SlotRef, StateLayout, SystemSpec,
};
use crate::reconstruct::Reconstructor;
use crate::riccati::{floor_spd, RiccatiState};

/// Bearing vectors shorter than this are dropped for the step.
pub const BEARING_MIN_NORM: f64 = 1e-6;
/// Allowed deviation of a bearing measurement from unit norm.
pub const BEARING_UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// No bias state.
    #[default]
    Off,
    /// Only the vector part `b_rho` is estimated; the observer stays linear.
    Rho,
    /// Both `b_omega` and `b_rho`, with the modified Riccati gain.
    Full,
}

/// Gains and weights of the observer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub q_z: f64,
    pub q_s: f64,
    pub q_b: f64,
    /// Measurement weights, read as noise variances.
    pub r_landmark: f64,
    pub r_bearing: f64,
    pub r_range: f64,
    pub p0_z: f64,
    pub p0_s: f64,
    pub p0_b: f64,
    /// Forgetting factor of the modified Riccati equation.
    pub lambda: f64,
    /// Keep `Q` in the modified Riccati equation.
    pub modified_q: bool,
    pub bias: BiasMode,
    /// Diagonal of the reconstruction weight, one entry per `(i, j)` block.
    pub sigma_diag: Option<Vec<f64>>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            q_z: 1.0,
            q_s: 1.0,
            q_b: 1e-2,
            r_landmark: 1e-2,
            r_bearing: 1e-2,
            r_range: 1e-2,
            p0_z: 1.0,
            p0_s: 1.0,
            p0_b: 1.0,
            lambda: 0.1,
            modified_q: false,
            bias: BiasMode::Off,
            sigma_diag: None,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_landmark", self.r_landmark),
            ("r_bearing", self.r_bearing),
            ("r_range", self.r_range),
            ("p0_z", self.p0_z),
            ("p0_s", self.p0_s),
            ("p0_b", self.p0_b),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "observer.{name} must be > 0, got {v}"
                )));
            }
        }
        let nonneg = [
            ("q_z", self.q_z),
            ("q_s", self.q_s),
            ("q_b", self.q_b),
            ("lambda", self.lambda),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "observer.{name} must be >= 0, got {v}"
                )));
            }
        }
        if let Some(s) = &self.sigma_diag {
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(
                    "observer.sigma_diag entries must be > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One measured value.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementValue {
    Landmark(DVector<f64>),
    Bearing(DVector<f64>),
    Range(f64),
    /// Unavailable for this sample.
    Missing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBatch {
    pub values: Vec<MeasurementValue>,
}

impl MeasurementBatch {
    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        dim_check("measurement count", spec.n_meas(), self.values.len())?;
        let d = spec.dims.d;
        for (i, (v, m)) in self.values.iter().zip(&spec.measurements).enumerate() {
            match (v, m.kind) {
                (MeasurementValue::Missing, _) => {}
                (MeasurementValue::Landmark(y), MeasurementKind::Landmark) => {
                    dim_check(&format!("landmark {i}"), d, y.len())?;
                }
                (MeasurementValue::Bearing(y), MeasurementKind::Bearing) => {
                    dim_check(&format!("bearing {i}"), d, y.len())?;
                    if (y.norm() - 1.0).abs() > BEARING_UNIT_TOL {
                        return Err(Error::InvalidArgument(format!(
                            "bearing {i} is not unit norm ({})",
                            y.norm()
                        )));
                    }
                }
                (MeasurementValue::Range(r), MeasurementKind::Range) => {
                    if !(*r >= 0.0) {
                        return Err(Error::InvalidArgument(format!("range {i} is negative")));
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "measurement {i} does not match its kind {:?}",
                        m.kind
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Values at the start, middle and end of an integration step.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSamples<T> {
    pub start: T,
    pub mid: T,
    pub end: T,
}

impl<T: Clone> StageSamples<T> {
    pub fn constant(v: T) -> Self {
        Self {
            start: v.clone(),
            mid: v.clone(),
            end: v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub z: DVector<f64>,
    /// Range scalars, one packed upper triangle per range measurement.
    pub s: Option<DVector<f64>>,
    pub bias: Option<AlgebraElement>,
    pub riccati: RiccatiState,
    pub t: f64,
}

/// Matrices seen by the Riccati equation during one step, for Gramian
/// monitoring.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub f: [DMatrix<f64>; 3],
    pub g: [DMatrix<f64>; 2],
}

/// Number of packed pairs `j <= k < n`.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed index of `s_{j,k}` (symmetric in `j, k`).
pub fn pair_index(j: usize, k: usize, n: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    // Row `a` starts after rows of length n, n-1, ..., n-a+1.
    a * n - a * a.saturating_sub(1) / 2 + (b - a)
}

/// Rows `Pi = I - y y^T` for a bearing, or `None` when the raw vector is
/// too short to define a direction. The virtual measurement is zero.
pub fn bearing_rows(y: &DVector<f64>) -> Option<DMatrix<f64>> {
    let norm = y.norm();
    if norm < BEARING_MIN_NORM {
        return None;
    }
    let u = y / norm;
    Some(DMatrix::identity(y.len(), y.len()) - &u * u.transpose())
}

/// Measurement `1/2 y^2` of the `s_{0,0}` slot and its variance, with `r`
/// the variance of the range noise.
pub fn range_rows(y: f64, r: f64) -> (f64, f64) {
    (0.5 * y * y, y * y * r + 0.5 * r * r)
}

/// Linear dynamics of the range scalars of measurement `meas`:
/// `ds/dt = A_sz z + A_ss s`.
///
/// `ds_{j,k}/dt = 1/2 c_j^T z_k + 1/2 c_k^T z_j - next(j,k) - next(k,j)`
/// with `c_j` the input term of block `j` and `next(j,k) = s_{j+1,k}`,
/// closed by the Cayley-Hamilton coefficients at `j = N - 1`.
pub fn range_block(
    u: &AlgebraElement,
    case: Case,
    table: &DirectionTable,
    coeffs: &CayleyCoefficients,
    layout: &StateLayout,
    meas: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = table.big_n();
    let d = layout.d;
    let np = pair_count(n);
    let sign = case.input_sign();
    let c: Vec<DVector<f64>> = (0..n)
        .map(|j| &u.rho * table.d_under(meas, j) * sign)
        .collect();
    let mut a_sz = DMatrix::zeros(np, layout.state_dim());
    let mut a_ss = DMatrix::zeros(np, np);
    let add_z = |row: usize, coef: &DVector<f64>, k: usize, a: &mut DMatrix<f64>| {
        if let SlotRef::Slot { index, sign } = layout.slot(meas, k) {
            for q in 0..d {
                a[(row, index * d + q)] += 0.5 * sign * coef[q];
            }
        }
    };
    for j in 0..n {
        for k in j..n {
            let row = pair_index(j, k, n);
            add_z(row, &c[j], k, &mut a_sz);
            add_z(row, &c[k], j, &mut a_sz);
            for (p, q) in [(j, k), (k, j)] {
                if p + 1 < n {
                    a_ss[(row, pair_index(p + 1, q, n))] -= 1.0;
                } else {
                    for (l, &al) in coeffs.a.iter().enumerate() {
                        if al != 0.0 {
                            a_ss[(row, pair_index(l, q, n))] -= al;
                        }
                    }
                }
            }
        }
    }
    (a_sz, a_ss)
}

/// `ds/dt` for the range scalars of measurement `meas`.
#[allow(clippy::too_many_arguments)]
pub fn range_augmentation_rhs(
    z: &DVector<f64>,
    s: &DVector<f64>,
    u: &AlgebraElement,
    case: Case,
    table: &DirectionTable,
    coeffs: &CayleyCoefficients,
    layout: &StateLayout,
    meas: usize,
) -> DVector<f64> {
    let (a_sz, a_ss) = range_block(u, case, table, coeffs, layout, meas);
    a_sz * z + a_ss * s
}

/// Range scalars `1/2 z_j^T z_k` computed from barred blocks.
pub fn range_scalars(z: &DVector<f64>, layout: &StateLayout, meas: usize) -> DVector<f64> {
    let n = layout.big_n;
    let blocks: Vec<DVector<f64>> = (0..n).map(|j| layout.block(z, meas, j)).collect();
    let mut s = DVector::zeros(pair_count(n));
    for j in 0..n {
        for k in j..n {
            s[pair_index(j, k, n)] = 0.5 * blocks[j].dot(&blocks[k]);
        }
    }
    s
}

/// Linearized measurement equation for one batch.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Diagonal of `R^{-1}`.
    pub r_inv: DVector<f64>,
}

impl MeasurementModel {
    fn information(&self) -> DMatrix<f64> {
        let mut hw = self.h.transpose();
        for (c, w) in self.r_inv.iter().enumerate() {
            hw.column_mut(c).scale_mut(*w);
        }
        hw * &self.h
    }
}

#[derive(Clone, Debug)]
struct RangeSlot {
    meas: usize,
    offset: usize,
}

/// Observer for a two-frame system.
#[derive(Clone, Debug)]
pub struct Observer {
    spec: SystemSpec,
    table: DirectionTable,
    coeffs: CayleyCoefficients,
    layout: StateLayout,
    cfg: ObserverConfig,
    ranges: Vec<RangeSlot>,
    nz: usize,
    ns: usize,
    nb: usize,
    q_diag: DVector<f64>,
}

impl Observer {
    pub fn new(spec: SystemSpec, cfg: ObserverConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let table = direction_table(&spec);
        let coeffs = cayley_coefficients(&spec.generator);
        let layout = StateLayout::for_spec(&spec, &table);
        let n = spec.big_n();
        let mut ranges = Vec::new();
        let mut offset = 0;
        for (i, m) in spec.measurements.iter().enumerate() {
            if m.kind == MeasurementKind::Range {
                ranges.push(RangeSlot { meas: i, offset });
                offset += pair_count(n);
            }
        }
        let nz = layout.state_dim();
        let ns = offset;
        let nb = match cfg.bias {
            BiasMode::Off => 0,
            BiasMode::Rho => spec.dims.d * spec.dims.vectors(),
            BiasMode::Full => spec.dims.algebra_dim(),
        };
        if let Some(sig) = &cfg.sigma_diag {
            dim_check("observer.sigma_diag length", table.columns(), sig.len())?;
        }
        let mut q_diag = DVector::zeros(nz + ns + nb);
        let use_q = cfg.bias != BiasMode::Full || cfg.modified_q;
        if use_q {
            q_diag.rows_mut(0, nz).fill(cfg.q_z);
            q_diag.rows_mut(nz, ns).fill(cfg.q_s);
            q_diag.rows_mut(nz + ns, nb).fill(cfg.q_b);
        }
        Ok(Self {
            spec,
            table,
            coeffs,
            layout,
            cfg,
            ranges,
            nz,
            ns,
            nb,
            q_diag,
        })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn table(&self) -> &DirectionTable {
        &self.table
    }

    pub fn coeffs(&self) -> &CayleyCoefficients {
        &self.coeffs
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn config(&self) -> &ObserverConfig {
        &self.cfg
    }

    pub fn dims(&self) -> Dims {
        self.spec.dims
    }

    /// Dimension of the full observer state `[z; s; b]`.
    pub fn state_dim(&self) -> usize {
        self.nz + self.ns + self.nb
    }

    fn lambda(&self) -> f64 {
        if self.cfg.bias == BiasMode::Full {
            self.cfg.lambda
        } else {
            0.0
        }
    }

    /// Reconstructor matching the observer's direction table and weight.
    pub fn reconstructor(&self) -> Result<Reconstructor> {
        let sigma = self
            .cfg
            .sigma_diag
            .as_ref()
            .map(|s| DMatrix::from_diagonal(&DVector::from_column_slice(s)));
        Reconstructor::new(
            self.spec.dims,
            &self.table.d_bar_matrix(),
            &self.table.d_under_matrix(),
            sigma.as_ref(),
            self.spec.case,
        )
    }

    /// Observer state initialized at the immersion of `chi0`.
    pub fn initial_state(
        &self,
        chi0: &GroupElement,
        bias0: Option<&AlgebraElement>,
        t0: f64,
    ) -> Result<ObserverState> {
        let z = immerse(chi0, &self.table, self.spec.case).stacked(&self.layout);
        self.initial_state_from_z(z, bias0, t0)
    }

    pub fn initial_state_from_z(
        &self,
        z: DVector<f64>,
        bias0: Option<&AlgebraElement>,
        t0: f64,
    ) -> Result<ObserverState> {
        dim_check("z length", self.nz, z.len())?;
        let s = if self.ranges.is_empty() {
            None
        } else {
            let mut s = DVector::zeros(self.ns);
            let np = pair_count(self.spec.big_n());
            for r in &self.ranges {
                s.rows_mut(r.offset, np)
                    .copy_from(&range_scalars(&z, &self.layout, r.meas));
            }
            Some(s)
        };
        let bias = match self.cfg.bias {
            BiasMode::Off => None,
            mode => {
                let mut b = bias0
                    .cloned()
                    .unwrap_or_else(|| AlgebraElement::zero(self.spec.dims));
                if b.dims() != self.spec.dims {
                    return Err(Error::DimensionMismatch("initial bias dims".into()));
                }
                if mode == BiasMode::Rho {
                    b.omega.fill(0.0);
                }
                Some(b)
            }
        };
        let mut p = DVector::zeros(self.state_dim());
        p.rows_mut(0, self.nz).fill(self.cfg.p0_z);
        p.rows_mut(self.nz, self.ns).fill(self.cfg.p0_s);
        p.rows_mut(self.nz + self.ns, self.nb).fill(self.cfg.p0_b);
        Ok(ObserverState {
            z,
            s,
            bias,
            riccati: RiccatiState {
                p: DMatrix::from_diagonal(&p),
                t: t0,
            },
            t: t0,
        })
    }

    /// Stacks `[z; s; b]`.
    pub fn pack(&self, state: &ObserverState) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim());
        x.rows_mut(0, self.nz).copy_from(&state.z);
        if let Some(s) = &state.s {
            x.rows_mut(self.nz, self.ns).copy_from(s);
        }
        if let Some(b) = &state.bias {
            x.rows_mut(self.nz + self.ns, self.nb)
                .copy_from(&self.bias_to_vec(b));
        }
        x
    }

    fn bias_to_vec(&self, b: &AlgebraElement) -> DVector<f64> {
        match self.cfg.bias {
            BiasMode::Off => DVector::zeros(0),
            BiasMode::Rho => DVector::from_column_slice(b.rho.as_slice()),
            BiasMode::Full => b.to_vector(),
        }
    }

    fn bias_from_x(&self, x: &DVector<f64>) -> Option<AlgebraElement> {
        let dims = self.spec.dims;
        let v = x.rows(self.nz + self.ns, self.nb);
        match self.cfg.bias {
            BiasMode::Off => None,
            BiasMode::Rho => Some(
                AlgebraElement::new(
                    dims,
                    DVector::zeros(dims.rot_dim()),
                    DMatrix::from_column_slice(dims.d, dims.vectors(), v.as_slice()),
                )
                .expect("dims are consistent"),
            ),
            BiasMode::Full => Some(
                AlgebraElement::from_vector(dims, &v.into_owned()).expect("dims are consistent"),
            ),
        }
    }

    fn unpack(&self, x: &DVector<f64>, p: DMatrix<f64>, t: f64) -> ObserverState {
        ObserverState {
            z: x.rows(0, self.nz).into_owned(),
            s: (self.ns > 0).then(|| x.rows(self.nz, self.ns).into_owned()),
            bias: self.bias_from_x(x),
            riccati: RiccatiState { p, t },
            t,
        }
    }

    /// Right-hand side `f(x)` (without innovation) and its Jacobian `F`.
    pub fn dynamics(
        &self,
        x: &DVector<f64>,
        u: &AlgebraElement,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (nz, ns, nb) = (self.nz, self.ns, self.nb);
        let dims = self.spec.dims;
        let case = self.spec.case;
        let u_eff = match self.bias_from_x(x) {
            Some(b) => u.add(&b),
            None => u.clone(),
        };
        let ltv = build_ltv_tfg(&u_eff, case, &self.table, &self.coeffs, &self.layout)?;
        let n = self.state_dim();
        let mut f = DMatrix::zeros(n, n);
        f.view_mut((0, 0), (nz, nz)).copy_from(&ltv.f);
        let z = x.rows(0, nz).into_owned();
        let np = pair_count(self.spec.big_n());
        for r in &self.ranges {
            let (a_sz, a_ss) = range_block(
                &u_eff,
                case,
                &self.table,
                &self.coeffs,
                &self.layout,
                r.meas,
            );
            f.view_mut((nz + r.offset, 0), (np, nz)).copy_from(&a_sz);
            f.view_mut((nz + r.offset, nz + r.offset), (np, np))
                .copy_from(&a_ss);
        }
        // Dynamics are affine in (z, s) for a fixed bias.
        let mut fx = f.view((0, 0), (nz + ns, nz + ns)) * x.rows(0, nz + ns);
        let mut head = fx.rows_mut(0, nz);
        head += &ltv.c;
        let mut full = DVector::zeros(n);
        full.rows_mut(0, nz + ns).copy_from(&fx);

        if nb > 0 {
            let jz = bias_jacobian(&z, case, &self.table, &self.layout);
            let skip = if self.cfg.bias == BiasMode::Rho {
                dims.rot_dim()
            } else {
                0
            };
            f.view_mut((0, nz + ns), (nz, nb))
                .copy_from(&jz.columns(skip, nb));
            let rho_col = nz + ns + nb - dims.d * dims.vectors();
            for r in &self.ranges {
                let js = self.range_bias_jacobian(&z, r.meas);
                f.view_mut((nz + r.offset, rho_col), (np, js.ncols()))
                    .copy_from(&js);
            }
        }
        Ok((full, f))
    }

    /// Derivative of the range scalars with respect to `vec(b_rho)`.
    fn range_bias_jacobian(&self, z: &DVector<f64>, meas: usize) -> DMatrix<f64> {
        let n = self.spec.big_n();
        let dims = self.spec.dims;
        let (d, k) = (dims.d, dims.vectors());
        let sign = self.spec.case.input_sign();
        let blocks: Vec<DVector<f64>> = (0..n).map(|j| self.layout.block(z, meas, j)).collect();
        let mut out = DMatrix::zeros(pair_count(n), d * k);
        for j in 0..n {
            for kk in j..n {
                let row = pair_index(j, kk, n);
                for (a, b) in [(j, kk), (kk, j)] {
                    let under = self.table.d_under(meas, a);
                    for col in 0..k {
                        if under[col] != 0.0 {
                            for q in 0..d {
                                out[(row, col * d + q)] += 0.5 * sign * under[col] * blocks[b][q];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Measurement rows, values and weights of one batch.
    pub fn measurement_model(&self, batch: &MeasurementBatch) -> Result<MeasurementModel> {
        batch.validate(&self.spec)?;
        let d = self.spec.dims.d;
        let n = self.state_dim();
        let mut rows: Vec<(DMatrix<f64>, DVector<f64>, f64)> = Vec::new();
        let slot_rows = |meas: usize, block: &DMatrix<f64>| -> DMatrix<f64> {
            let mut h = DMatrix::zeros(block.nrows(), n);
            if let SlotRef::Slot { index, sign } = self.layout.slot(meas, 0) {
                h.view_mut((0, index * d), (block.nrows(), d))
                    .copy_from(&(block * sign));
            }
            h
        };
        for (i, value) in batch.values.iter().enumerate() {
            match value {
                MeasurementValue::Missing => {}
                MeasurementValue::Landmark(y) => {
                    let h = slot_rows(i, &DMatrix::identity(d, d));
                    rows.push((h, y.clone(), 1.0 / self.cfg.r_landmark));
                }
                MeasurementValue::Bearing(y) => {
                    if let Some(pi) = bearing_rows(y) {
                        let h = slot_rows(i, &pi);
                        rows.push((h, DVector::zeros(d), 1.0 / self.cfg.r_bearing));
                    }
                }
                MeasurementValue::Range(y) => {
                    let slot =
                        self.ranges.iter().find(|r| r.meas == i).ok_or_else(|| {
                            Error::InternalConsistency("range slot missing".into())
                        })?;
                    let (val, var) = range_rows(*y, self.cfg.r_range);
                    let mut h = DMatrix::zeros(1, n);
                    h[(
                        0,
                        self.nz + slot.offset + pair_index(0, 0, self.spec.big_n()),
                    )] = 1.0;
                    rows.push((h, DVector::from_element(1, val), 1.0 / var.max(1e-300)));
                }
            }
        }
        let m: usize = rows.iter().map(|r| r.0.nrows()).sum();
        let mut h = DMatrix::zeros(m, n);
        let mut y = DVector::zeros(m);
        let mut r_inv = DVector::zeros(m);
        let mut at = 0;
        for (hr, yr, w) in rows {
            let k = hr.nrows();
            h.view_mut((at, 0), (k, n)).copy_from(&hr);
            y.rows_mut(at, k).copy_from(&yr);
            r_inv.rows_mut(at, k).fill(w);
            at += k;
        }
        Ok(MeasurementModel { h, y, r_inv })
    }

    fn stage(
        &self,
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        u: &AlgebraElement,
        meas: &MeasurementModel,
        g: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (fx, f) = self.dynamics(x, u)?;
        let mut innov = &meas.y - &meas.h * x;
        innov.component_mul_assign(&meas.r_inv);
        let dx = fx + p * (meas.h.tr_mul(&innov));
        let fp = &f * p;
        let mut dp = &fp + fp.transpose() - p * g * p;
        for i in 0..dp.nrows() {
            dp[(i, i)] += self.q_diag[i];
        }
        let lambda = self.lambda();
        if lambda != 0.0 {
            dp += p * lambda;
        }
        Ok((dx, dp, f))
    }

    /// One joint RK4 step of the state and `P`.
    pub fn step(
        &self,
        state: &ObserverState,
        u: &StageSamples<AlgebraElement>,
        y: &StageSamples<MeasurementBatch>,
        h: f64,
    ) -> Result<(ObserverState, StepReport)> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("step must be positive".into()));
        }
        let n = self.state_dim();
        dim_check("P rows", n, state.riccati.p.nrows())?;
        let x = self.pack(state);
        let p = &state.riccati.p;
        let m0 = self.measurement_model(&y.start)?;
        let mm = self.measurement_model(&y.mid)?;
        let m1 = self.measurement_model(&y.end)?;
        let g0 = m0.information();
        let gm = mm.information();
        let g1 = m1.information();

        let (k1x, k1p, f0) = self.stage(&x, p, &u.start, &m0, &g0)?;
        let x2 = &x + &k1x * (h / 2.0);
        let p2 = p + &k1p * (h / 2.0);
        let (k2x, k2p, fm) = self.stage(&x2, &p2, &u.mid, &mm, &gm)?;
        let x3 = &x + &k2x * (h / 2.0);
        let p3 = p + &k2p * (h / 2.0);
        let (k3x, k3p, _) = self.stage(&x3, &p3, &u.mid, &mm, &gm)?;
        let x4 = &x + &k3x * h;
        let p4 = p + &k3p * h;
        let (k4x, k4p, f1) = self.stage(&x4, &p4, &u.end, &m1, &g1)?;

        let x_next = x + (k1x + (k2x + k3x) * 2.0 + k4x) * (h / 6.0);
        let p_next = p + (k1p + (k2p + k3p) * 2.0 + k4p) * (h / 6.0);
        if x_next.iter().any(|v| !v.is_finite()) || p_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "observer state diverged at t = {}",
                state.t + h
            )));
        }
        let p_next = floor_spd(p_next);
        let t = state.t + h;
        Ok((
            self.unpack(&x_next, p_next, t),
            StepReport {
                f: [f0, fm, f1],
                g: [g0, g1],
            },
        ))
    }

    /// Step of the bias-free observer; fails if a bias state is configured.
    pub fn step_bias_free(
        &self,
        state: &ObserverState,
        u: &StageSamples<AlgebraElement>,
        y: &StageSamples<MeasurementBatch>,
        h: f64,
    ) -> Result<(ObserverState, StepReport)> {
        if self.cfg.bias != BiasMode::Off {
            return Err(Error::Config("observer has a bias state".into()));
        }
        self.step(state, u, y, h)
    }

    /// Step of the bias-augmented observer; fails without a bias state.
    pub fn step_biased(
        &self,
        state: &ObserverState,
        u: &StageSamples<AlgebraElement>,
        y: &StageSamples<MeasurementBatch>,
        h: f64,
    ) -> Result<(ObserverState, StepReport)> {
        if self.cfg.bias == BiasMode::Off {
            return Err(Error::Config("observer has no bias state".into()));
        }
        self.step(state, u, y, h)
    }

    /// `d x MN` matrix of all barred blocks of the estimate.
    pub fn zbar_matrix(&self, state: &ObserverState) -> DMatrix<f64> {
        self.layout.expand_to_matrix(&state.z)
    }
}
