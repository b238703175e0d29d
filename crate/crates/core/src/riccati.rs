//! Matrix Riccati equations, Kalman gains and Gramian monitors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dim_check, Error, Result};

/// Smallest eigenvalue allowed in `P` after each step.
pub const P_FLOOR: f64 = 1e-12;

/// Covariance-like matrix `P` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiState {
    pub p: DMatrix<f64>,
    pub t: f64,
}

impl RiccatiState {
    pub fn new(p: DMatrix<f64>, t: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch("P must be square".into()));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-10 * p.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "P is not symmetric (asymmetry {asym:e})"
            )));
        }
        if p.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("P is not positive definite".into()));
        }
        Ok(Self { p, t })
    }

    /// Eigenvalues of `P`, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.p.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

/// Weights of the Riccati equation, validated at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GainConfig {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    pub lambda: f64,
    pub p0: f64,
}

impl GainConfig {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, lambda: f64, p0: f64) -> Result<Self> {
        if q.nrows() != q.ncols() || r.nrows() != r.ncols() {
            return Err(Error::Config("Q and R must be square".into()));
        }
        let q_ok = q.amax() == 0.0 || q.clone().cholesky().is_some();
        if !q_ok {
            return Err(Error::Config("Q is not positive definite".into()));
        }
        let r_inv =
            spd_inverse(&r).ok_or_else(|| Error::Config("R is not positive definite".into()))?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::Config(format!("p0 must be > 0, got {p0}")));
        }
        Ok(Self {
            q,
            r,
            r_inv,
            lambda,
            p0,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Matrices of the Riccati right-hand side at one time instant.
/// `g` is the information matrix `H^T R^{-1} H`; `q` may be omitted.
#[derive(Clone, Copy, Debug)]
pub struct RiccatiStage<'a> {
    pub f: &'a DMatrix<f64>,
    pub g: &'a DMatrix<f64>,
    pub q: Option<&'a DMatrix<f64>>,
}

fn riccati_rhs(p: &DMatrix<f64>, stage: &RiccatiStage<'_>, lambda: f64) -> DMatrix<f64> {
    let fp = stage.f * p;
    let mut out = &fp + fp.transpose() - p * stage.g * p;
    if let Some(q) = stage.q {
        out += q;
    }
    if lambda != 0.0 {
        out += p * lambda;
    }
    out
}

/// One RK4 step of `dP/dt = lambda P + F P + P F^T + Q - P G P` with the
/// matrices sampled at the start, middle and end of the step, followed by
/// symmetrization and the eigenvalue floor.
pub fn riccati_rk4(
    p: &DMatrix<f64>,
    start: &RiccatiStage<'_>,
    mid: &RiccatiStage<'_>,
    end: &RiccatiStage<'_>,
    lambda: f64,
    h: f64,
) -> DMatrix<f64> {
    let k1 = riccati_rhs(p, start, lambda);
    let k2 = riccati_rhs(&(p + &k1 * (h / 2.0)), mid, lambda);
    let k3 = riccati_rhs(&(p + &k2 * (h / 2.0)), mid, lambda);
    let k4 = riccati_rhs(&(p + &k3 * h), end, lambda);
    let next = p + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    floor_spd(next)
}

/// Symmetrizes and raises every eigenvalue to at least [`P_FLOOR`].
pub fn floor_spd(p: DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let sym = (&p + p.transpose()) * 0.5;
    let shifted = &sym - DMatrix::<f64>::identity(n, n) * P_FLOOR;
    if shifted.cholesky().is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(P_FLOOR));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&out + out.transpose()) * 0.5
}

fn check_dims(
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let n = p.nrows();
    dim_check("P cols", n, p.ncols())?;
    dim_check("F rows", n, f.nrows())?;
    dim_check("F cols", n, f.ncols())?;
    dim_check("H cols", n, h.ncols())?;
    dim_check("R rows", h.nrows(), r.nrows())?;
    dim_check("R cols", h.nrows(), r.ncols())
}

/// Information matrix `H^T R^{-1} H`.
pub fn information(h: &DMatrix<f64>, r_inv: &DMatrix<f64>) -> DMatrix<f64> {
    h.transpose() * r_inv * h
}

/// One RK4 step of the standard Riccati equation with constant matrices.
pub fn riccati_step(
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    check_dims(p, f, h, r)?;
    dim_check("Q rows", p.nrows(), q.nrows())?;
    let r_inv = spd_inverse(r).ok_or_else(|| Error::Config("R is not invertible".into()))?;
    let g = information(h, &r_inv);
    let stage = RiccatiStage {
        f,
        g: &g,
        q: Some(q),
    };
    Ok(riccati_rk4(p, &stage, &stage, &stage, 0.0, dt))
}

/// One RK4 step of the modified Riccati equation
/// `dP/dt = lambda P + F P + P F^T - P H^T R^{-1} H P`.
pub fn modified_riccati_step(
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lambda: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    check_dims(p, f, h, r)?;
    let r_inv = spd_inverse(r).ok_or_else(|| Error::Config("R is not invertible".into()))?;
    let g = information(h, &r_inv);
    let stage = RiccatiStage { f, g: &g, q: None };
    Ok(riccati_rk4(p, &stage, &stage, &stage, lambda, dt))
}

/// `K = P H^T R^{-1}`.
pub fn kalman_gain(p: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dim_check("H cols", p.nrows(), h.ncols())?;
    dim_check("R rows", h.nrows(), r.nrows())?;
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("R is not positive definite".into()))?;
    // R K^T = H P
    let kt = chol.solve(&(h * p));
    Ok(kt.transpose())
}

/// Samples of `(F, H^T R^{-1} H)` on a uniform grid of step `dt`.
#[derive(Clone, Debug, Default)]
pub struct GramianWindow {
    pub dt: f64,
    pub f: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

impl GramianWindow {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            f: Vec::new(),
            g: Vec::new(),
        }
    }

    pub fn push(&mut self, f: DMatrix<f64>, g: DMatrix<f64>) {
        self.f.push(f);
        self.g.push(g);
    }

    fn validate(&self) -> Result<usize> {
        if self.f.len() < 2 || self.f.len() != self.g.len() {
            return Err(Error::InvalidArgument(
                "a Gramian window needs at least two matching samples".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "window step must be positive".into(),
            ));
        }
        Ok(self.f[0].nrows())
    }

    /// Duration covered by the samples.
    pub fn length(&self) -> f64 {
        self.dt * self.f.len().saturating_sub(1) as f64
    }
}

/// RK4 step of `dPhi/dt = F Phi` with `F` given at start, middle, end.
pub fn transition_step(
    phi: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    f1: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let k1 = f0 * phi;
    let k2 = fm * (phi + &k1 * (h / 2.0));
    let k3 = fm * (phi + &k2 * (h / 2.0));
    let k4 = f1 * (phi + &k3 * h);
    phi + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Trapezoidal observability Gramian and the final transition matrix.
fn accumulate(window: &GramianWindow) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = window.validate()?;
    let h = window.dt;
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut acc = &window.g[0] * (h / 2.0);
    let last = window.f.len() - 1;
    for k in 0..last {
        let fm = (&window.f[k] + &window.f[k + 1]) * 0.5;
        phi = transition_step(&phi, &window.f[k], &fm, &window.f[k + 1], h);
        let weight = if k + 1 == last { h / 2.0 } else { h };
        acc += phi.transpose() * &window.g[k + 1] * &phi * weight;
    }
    Ok((acc, phi))
}

/// `O(t2, t1) = int Phi(tau, t1)^T H^T R^{-1} H Phi(tau, t1) dtau` and its
/// smallest eigenvalue.
pub fn observability_gramian(window: &GramianWindow) -> Result<(DMatrix<f64>, f64)> {
    let (o, _) = accumulate(window)?;
    let lmin = min_eigenvalue(&o);
    Ok((o, lmin))
}

/// `D(t2, t1) = Phi(t2, t1)^{-T} O(t2, t1) Phi(t2, t1)^{-1}` and its smallest
/// eigenvalue.
pub fn determinability_gramian(window: &GramianWindow) -> Result<(DMatrix<f64>, f64)> {
    let (o, phi) = accumulate(window)?;
    let d = anchor_at_end(&o, &phi)?;
    let lmin = min_eigenvalue(&d);
    Ok((d, lmin))
}

fn anchor_at_end(o: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = phi
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("transition matrix is singular".into()))?;
    Ok(inv.transpose() * o * inv)
}

#[derive(Clone, Debug)]
struct RunningWindow {
    phi: DMatrix<f64>,
    acc: DMatrix<f64>,
    elapsed: f64,
    started: bool,
    delay: f64,
}

/// Sliding-window Gramian monitor with staggered windows of length `delta`.
/// Reports the smallest eigenvalues of the most recently completed window.
#[derive(Clone, Debug)]
pub struct GramianMonitor {
    delta: f64,
    windows: Vec<RunningWindow>,
    obs_min: f64,
    det_min: f64,
    completed: usize,
}

impl GramianMonitor {
    pub fn new(dim: usize, delta: f64, stagger: usize) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(
                "Gramian window must be positive".into(),
            ));
        }
        let stagger = stagger.max(1);
        let windows = (0..stagger)
            .map(|k| RunningWindow {
                phi: DMatrix::identity(dim, dim),
                acc: DMatrix::zeros(dim, dim),
                elapsed: 0.0,
                started: false,
                delay: delta * k as f64 / stagger as f64,
            })
            .collect();
        Ok(Self {
            delta,
            windows,
            obs_min: f64::NAN,
            det_min: f64::NAN,
            completed: 0,
        })
    }

    /// Advances every window by one integrator step of length `h`.
    /// `f` holds `F` at the start, middle and end of the step and `g` the
    /// information matrix at the start and end.
    pub fn push(&mut self, f: [&DMatrix<f64>; 3], g: [&DMatrix<f64>; 2], h: f64) -> Result<()> {
        for w in &mut self.windows {
            if !w.started {
                if w.delay > 1e-9 * h {
                    w.delay -= h;
                    continue;
                }
                w.started = true;
            }
            w.acc += w.phi.transpose() * g[0] * &w.phi * (h / 2.0);
            w.phi = transition_step(&w.phi, f[0], f[1], f[2], h);
            w.acc += w.phi.transpose() * g[1] * &w.phi * (h / 2.0);
            w.elapsed += h;
            if w.elapsed >= self.delta - 1e-9 * h {
                self.obs_min = min_eigenvalue(&w.acc);
                self.det_min = min_eigenvalue(&anchor_at_end(&w.acc, &w.phi)?);
                self.completed += 1;
                let n = w.phi.nrows();
                w.phi = DMatrix::identity(n, n);
                w.acc = DMatrix::zeros(n, n);
                w.elapsed = 0.0;
            }
        }
        Ok(())
    }

    /// Smallest observability Gramian eigenvalue of the last completed
    /// window, `NaN` before the first window closes.
    pub fn obs_min(&self) -> f64 {
        self.obs_min
    }

    pub fn det_min(&self) -> f64 {
        self.det_min
    }

    pub fn completed(&self) -> usize {
        self.completed
    }
}
