//! Recovery of the group-valued estimate from immersed blocks by a
//! weighted Umeyama alignment.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_check, Error, Result};
use crate::groups::{procrustes_rotation, Dims, GroupElement};
use crate::immersion::{Case, DirectionTable, RANK_TOL};

pub use crate::immersion::{rank_condition, RankReport};

/// Largest condition number accepted for `D_under D_under^T`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionProblem {
    /// `d x MN` estimated barred blocks.
    pub zbar: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub d_under: DMatrix<f64>,
    /// Optional `MN x MN` SPD weight; identity when absent.
    pub sigma: Option<DMatrix<f64>>,
    pub case: Case,
}

impl ReconstructionProblem {
    pub fn from_table(zbar: DMatrix<f64>, table: &DirectionTable, case: Case) -> Self {
        Self {
            zbar,
            d_bar: table.d_bar_matrix(),
            d_under: table.d_under_matrix(),
            sigma: None,
            case,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub estimate: GroupElement,
    /// Singular values of `Zbar Pi Dbar^T`, descending.
    pub singular_values: DVector<f64>,
    pub unique: bool,
    /// Optimal value of the alignment cost.
    pub residual: f64,
}

/// Reconstruction with the direction-dependent factors precomputed, for
/// repeated solves against the same table.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    dims: Dims,
    case: Case,
    d_bar: DMatrix<f64>,
    d_under: DMatrix<f64>,
    /// `Pi Dbar^T`, `MN x d`.
    pi_dbar_t: DMatrix<f64>,
    /// `D_under^T (D_under D_under^T)^{-1}`, `MN x (n+m)`.
    right_inverse: DMatrix<f64>,
    /// `Sigma^{-1/2}` when weighted.
    weight: Option<DMatrix<f64>>,
}

fn inverse_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "Sigma is not positive definite".into(),
        ));
    }
    let scaled = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scaled) * v.transpose())
}

impl Reconstructor {
    pub fn new(
        dims: Dims,
        d_bar: &DMatrix<f64>,
        d_under: &DMatrix<f64>,
        sigma: Option<&DMatrix<f64>>,
        case: Case,
    ) -> Result<Self> {
        let cols = d_bar.ncols();
        dim_check("Dbar rows", dims.d, d_bar.nrows())?;
        dim_check("Dunder rows", dims.vectors(), d_under.nrows())?;
        dim_check("Dunder cols", cols, d_under.ncols())?;
        let weight = match sigma {
            Some(s) => {
                dim_check("Sigma rows", cols, s.nrows())?;
                dim_check("Sigma cols", cols, s.ncols())?;
                Some(inverse_sqrt(s)?)
            }
            None => None,
        };
        let (db, du) = match &weight {
            Some(w) => (d_bar * w, d_under * w),
            None => (d_bar.clone(), d_under.clone()),
        };
        let gram = &du * du.transpose();
        let k = gram.nrows();
        let right_inverse = if k == 0 {
            DMatrix::zeros(cols, 0)
        } else {
            let eig = SymmetricEigen::new(gram.clone());
            let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
            if !(lo > 0.0) || hi / lo > MAX_CONDITION {
                return Err(Error::RankCondition(format!(
                    "D_under D_under^T is singular or ill-conditioned (eigenvalues {lo:e}..{hi:e})"
                )));
            }
            let chol = gram
                .cholesky()
                .ok_or_else(|| Error::RankCondition("D_under D_under^T not invertible".into()))?;
            du.transpose() * chol.inverse()
        };
        let pi = DMatrix::<f64>::identity(cols, cols) - &right_inverse * &du;
        let pi_dbar_t = pi * db.transpose();
        Ok(Self {
            dims,
            case,
            d_bar: db,
            d_under: du,
            pi_dbar_t,
            right_inverse,
            weight,
        })
    }

    pub fn from_table(table: &DirectionTable, case: Case) -> Result<Self> {
        Self::new(
            table.dims(),
            &table.d_bar_matrix(),
            &table.d_under_matrix(),
            None,
            case,
        )
    }

    pub fn solve(&self, zbar: &DMatrix<f64>) -> Result<ReconstructionResult> {
        dim_check("Zbar rows", self.dims.d, zbar.nrows())?;
        dim_check("Zbar cols", self.d_bar.ncols(), zbar.ncols())?;
        let z = match &self.weight {
            Some(w) => zbar * w,
            None => zbar.clone(),
        };
        let m = &z * &self.pi_dbar_t;
        // procrustes_rotation returns U S V^T maximizing tr(R^T M).
        let (usv, sigma, _) = procrustes_rotation(&m)?;
        let (rot, w) = match self.case {
            Case::Case1 => {
                let rot = usv.transpose();
                let w = (&self.d_bar - &rot * &z) * &self.right_inverse;
                (rot, w)
            }
            Case::Case2 => {
                let w = (&z - &usv * &self.d_bar) * &self.right_inverse;
                (usv, w)
            }
        };
        let residual = match self.case {
            Case::Case1 => (&rot * &z + &w * &self.d_under - &self.d_bar).norm_squared(),
            Case::Case2 => (&z - &rot * &self.d_bar - &w * &self.d_under).norm_squared(),
        };
        let unique = singular_values_unique(&sigma, self.dims.d);
        let estimate = GroupElement::new(self.dims, rot, w)
            .map_err(|e| Error::Numerical(format!("reconstructed element invalid: {e}")))?;
        Ok(ReconstructionResult {
            estimate,
            singular_values: sigma,
            unique,
            residual,
        })
    }
}

fn singular_values_unique(sigma: &DVector<f64>, d: usize) -> bool {
    let top = sigma[0];
    if !(top > 0.0) {
        return false;
    }
    if d < 2 {
        return true;
    }
    sigma[d - 2] >= RANK_TOL * top
}

/// One-shot solve of a reconstruction problem.
pub fn umeyama_solve(problem: &ReconstructionProblem, dims: Dims) -> Result<ReconstructionResult> {
    Reconstructor::new(
        dims,
        &problem.d_bar,
        &problem.d_under,
        problem.sigma.as_ref(),
        problem.case,
    )?
    .solve(&problem.zbar)
}

/// True iff `rank(Zbar Pi Dbar^T) >= d - 1` under the relative threshold.
pub fn uniqueness_check(result: &ReconstructionResult) -> bool {
    singular_values_unique(&result.singular_values, result.singular_values.len())
}

/// Case 1: `|chi^{-1} - chi_hat^{-1}|_F`; Case 2: `|chi - chi_hat|_F`.
pub fn error_metric(estimate: &GroupElement, truth: &GroupElement, case: Case) -> f64 {
    match case {
        Case::Case1 => (truth.inverse().embed() - estimate.inverse().embed()).norm(),
        Case::Case2 => (truth.embed() - estimate.embed()).norm(),
    }
}

/// Constant `2 / sqrt(lambda_min(D D^T))` bounding the error metric by the
/// immersed error.
pub fn error_bound_constant(table: &DirectionTable) -> f64 {
    let d = table.d_matrix();
    let lmin = SymmetricEigen::new(&d * d.transpose()).eigenvalues.min();
    2.0 / lmin.max(0.0).sqrt()
}
