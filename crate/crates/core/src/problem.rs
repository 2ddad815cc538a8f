//! Parameters of the embedded saddle-point problem
//!
//! ```text
//! min_{x in [lo, hi]} max_{y} 1/2 x'Hx + <x, c> + <y, Ax + b>
//! ```
//!
//! The box is part of the primal domain, so only the equality constraints
//! carry explicit duals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParameters {
    pub c: DVector<f64>,
    /// Quadratic cost; `None` makes the problem an LP.
    pub h: Option<DMatrix<f64>>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

/// A primal-dual point `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualSolution {
    #[serde(with = "dense_vector")]
    pub x: DVector<f64>,
    #[serde(with = "dense_vector")]
    pub y: DVector<f64>,
}

impl PrimalDualSolution {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        Self { x, y }
    }
}

impl ProblemParameters {
    /// Box-constrained LP without equality constraints.
    pub fn box_lp(c: DVector<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            h: None,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lo,
            hi,
        }
    }

    pub fn unit_box_lp(c: DVector<f64>) -> Self {
        let n = c.len();
        Self::box_lp(c, DVector::zeros(n), DVector::from_element(n, 1.0))
    }

    pub fn with_quadratic(mut self, h: DMatrix<f64>) -> Self {
        self.h = Some(h);
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn is_lp(&self) -> bool {
        self.h.is_none()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.n();
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {}/{} but c has length {n}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        if self.a.ncols() != n || self.a.nrows() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{} but expected {}x{n}",
                self.a.nrows(),
                self.a.ncols(),
                self.m()
            )));
        }
        if let Some(h) = &self.h {
            if h.nrows() != n || h.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "H is {}x{} but expected {n}x{n}",
                    h.nrows(),
                    h.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Full invariant check: dimensions, finiteness, box ordering, and
    /// symmetry / positive semi-definiteness of `H`.
    pub fn validate(&self) -> Result<()> {
        self.check_dimensions()?;
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.lo.iter().all(|v| v.is_finite())
            && self.hi.iter().all(|v| v.is_finite())
            && self.h.as_ref().is_none_or(|h| h.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidParameters("non-finite entry".into()));
        }
        if let Some(i) = (0..self.n()).find(|&i| self.lo[i] > self.hi[i]) {
            return Err(Error::InvalidParameters(format!(
                "lo[{i}] = {} exceeds hi[{i}] = {}",
                self.lo[i], self.hi[i]
            )));
        }
        if let Some(h) = &self.h {
            check_psd(h)?;
        }
        Ok(())
    }

    pub fn project_to_box(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(self.lo[i], self.hi[i])),
        )
    }

    /// `Hx` (zero for LPs).
    pub fn h_times(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.h {
            Some(h) => h * x,
            None => DVector::zeros(x.len()),
        }
    }

    /// `1/2 x'Hx + <x, c>`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.h_times(x)) + x.dot(&self.c)
    }

    /// `Ax + b`.
    pub fn equality_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// `sup_{x in box} ||x||_2`, the Lipschitz constant of `L` in `c`.
    pub fn box_radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_json(&self) -> ProblemJson {
        ProblemJson::from(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: ProblemJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParameters(format!("bad problem JSON: {e}")))?;
        raw.try_into()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("problem JSON serialization is infallible")
    }
}

fn check_psd(h: &DMatrix<f64>) -> Result<()> {
    let scale = h.norm();
    for i in 0..h.nrows() {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::InvalidParameters(format!(
                    "H is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if scale == 0.0 {
        return Ok(());
    }
    // min eigenvalue >= -1e-8 ||H||  <=>  H + 1e-8 ||H|| I is PSD
    let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * (1e-8 * scale);
    if shifted.cholesky().is_some() {
        return Ok(());
    }
    let min_eig = h.clone().symmetric_eigen().eigenvalues.min();
    if min_eig >= -1e-8 * scale {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "H is not positive semi-definite (min eigenvalue {min_eig:.3e})"
        )))
    }
}

/// JSON wire format. Matrices are dense row-major arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemJson {
    pub c: Vec<f64>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Serde adapter writing a `DVector` as a plain JSON array.
pub mod dense_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{what} row {bad} has length {} but expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&ProblemParameters> for ProblemJson {
    fn from(p: &ProblemParameters) -> Self {
        Self {
            c: p.c.iter().copied().collect(),
            h: p.h.as_ref().map(matrix_rows),
            a: matrix_rows(&p.a),
            b: p.b.iter().copied().collect(),
            lo: p.lo.iter().copied().collect(),
            hi: p.hi.iter().copied().collect(),
        }
    }
}

impl TryFrom<ProblemJson> for ProblemParameters {
    type Error = Error;

    fn try_from(raw: ProblemJson) -> Result<Self> {
        let n = raw.c.len();
        let h = raw
            .h
            .as_ref()
            .map(|rows| {
                if rows.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "H has {} rows but expected {n}",
                        rows.len()
                    )));
                }
                matrix_from_rows(rows, n, "H")
            })
            .transpose()?;
        let a = matrix_from_rows(&raw.a, n, "A")?;
        let params = ProblemParameters {
            c: DVector::from_vec(raw.c),
            h,
            a,
            b: DVector::from_vec(raw.b),
            lo: DVector::from_vec(raw.lo),
            hi: DVector::from_vec(raw.hi),
        };
        params.validate()?;
        Ok(params)
    }
}
