//! Cubic B-spline evaluation on the observation grid and the second-order
//! difference roughness penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

/// Ordered observation times shared by every curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidDimension(format!(
                "time grid needs at least 4 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidData("time grid contains non-finite values".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData("time grid must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `len` equally spaced points on `[0, 1]`.
    pub fn uniform(len: usize) -> Result<Self> {
        if len < 4 {
            return Err(Error::InvalidDimension(format!(
                "time grid needs at least 4 points, got {len}"
            )));
        }
        let step = 1.0 / (len - 1) as f64;
        Self::new((0..len).map(|j| j as f64 * step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Basis evaluation matrix together with its roughness penalty.
#[derive(Clone, Debug)]
pub struct BasisSystem {
    /// `T x R` matrix with entry `(j, r) = b_r(t_j)`.
    pub b: DMatrix<f64>,
    /// `R x R` penalty, `D2' D2 + ridge * I`.
    pub omega: DMatrix<f64>,
    pub ridge: f64,
    pub degree: usize,
    pub num_basis: usize,
    /// Cached `B' B`.
    pub btb: DMatrix<f64>,
}

impl BasisSystem {
    pub fn new(grid: &TimeGrid, num_basis: usize, ridge: f64) -> Result<Self> {
        let b = build_bspline_basis(grid, num_basis)?;
        let omega = build_penalty(num_basis, ridge)?;
        let btb = b.transpose() * &b;
        Ok(Self {
            b,
            omega,
            ridge,
            degree: DEGREE,
            num_basis,
            btb,
        })
    }

    pub fn num_times(&self) -> usize {
        self.b.nrows()
    }

    /// The unridged part `D2' D2` of the penalty.
    pub fn roughness(&self) -> DMatrix<f64> {
        &self.omega - DMatrix::identity(self.num_basis, self.num_basis) * self.ridge
    }
}

/// Clamped knot vector on `[start, end]` with equally spaced interior knots.
pub fn clamped_knots(start: f64, end: f64, num_basis: usize) -> Vec<f64> {
    let interior = num_basis - (DEGREE + 1);
    let spans = interior + 1;
    let mut knots = Vec::with_capacity(num_basis + DEGREE + 1);
    knots.extend(std::iter::repeat_n(start, DEGREE + 1));
    for j in 1..=interior {
        knots.push(start + (end - start) * j as f64 / spans as f64);
    }
    knots.extend(std::iter::repeat_n(end, DEGREE + 1));
    knots
}

/// Evaluate the `R` clamped cubic B-splines at every grid point.
///
/// Rows sum to one and each row has at most four nonzero entries.
pub fn build_bspline_basis(grid: &TimeGrid, num_basis: usize) -> Result<DMatrix<f64>> {
    if num_basis < DEGREE + 1 || num_basis > grid.len() {
        return Err(Error::InvalidDimension(format!(
            "number of basis functions must lie in [4, T={}], got {num_basis}",
            grid.len()
        )));
    }
    let knots = clamped_knots(grid.start(), grid.end(), num_basis);
    let mut b = DMatrix::zeros(grid.len(), num_basis);
    let mut values = [0.0; DEGREE + 1];
    for (j, &t) in grid.points().iter().enumerate() {
        let span = find_span(&knots, num_basis, t);
        basis_functions(&knots, span, t, &mut values);
        for (offset, v) in values.iter().enumerate() {
            b[(j, span - DEGREE + offset)] = *v;
        }
    }
    Ok(b)
}

// Index k with knots[k] <= t < knots[k+1], restricted to the nondegenerate spans.
fn find_span(knots: &[f64], num_basis: usize, t: f64) -> usize {
    if t >= knots[num_basis] {
        return num_basis - 1;
    }
    if t <= knots[DEGREE] {
        return DEGREE;
    }
    // Upper bound search over the nondecreasing knot vector.
    let mut lo = DEGREE;
    let mut hi = num_basis;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

// Triangular de Boor scheme for the DEGREE+1 functions that are nonzero on `span`.
fn basis_functions(knots: &[f64], span: usize, t: f64, out: &mut [f64; DEGREE + 1]) {
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    out[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Second-order difference operator, `(R-2) x R` with rows `(1, -2, 1)`.
pub fn second_difference(num_basis: usize) -> Result<DMatrix<f64>> {
    if num_basis < 3 {
        return Err(Error::InvalidDimension(format!(
            "second differences need at least 3 coefficients, got {num_basis}"
        )));
    }
    let mut d = DMatrix::zeros(num_basis - 2, num_basis);
    for i in 0..num_basis - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    Ok(d)
}

/// `D2' D2 + ridge * I`.
pub fn build_penalty(num_basis: usize, ridge: f64) -> Result<DMatrix<f64>> {
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidConfig(format!("ridge must be positive, got {ridge}")));
    }
    let d = second_difference(num_basis)?;
    let mut omega = d.transpose() * d;
    for r in 0..num_basis {
        omega[(r, r)] += ridge;
    }
    Ok(omega)
}

/// Sum of squared second differences of `beta`.
pub fn roughness(beta: &DVector<f64>) -> f64 {
    beta.as_slice()
        .windows(3)
        .map(|w| {
            let d = w[0] - 2.0 * w[1] + w[2];
            d * d
        })
        .sum()
}
