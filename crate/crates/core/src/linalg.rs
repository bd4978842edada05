//! Dense linear-algebra helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::dist::std_normal;
use crate::error::{Error, Result};

pub const JITTER: f64 = 1e-10;

/// Cholesky factor of a precision matrix, retrying once with `JITTER` on the
/// diagonal.
pub fn cholesky_with_jitter(precision: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(precision.clone()) {
        return Ok(c);
    }
    let n = precision.nrows();
    let jittered = precision + DMatrix::identity(n, n) * JITTER;
    Cholesky::new(jittered).ok_or_else(|| {
        Error::Numerical(format!("{what}: precision matrix is not positive definite"))
    })
}

/// Gaussian `N(P^-1 b, P^-1)` held through the Cholesky factor of `P`.
#[derive(Clone, Debug)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianConditional {
    pub fn from_precision(precision: DMatrix<f64>, linear: &DVector<f64>, what: &str) -> Result<Self> {
        let chol = cholesky_with_jitter(precision, what)?;
        let mean = chol.solve(linear);
        Ok(Self { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    /// `mean + L^-T z` with `P = L L'`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| std_normal(rng));
        let l = self.chol.l_dirty();
        let offset = l
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a nonzero diagonal");
        &self.mean + offset
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * aij));
        }
    }
    out
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenpairs of the symmetric part of `a`, eigenvalues in descending order.
/// Each eigenvector is signed so that its largest-magnitude entry is positive.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(a);
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).clone_owned();
        fix_sign(&mut col);
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

/// Flip `v` so its largest-magnitude entry is positive (first one on ties).
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 * v[best].abs().max(1e-300) {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && max_abs_diff(a, &a.transpose()) <= tol
}
