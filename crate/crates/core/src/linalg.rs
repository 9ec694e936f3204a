//! Small dense symmetric eigenproblems by cyclic Jacobi rotations.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a real symmetric matrix. Eigenvalues are sorted
/// ascending; column i of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

const MAX_SWEEPS: usize = 64;

pub fn symmetric_eigen(a: &DMatrix<f64>) -> SymmetricEigen {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);

    let scale = m.amax().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum();
        if off.sqrt() <= f64::EPSILON * scale * 1e-3 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    SymmetricEigen { values, vectors }
}

/// Null space of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct NullSpace {
    /// Orthonormal basis vectors.
    pub vectors: Vec<DVector<f64>>,
    /// Set when an eigenvalue sits between `tol` and `10·tol` (relative),
    /// so the rank decision is not clear-cut.
    pub ambiguous: bool,
}

/// Eigenvectors whose eigenvalue is below `tol` relative to the largest
/// eigenvalue. A zero matrix has a full null space.
pub fn null_eigenvectors(d: &DMatrix<f64>, tol: f64) -> NullSpace {
    let eig = symmetric_eigen(d);
    let largest = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut vectors = Vec::new();
    let mut ambiguous = false;
    for (i, &lam) in eig.values.iter().enumerate() {
        let rel = if largest > 0.0 { lam.abs() / largest } else { 0.0 };
        if rel < tol {
            vectors.push(eig.vectors.column(i).into_owned());
        } else if rel <= 10.0 * tol {
            ambiguous = true;
        }
    }
    NullSpace { vectors, ambiguous }
}
