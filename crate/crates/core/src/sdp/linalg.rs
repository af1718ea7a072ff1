use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Compressed sparse rows.
#[derive(Clone, Debug, Default)]
pub(crate) struct Csr {
    pub ncols: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn new(ncols: usize) -> Self {
        Csr { ncols, ptr: vec![0], idx: Vec::new(), val: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (j, v) in entries {
            if v != 0.0 {
                self.idx.push(j);
                self.val.push(v);
            }
        }
        self.ptr.push(self.idx.len());
    }

    /// `out = A x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.ptr[i]..self.ptr[i + 1] {
                acc += self.val[k] * x[self.idx[k]];
            }
            *o = acc;
        }
    }

    /// `out = A^T y`
    pub fn tmul(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for k in self.ptr[i]..self.ptr[i + 1] {
                out[self.idx[k]] += self.val[k] * yi;
            }
        }
    }
}

/// Solver for `(I + A^T A) z = r`.
pub(crate) enum NormalSolver {
    Dense(Cholesky<f64, Dyn>),
    /// Jacobi-preconditioned conjugate gradients; `diag` holds the diagonal.
    Iterative { diag: Vec<f64> },
}

pub(crate) const DENSE_LIMIT: usize = 2500;

impl NormalSolver {
    pub fn new(a: &Csr) -> Self {
        let n = a.ncols;
        if n <= DENSE_LIMIT {
            let mut k = DMatrix::<f64>::identity(n, n);
            for i in 0..a.nrows() {
                let r = a.ptr[i]..a.ptr[i + 1];
                let idx = &a.idx[r.clone()];
                let val = &a.val[r];
                for (p, &jp) in idx.iter().enumerate() {
                    for (q, &jq) in idx.iter().enumerate() {
                        k[(jp, jq)] += val[p] * val[q];
                    }
                }
            }
            NormalSolver::Dense(Cholesky::new(k).expect("I + A^T A is positive definite"))
        } else {
            let mut diag = vec![1.0; n];
            for k in 0..a.idx.len() {
                diag[a.idx[k]] += a.val[k] * a.val[k];
            }
            NormalSolver::Iterative { diag }
        }
    }

    /// Writes the solution into `guess`, which the iterative variant also
    /// uses as its starting point.
    pub fn solve(&self, a: &Csr, rhs: &[f64], guess: &mut [f64], work: &mut CgWork) {
        match self {
            NormalSolver::Dense(ch) => {
                let mut v = DVector::from_column_slice(rhs);
                ch.solve_mut(&mut v);
                guess.copy_from_slice(v.as_slice());
            }
            NormalSolver::Iterative { diag } => conjugate_gradient(a, diag, rhs, guess, work),
        }
    }
}

#[derive(Default)]
pub(crate) struct CgWork {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    tmp: Vec<f64>,
}

fn apply_normal(a: &Csr, x: &[f64], tmp: &mut Vec<f64>, out: &mut [f64]) {
    tmp.resize(a.nrows(), 0.0);
    a.mul(x, tmp);
    a.tmul(tmp, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o += xi;
    }
}

fn conjugate_gradient(a: &Csr, diag: &[f64], b: &[f64], x: &mut [f64], w: &mut CgWork) {
    let n = b.len();
    w.r.resize(n, 0.0);
    w.z.resize(n, 0.0);
    w.p.resize(n, 0.0);
    w.ap.resize(n, 0.0);
    apply_normal(a, x, &mut w.tmp, &mut w.ap);
    for i in 0..n {
        w.r[i] = b[i] - w.ap[i];
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for i in 0..n {
        w.z[i] = w.r[i] / diag[i];
    }
    w.p.copy_from_slice(&w.z);
    let mut rz: f64 = w.r.iter().zip(&w.z).map(|(a, b)| a * b).sum();
    for _ in 0..(4 * n).max(50) {
        let rnorm = w.r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-12 * bnorm {
            break;
        }
        apply_normal(a, &w.p, &mut w.tmp, &mut w.ap);
        let pap: f64 = w.p.iter().zip(&w.ap).map(|(a, b)| a * b).sum();
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * w.p[i];
            w.r[i] -= step * w.ap[i];
            w.z[i] = w.r[i] / diag[i];
        }
        let rz_new: f64 = w.r.iter().zip(&w.z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            w.p[i] = w.z[i] + beta * w.p[i];
        }
    }
}

/// Unpacks a scaled upper-triangle vector (off-diagonals carry sqrt 2).
pub(crate) fn smat(v: &[f64], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for a in 0..k {
        for b in a..k {
            if a == b {
                m[(a, a)] = v[idx];
            } else {
                let x = v[idx] / std::f64::consts::SQRT_2;
                m[(a, b)] = x;
                m[(b, a)] = x;
            }
            idx += 1;
        }
    }
    m
}

pub(crate) fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let k = m.nrows();
    let mut idx = 0;
    for a in 0..k {
        for b in a..k {
            out[idx] = if a == b { m[(a, a)] } else { m[(a, b)] * std::f64::consts::SQRT_2 };
            idx += 1;
        }
    }
}

/// Projects a packed block onto the PSD cone in place.
pub(crate) fn project_psd(v: &mut [f64], k: usize) {
    match k {
        0 => {}
        1 => v[0] = v[0].max(0.0),
        _ => {
            let m = smat(v, k);
            let eig = SymmetricEigen::new(m);
            if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
                return;
            }
            let mut out = DMatrix::zeros(k, k);
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > 0.0 {
                    let q = eig.eigenvectors.column(i);
                    out.ger(l, &q, &q, 1.0);
                }
            }
            svec_into(&out, v);
        }
    }
}

/// Exact PSD projection of a symmetric matrix.
pub(crate) fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    if k == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut out = DMatrix::zeros(k, k);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let q = eig.eigenvectors.column(i);
            out.ger(l, &q, &q, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_products() {
        let mut a = Csr::new(3);
        a.push_row([(0, 1.0), (2, 2.0)]);
        a.push_row([(1, -1.0)]);
        let mut out = vec![0.0; 2];
        a.mul(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![7.0, -2.0]);
        let mut t = vec![0.0; 3];
        a.tmul(&[1.0, 1.0], &mut t);
        assert_eq!(t, vec![1.0, -1.0, 2.0]);
    }

    #[test]
    fn dense_and_iterative_agree() {
        let mut a = Csr::new(4);
        a.push_row([(0, 1.0), (1, 2.0)]);
        a.push_row([(1, 1.0), (2, -1.0), (3, 0.5)]);
        a.push_row([(3, 3.0)]);
        let rhs = [1.0, -2.0, 0.5, 4.0];
        let dense = NormalSolver::new(&a);
        let iter = NormalSolver::Iterative { diag: vec![1.0; 4] };
        let mut w = CgWork::default();
        let mut x1 = vec![0.0; 4];
        let mut x2 = vec![0.0; 4];
        dense.solve(&a, &rhs, &mut x1, &mut w);
        iter.solve(&a, &rhs, &mut x2, &mut w);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_projection() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let mut v = vec![0.0; 3];
        svec_into(&m, &mut v);
        project_psd(&mut v, 2);
        let p = smat(&v, 2);
        // eigenvalues 3 and -1; projection keeps 3 * (1,1)(1,1)^T / 2
        for x in p.iter() {
            assert!((x - 1.5).abs() < 1e-12);
        }
        assert!((psd_part(&m) - p).norm() < 1e-12);
    }
}
