//! Standard conic form `A x + s = b`, `s` in `{0} x R+ x PSD..`.
//!
//! Row order: normalization `x_0 = 1`, equality rows, inequality rows, then
//! each PSD block packed as a scaled upper triangle. Every non-normalization
//! row has `b = 0` and `s = form(x)`, so its `A` row is `-form`.

use super::linalg::Csr;
use crate::relax::SosProgram;

pub(crate) struct Conic {
    pub a: Csr,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Rows in the zero cone (normalization and equalities).
    pub zero: usize,
    pub nonneg: usize,
    /// `(row offset, block size)` per PSD block.
    pub psd: Vec<(usize, usize)>,
}

impl Conic {
    pub fn from_program(prog: &SosProgram, c: Vec<f64>) -> Conic {
        let n = prog.num_moments();
        let mut a = Csr::new(n);
        a.push_row([(0, 1.0)]);
        for r in &prog.eq_rows {
            a.push_row(r.form.terms.iter().map(|&(j, v)| (j, -v)));
        }
        for r in &prog.ineq_rows {
            a.push_row(r.form.terms.iter().map(|&(j, v)| (j, -v)));
        }
        let mut psd = Vec::with_capacity(prog.blocks.len());
        for blk in &prog.blocks {
            psd.push((a.nrows(), blk.size()));
            let k = blk.size();
            let mut idx = 0;
            for i in 0..k {
                for j in i..k {
                    let scale = if i == j { -1.0 } else { -std::f64::consts::SQRT_2 };
                    a.push_row(blk.cells[idx].terms.iter().map(|&(col, v)| (col, scale * v)));
                    idx += 1;
                }
            }
        }
        let m = a.nrows();
        let mut b = vec![0.0; m];
        b[0] = 1.0;
        Conic { a, b, c, zero: 1 + prog.eq_rows.len(), nonneg: prog.ineq_rows.len(), psd }
    }

    pub fn n(&self) -> usize {
        self.a.ncols
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }
}
