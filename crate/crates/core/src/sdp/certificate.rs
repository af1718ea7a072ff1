//! Refutation certificates: Gram matrices for every PSD block, multipliers
//! for every affine row, and the target constant `c` in the identity
//! `sum of multiplier * constraint == -c` (after Boolean reduction).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::{psd_part, smat};
use super::SdpError;
use crate::model::ConstraintSystem;
use crate::poly::{naive_norm, Monomial, Polynomial};
use crate::relax::{build_program, min_eigenvalue, BlockRole, RowKind, SosProgram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramBlock {
    pub role: BlockRole,
    pub group: usize,
    pub basis: Vec<Monomial>,
    pub multiplier: Polynomial,
    /// Row-major `k x k` symmetric matrix.
    pub gram: Vec<f64>,
}

impl GramBlock {
    fn matrix(&self) -> DMatrix<f64> {
        let k = self.basis.len();
        DMatrix::from_row_slice(k, k, &self.gram)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMultiplier {
    pub kind: RowKind,
    pub poly: Polynomial,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub degree: u32,
    pub c: f64,
    pub blocks: Vec<GramBlock>,
    /// Nonnegative multipliers of inequality rows (moment bounds, links, cuts).
    pub inequality_rows: Vec<RowMultiplier>,
    /// Free multipliers of equality rows `shift * h_k`.
    pub equality_rows: Vec<RowMultiplier>,
}

impl Certificate {
    /// `u_k` for each equality constraint of `prog`: the sum of row
    /// multipliers times their shifts.
    pub fn equality_multipliers(&self, prog: &SosProgram) -> Vec<Polynomial> {
        let mut u = vec![Polynomial::zero(); prog.equalities.len()];
        for r in &self.equality_rows {
            if let RowKind::Equality { constraint, shift } = &r.kind {
                if let Some(p) = u.get_mut(*constraint) {
                    p.add_term(shift.clone(), r.multiplier);
                }
            }
        }
        u
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub valid: bool,
    /// Naive norm of `expansion + c`.
    pub residual: f64,
    /// Sum of naive norms of the certificate components.
    pub scale: f64,
    /// Smallest Gram eigenvalue relative to the trace of its block.
    pub min_gram_ratio: f64,
    pub min_lambda: f64,
    pub failure: Option<String>,
}

/// Builds a certificate from a normalized Farkas vector (`b^T y = -1`) in
/// the dual cone, projecting Gram blocks exactly and rescaling so that the
/// constant of the expansion is `-1`.
pub fn extract_certificate(prog: &SosProgram, yhat: &[f64]) -> Result<Certificate, SdpError> {
    let e = prog.eq_rows.len();
    let i = prog.ineq_rows.len();
    let psd_len: usize = prog.blocks.iter().map(|b| b.size() * (b.size() + 1) / 2).sum();
    if yhat.len() != 1 + e + i + psd_len {
        return Err(SdpError::Malformed(format!("dual vector has length {}, expected {}", yhat.len(), 1 + e + i + psd_len)));
    }
    let constant_of = |form: &crate::relax::LinearForm| form.terms.iter().find(|t| t.0 == 0).map(|t| t.1).unwrap_or(0.0);
    let mut k_const = 0.0;
    let mut equality_rows = Vec::with_capacity(e);
    for (r, &mu) in prog.eq_rows.iter().zip(&yhat[1..1 + e]) {
        k_const += mu * constant_of(&r.form);
        equality_rows.push(RowMultiplier { kind: r.kind.clone(), poly: r.poly.clone(), multiplier: mu });
    }
    let mut inequality_rows = Vec::with_capacity(i);
    for (r, &lam) in prog.ineq_rows.iter().zip(&yhat[1 + e..1 + e + i]) {
        let lam = lam.max(0.0);
        k_const += lam * constant_of(&r.form);
        inequality_rows.push(RowMultiplier { kind: r.kind.clone(), poly: r.poly.clone(), multiplier: lam });
    }
    let mut blocks = Vec::with_capacity(prog.blocks.len());
    let mut off = 1 + e + i;
    for b in &prog.blocks {
        let k = b.size();
        let len = k * (k + 1) / 2;
        let g = psd_part(&smat(&yhat[off..off + len], k));
        off += len;
        let mut idx = 0;
        for a in 0..k {
            for c in a..k {
                let w = if a == c { g[(a, a)] } else { 2.0 * g[(a, c)] };
                k_const += w * constant_of(&b.cells[idx]);
                idx += 1;
            }
        }
        let mut gram = Vec::with_capacity(k * k);
        for a in 0..k {
            for c in 0..k {
                gram.push(g[(a, c)]);
            }
        }
        blocks.push(GramBlock { role: b.role, group: b.group, basis: b.basis.clone(), multiplier: b.multiplier.clone(), gram });
    }
    if !(k_const < 0.0) {
        return Err(SdpError::Malformed("expansion constant is not negative".into()));
    }
    let s = -1.0 / k_const;
    for b in &mut blocks {
        b.gram.iter_mut().for_each(|v| *v *= s);
    }
    equality_rows.iter_mut().for_each(|r| r.multiplier *= s);
    inequality_rows.iter_mut().for_each(|r| r.multiplier *= s);
    Ok(Certificate { degree: prog.degree, c: 1.0, blocks, inequality_rows, equality_rows })
}

/// Expands `sum_ab G_ab m_a m_b * g`, reduced.
fn expand_block(prog: &SosProgram, b: &GramBlock) -> Polynomial {
    let k = b.basis.len();
    let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
    for a in 0..k {
        for c in a..k {
            let w = if a == c { b.gram[a * k + a] } else { b.gram[a * k + c] + b.gram[c * k + a] };
            if w != 0.0 {
                *acc.entry(b.basis[a].mul(&b.basis[c]).reduce(&prog.vars)).or_insert(0.0) += w;
            }
        }
    }
    let sigma = Polynomial::from_terms(acc);
    (&sigma * &b.multiplier).reduce(&prog.vars)
}

fn fail(mut check: CertificateCheck, why: impl Into<String>) -> CertificateCheck {
    check.valid = false;
    check.failure = Some(why.into());
    check
}

/// Checks a certificate against a program by formal expansion. Shape
/// mismatches are errors; failed invariants give `valid == false`.
pub fn verify_certificate(prog: &SosProgram, cert: &Certificate, tol_cert: f64) -> Result<CertificateCheck, SdpError> {
    if cert.degree != prog.degree {
        return Err(SdpError::Malformed(format!("certificate degree {} != program degree {}", cert.degree, prog.degree)));
    }
    if cert.blocks.len() != prog.blocks.len()
        || cert.equality_rows.len() != prog.eq_rows.len()
        || cert.inequality_rows.len() != prog.ineq_rows.len()
    {
        return Err(SdpError::Malformed("certificate does not match the program's block and row counts".into()));
    }
    for (cb, pb) in cert.blocks.iter().zip(&prog.blocks) {
        let k = pb.size();
        if cb.basis != pb.basis || cb.multiplier != pb.multiplier || cb.gram.len() != k * k {
            return Err(SdpError::Malformed(format!("Gram block for {:?} does not match the program", pb.role)));
        }
    }
    for (cr, pr) in cert.equality_rows.iter().zip(&prog.eq_rows).chain(cert.inequality_rows.iter().zip(&prog.ineq_rows)) {
        if cr.poly != pr.poly || cr.kind != pr.kind {
            return Err(SdpError::Malformed("row multiplier does not match the program".into()));
        }
    }

    let mut check = CertificateCheck { min_gram_ratio: f64::INFINITY, min_lambda: f64::INFINITY, ..Default::default() };
    if !(cert.c > 0.0) || !cert.c.is_finite() {
        return Ok(fail(check, "target constant must be positive"));
    }
    let all_finite = cert.blocks.iter().all(|b| b.gram.iter().all(|v| v.is_finite()))
        && cert.equality_rows.iter().chain(&cert.inequality_rows).all(|r| r.multiplier.is_finite());
    if !all_finite {
        return Ok(fail(check, "non-finite entry"));
    }

    let mut total = Polynomial::constant(cert.c);
    let mut scale = 0.0;
    for b in &cert.blocks {
        let m = b.matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let trace = sym.trace();
        let min_eig = min_eigenvalue(&sym);
        let ratio = if trace > 0.0 { min_eig / trace } else if min_eig >= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        check.min_gram_ratio = check.min_gram_ratio.min(ratio);
        if min_eig < -tol_cert * trace.max(0.0) {
            return Ok(fail(check, format!("Gram block for {:?} has eigenvalue {min_eig:e}", b.role)));
        }
        let p = expand_block(prog, b);
        scale += naive_norm(&p, &prog.vars).map_err(|e| SdpError::Malformed(e.to_string()))?;
        total = &total + &p;
    }
    for r in &cert.inequality_rows {
        check.min_lambda = check.min_lambda.min(r.multiplier);
        if r.multiplier < 0.0 {
            return Ok(fail(check, "negative inequality multiplier"));
        }
        if r.multiplier == 0.0 {
            continue;
        }
        let p = r.poly.scale(r.multiplier);
        scale += naive_norm(&p, &prog.vars).map_err(|e| SdpError::Malformed(e.to_string()))?;
        total = &total + &p;
    }
    for (k, u) in cert.equality_multipliers(prog).iter().enumerate() {
        if u.is_zero() {
            continue;
        }
        let h = &prog.equalities[k].poly;
        if u.degree() + h.degree() > prog.degree {
            return Ok(fail(check, format!("multiplier of equality {k} exceeds the degree budget")));
        }
        let p = (u * h).reduce(&prog.vars);
        scale += naive_norm(&p, &prog.vars).map_err(|e| SdpError::Malformed(e.to_string()))?;
        total = &total + &p;
    }
    check.scale = scale;
    check.residual = naive_norm(&total, &prog.vars).map_err(|e| SdpError::Malformed(e.to_string()))?;
    if check.residual > tol_cert * scale.max(cert.c) {
        let why = format!("identity residual {:e} exceeds tolerance", check.residual);
        return Ok(fail(check, why));
    }
    // the residual must not be able to cancel the target constant
    if check.residual >= 0.5 * cert.c {
        return Ok(fail(check, "identity residual is comparable to the target constant"));
    }
    check.valid = true;
    Ok(check)
}

/// Rebuilds the degree-`d` program of `sys` and verifies `cert` against it.
pub fn verify_for_system(sys: &ConstraintSystem, d: u32, cert: &Certificate, tol_cert: f64) -> Result<CertificateCheck, SdpError> {
    let prog = build_program(sys, d)?;
    verify_certificate(&prog, cert, tol_cert)
}
