//! Operator splitting on the homogeneous self-dual embedding.
//!
//! Iterates `u = (x, y, tau)`, `v = (0, s, kappa)`: an affine step with a
//! cached factorization of `I + A^T A`, an over-relaxed projection onto
//! `R^n x K* x R+`, and a dual update. A vanishing `tau` with `b^T y < 0`
//! yields a Farkas vector, which becomes a refutation certificate.

use std::time::Instant;

use super::certificate::{extract_certificate, verify_certificate};
use super::conic::Conic;
use super::linalg::{project_psd, CgWork, NormalSolver};
use super::{OptOutcome, OptResult, Outcome, Residuals, SdpError, SolveResult, SolverOptions};
use crate::relax::SosProgram;

struct Workspace {
    conic: Conic,
    solver: NormalSolver,
    /// `(I + M)^{-1} h` for `h = (c, b)`.
    gx: Vec<f64>,
    gy: Vec<f64>,
    /// `1 + h^T g`
    denom: f64,
    cg: CgWork,
    rhs: Vec<f64>,
    tmp_n: Vec<f64>,
    tmp_m: Vec<f64>,
}

struct State {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

impl Workspace {
    fn new(conic: Conic) -> Self {
        let n = conic.n();
        let m = conic.m();
        let solver = NormalSolver::new(&conic.a);
        let mut ws = Workspace {
            solver,
            gx: vec![0.0; n],
            gy: vec![0.0; m],
            denom: 1.0,
            cg: CgWork::default(),
            rhs: vec![0.0; n],
            tmp_n: vec![0.0; n],
            tmp_m: vec![0.0; m],
            conic,
        };
        let (c, b) = (ws.conic.c.clone(), ws.conic.b.clone());
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; m]);
        ws.solve_m(&c, &b, &mut gx, &mut gy);
        let hg: f64 = c.iter().zip(&gx).map(|(p, q)| p * q).sum::<f64>() + b.iter().zip(&gy).map(|(p, q)| p * q).sum::<f64>();
        ws.gx = gx;
        ws.gy = gy;
        ws.denom = 1.0 + hg;
        ws
    }

    /// Solves `[[I, A^T], [-A, I]] (zx, zy) = (rx, ry)`.
    fn solve_m(&mut self, rx: &[f64], ry: &[f64], zx: &mut [f64], zy: &mut [f64]) {
        self.conic.a.tmul(ry, &mut self.tmp_n);
        for i in 0..rx.len() {
            self.rhs[i] = rx[i] - self.tmp_n[i];
        }
        self.solver.solve(&self.conic.a, &self.rhs, zx, &mut self.cg);
        self.conic.a.mul(zx, zy);
        for i in 0..ry.len() {
            zy[i] += ry[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn project_dual_cone(conic: &Conic, y: &mut [f64], threads: usize) {
    for v in &mut y[conic.zero..conic.zero + conic.nonneg] {
        *v = v.max(0.0);
    }
    let Some(&(start, _)) = conic.psd.first() else { return };
    let mut rest = &mut y[start..];
    let mut slices: Vec<(&mut [f64], usize)> = Vec::with_capacity(conic.psd.len());
    for &(_, k) in &conic.psd {
        let (head, tail) = rest.split_at_mut(k * (k + 1) / 2);
        slices.push((head, k));
        rest = tail;
    }
    if threads <= 1 || slices.len() < 2 {
        for (s, k) in slices {
            project_psd(s, k);
        }
        return;
    }
    let chunk = slices.len().div_ceil(threads);
    std::thread::scope(|sc| {
        for part in slices.chunks_mut(chunk) {
            sc.spawn(move || {
                for (s, k) in part.iter_mut() {
                    project_psd(s, *k);
                }
            });
        }
    });
}

fn step(ws: &mut Workspace, st: &mut State, opts: &SolverOptions, xt: &mut [f64], yt: &mut [f64], wy: &mut [f64]) {
    let m = st.y.len();
    for i in 0..m {
        wy[i] = st.y[i] + st.s[i];
    }
    let wtau = st.tau + st.kappa;
    let wx = st.x.clone();
    ws.solve_m(&wx, wy, xt, yt);
    let hp = dot(&ws.conic.c, xt) + dot(&ws.conic.b, yt);
    let tau_t = (wtau + hp) / ws.denom;
    for i in 0..xt.len() {
        xt[i] -= tau_t * ws.gx[i];
    }
    for i in 0..m {
        yt[i] -= tau_t * ws.gy[i];
    }
    let a = opts.alpha;
    for i in 0..xt.len() {
        st.x[i] = a * xt[i] + (1.0 - a) * st.x[i];
    }
    // yhat is kept in yt; the new y is its projection after subtracting s
    for i in 0..m {
        yt[i] = a * yt[i] + (1.0 - a) * st.y[i];
        st.y[i] = yt[i] - st.s[i];
    }
    project_dual_cone(&ws.conic, &mut st.y, opts.threads);
    for i in 0..m {
        st.s[i] += st.y[i] - yt[i];
    }
    let tau_hat = a * tau_t + (1.0 - a) * st.tau;
    let tau_new = (tau_hat - st.kappa).max(0.0);
    st.kappa += tau_new - tau_hat;
    st.tau = tau_new;
}

struct Runner<'p> {
    prog: &'p SosProgram,
    ws: Workspace,
    st: State,
    xt: Vec<f64>,
    yt: Vec<f64>,
    wy: Vec<f64>,
    residuals: Residuals,
}

impl<'p> Runner<'p> {
    fn new(prog: &'p SosProgram, c: Vec<f64>) -> Result<Self, SdpError> {
        if prog.moments.first().map(|m| !m.is_one()).unwrap_or(true) {
            return Err(SdpError::Malformed("moment vector must start with the constant monomial".into()));
        }
        for b in &prog.blocks {
            let k = b.size();
            if b.cells.len() != k * (k + 1) / 2 {
                return Err(SdpError::Malformed(format!("block `{:?}` has {} cells for size {k}", b.role, b.cells.len())));
            }
        }
        let conic = Conic::from_program(prog, c);
        let (n, m) = (conic.n(), conic.m());
        let ws = Workspace::new(conic);
        let st = State { x: vec![0.0; n], y: vec![0.0; m], s: vec![0.0; m], tau: 1.0, kappa: 1.0 };
        Ok(Runner { prog, ws, st, xt: vec![0.0; n], yt: vec![0.0; m], wy: vec![0.0; m], residuals: Residuals::default() })
    }

    fn step(&mut self, opts: &SolverOptions) {
        step(&mut self.ws, &mut self.st, opts, &mut self.xt, &mut self.yt, &mut self.wy);
    }

    /// Normalized primal candidate `x / x_0`.
    fn primal_candidate(&self) -> Option<Vec<f64>> {
        let x0 = self.st.x[0];
        if !(x0 > 0.0) || !(self.st.tau > 0.0) {
            return None;
        }
        Some(self.st.x.iter().map(|v| v / x0).collect())
    }

    /// Verified refutation from the current dual iterate, if any.
    fn try_certificate(&mut self, opts: &SolverOptions, force: bool) -> Option<Outcome> {
        let by = dot(&self.ws.conic.b, &self.st.y);
        if !(by < 0.0) {
            return None;
        }
        let yhat: Vec<f64> = self.st.y.iter().map(|v| v / -by).collect();
        self.ws.conic.a.tmul(&yhat, &mut self.ws.tmp_n);
        let res: f64 = self.ws.tmp_n.iter().map(|v| v.abs()).sum();
        let scale: f64 = yhat.iter().map(|v| v.abs()).sum();
        self.residuals.dual = res / scale.max(1.0);
        if !force && res > 10.0 * opts.tol_cert * scale.max(1.0) {
            return None;
        }
        let cert = extract_certificate(self.prog, &yhat).ok()?;
        let check = verify_certificate(self.prog, &cert, opts.tol_cert).ok()?;
        if check.valid {
            Some(Outcome::Infeasible { certificate: cert, check })
        } else {
            None
        }
    }

    fn primal_residuals(&mut self) -> (f64, f64, f64) {
        let st = &self.st;
        let tau = st.tau.max(1e-300);
        let conic = &self.ws.conic;
        conic.a.mul(&st.x, &mut self.ws.tmp_m);
        let mut pres: f64 = 0.0;
        for i in 0..conic.m() {
            pres = pres.max(((self.ws.tmp_m[i] + st.s[i]) / tau - conic.b[i]).abs());
        }
        conic.a.tmul(&st.y, &mut self.ws.tmp_n);
        let mut dres: f64 = 0.0;
        for i in 0..conic.n() {
            dres = dres.max((self.ws.tmp_n[i] / tau + conic.c[i]).abs());
        }
        let pobj = dot(&conic.c, &st.x) / tau;
        let dobj = -dot(&conic.b, &st.y) / tau;
        (pres / (1.0 + norm_inf(&st.x) / tau), dres / (1.0 + norm_inf(&conic.c)), (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()))
    }
}

pub(super) fn solve_feasibility(prog: &SosProgram, opts: &SolverOptions) -> Result<SolveResult, SdpError> {
    let start = Instant::now();
    let mut run = Runner::new(prog, vec![0.0; prog.num_moments()])?;
    let every = opts.check_every.max(1);
    let mut checks = 0usize;
    for it in 1..=opts.max_iter {
        run.step(opts);
        if it % every != 0 && it != opts.max_iter {
            continue;
        }
        checks += 1;
        if let Some(xn) = run.primal_candidate() {
            let rep = prog.check_feasible(&xn, opts.tol_feas);
            run.residuals.eigenvalue_floor = rep.min_block_eigenvalue;
            run.residuals.primal = rep.max_equality_violation.max(rep.max_inequality_violation).max(rep.normalization);
            if rep.feasible {
                return Ok(SolveResult {
                    outcome: Outcome::Feasible { moments: xn, report: rep },
                    iterations: it,
                    wall_time: start.elapsed(),
                    residuals: run.residuals,
                });
            }
        }
        if let Some(out) = run.try_certificate(opts, checks % 20 == 0 || it == opts.max_iter) {
            return Ok(SolveResult { outcome: out, iterations: it, wall_time: start.elapsed(), residuals: run.residuals });
        }
    }
    Ok(SolveResult {
        outcome: Outcome::Indeterminate { reason: format!("no verdict within {} iterations", opts.max_iter) },
        iterations: opts.max_iter,
        wall_time: start.elapsed(),
        residuals: run.residuals,
    })
}

pub(super) fn solve_optimization(prog: &SosProgram, maximize: bool, opts: &SolverOptions) -> Result<OptResult, SdpError> {
    let start = Instant::now();
    let obj = prog.objective.as_ref().ok_or(SdpError::NoObjective)?;
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut c = vec![0.0; prog.num_moments()];
    for &(j, v) in &obj.form.terms {
        c[j] += sign * v;
    }
    let mut run = Runner::new(prog, c)?;
    let every = opts.check_every.max(1);
    let mut checks = 0usize;
    let mut last_witness = None;
    for it in 1..=opts.max_iter {
        run.step(opts);
        if it % every != 0 && it != opts.max_iter {
            continue;
        }
        checks += 1;
        let (pres, dres, gap) = run.primal_residuals();
        run.residuals.primal = pres;
        run.residuals.dual = dres;
        run.residuals.gap = gap;
        if pres <= opts.tol_gap && dres <= opts.tol_gap && gap <= opts.tol_gap {
            if let Some(xn) = run.primal_candidate() {
                let rep = prog.check_feasible(&xn, opts.tol_feas);
                run.residuals.eigenvalue_floor = rep.min_block_eigenvalue;
                if rep.feasible {
                    let value = obj.form.eval(&xn);
                    let dobj = -dot(&run.ws.conic.b, &run.st.y) / run.st.tau;
                    let bound = sign * dobj;
                    let interval = if maximize { (value, bound.max(value)) } else { (bound.min(value), value) };
                    return Ok(OptResult {
                        outcome: OptOutcome::Optimal { interval, witness: xn, report: rep },
                        iterations: it,
                        wall_time: start.elapsed(),
                        residuals: run.residuals,
                    });
                }
                last_witness = Some(xn);
            }
        }
        if run.st.tau < 1e-3 * run.st.kappa {
            if let Some(Outcome::Infeasible { certificate, check }) = run.try_certificate(opts, checks % 20 == 0) {
                return Ok(OptResult {
                    outcome: OptOutcome::Infeasible { certificate, check },
                    iterations: it,
                    wall_time: start.elapsed(),
                    residuals: run.residuals,
                });
            }
        }
    }
    Ok(OptResult {
        outcome: OptOutcome::Indeterminate { reason: format!("no convergence within {} iterations", opts.max_iter), witness: last_witness },
        iterations: opts.max_iter,
        wall_time: start.elapsed(),
        residuals: run.residuals,
    })
}
