//! Sparse SDPA (`.dat-s`) export and import.
//!
//! Decision variables are the moments other than the constant one (whose
//! value 1 moves into `F0`). Moment and localizing matrices become PSD
//! blocks; inequality rows, and each equality row as a pair of opposite
//! inequalities, share one trailing diagonal block.

use std::fmt::Write as _;
use std::path::Path;

use super::SdpError;
use crate::relax::{LinearForm, Sense, SosProgram};

/// Structure of an SDPA problem, as read back from a file.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpaProblem {
    pub m: usize,
    /// Positive sizes are dense symmetric blocks; negative sizes diagonal.
    pub block_struct: Vec<i64>,
    pub c: Vec<f64>,
    /// `(matrix, block, i, j, value)`, 1-based with `i <= j`; matrix 0 is `F0`.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

impl SdpaProblem {
    pub fn psd_block_sizes(&self) -> Vec<usize> {
        self.block_struct.iter().filter(|&&s| s > 0).map(|&s| s as usize).collect()
    }

    pub fn diagonal_block_sizes(&self) -> Vec<usize> {
        self.block_struct.iter().filter(|&&s| s < 0).map(|&s| (-s) as usize).collect()
    }
}

fn push_form(out: &mut Vec<(usize, usize, usize, usize, f64)>, form: &LinearForm, sign: f64, block: usize, i: usize, j: usize) {
    for &(var, coef) in &form.terms {
        let v = sign * coef;
        if v == 0.0 {
            continue;
        }
        // F(x) = sum x_i F_i - F0, so the constant moves to F0 with its sign flipped
        if var == 0 {
            out.push((0, block, i, j, -v));
        } else {
            out.push((var, block, i, j, v));
        }
    }
}

/// Builds the SDPA structure of a program.
pub fn to_sdpa(prog: &SosProgram) -> SdpaProblem {
    let m = prog.num_moments() - 1;
    let mut c = vec![0.0; m];
    if let Some(obj) = &prog.objective {
        let sign = if obj.sense == Sense::Maximize { -1.0 } else { 1.0 };
        for &(var, coef) in &obj.form.terms {
            if var > 0 {
                c[var - 1] += sign * coef;
            }
        }
    }
    let mut block_struct = Vec::new();
    let mut entries = Vec::new();
    for (bi, blk) in prog.blocks.iter().enumerate() {
        let k = blk.size();
        block_struct.push(k as i64);
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                push_form(&mut entries, &blk.cells[idx], 1.0, bi + 1, a + 1, b + 1);
                idx += 1;
            }
        }
    }
    let lp = prog.ineq_rows.len() + 2 * prog.eq_rows.len();
    if lp > 0 {
        let block = prog.blocks.len() + 1;
        block_struct.push(-(lp as i64));
        let mut pos = 1;
        for r in &prog.ineq_rows {
            push_form(&mut entries, &r.form, 1.0, block, pos, pos);
            pos += 1;
        }
        for r in &prog.eq_rows {
            push_form(&mut entries, &r.form, 1.0, block, pos, pos);
            push_form(&mut entries, &r.form, -1.0, block, pos + 1, pos + 1);
            pos += 2;
        }
    }
    entries.sort_by(|p, q| (p.0, p.1, p.2, p.3).cmp(&(q.0, q.1, q.2, q.3)));
    SdpaProblem { m, block_struct, c, entries }
}

pub fn write_sdpa(problem: &SdpaProblem) -> String {
    let mut s = String::new();
    writeln!(s, "\"moment relaxation\"").unwrap();
    writeln!(s, "{} = mDIM", problem.m).unwrap();
    writeln!(s, "{} = nBLOCK", problem.block_struct.len()).unwrap();
    let bs: Vec<String> = problem.block_struct.iter().map(|b| b.to_string()).collect();
    writeln!(s, "{}", bs.join(" ")).unwrap();
    let cs: Vec<String> = problem.c.iter().map(|v| format!("{v:e}")).collect();
    writeln!(s, "{}", cs.join(" ")).unwrap();
    for &(mat, blk, i, j, v) in &problem.entries {
        writeln!(s, "{mat} {blk} {i} {j} {v:e}").unwrap();
    }
    s
}

pub fn export_sdpa(prog: &SosProgram, path: &Path) -> Result<(), SdpError> {
    std::fs::write(path, write_sdpa(&to_sdpa(prog))).map_err(|source| SdpError::Io { path: path.display().to_string(), source })
}

fn numbers(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')')).filter(|t| !t.is_empty())
}

fn fmt_err(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::Format { line, msg: msg.into() }
}

/// Parses sparse SDPA text.
pub fn read_sdpa(text: &str) -> Result<SdpaProblem, SdpError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let mut header = |what: &str| lines.next().ok_or_else(|| fmt_err(0, format!("missing {what}")));
    let (ln, l) = header("mDIM")?;
    let m: usize = numbers(l).next().and_then(|t| t.parse().ok()).ok_or_else(|| fmt_err(ln, "bad mDIM"))?;
    let (ln, l) = header("nBLOCK")?;
    let nb: usize = numbers(l).next().and_then(|t| t.parse().ok()).ok_or_else(|| fmt_err(ln, "bad nBLOCK"))?;
    let (ln, l) = header("block structure")?;
    let block_struct: Vec<i64> = numbers(l).take(nb).map(|t| t.parse::<i64>()).collect::<Result<_, _>>().map_err(|_| fmt_err(ln, "bad block size"))?;
    if block_struct.len() != nb {
        return Err(fmt_err(ln, "block structure is shorter than nBLOCK"));
    }
    let mut c = Vec::with_capacity(m);
    while c.len() < m {
        let (ln, l) = header("objective vector")?;
        for t in numbers(l) {
            c.push(t.parse::<f64>().map_err(|_| fmt_err(ln, format!("bad number `{t}`")))?);
        }
    }
    c.truncate(m);
    let mut entries = Vec::new();
    for (ln, l) in lines {
        let toks: Vec<&str> = numbers(l).collect();
        if toks.len() != 5 {
            return Err(fmt_err(ln, "expected `matNo blockNo i j value`"));
        }
        let ints: Vec<usize> = toks[..4].iter().map(|t| t.parse::<usize>()).collect::<Result<_, _>>().map_err(|_| fmt_err(ln, "bad index"))?;
        let v: f64 = toks[4].parse().map_err(|_| fmt_err(ln, "bad value"))?;
        if ints[0] > m || ints[1] == 0 || ints[1] > nb {
            return Err(fmt_err(ln, "index out of range"));
        }
        entries.push((ints[0], ints[1], ints[2], ints[3], v));
    }
    Ok(SdpaProblem { m, block_struct, c, entries })
}

pub fn import_sdpa(path: &Path) -> Result<SdpaProblem, SdpError> {
    let text = std::fs::read_to_string(path).map_err(|source| SdpError::Io { path: path.display().to_string(), source })?;
    read_sdpa(&text)
}

/// Reads an external solver's primal vector (the numbers following `xVec`,
/// or the first `m` numbers when no label is present) and prepends the
/// constant moment, giving a moment vector for `prog`.
pub fn read_solution(prog: &SosProgram, text: &str) -> Result<Vec<f64>, SdpError> {
    let m = prog.num_moments() - 1;
    let body = match text.find("xVec") {
        Some(i) => &text[i + 4..],
        None => text,
    };
    let mut out = vec![1.0];
    for t in numbers(body).filter(|t| *t != "=") {
        if out.len() > m {
            break;
        }
        out.push(t.parse::<f64>().map_err(|_| fmt_err(0, format!("bad number `{t}` in solution")))?);
    }
    if out.len() != m + 1 {
        return Err(fmt_err(0, format!("solution has {} values, expected {m}", out.len() - 1)));
    }
    Ok(out)
}
