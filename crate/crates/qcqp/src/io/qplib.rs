//! Reader and writer for the QPLib ASCII instance format (continuous
//! problems only).
//!
//! Layout handled here, section by section: name, three-letter problem-type
//! code, objective sense, variable count, constraint count (when the type has
//! constraints), objective Hessian triplets, default-plus-sparse linear
//! objective, objective constant, constraint Hessian quadruplets, linear
//! constraint triplets, the infinity sentinel, default-plus-sparse constraint
//! left/right-hand sides, and default-plus-sparse variable bounds. Trailing
//! sections (start points, names) are read leniently and ignored.
//!
//! Two-sided constraint ranges `l <= c(x) <= u` become up to two canonical
//! `<= 0` records (the upper side first, then the negated lower side);
//! maximization flips into minimization with the flip recorded in the
//! metadata. Hessian entries may appear in either triangle but a pair may
//! appear only once.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{Bound, Constraint, ModelError, QcqpInstance, SparseSymMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum QplibError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unsupported problem type {code:?} (only continuous variables)")]
    UnsupportedType { line: usize, code: String },
    #[error("line {line}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        limit: usize,
    },
    #[error("unexpected end of file after line {line}")]
    UnexpectedEof { line: usize },
    #[error("instance invariant violated: {0}")]
    Model(#[from] ModelError),
}

/// Provenance kept alongside a parsed instance: everything needed to report
/// values in the source convention.
#[derive(Debug, Clone, PartialEq)]
pub struct QplibMetadata {
    pub name: String,
    pub type_code: String,
    /// Original sense was maximization (the stored instance is negated).
    pub maximize: bool,
    /// Constant to add to the stored minimization objective; for flipped
    /// instances the original objective is `-(value + constant)`.
    pub objective_constant: f64,
    /// Constraint count in the source file, before range splitting.
    pub source_constraints: usize,
    /// Infinity sentinel used by the file.
    pub infinity: f64,
    /// Structural nonzero counts as listed in the file.
    pub nnz_obj_quad: usize,
    pub nnz_obj_lin: usize,
    pub nnz_cons_quad: usize,
    pub nnz_cons_lin: usize,
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            iter: text.lines().enumerate(),
            last_line: 0,
        }
    }

    /// Next content line as tokens, skipping blanks and comment lines.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (idx, raw) in self.iter.by_ref() {
            self.last_line = idx + 1;
            let without_comment = match raw.find(['#', '!']) {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let trimmed = without_comment.trim();
            if trimmed.is_empty() || raw.trim_start().starts_with('%') {
                continue;
            }
            return Some((idx + 1, trimmed.split_whitespace().collect()));
        }
        None
    }

    fn require(&mut self) -> Result<(usize, Vec<&'a str>), QplibError> {
        self.next_tokens().ok_or(QplibError::UnexpectedEof {
            line: self.last_line,
        })
    }
}

fn malformed(line: usize, message: impl Into<String>) -> QplibError {
    QplibError::Malformed {
        line,
        message: message.into(),
    }
}

fn parse_usize(line: usize, token: &str, what: &str) -> Result<usize, QplibError> {
    token
        .parse::<usize>()
        .map_err(|_| malformed(line, format!("expected {what}, got {token:?}")))
}

fn parse_f64(line: usize, token: &str) -> Result<f64, QplibError> {
    let normalized = token.replace(['D', 'd'], "E");
    normalized
        .parse::<f64>()
        .map_err(|_| malformed(line, format!("expected a number, got {token:?}")))
}

fn index_1based(line: usize, token: &str, limit: usize, what: &str) -> Result<usize, QplibError> {
    let raw = parse_usize(line, token, what)?;
    if raw == 0 || raw > limit {
        return Err(QplibError::IndexOutOfRange {
            line,
            index: raw,
            limit,
        });
    }
    Ok(raw - 1)
}

/// `default value + sparse overrides` vector section.
fn read_dense_vector(
    lines: &mut Lines,
    len: usize,
    what: &str,
) -> Result<Vec<f64>, QplibError> {
    let (line, tokens) = lines.require()?;
    if tokens.len() != 1 {
        return Err(malformed(line, format!("expected default {what} value")));
    }
    let default = parse_f64(line, tokens[0])?;
    let (line, tokens) = lines.require()?;
    let count = parse_usize(line, tokens[0], &format!("non-default {what} count"))?;
    let mut values = vec![default; len];
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let (line, tokens) = lines.require()?;
        if tokens.len() != 2 {
            return Err(malformed(line, format!("expected `index value` for {what}")));
        }
        let idx = index_1based(line, tokens[0], len, what)?;
        if !seen.insert(idx) {
            return Err(malformed(line, format!("duplicate {what} entry {}", idx + 1)));
        }
        values[idx] = parse_f64(line, tokens[1])?;
    }
    Ok(values)
}

fn has_constraints(cons_char: char) -> bool {
    !matches!(cons_char, 'N' | 'B')
}

fn has_bound_sections(cons_char: char) -> bool {
    cons_char != 'N'
}

fn quad_constraints(cons_char: char) -> bool {
    matches!(cons_char, 'Q' | 'C' | 'D')
}

/// Parses a QPLib file into a canonical minimization instance.
///
/// ```
/// use qcqp::io::qplib::{parse_qplib, write_qplib};
///
/// let text = "\
/// tiny
/// QCB
/// minimize
/// 1
/// 1
/// 1 1 2.0
/// 0.0
/// 0
/// 0.0
/// 1e+30
/// 0.0
/// 0
/// 1.0
/// 0
/// ";
/// let inst = parse_qplib(text)?;
/// assert_eq!(inst.num_vars(), 1);
/// assert_eq!(inst.objective_quad().get(0, 0), 2.0);
/// // The writer emits a canonical form that parses back identically.
/// let again = parse_qplib(&write_qplib(&inst))?;
/// assert_eq!(again.objective_quad(), inst.objective_quad());
/// # Ok::<(), qcqp::io::qplib::QplibError>(())
/// ```
pub fn parse_qplib(text: &str) -> Result<QcqpInstance, QplibError> {
    parse_qplib_full(text).map(|(inst, _)| inst)
}

/// Parses a QPLib file, also returning the source metadata.
pub fn parse_qplib_full(text: &str) -> Result<(QcqpInstance, QplibMetadata), QplibError> {
    let mut lines = Lines::new(text);

    let (_, name_tokens) = lines.require()?;
    let name = name_tokens[0].to_string();

    let (type_line, type_tokens) = lines.require()?;
    let type_code = type_tokens[0].to_uppercase();
    let chars: Vec<char> = type_code.chars().collect();
    if chars.len() != 3 {
        return Err(malformed(type_line, format!("bad problem type {type_code:?}")));
    }
    let (obj_char, var_char, cons_char) = (chars[0], chars[1], chars[2]);
    if !"LDCQ".contains(obj_char) || !"NBLDCQ".contains(cons_char) {
        return Err(malformed(type_line, format!("bad problem type {type_code:?}")));
    }
    if var_char != 'C' {
        return Err(QplibError::UnsupportedType {
            line: type_line,
            code: type_code,
        });
    }

    let (sense_line, sense_tokens) = lines.require()?;
    let maximize = match sense_tokens[0].to_lowercase().as_str() {
        "minimize" => false,
        "maximize" => true,
        other => return Err(malformed(sense_line, format!("bad sense {other:?}"))),
    };
    let sign = if maximize { -1.0 } else { 1.0 };

    let (n_line, n_tokens) = lines.require()?;
    let n = parse_usize(n_line, n_tokens[0], "variable count")?;
    if n == 0 {
        return Err(malformed(n_line, "variable count must be positive"));
    }
    let source_constraints = if has_constraints(cons_char) {
        let (m_line, m_tokens) = lines.require()?;
        parse_usize(m_line, m_tokens[0], "constraint count")?
    } else {
        0
    };

    // Objective Hessian.
    let mut obj_entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut nnz_obj_quad = 0;
    if obj_char != 'L' {
        let (count_line, tokens) = lines.require()?;
        nnz_obj_quad = parse_usize(count_line, tokens[0], "objective Hessian count")?;
        let mut seen = BTreeSet::new();
        for _ in 0..nnz_obj_quad {
            let (line, tokens) = lines.require()?;
            if tokens.len() != 3 {
                return Err(malformed(line, "expected `i j value`"));
            }
            let a = index_1based(line, tokens[0], n, "Hessian row")?;
            let b = index_1based(line, tokens[1], n, "Hessian column")?;
            let (row, col) = (a.min(b), a.max(b));
            if !seen.insert((row, col)) {
                return Err(malformed(
                    line,
                    format!("duplicate Hessian entry ({}, {})", row + 1, col + 1),
                ));
            }
            let value = sign * parse_f64(line, tokens[2])?;
            if value != 0.0 {
                obj_entries.push((row, col, value));
            }
        }
    }

    // Linear objective (default + sparse) and the constant.
    let mut objective_lin = read_dense_vector(&mut lines, n, "linear objective")?;
    let nnz_obj_lin = objective_lin.iter().filter(|&&v| v != 0.0).count();
    for v in objective_lin.iter_mut() {
        *v *= sign;
    }
    let (const_line, const_tokens) = lines.require()?;
    let objective_constant = sign * parse_f64(const_line, const_tokens[0])?;

    // Constraint Hessians.
    let mut cons_quad_entries: Vec<Vec<(usize, usize, f64)>> =
        vec![Vec::new(); source_constraints];
    let mut nnz_cons_quad = 0;
    if has_constraints(cons_char) && quad_constraints(cons_char) {
        let (count_line, tokens) = lines.require()?;
        nnz_cons_quad = parse_usize(count_line, tokens[0], "constraint Hessian count")?;
        let mut seen = BTreeSet::new();
        for _ in 0..nnz_cons_quad {
            let (line, tokens) = lines.require()?;
            if tokens.len() != 4 {
                return Err(malformed(line, "expected `cons i j value`"));
            }
            let cons = index_1based(line, tokens[0], source_constraints, "constraint")?;
            let a = index_1based(line, tokens[1], n, "Hessian row")?;
            let b = index_1based(line, tokens[2], n, "Hessian column")?;
            let (row, col) = (a.min(b), a.max(b));
            if !seen.insert((cons, row, col)) {
                return Err(malformed(line, "duplicate constraint Hessian entry"));
            }
            let value = parse_f64(line, tokens[3])?;
            if value != 0.0 {
                cons_quad_entries[cons].push((row, col, value));
            }
        }
    }

    // Linear constraint coefficients.
    let mut cons_lin: Vec<Vec<f64>> = vec![vec![0.0; n]; source_constraints];
    let mut nnz_cons_lin = 0;
    if has_constraints(cons_char) {
        let (count_line, tokens) = lines.require()?;
        nnz_cons_lin = parse_usize(count_line, tokens[0], "constraint coefficient count")?;
        let mut seen = BTreeSet::new();
        for _ in 0..nnz_cons_lin {
            let (line, tokens) = lines.require()?;
            if tokens.len() != 3 {
                return Err(malformed(line, "expected `cons var value`"));
            }
            let cons = index_1based(line, tokens[0], source_constraints, "constraint")?;
            let var = index_1based(line, tokens[1], n, "variable")?;
            if !seen.insert((cons, var)) {
                return Err(malformed(line, "duplicate constraint coefficient"));
            }
            cons_lin[cons][var] = parse_f64(line, tokens[2])?;
        }
    }

    // Infinity sentinel.
    let (inf_line, inf_tokens) = lines.require()?;
    let infinity = parse_f64(inf_line, inf_tokens[0])?;
    if infinity <= 0.0 || infinity.is_nan() {
        return Err(malformed(inf_line, "infinity sentinel must be positive"));
    }

    // Constraint sides.
    let (cl, cu) = if has_constraints(cons_char) {
        let cl = read_dense_vector(&mut lines, source_constraints, "constraint lower side")?;
        let cu = read_dense_vector(&mut lines, source_constraints, "constraint upper side")?;
        (cl, cu)
    } else {
        (Vec::new(), Vec::new())
    };

    // Variable bounds.
    let (lower_raw, upper_raw) = if has_bound_sections(cons_char) {
        let lower = read_dense_vector(&mut lines, n, "variable lower bound")?;
        let upper = read_dense_vector(&mut lines, n, "variable upper bound")?;
        (lower, upper)
    } else {
        (vec![-infinity; n], vec![infinity; n])
    };
    let lower: Vec<Bound> = lower_raw
        .iter()
        .map(|&v| {
            if v <= -infinity {
                Bound::NegInf
            } else {
                Bound::Finite(v)
            }
        })
        .collect();
    let upper: Vec<Bound> = upper_raw
        .iter()
        .map(|&v| {
            if v >= infinity {
                Bound::PosInf
            } else {
                Bound::Finite(v)
            }
        })
        .collect();

    // Split two-sided ranges into canonical `<= 0` records.
    let mut constraints = Vec::new();
    for i in 0..source_constraints {
        let quad = SparseSymMatrix::new(n, cons_quad_entries[i].clone())?;
        let upper_side = cu.get(i).copied().unwrap_or(infinity);
        let lower_side = cl.get(i).copied().unwrap_or(-infinity);
        if upper_side < infinity {
            constraints.push(Constraint {
                quad: quad.clone(),
                lin: cons_lin[i].clone(),
                rhs: -upper_side,
            });
        }
        if lower_side > -infinity {
            let negated_quad = if quad.is_zero() {
                quad.clone()
            } else {
                quad.map_values(|_, _, v| -v)
            };
            constraints.push(Constraint {
                quad: negated_quad,
                lin: cons_lin[i].iter().map(|&v| -v).collect(),
                rhs: lower_side,
            });
        }
    }

    let instance = QcqpInstance::new(
        name.clone(),
        SparseSymMatrix::new(n, obj_entries)?,
        objective_lin,
        constraints,
        lower,
        upper,
    )?;
    let meta = QplibMetadata {
        name,
        type_code,
        maximize,
        objective_constant,
        source_constraints,
        infinity,
        nnz_obj_quad,
        nnz_obj_lin,
        nnz_cons_quad,
        nnz_cons_lin,
    };
    Ok((instance, meta))
}

const WRITE_INFINITY: f64 = 1e30;

/// Serializes an instance in canonical QPLib form: minimization sense,
/// already-split `<= 0` constraints encoded through their upper sides,
/// entries sorted, zero objective constant.
pub fn write_qplib(inst: &QcqpInstance) -> String {
    use std::fmt::Write;
    let n = inst.num_vars();
    let m = inst.num_cons();
    let any_cons_quad = inst.constraints().iter().any(|c| !c.quad.is_zero());
    let any_finite_bound = inst
        .lower()
        .iter()
        .chain(inst.upper())
        .any(|b| b.is_finite());

    let obj_char = if inst.objective_quad().is_zero() { 'L' } else { 'Q' };
    let cons_char = if m == 0 {
        if any_finite_bound {
            'B'
        } else {
            'N'
        }
    } else if any_cons_quad {
        'Q'
    } else {
        'L'
    };

    let mut out = String::new();
    let name = if inst.name().is_empty() {
        "unnamed"
    } else {
        inst.name()
    };
    let _ = writeln!(out, "{}", name.split_whitespace().next().unwrap_or("unnamed"));
    let _ = writeln!(out, "{obj_char}C{cons_char}");
    let _ = writeln!(out, "minimize");
    let _ = writeln!(out, "{n}");
    if cons_char != 'N' && cons_char != 'B' {
        let _ = writeln!(out, "{m}");
    }

    if obj_char != 'L' {
        let entries = inst.objective_quad().entries();
        let _ = writeln!(out, "{}", entries.len());
        for &(row, col, value) in entries {
            let _ = writeln!(out, "{} {} {}", row + 1, col + 1, value);
        }
    }

    // Linear objective: default zero plus the nonzero entries.
    let _ = writeln!(out, "0.0");
    let nonzeros: Vec<(usize, f64)> = inst
        .objective_lin()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    let _ = writeln!(out, "{}", nonzeros.len());
    for (j, v) in nonzeros {
        let _ = writeln!(out, "{} {}", j + 1, v);
    }
    let _ = writeln!(out, "0.0");

    if cons_char != 'N' && cons_char != 'B' {
        if cons_char == 'Q' {
            let total: usize = inst.constraints().iter().map(|c| c.quad.nnz()).sum();
            let _ = writeln!(out, "{total}");
            for (i, cons) in inst.constraints().iter().enumerate() {
                for &(row, col, value) in cons.quad.entries() {
                    let _ = writeln!(out, "{} {} {} {}", i + 1, row + 1, col + 1, value);
                }
            }
        }
        let total_lin: usize = inst
            .constraints()
            .iter()
            .map(|c| c.lin.iter().filter(|&&v| v != 0.0).count())
            .sum();
        let _ = writeln!(out, "{total_lin}");
        for (i, cons) in inst.constraints().iter().enumerate() {
            for (j, &v) in cons.lin.iter().enumerate() {
                if v != 0.0 {
                    let _ = writeln!(out, "{} {} {}", i + 1, j + 1, v);
                }
            }
        }
    }

    let _ = writeln!(out, "{WRITE_INFINITY:e}");

    if cons_char != 'N' && cons_char != 'B' {
        // Lower sides: all free (the canonical form is one-sided).
        let _ = writeln!(out, "{:e}", -WRITE_INFINITY);
        let _ = writeln!(out, "0");
        // Upper sides: c_i(x) <= -rhs_i.
        let _ = writeln!(out, "{WRITE_INFINITY:e}");
        let _ = writeln!(out, "{m}");
        for (i, cons) in inst.constraints().iter().enumerate() {
            let _ = writeln!(out, "{} {}", i + 1, -cons.rhs);
        }
    }

    if cons_char != 'N' {
        let write_bounds = |out: &mut String, bounds: &[Bound], default: f64| {
            let _ = writeln!(out, "{default:e}");
            let finite: Vec<(usize, f64)> = bounds
                .iter()
                .enumerate()
                .filter_map(|(j, b)| b.finite().map(|v| (j, v)))
                .collect();
            let _ = writeln!(out, "{}", finite.len());
            for (j, v) in finite {
                let _ = writeln!(out, "{} {}", j + 1, v);
            }
        };
        write_bounds(&mut out, inst.lower(), -WRITE_INFINITY);
        write_bounds(&mut out, inst.upper(), WRITE_INFINITY);
    }

    // Start point sections, all defaulted.
    let _ = writeln!(out, "0.0");
    let _ = writeln!(out, "0");
    if cons_char != 'N' && cons_char != 'B' {
        let _ = writeln!(out, "0.0");
        let _ = writeln!(out, "0");
    }
    let _ = writeln!(out, "0.0");
    let _ = writeln!(out, "0");
    let _ = writeln!(out, "0");
    if cons_char != 'N' && cons_char != 'B' {
        let _ = writeln!(out, "0");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_instance;
    use rand::SeedableRng;

    const TINY: &str = "\
! a one-variable box problem
tiny # name
QCB # type
minimize
1 # one variable
1 # objective Hessian entries
1 1 2.0
0.0 # linear default
0 # non-default count
0.0 # constant
1e+30
0.0 # lower default
0
1.0 # upper default
0
";

    #[test]
    fn one_variable_box_problem() {
        let (inst, meta) = parse_qplib_full(TINY).unwrap();
        assert_eq!(inst.num_vars(), 1);
        assert_eq!(inst.num_cons(), 0);
        assert_eq!(inst.objective_quad().get(0, 0), 2.0);
        assert_eq!(inst.lower()[0], Bound::Finite(0.0));
        assert_eq!(inst.upper()[0], Bound::Finite(1.0));
        assert_eq!(meta.type_code, "QCB");
        assert!(!meta.maximize);
        // min x^2 over [0, 1]: objective at 1 is 1.
        assert_eq!(inst.objective_value(&[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn maximization_is_negated_with_flag() {
        let text = TINY.replace("minimize", "maximize");
        let (inst, meta) = parse_qplib_full(&text).unwrap();
        assert!(meta.maximize);
        assert_eq!(inst.objective_quad().get(0, 0), -2.0);
    }

    #[test]
    fn two_sided_ranges_split_into_two_records() {
        let text = "\
ranged
QCQ
minimize
2 # variables
1 # constraints
0 # objective Hessian
1.0 # linear default
0
0.0 # constant
1 # constraint Hessian entries
1 1 1 2.0
1 # linear constraint entries
1 2 3.0
1e+30
-1.0 # cl default
0
2.0 # cu default
0
-1e+30
0
1e+30
0
";
        let (inst, meta) = parse_qplib_full(text).unwrap();
        assert_eq!(meta.source_constraints, 1);
        assert_eq!(inst.num_cons(), 2);
        // Upper side: c(x) - 2 <= 0.
        assert_eq!(inst.constraints()[0].rhs, -2.0);
        assert_eq!(inst.constraints()[0].quad.get(0, 0), 2.0);
        assert_eq!(inst.constraints()[0].lin, vec![0.0, 3.0]);
        // Lower side: -c(x) - 1 <= 0.
        assert_eq!(inst.constraints()[1].rhs, -1.0);
        assert_eq!(inst.constraints()[1].quad.get(0, 0), -2.0);
        assert_eq!(inst.constraints()[1].lin, vec![0.0, -3.0]);
    }

    #[test]
    fn binary_variables_are_rejected() {
        let text = TINY.replace("QCB", "QBB");
        assert!(matches!(
            parse_qplib_full(&text),
            Err(QplibError::UnsupportedType { .. })
        ));
    }

    #[test]
    fn truncation_reports_the_line() {
        let text = "\
broken
QCB
minimize
2
1
1 1 2.0
";
        match parse_qplib_full(text) {
            Err(QplibError::UnexpectedEof { line }) => assert_eq!(line, 6),
            other => panic!("expected EOF error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_reports_the_line() {
        let text = TINY.replace("1 1 2.0", "1 2 2.0");
        match parse_qplib_full(&text) {
            Err(QplibError::IndexOutOfRange { line, index, .. }) => {
                assert_eq!(line, 7);
                assert_eq!(index, 2);
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        for trial in 0..50 {
            let n = 1 + trial % 6;
            let m = trial % 4;
            let inst = random_instance(&mut rng, n, m);
            let text = write_qplib(&inst);
            let back = parse_qplib(&text).unwrap();
            assert_eq!(back.objective_quad(), inst.objective_quad());
            assert_eq!(back.objective_lin(), inst.objective_lin());
            assert_eq!(back.constraints(), inst.constraints());
            assert_eq!(back.lower(), inst.lower());
            assert_eq!(back.upper(), inst.upper());
        }
    }

    #[test]
    fn writer_emits_zero_constraint_count_section() {
        let inst = QcqpInstance::new(
            "lp",
            SparseSymMatrix::zeros(2),
            vec![1.0, 0.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![1.0, 1.0],
                rhs: -1.0,
            }],
            vec![Bound::NegInf; 2],
            vec![Bound::PosInf; 2],
        )
        .unwrap();
        let text = write_qplib(&inst);
        // Linear problem: no constraint-Hessian section, type LCL.
        assert!(text.contains("LCL"));
        let back = parse_qplib(&text).unwrap();
        assert_eq!(back.constraints(), inst.constraints());
    }
}
