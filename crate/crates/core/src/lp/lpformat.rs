//! CPLEX LP text output.
//!
//! ```text
//! \ comment
//! Maximize
//!  obj: c1 x1 + c2 x2 + ...
//! Subject To
//!  row: a1 x1 + ... <= rhs
//! Bounds
//!  l <= x <= u | x free | -inf <= x <= u
//! End
//! ```
//! Names are sanitized to `[A-Za-z0-9_.]` and prefixed when they start with
//! a digit. The objective offset is written as a comment.

use std::fmt::Write;

use super::problem::LpProblem;

fn sanitize(name: &str, fallback: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        s = fallback.to_string();
    }
    if s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s.insert(0, '_');
    }
    s
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (f64, String)>) {
    let mut first = true;
    for (v, name) in terms {
        if first {
            let _ = write!(out, " {v:?} {name}");
            first = false;
        } else if v < 0.0 {
            let _ = write!(out, " - {:?} {name}", -v);
        } else {
            let _ = write!(out, " + {v:?} {name}");
        }
    }
    if first {
        out.push_str(" 0");
    }
}

fn bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn to_lp_string(problem: &LpProblem) -> String {
    let names: Vec<String> = (0..problem.num_cols())
        .map(|j| {
            let s = sanitize(&problem.col_names[j], &format!("x{j}"));
            format!("{s}#{j}").replace('#', "_c")
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "\\ objective offset {:?}", problem.obj_offset);
    out.push_str("Maximize\n obj:");
    write_terms(
        &mut out,
        problem
            .obj
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, &c)| (c, names[j].clone())),
    );
    out.push_str("\nSubject To\n");
    for (i, row) in problem.rows.iter().enumerate() {
        let _ = write!(out, " {}_r{i}:", sanitize(&row.name, "r"));
        write_terms(
            &mut out,
            row.coefs.iter().map(|&(c, v)| (v, names[c].clone())),
        );
        let _ = writeln!(out, " {} {:?}", row.relation, row.rhs);
    }
    out.push_str("Bounds\n");
    for j in 0..problem.num_cols() {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        let line = if l == f64::NEG_INFINITY && u == f64::INFINITY {
            format!(" {} free", names[j])
        } else {
            format!(" {} <= {} <= {}", bound(l), names[j], bound(u))
        };
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("End\n");
    out
}
