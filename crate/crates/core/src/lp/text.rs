//! Plain-text dump of a linear program, for debugging and round trips.
//!
//! ```text
//! minimize: 1 x0 1 x1
//! r0: 1 x0 -1 x1 >= 4
//! x0 in 0 64
//! x1 in 0 64
//! ```
//!
//! Terms are `coefficient xINDEX` pairs. One `in` line per variable, in
//! index order, fixes the variable count.

use std::fmt::{self, Write as _};

use thiserror::Error;

use super::{LinearProgram, Relation, Row};

#[derive(Clone, Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>) {
    for (j, c) in terms {
        let _ = write!(out, " {c} x{j}");
    }
}

impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::from("minimize:");
        write_terms(
            &mut s,
            self.objective
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, c)| c != 0.0),
        );
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "r{i}:");
            write_terms(&mut s, r.coeffs.iter().copied());
            let _ = writeln!(s, " {} {}", r.rel.symbol(), r.rhs);
        }
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            let _ = writeln!(s, "x{j} in {lo} {hi}");
        }
        f.write_str(&s)
    }
}

fn parse_terms(tokens: &[&str], line: usize) -> Result<Vec<(usize, f64)>, ParseError> {
    let err = |msg: String| ParseError { line, msg };
    if tokens.len() % 2 != 0 {
        return Err(err("odd number of term tokens".into()));
    }
    tokens
        .chunks_exact(2)
        .map(|pair| {
            let c: f64 = pair[0]
                .parse()
                .map_err(|_| err(format!("bad coefficient {:?}", pair[0])))?;
            let j = parse_var(pair[1]).ok_or_else(|| err(format!("bad variable {:?}", pair[1])))?;
            Ok((j, c))
        })
        .collect()
}

fn parse_var(tok: &str) -> Option<usize> {
    tok.strip_prefix('x')?.parse().ok()
}

impl LinearProgram {
    pub fn parse_text(text: &str) -> Result<LinearProgram, ParseError> {
        let mut objective = Vec::new();
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: &str| ParseError {
                line,
                msg: msg.to_string(),
            };
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens[0] == "minimize:" {
                objective = parse_terms(&tokens[1..], line)?;
            } else if tokens[0].starts_with('r') && tokens[0].ends_with(':') {
                if tokens.len() < 3 {
                    return Err(err("row needs a relation and a right-hand side"));
                }
                let rel = match tokens[tokens.len() - 2] {
                    "<=" => Relation::Le,
                    ">=" => Relation::Ge,
                    "=" => Relation::Eq,
                    _ => return Err(err("unknown relation")),
                };
                let rhs = tokens[tokens.len() - 1]
                    .parse()
                    .map_err(|_| err("bad right-hand side"))?;
                let coeffs = parse_terms(&tokens[1..tokens.len() - 2], line)?;
                rows.push(Row { coeffs, rel, rhs });
            } else if tokens.len() == 4 && tokens[1] == "in" {
                let j = parse_var(tokens[0]).ok_or_else(|| err("bad variable"))?;
                if j != bounds.len() {
                    return Err(err("bounds out of order"));
                }
                let lo = tokens[2].parse().map_err(|_| err("bad lower bound"))?;
                let hi = tokens[3].parse().map_err(|_| err("bad upper bound"))?;
                bounds.push((lo, hi));
            } else {
                return Err(err("unrecognized line"));
            }
        }
        let n = bounds.len();
        let mut dense = vec![0.0; n];
        for (j, c) in objective {
            if j >= n {
                return Err(ParseError {
                    line: 0,
                    msg: format!("objective references x{j} without bounds"),
                });
            }
            dense[j] += c;
        }
        if let Some((i, _)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.coeffs.iter().any(|&(j, _)| j >= n))
        {
            return Err(ParseError {
                line: 0,
                msg: format!("row r{i} references a variable without bounds"),
            });
        }
        Ok(LinearProgram {
            objective: dense,
            rows,
            bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_format_and_round_trip() {
        let mut lp = LinearProgram::new(2, 0.0, 64.0);
        lp.objective = vec![1.0, 0.0];
        lp.add_row(vec![(0, 1.5), (1, -1.0)], Relation::Ge, 4.0);
        let text = lp.to_string();
        assert_eq!(
            text,
            "minimize: 1 x0\nr0: 1.5 x0 -1 x1 >= 4\nx0 in 0 64\nx1 in 0 64\n"
        );
        assert_eq!(LinearProgram::parse_text(&text).unwrap(), lp);
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = LinearProgram::parse_text("minimize:\nr0: 1 x0 ~ 3\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(LinearProgram::parse_text("minimize: 1 x3\nx0 in 0 1\n").is_err());
        assert!(LinearProgram::parse_text("x1 in 0 1\n").is_err());
    }
}
