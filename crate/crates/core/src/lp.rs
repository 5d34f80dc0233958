//! Thin wrapper over `microlp` for the small linear programs used by
//! feasibility checks and progressive filling.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LinearProgram {
    maximize: bool,
    obj: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

impl LinearProgram {
    pub fn minimize() -> Self {
        Self::default()
    }

    pub fn maximize() -> Self {
        Self { maximize: true, ..Self::default() }
    }

    pub fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.obj.push(obj);
        self.bounds.push((lo, hi));
        self.obj.len() - 1
    }

    pub fn constraint(&mut self, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push((terms, cmp, rhs));
    }

    /// Optimal objective and variable values.
    pub fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let dir = if self.maximize { OptimizationDirection::Maximize } else { OptimizationDirection::Minimize };
        let mut p = Problem::new(dir);
        let vars: Vec<_> = self.obj.iter().zip(&self.bounds).map(|(&c, &b)| p.add_var(c, b)).collect();
        for (terms, cmp, rhs) in &self.rows {
            let mut merged: Vec<(usize, f64)> = terms.clone();
            merged.sort_by_key(|t| t.0);
            merged.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
            };
            p.add_constraint(merged.iter().map(|&(v, c)| (vars[v], c)).collect::<Vec<_>>(), op, *rhs);
        }
        let sol = p
            .solve()
            .map_err(|e| Error::Lp(format!("{e:?}")))?
            .into_solution()
            .map_err(|e| Error::Lp(format!("{e:?}")))?;
        let values = vars.iter().map(|&v| sol.var_value(v)).collect();
        Ok((sol.objective(), values))
    }
}
