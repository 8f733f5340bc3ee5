//! Sparse linear program container solved with HiGHS.
//!
//! Programs are minimised. Row duals follow the convention that the dual of a
//! row is the change in objective per unit increase of its right-hand side.

use highs::{HighsModelStatus, RowProblem, Sense};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("solver failed with status {0}")]
    Solver(String),
}

#[derive(Debug, Clone)]
struct Column {
    cost: f64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Clone)]
struct Row {
    lower: f64,
    upper: f64,
    entries: Vec<(usize, f64)>,
}

/// A linear program with a fixed, insertion-ordered variable layout.
#[derive(Debug, Clone, Default)]
pub struct LpProgram {
    cols: Vec<Column>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    pub primal: Vec<f64>,
    pub row_duals: Vec<f64>,
}

impl LpSolution {
    pub fn value(&self, col: ColId) -> f64 {
        self.primal[col.0]
    }

    pub fn dual(&self, row: RowId) -> f64 {
        self.row_duals[row.0]
    }
}

impl LpProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds a variable; infinite bounds are allowed.
    pub fn add_col(&mut self, cost: f64, lower: f64, upper: f64) -> ColId {
        self.cols.push(Column { cost, lower, upper });
        ColId(self.cols.len() - 1)
    }

    pub fn add_row(&mut self, lower: f64, upper: f64, entries: &[(ColId, f64)]) -> RowId {
        self.rows.push(Row {
            lower,
            upper,
            entries: entries.iter().map(|(c, v)| (c.0, *v)).collect(),
        });
        RowId(self.rows.len() - 1)
    }

    pub fn add_eq(&mut self, rhs: f64, entries: &[(ColId, f64)]) -> RowId {
        self.add_row(rhs, rhs, entries)
    }

    pub fn set_bounds(&mut self, col: ColId, lower: f64, upper: f64) {
        let c = &mut self.cols[col.0];
        c.lower = lower;
        c.upper = upper;
    }

    pub fn bounds(&self, col: ColId) -> (f64, f64) {
        let c = &self.cols[col.0];
        (c.lower, c.upper)
    }

    pub fn cost(&self, col: ColId) -> f64 {
        self.cols[col.0].cost
    }

    fn to_model(&self, presolve: bool) -> (highs::Model, Vec<highs::Col>) {
        let mut problem = RowProblem::default();
        let handles: Vec<highs::Col> = self
            .cols
            .iter()
            .map(|c| problem.add_column(c.cost, c.lower..=c.upper))
            .collect();
        for row in &self.rows {
            problem.add_row(
                row.lower..=row.upper,
                row.entries.iter().map(|&(c, v)| (handles[c], v)),
            );
        }
        let mut model = problem.optimise(Sense::Minimise);
        configure(&mut model, presolve);
        (model, handles)
    }

    /// Solves the program from scratch.
    pub fn solve(&self) -> Result<LpSolution, LpError> {
        LpSession::new(self).solve()
    }
}

fn configure(model: &mut highs::Model, presolve: bool) {
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("solver", "simplex");
    model.set_option("parallel", "off");
    model.set_option("presolve", if presolve { "on" } else { "off" });
    model.set_option("primal_feasibility_tolerance", 1e-9);
    model.set_option("dual_feasibility_tolerance", 1e-10);
    model.set_option("random_seed", 0);
}

/// A solver instance that can be re-solved after bound changes, reusing the
/// previous basis.
pub struct LpSession {
    program: LpProgram,
    model: Option<highs::Model>,
    handles: Vec<highs::Col>,
}

impl LpSession {
    pub fn new(program: &LpProgram) -> Self {
        let (model, handles) = program.to_model(true);
        Self {
            model: Some(model),
            handles,
            program: program.clone(),
        }
    }

    pub fn program(&self) -> &LpProgram {
        &self.program
    }

    pub fn set_bounds(&mut self, col: ColId, lower: f64, upper: f64) {
        self.program.set_bounds(col, lower, upper);
        if let Some(model) = self.model.as_mut() {
            model.change_column_bounds(self.handles[col.0], lower..=upper);
        }
    }

    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        let model = self
            .model
            .take()
            .unwrap_or_else(|| self.program.to_model(true).0);
        let solved = model
            .try_solve()
            .map_err(|s| LpError::Solver(format!("{s:?}")))?;
        let status = solved.status();
        let result = match status {
            HighsModelStatus::Optimal => {
                let solution = solved.get_solution();
                Ok(LpSolution {
                    objective: solved.objective_value(),
                    primal: solution.columns().to_vec(),
                    row_duals: solution.dual_rows().to_vec(),
                })
            }
            HighsModelStatus::Infeasible => Err(LpError::Infeasible),
            HighsModelStatus::Unbounded => Err(LpError::Unbounded),
            HighsModelStatus::UnboundedOrInfeasible => {
                // Presolve cannot tell which; resolve without it to find out.
                let (retry, _) = self.program.to_model(false);
                return match retry.try_solve() {
                    Ok(s) if s.status() == HighsModelStatus::Unbounded => Err(LpError::Unbounded),
                    _ => Err(LpError::Infeasible),
                };
            }
            other => Err(LpError::Solver(format!("{other:?}"))),
        };
        if result.is_ok() {
            self.model = Some(solved.into());
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_dispatch_and_dual() {
        // min 10 a + 50 b, a + b = 120, 0 <= a,b <= 100
        let mut lp = LpProgram::new();
        let a = lp.add_col(10.0, 0.0, 100.0);
        let b = lp.add_col(50.0, 0.0, 100.0);
        let row = lp.add_eq(120.0, &[(a, 1.0), (b, 1.0)]);
        let sol = lp.solve().unwrap();
        assert!((sol.value(a) - 100.0).abs() < 1e-9);
        assert!((sol.value(b) - 20.0).abs() < 1e-9);
        assert!((sol.dual(row) - 50.0).abs() < 1e-9);
        assert!((sol.objective - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LpProgram::new();
        let a = lp.add_col(1.0, 0.0, 10.0);
        lp.add_eq(20.0, &[(a, 1.0)]);
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);

        let mut lp = LpProgram::new();
        let a = lp.add_col(-1.0, 0.0, f64::INFINITY);
        lp.add_row(0.0, f64::INFINITY, &[(a, 1.0)]);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn session_resolves_after_bound_change() {
        let mut lp = LpProgram::new();
        let a = lp.add_col(10.0, 0.0, 100.0);
        let b = lp.add_col(50.0, 0.0, 100.0);
        lp.add_eq(120.0, &[(a, 1.0), (b, 1.0)]);
        let mut session = LpSession::new(&lp);
        assert!((session.solve().unwrap().objective - 2000.0).abs() < 1e-9);
        session.set_bounds(a, 0.0, 50.0);
        let sol = session.solve().unwrap();
        assert!((sol.value(b) - 70.0).abs() < 1e-9);
        session.set_bounds(a, 0.0, 0.0);
        session.set_bounds(b, 0.0, 10.0);
        assert_eq!(session.solve().unwrap_err(), LpError::Infeasible);
        session.set_bounds(b, 0.0, 200.0);
        assert!((session.solve().unwrap().objective - 6000.0).abs() < 1e-9);
    }
}
