//! Lower-triangular accuracy matrix with ACC and BWT.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decimal places kept for every accuracy entry.
pub const ACCURACY_DECIMALS: i32 = 6;

/// `A[j][i]`: test accuracy on task `i` after training through task `j`, `i <= j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
}

fn round(v: f64) -> f64 {
    let scale = 10f64.powi(ACCURACY_DECIMALS);
    (v * scale).round() / scale
}

impl AccuracyMatrix {
    /// An empty matrix expecting `tasks` rows.
    pub fn with_tasks(tasks: usize) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::param("tasks", "need at least one task"));
        }
        Ok(Self {
            tasks,
            rows: Vec::new(),
        })
    }

    /// A complete matrix from its lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::with_tasks(rows.len())?;
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; row `j` holds `j + 1` accuracies in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let j = self.rows.len();
        if j == self.tasks {
            return Err(Error::State(format!("all {} rows are already filled", self.tasks)));
        }
        if row.len() != j + 1 {
            return Err(Error::Data(format!("row {j} needs {} entries, got {}", j + 1, row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("accuracy {v} in row {j} is outside [0, 1]")));
        }
        self.rows.push(row.into_iter().map(round).collect());
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn filled_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        self.rows.get(j).and_then(|r| r.get(i)).copied()
    }

    fn require_complete(&self) -> Result<&[f64]> {
        if !self.is_complete() {
            return Err(Error::State(format!(
                "accuracy matrix has {} of {} rows",
                self.rows.len(),
                self.tasks
            )));
        }
        Ok(&self.rows[self.tasks - 1])
    }

    /// Mean accuracy over all tasks after the last one.
    pub fn acc(&self) -> Result<f64> {
        let last = self.require_complete()?;
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean change in accuracy on earlier tasks between learning them and the end.
    pub fn bwt(&self) -> Result<f64> {
        let last = self.require_complete()?;
        let t = self.tasks;
        if t == 1 {
            return Ok(0.0);
        }
        let sum: f64 = (0..t - 1).map(|i| last[i] - self.rows[i][i]).sum();
        Ok(sum / (t - 1) as f64)
    }

    /// `T` lines of `T` comma-separated cells; cells above the diagonal are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.tasks {
            let cells: Vec<String> = (0..self.tasks)
                .map(|i| match self.get(j, i) {
                    Some(v) => format!("{:.*}", ACCURACY_DECIMALS as usize, v),
                    None => String::new(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the layout written by [`to_csv`](Self::to_csv). Trailing empty rows mean unfilled tasks.
    pub fn from_csv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut m = Self::with_tasks(lines.len())?;
        for (j, line) in lines.iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != lines.len() {
                return Err(Error::Data(format!(
                    "csv line {} has {} cells, expected {}",
                    j + 1,
                    cells.len(),
                    lines.len()
                )));
            }
            if cells.iter().all(|c| c.trim().is_empty()) {
                if j == 0 {
                    return Err(Error::Data("csv line 1 is empty".into()));
                }
                continue;
            }
            if m.rows.len() != j {
                return Err(Error::Data(format!("csv line {} follows an empty row", j + 1)));
            }
            let mut row = Vec::with_capacity(j + 1);
            for (i, cell) in cells.iter().enumerate() {
                let cell = cell.trim();
                match (i <= j, cell.is_empty()) {
                    (true, false) => row.push(cell.parse::<f64>().map_err(|e| {
                        Error::Data(format!("csv line {} cell {}: {e}", j + 1, i + 1))
                    })?),
                    (false, true) => {}
                    (true, true) => return Err(Error::Data(format!("csv line {} cell {} is empty", j + 1, i + 1))),
                    (false, false) => {
                        return Err(Error::Data(format!(
                            "csv line {} cell {} lies above the diagonal",
                            j + 1,
                            i + 1
                        )))
                    }
                }
            }
            m.push_row(row)?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_task() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.9]]).unwrap();
        assert_eq!(m.acc().unwrap(), 0.9);
        assert_eq!(m.bwt().unwrap(), 0.0);
    }

    #[test]
    fn two_tasks() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.95]]).unwrap();
        assert!((m.acc().unwrap() - 0.875).abs() < 1e-12);
        assert!((m.bwt().unwrap() + 0.1).abs() < 1e-12);
    }

    #[test]
    fn three_tasks_without_forgetting() {
        let m = AccuracyMatrix::from_rows(vec![vec![1.0], vec![1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(m.acc().unwrap(), 1.0);
        assert_eq!(m.bwt().unwrap(), 0.0);
    }

    #[test]
    fn incomplete_is_state_error() {
        let mut m = AccuracyMatrix::with_tasks(3).unwrap();
        m.push_row(vec![0.5]).unwrap();
        assert!(matches!(m.acc(), Err(Error::State(_))));
        assert!(matches!(m.bwt(), Err(Error::State(_))));
    }

    #[test]
    fn rejects_bad_rows() {
        let mut m = AccuracyMatrix::with_tasks(2).unwrap();
        assert!(m.push_row(vec![0.5, 0.5]).is_err());
        assert!(m.push_row(vec![1.5]).is_err());
        m.push_row(vec![0.5]).unwrap();
        m.push_row(vec![0.5, 0.5]).unwrap();
        assert!(matches!(m.push_row(vec![0.1, 0.1, 0.1]), Err(Error::State(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.981234], vec![0.97, 0.9876543], vec![0.1, 0.2, 0.3]]).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "0.981234,,");
        let back = AccuracyMatrix::from_csv(&csv).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get(1, 1), Some(0.987654));
    }

    #[test]
    fn csv_with_unfilled_rows() {
        let mut m = AccuracyMatrix::with_tasks(3).unwrap();
        m.push_row(vec![0.25]).unwrap();
        let back = AccuracyMatrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_rejects_entries_above_diagonal() {
        assert!(AccuracyMatrix::from_csv("0.5,0.5\n0.5,0.5\n").is_err());
        assert!(AccuracyMatrix::from_csv("0.5,\n0.5\n").is_err());
    }
}
