use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Gold-by-predicted count matrix over a fixed label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub labels: Vec<String>,
    /// `matrix[gold][predicted]`.
    pub matrix: Vec<Vec<usize>>,
    /// Off-diagonal cells with a non-zero count, largest first.
    pub top_confusions: Vec<(String, String, usize)>,
}

pub fn confusion<L: PartialEq + Display>(gold: &[L], predicted: &[L], label_set: &[L]) -> Result<ConfusionReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(gold.len(), predicted.len()));
    }
    let slot = |l: &L| {
        label_set
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| EvalError::UnknownLabel(l.to_string()))
    };
    let k = label_set.len();
    let mut matrix = vec![vec![0usize; k]; k];
    for (g, p) in gold.iter().zip(predicted) {
        matrix[slot(g)?][slot(p)?] += 1;
    }
    Ok(ConfusionReport::from_matrix(label_set.iter().map(|l| l.to_string()).collect(), matrix))
}

impl ConfusionReport {
    pub fn from_matrix(labels: Vec<String>, matrix: Vec<Vec<usize>>) -> Self {
        let mut cells: Vec<(usize, usize, usize)> = Vec::new();
        for (g, row) in matrix.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                if g != p && n > 0 {
                    cells.push((g, p, n));
                }
            }
        }
        cells.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let top_confusions = cells
            .into_iter()
            .map(|(g, p, n)| (labels[g].clone(), labels[p].clone(), n))
            .collect();
        ConfusionReport {
            labels,
            matrix,
            top_confusions,
        }
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.matrix.len()).map(|i| self.matrix[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Per-label F1; `None` where the label never occurs in gold or
    /// predictions.
    pub fn per_class_f1(&self) -> Vec<Option<f64>> {
        (0..self.labels.len())
            .map(|i| {
                let tp = self.matrix[i][i] as f64;
                let gold: usize = self.matrix[i].iter().sum();
                let pred: usize = self.matrix.iter().map(|r| r[i]).sum();
                (gold + pred > 0).then(|| 2.0 * tp / (gold + pred) as f64)
            })
            .collect()
    }

    /// Element-wise sum of two reports over the same labels.
    pub fn merged(&self, other: &ConfusionReport) -> Result<ConfusionReport, EvalError> {
        if self.labels != other.labels {
            return Err(EvalError::LengthMismatch(self.labels.len(), other.labels.len()));
        }
        let matrix = self
            .matrix
            .iter()
            .zip(&other.matrix)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(ConfusionReport::from_matrix(self.labels.clone(), matrix))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("gold\\predicted\t{}\n", self.labels.join("\t"));
        for (label, row) in self.labels.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&format!("{label}\t{}\n", cells.join("\t")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_is_diagonal() {
        let g = ["a", "b", "b", "c"];
        let r = confusion(&g, &g, &["a", "b", "c"]).unwrap();
        assert_eq!(r.matrix, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert!(r.top_confusions.is_empty());
        assert_eq!(r.accuracy(), 1.0);
    }

    #[test]
    fn six_item_tally() {
        let gold = ["S9", "S9", "S4", "S1", "S4", "S9"];
        let pred = ["S1", "S1", "S9", "S1", "S4", "S9"];
        let r = confusion(&gold, &pred, &["S1", "S4", "S9"]).unwrap();
        assert_eq!(r.matrix, vec![vec![1, 0, 0], vec![0, 1, 1], vec![2, 0, 1]]);
        assert_eq!(
            r.top_confusions,
            vec![("S9".to_string(), "S1".to_string(), 2), ("S4".to_string(), "S9".to_string(), 1)]
        );
        assert_eq!(r.total(), 6);
        assert!((r.accuracy() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_and_mismatched() {
        assert!(matches!(confusion(&["a"], &["a", "b"], &["a", "b"]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(confusion(&["a"], &["z"], &["a"]), Err(EvalError::UnknownLabel(_))));
    }
}
