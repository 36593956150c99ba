use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square confusion matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub Vec<Vec<u64>>);

impl Confusion {
    pub fn zeros(classes: usize) -> Self {
        Confusion(vec![vec![0; classes]; classes])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.0.len()).map(|i| self.0[i][i]).sum()
    }

    /// `100 * trace / total`, unrounded.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            100.0 * self.trace() as f64 / total as f64
        }
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.0.len() != self.0.len() {
            return Err(Error::invalid("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in labels.iter().zip(&self.0) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Rounds to two decimals, the precision accuracies are reported at.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Percentage correct, rounded to two decimals.
    pub accuracy: f64,
    pub confusion: Confusion,
}

pub fn accuracy_and_confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = Confusion::zeros(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::invalid(format!("class index out of range for {classes} classes")));
        }
        confusion.0[t][p] += 1;
    }
    Ok(Metrics {
        accuracy: round2(confusion.accuracy()),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_correct() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let preds: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| if i < 50 { l } else { (l + 1) % 4 }).collect();
        assert_eq!(accuracy_and_confusion(&preds, &labels, 4).unwrap().accuracy, 50.0);
    }

    #[test]
    fn all_correct_is_diagonal() {
        let labels = vec![0, 1, 2, 2, 1];
        let m = accuracy_and_confusion(&labels, &labels, 3).unwrap();
        assert_eq!(m.accuracy, 100.0);
        for (i, row) in m.confusion.0.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn hand_computed_three_class() {
        let truth = [0, 0, 0, 1, 1, 2, 2, 2, 2];
        let preds = [0, 1, 0, 1, 2, 2, 0, 2, 1];
        let m = accuracy_and_confusion(&preds, &truth, 3).unwrap();
        assert_eq!(m.confusion.0, vec![vec![2, 1, 0], vec![0, 1, 1], vec![1, 1, 2]]);
        // 5 of 9
        assert_eq!(m.accuracy, 55.56);
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(m.confusion.to_csv(&labels), "true\\predicted,a,b,c\na,2,1,0\nb,0,1,1\nc,1,1,2\n");
    }

    #[test]
    fn errors() {
        assert!(accuracy_and_confusion(&[], &[], 2).is_err());
        assert!(accuracy_and_confusion(&[0], &[0, 1], 2).is_err());
        assert!(accuracy_and_confusion(&[3], &[0], 2).is_err());
    }
}
