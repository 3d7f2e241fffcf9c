//! Confusion matrices, per-class precision / recall / F1 and the macro,
//! micro and support-weighted aggregates.
//!
//! Classes with zero support in the evaluated labels are left out of the
//! macro and weighted averages. F1 is 0 when precision + recall is 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
    pub class_labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.class_labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in self.class_labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], class_labels: &[String]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = class_labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::invalid(format!("label ({t}, {p}) out of range for {k} classes")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_labels: class_labels.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1_report(cm: &ConfusionMatrix) -> Result<F1Report> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let k = cm.num_classes();
    let mut per_class = Vec::with_capacity(k);
    let mut correct = 0u64;
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let support: u64 = cm.counts[c].iter().sum();
        let predicted: u64 = (0..k).map(|t| cm.counts[t][c]).sum();
        correct += tp;
        tp_sum += tp;
        fp_sum += predicted - tp;
        fn_sum += support - tp;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScore {
            label: cm.class_labels.get(c).cloned().unwrap_or_else(|| c.to_string()),
            precision,
            recall,
            f1,
            support,
        });
    }
    let present: Vec<&ClassScore> = per_class.iter().filter(|s| s.support > 0).collect();
    let macro_f1 = present.iter().map(|s| s.f1).sum::<f64>() / present.len() as f64;
    let weighted_f1 = present.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64;
    // 2TP / (2TP + FP + FN); for single-label data this is exactly accuracy.
    let micro_f1 = ratio(2 * tp_sum, 2 * tp_sum + fp_sum + fn_sum);
    Ok(F1Report {
        per_class,
        macro_f1,
        micro_f1,
        weighted_f1,
        accuracy: ratio(correct, total),
    })
}

/// One evaluated classifier / feature set for the per-class table.
#[derive(Debug, Clone)]
pub struct NamedReport<'a> {
    pub name: String,
    pub report: &'a F1Report,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassRow {
    pub label: String,
    pub normalized_support: f64,
    /// F1 per result, in input order.
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassTable {
    pub result_names: Vec<String>,
    pub rows: Vec<PerClassRow>,
}

/// F1 of every class under every result, sorted by support (descending,
/// ties by class order), optionally keeping only the `top_k` largest classes.
/// Support comes from the first result.
pub fn per_class_table(results: &[NamedReport<'_>], top_k: Option<usize>) -> Result<PerClassTable> {
    let Some(first) = results.first() else {
        return Err(Error::invalid("no results to tabulate"));
    };
    let labels: Vec<&str> = first.report.per_class.iter().map(|c| c.label.as_str()).collect();
    for r in results {
        let other: Vec<&str> = r.report.per_class.iter().map(|c| c.label.as_str()).collect();
        if other != labels {
            return Err(Error::invalid(format!("result {} uses a different taxonomy", r.name)));
        }
    }
    let total: u64 = first.report.per_class.iter().map(|c| c.support).sum();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        first.report.per_class[b]
            .support
            .cmp(&first.report.per_class[a].support)
            .then(a.cmp(&b))
    });
    if let Some(k) = top_k {
        order.truncate(k);
    }
    let rows = order
        .into_iter()
        .map(|c| PerClassRow {
            label: labels[c].to_string(),
            normalized_support: ratio(first.report.per_class[c].support, total),
            f1: results.iter().map(|r| r.report.per_class[c].f1).collect(),
        })
        .collect();
    Ok(PerClassTable {
        result_names: results.iter().map(|r| r.name.clone()).collect(),
        rows,
    })
}

impl PerClassTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,normalized_support");
        for n in &self.result_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.label, r.normalized_support);
            for f in &r.f1 {
                let _ = write!(s, ",{f}");
            }
            s.push('\n');
        }
        s
    }
}

impl F1Report {
    /// Plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  precision  recall     f1  support\n", "class");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>6.4}  {:>5.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(s, "\naccuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "macro F1     {:.4}", self.macro_f1);
        let _ = writeln!(s, "micro F1     {:.4}", self.micro_f1);
        let _ = writeln!(s, "weighted F1  {:.4}", self.weighted_f1);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for c in &self.per_class {
            let _ = writeln!(s, "{},{},{},{},{}", c.label, c.precision, c.recall, c.f1, c.support);
        }
        s
    }
}
