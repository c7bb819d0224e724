//! Confusion matrices and the per-class and per-image statistics derived
//! from them. Class order is always background, optic disc, fovea, vessels.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{invalid, Result};
use crate::raster::{Class, LabelMap, Mask, NUM_CLASSES};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn get(&self, truth: Class, pred: Class) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    #[inline]
    pub fn record(&mut self, truth: Class, pred: Class) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn row_sum(&self, c: Class) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn col_sum(&self, c: Class) -> u64 {
        self.counts.iter().map(|r| r[c.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t[j][i] = v;
            }
        }
        ConfusionMatrix { counts: t }
    }

    /// Percentages of each row, as in a row-normalized confusion table.
    pub fn row_percentages(&self) -> [[Option<f64>; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[None; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            for (j, &v) in row.iter().enumerate() {
                out[i][j] = ratio(v, total).map(|r| 100.0 * r);
            }
        }
        out
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zeros(), Add::add)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Count every effective point of `mask` by (truth, prediction).
pub fn confusion(pred: &LabelMap, truth: &LabelMap, mask: &Mask) -> Result<ConfusionMatrix> {
    if pred.dims() != truth.dims() || mask.dims() != truth.dims() {
        return Err(invalid(format!(
            "confusion needs equal sizes, got prediction {:?}, truth {:?}, mask {:?}",
            pred.dims(),
            truth.dims(),
            mask.dims()
        )));
    }
    let mut cm = ConfusionMatrix::zeros();
    for ((&p, &t), &m) in pred.labels().iter().zip(truth.labels()).zip(mask.flags()) {
        if m {
            cm.record(t, p);
        }
    }
    Ok(cm)
}

/// Per-class statistics; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub overlap: Option<f64>,
}

pub fn class_stats(cm: &ConfusionMatrix, c: Class) -> ClassStats {
    let tp = cm.get(c, c);
    let row = cm.row_sum(c);
    let col = cm.col_sum(c);
    let others: u64 = Class::ALL.iter().filter(|&&t| t != c).map(|&t| cm.row_sum(t)).sum();
    let others_not_c: u64 = Class::ALL
        .iter()
        .filter(|&&t| t != c)
        .map(|&t| cm.row_sum(t) - cm.get(t, c))
        .sum();
    ClassStats {
        sensitivity: ratio(tp, row),
        specificity: ratio(others_not_c, others),
        overlap: ratio(tp, row + col - tp),
    }
}

/// Fraction of points on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.trace(), cm.total())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRow {
    pub id: String,
    pub total: u64,
    pub correct: u64,
    pub percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ImageRow>,
    pub aggregate: ConfusionMatrix,
    /// Pooled correct / pooled total, in percent.
    pub mean_percentage: Option<f64>,
}

pub fn per_image_report(images: &[(String, ConfusionMatrix)]) -> Report {
    let rows = images
        .iter()
        .map(|(id, cm)| ImageRow {
            id: id.clone(),
            total: cm.total(),
            correct: cm.trace(),
            percentage: accuracy(cm).map(|a| 100.0 * a),
        })
        .collect();
    let aggregate: ConfusionMatrix = images.iter().map(|(_, cm)| *cm).sum();
    Report {
        rows,
        mean_percentage: accuracy(&aggregate).map(|a| 100.0 * a),
        aggregate,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".to_string(),
    }
}

impl Report {
    pub fn total(&self) -> u64 {
        self.aggregate.total()
    }

    pub fn correct(&self) -> u64 {
        self.aggregate.trace()
    }

    /// `image,total,correct,percentage` plus a `mean` footer row.
    pub fn images_csv(&self) -> String {
        let mut s = String::from("image,total,correct,percentage\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.id, r.total, r.correct, fmt_opt(r.percentage, 2));
        }
        let _ = writeln!(s, "mean,{},{},{}", self.total(), self.correct(), fmt_opt(self.mean_percentage, 2));
        s
    }

    /// Aggregate confusion counts, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth,background,optic_disc,fovea,vessels,total\n");
        for c in Class::ALL {
            let row = &self.aggregate.counts()[c.index()];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_name(c),
                row[0],
                row[1],
                row[2],
                row[3],
                self.aggregate.row_sum(c)
            );
        }
        s
    }

    /// Row-normalized confusion matrix in percent.
    pub fn percentages_csv(&self) -> String {
        let mut s = String::from("truth,background,optic_disc,fovea,vessels\n");
        for (c, row) in Class::ALL.iter().zip(self.aggregate.row_percentages()) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                csv_name(*c),
                fmt_opt(row[0], 2),
                fmt_opt(row[1], 2),
                fmt_opt(row[2], 2),
                fmt_opt(row[3], 2)
            );
        }
        s
    }

    pub fn classes_csv(&self) -> String {
        let mut s = String::from("class,sensitivity,specificity,overlap\n");
        for c in Class::ALL {
            let st = class_stats(&self.aggregate, c);
            let _ = writeln!(
                s,
                "{},{},{},{}",
                csv_name(c),
                fmt_opt(st.sensitivity, 4),
                fmt_opt(st.specificity, 4),
                fmt_opt(st.overlap, 4)
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>10}", "image", "points", "correct", "percent");
        for r in &self.rows {
            let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>10}", r.id, r.total, r.correct, fmt_opt(r.percentage, 2));
        }
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>10}",
            "(mean)",
            self.total(),
            self.correct(),
            fmt_opt(self.mean_percentage, 2)
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "truth", "background", "optic disc", "fovea", "vessels", "total"
        );
        for c in Class::ALL {
            let row = &self.aggregate.counts()[c.index()];
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12}",
                c.name(),
                row[0],
                row[1],
                row[2],
                row[3],
                self.aggregate.row_sum(c)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>12} {:>12}",
            "truth (%)", "background", "optic disc", "fovea", "vessels"
        );
        for (c, row) in Class::ALL.iter().zip(self.aggregate.row_percentages()) {
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>12} {:>12} {:>12}",
                c.name(),
                fmt_opt(row[0], 2),
                fmt_opt(row[1], 2),
                fmt_opt(row[2], 2),
                fmt_opt(row[3], 2)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>12}", "class", "sensitivity", "specificity", "overlap");
        for c in Class::ALL {
            let st = class_stats(&self.aggregate, c);
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>12} {:>12}",
                c.name(),
                fmt_opt(st.sensitivity, 4),
                fmt_opt(st.specificity, 4),
                fmt_opt(st.overlap, 4)
            );
        }
        s
    }
}

fn csv_name(c: Class) -> &'static str {
    match c {
        Class::Background => "background",
        Class::OpticDisc => "optic_disc",
        Class::Fovea => "fovea",
        Class::Vessel => "vessels",
    }
}
