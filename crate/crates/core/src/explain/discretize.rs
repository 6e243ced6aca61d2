use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::dataset::TabularDataset;
use crate::numfmt::format_sig;

/// Per-feature quartile cut points plus the training range, used both to
/// name interpretable bins and to sample raw values inside them.
///
/// Bin 0 is `[min, q25]`, bin 1 `(q25, q50]`, bin 2 `(q50, q75]`, bin 3
/// `(q75, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub feature_names: Vec<String>,
    pub cuts: Vec<[f64; 3]>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// Whether every training value of the feature is a whole number.
    pub integer_valued: Vec<bool>,
}

/// Linear-interpolation quantile of an ascending slice.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn discretize_features(train: &TabularDataset) -> Result<DiscretizationScheme, ExplainError> {
    if train.len() < 4 {
        return Err(ExplainError::TooFewRecords(train.len()));
    }
    let d = train.n_features();
    let mut scheme = DiscretizationScheme {
        feature_names: train.feature_names.clone(),
        cuts: Vec::with_capacity(d),
        mins: Vec::with_capacity(d),
        maxs: Vec::with_capacity(d),
        integer_valued: Vec::with_capacity(d),
    };
    for j in 0..d {
        let mut col = train.column(j);
        col.sort_by(f64::total_cmp);
        scheme.cuts.push([
            quantile(&col, 0.25),
            quantile(&col, 0.5),
            quantile(&col, 0.75),
        ]);
        scheme.mins.push(col[0]);
        scheme.maxs.push(col[col.len() - 1]);
        scheme
            .integer_valued
            .push(col.iter().all(|v| v.fract() == 0.0));
    }
    Ok(scheme)
}

impl DiscretizationScheme {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn bin_of(&self, j: usize, value: f64) -> usize {
        self.cuts[j].iter().position(|&c| value <= c).unwrap_or(3)
    }

    /// Closed value range of bin `b` of feature `j` within the training range.
    pub fn bin_range(&self, j: usize, b: usize) -> (f64, f64) {
        let [q1, q2, q3] = self.cuts[j];
        match b {
            0 => (self.mins[j], q1),
            1 => (q1, q2),
            2 => (q2, q3),
            _ => (q3, self.maxs[j]),
        }
    }

    /// Bins that contain at least one attainable value. Bin 0 always does;
    /// higher bins only when their interval is non-degenerate.
    pub fn available_bins(&self, j: usize) -> Vec<usize> {
        (0..4)
            .filter(|&b| {
                let (lo, hi) = self.bin_range(j, b);
                b == 0 || lo < hi
            })
            .collect()
    }

    pub fn bin_condition(&self, j: usize, b: usize) -> BinCondition {
        let [q1, q2, q3] = self.cuts[j];
        let (lower, upper) = match b {
            0 => (None, Some(q1)),
            1 => (Some(q1), Some(q2)),
            2 => (Some(q2), Some(q3)),
            _ => (Some(q3), None),
        };
        BinCondition {
            feature: self.feature_names[j].clone(),
            lower,
            upper,
        }
    }
}

/// Human-readable bin, rendered as `name <= u`, `l < name <= u` or
/// `name > l` with 4 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCondition {
    pub feature: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl fmt::Display for BinCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.lower, self.upper) {
            (None, Some(u)) => write!(f, "{} <= {}", self.feature, format_sig(u, 4)),
            (Some(l), Some(u)) => write!(
                f,
                "{} < {} <= {}",
                format_sig(l, 4),
                self.feature,
                format_sig(u, 4)
            ),
            (Some(l), None) => write!(f, "{} > {}", self.feature, format_sig(l, 4)),
            (None, None) => write!(f, "{}", self.feature),
        }
    }
}

impl FromStr for BinCondition {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| ());
        let parts: Vec<&str> = s.split(" < ").collect();
        if parts.len() == 2 {
            if let Some((name, upper)) = parts[1].rsplit_once(" <= ") {
                return Ok(Self {
                    feature: name.to_string(),
                    lower: Some(num(parts[0])?),
                    upper: Some(num(upper)?),
                });
            }
        }
        if let Some((name, upper)) = s.rsplit_once(" <= ") {
            return Ok(Self {
                feature: name.to_string(),
                lower: None,
                upper: Some(num(upper)?),
            });
        }
        if let Some((name, lower)) = s.rsplit_once(" > ") {
            return Ok(Self {
                feature: name.to_string(),
                lower: Some(num(lower)?),
                upper: None,
            });
        }
        Err(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricRecord;

    fn dataset(values: &[f64]) -> TabularDataset {
        let records = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricRecord {
                file_id: i.to_string(),
                features: vec![v],
                label: (i % 2) as u8,
            })
            .collect();
        TabularDataset::new(vec!["x".into()], records).unwrap()
    }

    /// Quantile by the textbook definition `(1-g)·x[j] + g·x[j+1]` with
    /// `h = (n-1)p`, computed without the shared helper.
    fn reference_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (v.len() as f64 - 1.0) * p;
        let j = h as usize;
        let g = h - j as f64;
        if j + 1 >= v.len() {
            return v[j];
        }
        (1.0 - g) * v[j] + g * v[j + 1]
    }

    #[test]
    fn quartiles_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let scheme = discretize_features(&dataset(&values)).unwrap();
        let expected = [
            reference_quantile(&values, 0.25),
            reference_quantile(&values, 0.5),
            reference_quantile(&values, 0.75),
        ];
        assert_eq!(expected, [25.75, 50.5, 75.25]);
        for (c, e) in scheme.cuts[0].iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
        assert_eq!(scheme.bin_of(0, 25.75), 0);
        assert_eq!(scheme.bin_of(0, 26.0), 1);
        assert_eq!(scheme.bin_of(0, 100.0), 3);
        assert!(scheme.integer_valued[0]);
    }

    #[test]
    fn constant_feature_has_one_bin() {
        let scheme = discretize_features(&dataset(&[3.0; 6])).unwrap();
        assert_eq!(scheme.cuts[0], [3.0, 3.0, 3.0]);
        assert_eq!(scheme.bin_of(0, 3.0), 0);
        assert_eq!(scheme.available_bins(0), vec![0]);
    }

    #[test]
    fn needs_four_records() {
        assert!(matches!(
            discretize_features(&dataset(&[1.0, 2.0, 3.0])),
            Err(ExplainError::TooFewRecords(3))
        ));
    }

    #[test]
    fn bin_condition_round_trips_through_text() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let scheme = discretize_features(&dataset(&values)).unwrap();
        let labels: Vec<String> = (0..4)
            .map(|b| scheme.bin_condition(0, b).to_string())
            .collect();
        assert_eq!(
            labels,
            [
                "x <= 25.75",
                "25.75 < x <= 50.5",
                "50.5 < x <= 75.25",
                "x > 75.25"
            ]
        );
        for (b, label) in labels.iter().enumerate() {
            assert_eq!(
                label.parse::<BinCondition>().unwrap(),
                scheme.bin_condition(0, b)
            );
        }
    }
}
