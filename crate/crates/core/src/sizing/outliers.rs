use crate::error::{Error, Result};

/// Residuals at or below this many mm are never flagged.
pub const OUTLIER_FLOOR_MM: f64 = 0.5;

/// Indices into the input, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierSplit {
    pub kept: Vec<usize>,
    pub flagged: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Theil-Sen line through `(cce, hp)`; a pair is flagged when its residual
/// exceeds three robust standard deviations (1.4826 · MAD), and at least
/// [`OUTLIER_FLOOR_MM`].
pub fn remove_outliers(pairs: &[(f64, f64)]) -> Result<OutlierSplit> {
    if pairs.len() < 5 {
        return Err(Error::invalid(format!("outlier screening needs at least 5 pairs, got {}", pairs.len())));
    }
    let mut slopes = Vec::with_capacity(pairs.len() * (pairs.len() - 1) / 2);
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if b.0 != a.0 {
                slopes.push((b.1 - a.1) / (b.0 - a.0));
            }
        }
    }
    let slope = if slopes.is_empty() { 0.0 } else { median(&mut slopes) };
    let mut offsets: Vec<f64> = pairs.iter().map(|&(x, y)| y - slope * x).collect();
    let intercept = median(&mut offsets);
    let residuals: Vec<f64> = pairs.iter().map(|&(x, y)| y - (intercept + slope * x)).collect();
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let mad = median(&mut abs);
    let threshold = (3.0 * 1.4826 * mad).max(OUTLIER_FLOOR_MM);
    let (flagged, kept): (Vec<usize>, Vec<usize>) = (0..pairs.len()).partition(|&i| residuals[i].abs() > threshold);
    Ok(OutlierSplit { kept, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_line_has_no_outliers() {
        let pairs: Vec<_> = (0..20).map(|i| (i as f64, 0.75 * i as f64 + 1.0)).collect();
        let s = remove_outliers(&pairs).unwrap();
        assert!(s.flagged.is_empty());
        assert_eq!(s.kept.len(), 20);
    }

    #[test]
    fn identical_pairs_not_flagged() {
        let s = remove_outliers(&[(5.0, 4.0); 8]).unwrap();
        assert!(s.flagged.is_empty());
    }

    #[test]
    fn planted_underestimate_found() {
        let mut pairs: Vec<_> = (0..50)
            .map(|i| {
                let x = 3.0 + 0.4 * i as f64;
                (x, 0.75 * x + 0.3 * ((i * 7919) % 11) as f64 / 11.0)
            })
            .collect();
        pairs[17].1 += 8.0;
        assert_eq!(remove_outliers(&pairs).unwrap().flagged, vec![17]);
    }

    #[test]
    fn too_few_pairs() {
        assert!(remove_outliers(&[(1.0, 1.0); 4]).is_err());
    }
}
