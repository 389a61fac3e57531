use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    /// At most 6 mm.
    B0,
    /// Over 6 mm, under 10 mm.
    B1,
    /// At least 10 mm, under 20 mm.
    B2,
    /// At least 20 mm.
    B3,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [SizeBucket::B0, SizeBucket::B1, SizeBucket::B2, SizeBucket::B3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::B0 => "<=6mm",
            SizeBucket::B1 => "6-10mm",
            SizeBucket::B2 => "10-20mm",
            SizeBucket::B3 => ">=20mm",
        }
    }
}

pub fn bucket(size_mm: f64) -> Result<SizeBucket> {
    if !(size_mm >= 0.0) {
        return Err(Error::invalid(format!("size must be a non-negative number, got {size_mm}")));
    }
    Ok(if size_mm <= 6.0 {
        SizeBucket::B0
    } else if size_mm < 10.0 {
        SizeBucket::B1
    } else if size_mm < 20.0 {
        SizeBucket::B2
    } else {
        SizeBucket::B3
    })
}

/// Published CCE-vs-histopathology bucket counts; rows are the CCE bucket.
///
/// ```
/// use cce_core::sizing::PUBLISHED_SIZE_MATRIX as m;
/// let total: u64 = m.iter().flatten().sum();
/// assert_eq!(total, 280);
/// let cce_not_below: u64 = (0..4).flat_map(|i| (0..=i).map(move |j| m[i][j])).sum();
/// let cce_not_above: u64 = (0..4).flat_map(|i| (i..4).map(move |j| m[i][j])).sum();
/// assert_eq!((cce_not_below, cce_not_above), (264, 165));
/// ```
pub const PUBLISHED_SIZE_MATRIX: [[u64; 4]; 4] = [[36, 1, 0, 0], [17, 1, 1, 0], [25, 26, 74, 14], [0, 5, 42, 38]];

const PUBLISHED_TOTAL: u64 = 280;
const PUBLISHED_COLUMN_SUMS: [u64; 4] = [78, 33, 117, 52];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeConfusion {
    /// `counts[cce][hp]`.
    pub counts: [[u64; 4]; 4],
}

impl SizeConfusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn column_sums(&self) -> [u64; 4] {
        std::array::from_fn(|j| self.counts.iter().map(|r| r[j]).sum())
    }

    /// Right-aligned table with bucket labels.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>10}", "CCE\\HP");
        for b in SizeBucket::ALL {
            write!(s, " {:>8}", b.label()).unwrap();
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            write!(s, "{:>10}", SizeBucket::ALL[i].label()).unwrap();
            for v in row {
                write!(s, " {v:>8}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "rows": "cce",
            "columns": "hp",
            "buckets": SizeBucket::ALL.map(|b| b.label()),
            "counts": self.counts,
        })
        .to_string()
    }
}

/// Counts `(cce_mm, hp_mm)` pairs by bucket.
pub fn confusion(pairs: &[(f64, f64)]) -> Result<SizeConfusion> {
    let mut m = SizeConfusion::default();
    for &(cce, hp) in pairs {
        m.counts[bucket(cce)?.index()][bucket(hp)?.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub total: u64,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks a matrix against the published one: total, column sums and every
/// cell. An empty matrix passes with a warning.
pub fn figm1_consistency(m: &SizeConfusion) -> ConsistencyReport {
    let total = m.total();
    let mut report = ConsistencyReport {
        total,
        failures: Vec::new(),
        warnings: Vec::new(),
    };
    if total == 0 {
        report.warnings.push("no pairs; check passes vacuously".into());
        return report;
    }
    if total != PUBLISHED_TOTAL {
        report.failures.push(format!("total {total}, expected {PUBLISHED_TOTAL}"));
    }
    for (j, (got, want)) in m.column_sums().iter().zip(PUBLISHED_COLUMN_SUMS).enumerate() {
        if *got != want {
            report
                .failures
                .push(format!("column hp={} sums to {got}, expected {want}", SizeBucket::ALL[j].label()));
        }
    }
    for (i, (row, published)) in m.counts.iter().zip(&PUBLISHED_SIZE_MATRIX).enumerate() {
        for (j, (&got, &want)) in row.iter().zip(published).enumerate() {
            if got != want {
                report.failures.push(format!(
                    "cell (cce={}, hp={}) is {got}, expected {want}",
                    SizeBucket::ALL[i].label(),
                    SizeBucket::ALL[j].label()
                ));
            }
        }
    }
    report
}

/// One line of the size export.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeRow {
    pub id: String,
    pub cce_mm: f64,
    pub hp_mm: f64,
    pub flagged: bool,
}

pub fn pairs_csv(rows: &[SizeRow]) -> Result<String> {
    let mut s = String::from("id,cce_mm,hp_mm,bucket_cce,bucket_hp,flagged\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:?},{:?},{}",
            r.id,
            sig6(r.cce_mm),
            sig6(r.hp_mm),
            bucket(r.cce_mm)?,
            bucket(r.hp_mm)?,
            r.flagged
        )
        .unwrap();
    }
    Ok(s)
}

/// Reads rows written by [`pairs_csv`]; only the `id`, `cce_mm`, `hp_mm`
/// and `flagged` columns are needed, in any order.
pub fn parse_pairs_csv(text: &str) -> Result<Vec<SizeRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::invalid("pairs file is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| cols.iter().position(|&c| c == name);
    let (cce, hp) = match (col("cce_mm"), col("hp_mm")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid("pairs header needs cce_mm and hp_mm columns")),
    };
    let (id, flagged) = (col("id"), col("flagged"));
    let mut rows = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::invalid(format!("line {}: {} fields, header has {}", n + 1, f.len(), cols.len())));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::invalid(format!("line {}: {:?} is not a number", n + 1, f[i])))
        };
        rows.push(SizeRow {
            id: id.map_or_else(|| format!("row{}", rows.len()), |i| f[i].to_string()),
            cce_mm: num(cce)?,
            hp_mm: num(hp)?,
            flagged: flagged.is_some_and(|i| f[i] == "true"),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        assert_eq!(bucket(5.0).unwrap(), SizeBucket::B0);
        assert_eq!(bucket(6.0).unwrap(), SizeBucket::B0);
        assert_eq!(bucket(6.5).unwrap(), SizeBucket::B1);
        assert_eq!(bucket(10.0).unwrap(), SizeBucket::B2);
        assert_eq!(bucket(20.0).unwrap(), SizeBucket::B3);
        assert!(bucket(-0.1).is_err());
        assert!(bucket(f64::NAN).is_err());
    }

    #[test]
    fn single_pair() {
        let m = confusion(&[(5.0, 5.0)]).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn published_matrix_passes() {
        let m = SizeConfusion {
            counts: PUBLISHED_SIZE_MATRIX,
        };
        let r = figm1_consistency(&m);
        assert!(r.passed(), "{:?}", r.failures);
        assert_eq!(r.total, 280);
        assert_eq!(m.column_sums(), [78, 33, 117, 52]);
    }

    #[test]
    fn perturbed_cell_named() {
        let mut m = SizeConfusion {
            counts: PUBLISHED_SIZE_MATRIX,
        };
        m.counts[2][1] += 1;
        let r = figm1_consistency(&m);
        assert!(!r.passed());
        assert!(r.failures.iter().any(|f| f.contains("cell (cce=10-20mm, hp=6-10mm)")));
    }

    #[test]
    fn empty_passes_with_warning() {
        let r = figm1_consistency(&SizeConfusion::default());
        assert!(r.passed());
        assert_eq!(r.total, 0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn csv_has_header() {
        let csv = pairs_csv(&[SizeRow {
            id: "s00001".into(),
            cce_mm: 12.0,
            hp_mm: 1.0 / 3.0,
            flagged: false,
        }])
        .unwrap();
        assert_eq!(csv, "id,cce_mm,hp_mm,bucket_cce,bucket_hp,flagged\ns00001,12,0.333333,B2,B0,false\n");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            SizeRow {
                id: "a".into(),
                cce_mm: 4.5,
                hp_mm: 7.25,
                flagged: true,
            },
            SizeRow {
                id: "b".into(),
                cce_mm: 21.0,
                hp_mm: 19.0,
                flagged: false,
            },
        ];
        assert_eq!(parse_pairs_csv(&pairs_csv(&rows).unwrap()).unwrap(), rows);
        let minimal = parse_pairs_csv("hp_mm,cce_mm\n5,6\n").unwrap();
        assert_eq!((minimal[0].cce_mm, minimal[0].hp_mm, minimal[0].flagged), (6.0, 5.0, false));
        assert!(parse_pairs_csv("id,cce_mm\n").is_err());
        assert!(parse_pairs_csv("cce_mm,hp_mm\n1,x\n").is_err());
    }
}
