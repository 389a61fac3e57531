use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PhantomSample;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub has_polyp: bool,
    pub neoplastic: bool,
    pub true_mm: f64,
    pub cce_mm: f64,
    pub hp_mm: f64,
    pub split: Split,
    pub origin: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.records.iter().find(|r| r.id == id).map(|r| r.split)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id.as_str()).collect()
    }

    /// Samples tagged `split`, in manifest order.
    pub fn select<'a>(&self, samples: &'a [PhantomSample], split: Split) -> Vec<&'a PhantomSample> {
        let tagged: std::collections::HashSet<&str> = self.ids(split).into_iter().collect();
        samples.iter().filter(|s| tagged.contains(s.id.as_str())).collect()
    }

    /// Retags a stratified `fraction` of the training groups as validation.
    pub fn carve_validation(&mut self, fraction: f64, seed: u64) {
        let mut groups: BTreeMap<String, (bool, Vec<usize>)> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.split == Split::Train {
                groups.entry(r.origin.clone()).or_insert((r.has_polyp, Vec::new())).1.push(i);
            }
        }
        let keyed: Vec<(usize, Vec<usize>)> = groups.into_values().map(|(k, v)| (usize::from(k), v)).collect();
        for chosen in choose_stratified(&keyed, fraction, seed) {
            for &i in &keyed[chosen].1 {
                self.records[i].split = Split::Val;
            }
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("manifest record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line)?);
        }
        let m = Manifest { records };
        m.check_unique_paths()?;
        Ok(m)
    }

    /// Every sample tagged with the same split.
    pub fn uniform(samples: &[PhantomSample], split: Split, seed: u64) -> Result<Manifest> {
        let m = Manifest {
            records: samples.iter().map(|s| record(s, split, seed)).collect(),
        };
        m.check_unique_paths()?;
        Ok(m)
    }

    fn check_unique_paths(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.image_path) || (!r.mask_path.is_empty() && !seen.insert(&r.mask_path)) {
                return Err(Error::invalid(format!("duplicate path in manifest at record {}", r.id)));
            }
        }
        Ok(())
    }
}

fn record(s: &PhantomSample, split: Split, seed: u64) -> ManifestRecord {
    ManifestRecord {
        id: s.id.clone(),
        image_path: format!("images/{}.ppm", s.id),
        mask_path: format!("masks/{}.pgm", s.id),
        has_polyp: s.has_polyp,
        neoplastic: s.neoplastic,
        true_mm: s.true_diameter_mm,
        cce_mm: s.cce_equivalent_mm,
        hp_mm: s.hp_mm,
        split,
        origin: s.origin.clone(),
        seed,
    }
}

/// Picks `round(fraction * n)` groups overall, apportioned across strata
/// by largest remainder, uniformly at random within each stratum.
fn choose_stratified(groups: &[(usize, Vec<usize>)], fraction: f64, seed: u64) -> Vec<usize> {
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (g, (key, _)) in groups.iter().enumerate() {
        strata.entry(*key).or_default().push(g);
    }
    let total = (fraction * groups.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = strata
        .iter()
        .map(|(&k, members)| {
            let exact = fraction * members.len() as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(order.len() * 2) {
        if assigned >= total {
            break;
        }
        if quotas[i].1 < strata[&quotas[i].0].len() {
            quotas[i].1 += 1;
            assigned += 1;
        }
    }
    let root = Rng::new(seed);
    let mut chosen = Vec::new();
    for (k, quota, _) in quotas {
        let members = &strata[&k];
        let perm = root.substream(k as u64).permutation(members.len());
        chosen.extend(perm.into_iter().take(quota).map(|p| members[p]));
    }
    chosen.sort_unstable();
    chosen
}

/// Stratified train/test split by `has_polyp`, keeping every augmented
/// variant with its original.
pub fn split_dataset(samples: &[PhantomSample], test_fraction: f64, seed: u64) -> Result<Manifest> {
    split_dataset_by(samples, test_fraction, seed, |s| usize::from(s.has_polyp))
}

/// As [`split_dataset`] with a caller-chosen stratification key.
pub fn split_dataset_by(
    samples: &[PhantomSample],
    test_fraction: f64,
    seed: u64,
    key: impl Fn(&PhantomSample) -> usize,
) -> Result<Manifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut groups: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.origin.as_str()).or_insert((key(s), Vec::new())).1.push(i);
    }
    let keyed: Vec<(usize, Vec<usize>)> = groups.into_values().collect();
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, _) in &keyed {
        *per_class.entry(*k).or_default() += 1;
    }
    if let Some((k, n)) = per_class.iter().find(|(_, &n)| n < 2) {
        return Err(Error::invalid(format!("class {k} has only {n} original sample(s); need at least 2")));
    }
    let chosen: std::collections::HashSet<usize> = choose_stratified(&keyed, test_fraction, seed).into_iter().collect();
    let mut split_of = vec![Split::Train; samples.len()];
    for (g, (_, members)) in keyed.iter().enumerate() {
        if chosen.contains(&g) {
            for &i in members {
                split_of[i] = Split::Test;
            }
        }
    }
    let records = samples.iter().zip(split_of).map(|(s, split)| record(s, split, seed)).collect();
    let m = Manifest { records };
    m.check_unique_paths()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{augment_dataset, generate_dataset, PhantomConfig};

    #[test]
    fn ten_samples_thirty_percent() {
        let s = generate_dataset(&PhantomConfig::default(), 5, 5, 1).unwrap();
        let m = split_dataset(&s, 0.30, 3).unwrap();
        assert_eq!(m.ids(Split::Test).len(), 3);
        assert_eq!(m.ids(Split::Train).len(), 7);
    }

    #[test]
    fn stratified_within_one() {
        let s = generate_dataset(&PhantomConfig::default(), 20, 20, 1).unwrap();
        let m = split_dataset(&s, 0.30, 3).unwrap();
        let test: Vec<_> = m.records.iter().filter(|r| r.split == Split::Test).collect();
        let polyps = test.iter().filter(|r| r.has_polyp).count() as isize;
        let normals = test.len() as isize - polyps;
        assert!((polyps - normals).abs() <= 1);
    }

    #[test]
    fn single_original_class_rejected() {
        let s = generate_dataset(&PhantomConfig::default(), 1, 4, 1).unwrap();
        assert!(split_dataset(&s, 0.3, 0).is_err());
        assert!(split_dataset(&s, 1.0, 0).is_err());
    }

    #[test]
    fn augmented_variants_stay_together() {
        let s = generate_dataset(&PhantomConfig::default(), 4, 4, 1).unwrap();
        let a = augment_dataset(&s, 3, 2, 4);
        let m = split_dataset(&a, 0.3, 9).unwrap();
        for r in &m.records {
            assert_eq!(Some(r.split), m.split_of(&r.origin));
        }
    }

    #[test]
    fn validation_carved_from_train_only() {
        let s = generate_dataset(&PhantomConfig::default(), 10, 10, 1).unwrap();
        let mut m = split_dataset(&s, 0.3, 1).unwrap();
        let test_before = m.ids(Split::Test).len();
        m.carve_validation(0.2, 5);
        assert_eq!(m.ids(Split::Test).len(), test_before);
        assert_eq!(m.ids(Split::Val).len(), 3);
    }
}
