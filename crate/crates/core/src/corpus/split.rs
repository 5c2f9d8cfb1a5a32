use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PersonRecord, QaId};
use crate::{util, Error, Result};

/// Forget:retain proportion, e.g. `1:9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub forget: u32,
    pub retain: u32,
}

impl Ratio {
    pub fn new(forget: u32, retain: u32) -> Result<Self> {
        if forget == 0 || retain == 0 {
            return Err(Error::InvalidArgument(format!(
                "ratio components must be positive, got {forget}:{retain}"
            )));
        }
        Ok(Self { forget, retain })
    }

    /// Forget-set size for `n` individuals: floor(n * f / (f + r)), at least 1.
    pub fn forget_count(&self, n: usize) -> usize {
        let raw = (n as u128 * self.forget as u128) / (self.forget as u128 + self.retain as u128);
        (raw as usize).max(1)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.forget, self.retain)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("ratio must look like 1:9, got {s:?}")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidArgument(format!("bad ratio component {x:?} in {s:?}")))
        };
        Ratio::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Forget,
    Retain,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Forget => "forget",
            Side::Retain => "retain",
        })
    }
}

/// QA indices of one individual split into train and test halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaHalves {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Membership of individuals in the forget/retain sets and of their QA pairs
/// in train/test halves. Serialized with explicit lists so an experiment can
/// be replayed without re-rolling any randomness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratio: Ratio,
    pub forget_names: Vec<String>,
    pub retain_names: Vec<String>,
    pub halves: BTreeMap<String, QaHalves>,
}

impl SplitAssignment {
    pub fn side_of(&self, name: &str) -> Option<Side> {
        if self.forget_names.binary_search_by(|n| n.as_str().cmp(name)).is_ok() {
            Some(Side::Forget)
        } else if self.retain_names.binary_search_by(|n| n.as_str().cmp(name)).is_ok() {
            Some(Side::Retain)
        } else {
            None
        }
    }

    pub fn names(&self, side: Side) -> &[String] {
        match side {
            Side::Forget => &self.forget_names,
            Side::Retain => &self.retain_names,
        }
    }

    pub fn all_names(&self) -> impl Iterator<Item = &String> {
        self.forget_names.iter().chain(&self.retain_names)
    }

    fn ids(&self, side: Side, pick: impl Fn(&QaHalves) -> &Vec<usize>) -> Vec<QaId> {
        self.names(side)
            .iter()
            .flat_map(|name| {
                self.halves
                    .get(name)
                    .map(|h| pick(h).as_slice())
                    .unwrap_or(&[])
                    .iter()
                    .map(move |&index| QaId { owner: name.clone(), index })
            })
            .collect()
    }

    pub fn train_ids(&self, side: Side) -> Vec<QaId> {
        self.ids(side, |h| &h.train)
    }

    pub fn test_ids(&self, side: Side) -> Vec<QaId> {
        self.ids(side, |h| &h.test)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        util::write_file(path.as_ref(), self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let split: Self = serde_json::from_str(&util::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        split.check()?;
        Ok(split)
    }

    /// Structural checks for splits read from disk.
    pub fn check(&self) -> Result<()> {
        for list in [&self.forget_names, &self.retain_names] {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("split name lists must be sorted and unique".into()));
            }
        }
        if let Some(n) = self.forget_names.iter().find(|n| self.retain_names.binary_search(n).is_ok()) {
            return Err(Error::Config(format!("{n:?} is in both forget and retain sets")));
        }
        for name in self.all_names() {
            let h = self
                .halves
                .get(name)
                .ok_or_else(|| Error::Config(format!("no QA halves for {name:?}")))?;
            let mut all: Vec<usize> = h.train.iter().chain(&h.test).copied().collect();
            all.sort_unstable();
            if all.iter().enumerate().any(|(i, &x)| i != x) {
                return Err(Error::Config(format!("QA halves for {name:?} are not a partition")));
            }
        }
        Ok(())
    }
}

/// Splits memorized individuals into forget/retain sets and each individual's
/// QA pairs into train/test halves (train takes the extra pair on odd counts).
pub fn make_split(memorized: &[&PersonRecord], ratio: Ratio, seed: u64) -> Result<SplitAssignment> {
    if memorized.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty set of individuals".into()));
    }
    let mut names: Vec<&PersonRecord> = memorized.to_vec();
    names.sort_by(|a, b| a.name.cmp(&b.name));
    if names.windows(2).any(|w| w[0].name == w[1].name) {
        return Err(Error::InvalidArgument("duplicate individual in split input".into()));
    }
    let n = names.len();
    let n_forget = ratio.forget_count(n);
    if n_forget >= n {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} leaves no retain individuals among {n}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut forget_names: Vec<String> = order[..n_forget].iter().map(|&i| names[i].name.clone()).collect();
    let mut retain_names: Vec<String> = order[n_forget..].iter().map(|&i| names[i].name.clone()).collect();
    forget_names.sort();
    retain_names.sort();

    let mut halves = BTreeMap::new();
    for record in &names {
        let count = record.qa_pairs.len();
        let mut idx: Vec<usize> = (0..count).collect();
        idx.shuffle(&mut rng);
        let n_train = count.div_ceil(2);
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        halves.insert(record.name.clone(), QaHalves { train, test });
    }

    Ok(SplitAssignment {
        seed,
        ratio,
        forget_names,
        retain_names,
        halves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn people(n: usize, qa: usize) -> Vec<PersonRecord> {
        (0..n)
            .map(|i| {
                let name = format!("Person {i:04}");
                PersonRecord::new(
                    name.clone(),
                    "bg",
                    0,
                    (0..qa).map(|k| (format!("Q{k} {name}?"), format!("a{k}"))),
                )
            })
            .collect()
    }

    fn refs(v: &[PersonRecord]) -> Vec<&PersonRecord> {
        v.iter().collect()
    }

    #[test]
    fn rounding_on_466() {
        let p = people(466, 20);
        let s = make_split(&refs(&p), Ratio::new(1, 9).unwrap(), 0).unwrap();
        assert_eq!((s.forget_names.len(), s.retain_names.len()), (46, 420));
        let s = make_split(&refs(&p), Ratio::new(20, 80).unwrap(), 0).unwrap();
        assert_eq!((s.forget_names.len(), s.retain_names.len()), (93, 373));
        let s = make_split(&refs(&p), "1:99".parse().unwrap(), 0).unwrap();
        assert_eq!(s.forget_names.len(), 4);
        let s = make_split(&refs(&p), "5:95".parse().unwrap(), 0).unwrap();
        assert_eq!(s.forget_names.len(), 23);
    }

    #[test]
    fn minimum_one_forget() {
        let p = people(5, 4);
        let s = make_split(&refs(&p), "1:99".parse().unwrap(), 3).unwrap();
        assert_eq!(s.forget_names.len(), 1);
        assert_eq!(s.retain_names.len(), 4);
    }

    #[test]
    fn errors() {
        assert!(make_split(&[], Ratio::new(1, 9).unwrap(), 0).is_err());
        let p = people(1, 4);
        assert!(make_split(&refs(&p), Ratio::new(1, 9).unwrap(), 0).is_err());
        assert!("0:9".parse::<Ratio>().is_err());
        assert!("19".parse::<Ratio>().is_err());
    }

    #[test]
    fn odd_counts_give_train_the_extra() {
        let p = people(4, 5);
        let s = make_split(&refs(&p), Ratio::new(1, 1).unwrap(), 0).unwrap();
        for h in s.halves.values() {
            assert_eq!((h.train.len(), h.test.len()), (3, 2));
        }
    }

    #[test]
    fn json_round_trip_and_check() {
        let p = people(30, 20);
        let s = make_split(&refs(&p), Ratio::new(1, 9).unwrap(), 5).unwrap();
        let back: SplitAssignment = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
        back.check().unwrap();
        let mut bad = s.clone();
        bad.retain_names.push(bad.forget_names[0].clone());
        bad.retain_names.sort();
        assert!(bad.check().is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..120, f in 1u32..30, r in 1u32..99, qa in 2usize..25, seed in any::<u64>()) {
            let p = people(n, qa);
            let ratio = Ratio::new(f, r).unwrap();
            let expected_forget = ((n as u64 * f as u64) / (f as u64 + r as u64)).max(1) as usize;
            match make_split(&refs(&p), ratio, seed) {
                Ok(s) => {
                    prop_assert_eq!(s.forget_names.len(), expected_forget);
                    prop_assert_eq!(s.forget_names.len() + s.retain_names.len(), n);
                    for name in &s.forget_names {
                        prop_assert!(s.retain_names.binary_search(name).is_err());
                    }
                    for h in s.halves.values() {
                        prop_assert_eq!(h.train.len(), qa.div_ceil(2));
                        prop_assert_eq!(h.train.len() + h.test.len(), qa);
                        prop_assert!(h.train.iter().all(|i| !h.test.contains(i)));
                    }
                    s.check().unwrap();
                    // seed determinism, independent of input order
                    let mut reversed = refs(&p);
                    reversed.reverse();
                    prop_assert_eq!(make_split(&reversed, ratio, seed).unwrap(), s);
                }
                Err(_) => prop_assert!(expected_forget >= n),
            }
        }
    }
}
