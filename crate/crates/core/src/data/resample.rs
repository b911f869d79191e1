//! Cold-start resampling of a two-domain log into train/validation/test.
//!
//! Users who have target-domain records are shuffled. The first `a_train`
//! share are training users and keep all their records, except that the
//! last-day target records of an `a_cross` share of them are moved out and
//! divided between validation and test. The remaining held-out users
//! contribute only their last-day target records, divided the same way, while
//! their source records stay in training. Every source record of a retained
//! user therefore lands in training.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, Instance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Share of target-domain users assigned to training.
    pub a_train: f64,
    /// Share of training users whose last-day target records are moved to
    /// validation/test. Zero gives a pure cold-start evaluation.
    pub a_cross: f64,
    /// Share of target-domain users kept before splitting.
    pub presample: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            a_train: 0.8,
            a_cross: 0.25,
            presample: 1.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.a_train) {
            return Err(Error::Config(format!("a_train must be in (0, 1], got {}", self.a_train)));
        }
        if !(0.0..=1.0).contains(&self.a_cross) {
            return Err(Error::Config(format!("a_cross must be in [0, 1], got {}", self.a_cross)));
        }
        if !in_unit(self.presample) {
            return Err(Error::Config(format!("presample must be in (0, 1], got {}", self.presample)));
        }
        Ok(())
    }
}

/// Record ids per split plus the cold-start cohort.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    /// Users evaluated in validation/test without any target-domain
    /// training record.
    pub cold_start_users: BTreeSet<usize>,
    pub train_users: Vec<usize>,
    pub overlap_users: Vec<usize>,
    pub held_out_users: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Split {
    /// Materializes the three splits from `instances` (looked up by record id).
    pub fn select(&self, instances: &[Instance]) -> Result<[Vec<Instance>; 3]> {
        let by_id: HashMap<usize, &Instance> = instances.iter().map(|i| (i.record_id, i)).collect();
        let pick = |ids: &[usize]| -> Result<Vec<Instance>> {
            ids.iter()
                .map(|id| {
                    by_id.get(id).map(|&i| i.clone()).ok_or_else(|| Error::Data {
                        index: *id,
                        reason: "split refers to an unknown record id".into(),
                    })
                })
                .collect()
        };
        Ok([pick(&self.train)?, pick(&self.valid)?, pick(&self.test)?])
    }
}

fn share(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n)
}

pub fn resample<R: Rng + ?Sized>(instances: &[Instance], spec: &SplitSpec, rng: &mut R) -> Result<Split> {
    spec.validate()?;
    // Target records per user, ordered by record id.
    let mut target_records: BTreeMap<usize, Vec<&Instance>> = BTreeMap::new();
    for inst in instances.iter().filter(|i| i.domain == Domain::Target) {
        target_records.entry(inst.user).or_default().push(inst);
    }
    let mut users: Vec<usize> = target_records.keys().copied().collect();
    users.shuffle(rng);
    let kept = if spec.presample < 1.0 {
        share(users.len(), spec.presample).max(1).min(users.len())
    } else {
        users.len()
    };
    let dropped: BTreeSet<usize> = users.drain(kept..).collect();

    let n_train = share(users.len(), spec.a_train);
    let n_overlap = share(n_train, spec.a_cross);
    let mut split = Split::default();
    if spec.a_cross > 0.0 && n_overlap == 0 && n_train > 0 {
        let msg = format!(
            "a_cross {} of {n_train} training users rounds to zero overlap users; evaluating pure cold start",
            spec.a_cross
        );
        log::warn!("{msg}");
        split.warnings.push(msg);
    }
    split.train_users = users[..n_train].to_vec();
    split.overlap_users = users[..n_overlap].to_vec();
    split.held_out_users = users[n_train..].to_vec();

    let last_day = |user: usize| -> Vec<usize> {
        let recs = &target_records[&user];
        let day = recs.iter().map(|r| r.timestamp).max().expect("user has target records");
        recs.iter().filter(|r| r.timestamp == day).map(|r| r.record_id).collect()
    };
    let mut extracted: BTreeSet<usize> = BTreeSet::new();
    for group in [&split.overlap_users, &split.held_out_users] {
        let to_valid = group.len().div_ceil(2);
        for (k, &user) in group.iter().enumerate() {
            let ids = last_day(user);
            extracted.extend(ids.iter().copied());
            if k < to_valid {
                split.valid.extend(ids);
            } else {
                split.test.extend(ids);
            }
        }
    }

    let held_out: BTreeSet<usize> = split.held_out_users.iter().copied().collect();
    for inst in instances {
        if dropped.contains(&inst.user) || extracted.contains(&inst.record_id) {
            continue;
        }
        let keep = match inst.domain {
            Domain::Source => true,
            Domain::Target => !held_out.contains(&inst.user),
        };
        if keep {
            split.train.push(inst.record_id);
        }
    }

    let train_target_users: BTreeSet<usize> = instances
        .iter()
        .filter(|i| i.domain == Domain::Target)
        .filter(|i| !dropped.contains(&i.user) && !extracted.contains(&i.record_id) && !held_out.contains(&i.user))
        .map(|i| i.user)
        .collect();
    split.cold_start_users = split
        .overlap_users
        .iter()
        .chain(&split.held_out_users)
        .copied()
        .filter(|u| !train_target_users.contains(u))
        .collect();
    split.valid.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(record_id: usize, user: usize, domain: Domain, day: i64) -> Instance {
        Instance {
            record_id,
            user,
            profile: vec![2],
            target_history: vec![],
            source_history: vec![],
            item: match domain {
                Domain::Target => ItemField::Target(vec![2]),
                Domain::Source => ItemField::Source(vec![2]),
            },
            y: 1.0,
            domain,
            timestamp: day,
        }
    }

    /// Ten users with target records on days 1..=3 (two on the last day) and
    /// source records on days 1 and 2.
    fn ten_users() -> Vec<Instance> {
        let mut out = Vec::new();
        for u in 0..10 {
            for day in [1, 2, 3, 3] {
                out.push(inst(out.len(), u, Domain::Target, day));
            }
            for day in [1, 2] {
                out.push(inst(out.len(), u, Domain::Source, day));
            }
        }
        out
    }

    #[test]
    fn ten_user_hand_simulation() {
        let data = ten_users();
        let split = resample(&data, &SplitSpec::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(split.train_users.len(), 8);
        assert_eq!(split.overlap_users.len(), 2);
        assert_eq!(split.held_out_users.len(), 2);
        // One overlap user and one held-out user per side, two last-day records each.
        assert_eq!(split.valid.len(), 4);
        assert_eq!(split.test.len(), 4);
        // 8 users * 4 target - 2 overlap * 2 last-day + 10 users * 2 source.
        assert_eq!(split.train.len(), 32 - 4 + 20);
        let held: BTreeSet<_> = split.held_out_users.iter().copied().collect();
        assert_eq!(split.cold_start_users, held);
    }

    #[test]
    fn zero_cross_gives_disjoint_users() {
        let data = ten_users();
        let spec = SplitSpec {
            a_cross: 0.0,
            ..SplitSpec::default()
        };
        let split = resample(&data, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(split.overlap_users.is_empty());
        assert!(split.warnings.is_empty());
        let train_users: BTreeSet<usize> = split
            .train
            .iter()
            .map(|&id| &data[id])
            .filter(|i| i.domain == Domain::Target)
            .map(|i| i.user)
            .collect();
        for id in split.valid.iter().chain(&split.test) {
            assert!(!train_users.contains(&data[*id].user));
        }
    }

    #[test]
    fn tiny_cross_share_warns() {
        let data = ten_users();
        let spec = SplitSpec {
            a_cross: 0.01,
            ..SplitSpec::default()
        };
        let split = resample(&data, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(split.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SplitSpec {
            a_train: 0.0,
            ..SplitSpec::default()
        };
        assert!(resample(&[], &spec, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
