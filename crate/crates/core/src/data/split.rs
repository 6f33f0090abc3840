use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::log::InteractionLog;
use crate::attention::Domain;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: usize,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

/// One user's time-ordered events per domain. The last event of each
/// domain is the test item, the one before it the validation item, and
/// the rest the training sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequences {
    pub user: usize,
    pub a: Vec<Event>,
    pub b: Vec<Event>,
}

impl UserSequences {
    pub fn events(&self, domain: Domain) -> &[Event] {
        match domain {
            Domain::A => &self.a,
            _ => &self.b,
        }
    }

    pub fn train(&self, domain: Domain) -> &[Event] {
        let e = self.events(domain);
        &e[..e.len() - 2]
    }

    /// Held-out item of `split`.
    pub fn target(&self, split: Split, domain: Domain) -> usize {
        let e = self.events(domain);
        match split {
            Split::Val => e[e.len() - 2].item,
            Split::Test => e[e.len() - 1].item,
        }
    }

    /// Events visible when predicting the `split` target: the training
    /// sequence, plus the validation item when testing.
    pub fn context(&self, split: Split, domain: Domain) -> &[Event] {
        let e = self.events(domain);
        match split {
            Split::Val => &e[..e.len() - 2],
            Split::Test => &e[..e.len() - 1],
        }
    }

    pub fn history(&self, domain: Domain) -> HashSet<usize> {
        self.events(domain).iter().map(|e| e.item).collect()
    }
}

/// Merges two domain sequences by timestamp into combined-vocabulary ids:
/// A items keep their id, B items are offset by `vocab_a`.
pub fn interleave(a: &[Event], b: &[Event], vocab_a: usize) -> Vec<usize> {
    let mut merged: Vec<(u64, usize)> = a
        .iter()
        .map(|e| (e.timestamp, e.item))
        .chain(b.iter().map(|e| (e.timestamp, e.item + vocab_a)))
        .collect();
    merged.sort_by_key(|&(t, _)| t);
    merged.into_iter().map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub users: Vec<UserSequences>,
    pub vocab_a: usize,
    pub vocab_b: usize,
    /// Users removed for having fewer than `min_len` events in a domain.
    pub dropped: usize,
}

impl SplitDataset {
    pub fn vocab(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.vocab_a,
            Domain::B => self.vocab_b,
            Domain::Combined => self.vocab_a + self.vocab_b,
        }
    }

    pub fn combined_context(&self, user: &UserSequences, split: Split) -> Vec<usize> {
        interleave(
            user.context(split, Domain::A),
            user.context(split, Domain::B),
            self.vocab_a,
        )
    }
}

/// Keeps users with at least `min_len` events in both domains.
pub fn split_leave_one_out(log: &InteractionLog, min_len: usize) -> Result<SplitDataset> {
    if min_len < 3 {
        return Err(Error::Contract(format!(
            "min_len must be >= 3 (train + val + test), got {min_len}"
        )));
    }
    let mut users = Vec::new();
    let mut dropped = 0;
    for (user, mut rows) in log.by_user() {
        rows.sort_by_key(|r| r.timestamp);
        let pick = |d: Domain| -> Vec<Event> {
            rows.iter()
                .filter(|r| r.domain == d)
                .map(|r| Event {
                    item: r.item,
                    timestamp: r.timestamp,
                })
                .collect()
        };
        let (a, b) = (pick(Domain::A), pick(Domain::B));
        if a.len() < min_len || b.len() < min_len {
            dropped += 1;
            continue;
        }
        users.push(UserSequences { user, a, b });
    }
    if users.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no user has {min_len} or more events in both domains"
        )));
    }
    Ok(SplitDataset {
        users,
        vocab_a: log.vocab_a,
        vocab_b: log.vocab_b,
        dropped,
    })
}
