use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    /// Dense per-domain id, `>= 1`.
    pub item: usize,
    pub domain: Domain,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub rows: Vec<Interaction>,
    pub vocab_a: usize,
    pub vocab_b: usize,
}

impl InteractionLog {
    pub fn vocab(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.vocab_a,
            Domain::B => self.vocab_b,
            Domain::Combined => self.vocab_a + self.vocab_b,
        }
    }

    /// Rows of each user in order of first appearance of the user.
    pub fn by_user(&self) -> Vec<(usize, Vec<Interaction>)> {
        let mut order: Vec<usize> = Vec::new();
        let mut groups: HashMap<usize, Vec<Interaction>> = HashMap::new();
        for r in &self.rows {
            groups
                .entry(r.user)
                .or_insert_with(|| {
                    order.push(r.user);
                    Vec::new()
                })
                .push(*r);
        }
        order
            .into_iter()
            .map(|u| {
                let rows = groups.remove(&u).unwrap_or_default();
                (u, rows)
            })
            .collect()
    }
}

/// Raw-token to dense-id maps, one per domain, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMapping {
    pub users: Vec<String>,
    pub items_a: Vec<String>,
    pub items_b: Vec<String>,
}

fn parse_domain(s: &str) -> Option<Domain> {
    match s.trim() {
        "A" | "a" => Some(Domain::A),
        "B" | "b" => Some(Domain::B),
        _ => None,
    }
}

fn intern(map: &mut HashMap<String, usize>, list: &mut Vec<String>, key: &str, base: usize) -> usize {
    if let Some(&id) = map.get(key) {
        return id;
    }
    let id = list.len() + base;
    map.insert(key.to_string(), id);
    list.push(key.to_string());
    id
}

/// Reads a 4-column tab-separated log `user, item, domain, timestamp`.
///
/// A first line whose timestamp column is not an integer is taken as a
/// header. Items are remapped to dense ids `1..=V` per domain and users to
/// `0..U`, both in order of first appearance. Each user's rows are ordered
/// by timestamp (ties by file order) and their timestamps renumbered
/// `1, 2, ...` so they are strictly increasing.
pub fn load_log(path: impl AsRef<Path>) -> Result<(InteractionLog, IdMapping)> {
    let text = fs::read_to_string(path)?;
    parse_log(&text)
}

pub(crate) fn parse_log(text: &str) -> Result<(InteractionLog, IdMapping)> {
    let mut mapping = IdMapping::default();
    let (mut users, mut items_a, mut items_b) = (HashMap::new(), HashMap::new(), HashMap::new());
    // (user, raw timestamp, file line, item, domain)
    let mut raw: Vec<(usize, i64, usize, usize, Domain)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        }
        let ts = match cols[3].trim().parse::<i64>() {
            Ok(t) => t,
            Err(_) if raw.is_empty() && lineno == 1 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("bad timestamp {:?}: {e}", cols[3]),
                })
            }
        };
        let domain = parse_domain(cols[2]).ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("domain must be A or B, got {:?}", cols[2]),
        })?;
        let (user_tok, item_tok) = (cols[0].trim(), cols[1].trim());
        if user_tok.is_empty() || item_tok.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item".into(),
            });
        }
        let user = intern(&mut users, &mut mapping.users, user_tok, 0);
        let item = match domain {
            Domain::A => intern(&mut items_a, &mut mapping.items_a, item_tok, 1),
            _ => intern(&mut items_b, &mut mapping.items_b, item_tok, 1),
        };
        raw.push((user, ts, lineno, item, domain));
    }
    raw.sort_by_key(|&(u, ts, line, _, _)| (u, ts, line));
    let mut rows = Vec::with_capacity(raw.len());
    let mut prev_user = None;
    let mut clock = 0u64;
    for (user, _, _, item, domain) in raw {
        if prev_user != Some(user) {
            clock = 0;
            prev_user = Some(user);
        }
        clock += 1;
        rows.push(Interaction {
            user,
            item,
            domain,
            timestamp: clock,
        });
    }
    let log = InteractionLog {
        rows,
        vocab_a: mapping.items_a.len(),
        vocab_b: mapping.items_b.len(),
    };
    Ok((log, mapping))
}

pub fn write_log(log: &InteractionLog, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "user\titem\tdomain\ttimestamp")?;
    for r in &log.rows {
        let dom = match r.domain {
            Domain::A => "A",
            Domain::B => "B",
            Domain::Combined => {
                return Err(Error::Contract("interaction rows are tagged A or B".into()))
            }
        };
        writeln!(w, "{}\t{}\t{}\t{}", r.user, r.item, dom, r.timestamp)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.items_a.tsv` and `<stem>.items_b.tsv`, each with
/// `raw<TAB>dense` rows.
pub fn write_mapping(mapping: &IdMapping, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    for (suffix, items) in [("items_a", &mapping.items_a), ("items_b", &mapping.items_b)] {
        let path = stem.with_extension(format!("{suffix}.tsv"));
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (i, raw) in items.iter().enumerate() {
            writeln!(w, "{raw}\t{}", i + 1)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file() {
        let (log, _) = parse_log("").unwrap();
        assert!(log.rows.is_empty());
    }

    #[test]
    fn groups_users() {
        let text = "u1\tx\tA\t5\nu2\ty\tB\t1\nu1\tz\tB\t3\n";
        let (log, map) = parse_log(text).unwrap();
        let sizes: Vec<usize> = log.by_user().iter().map(|(_, r)| r.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
        assert_eq!(map.users, vec!["u1", "u2"]);
        // u1's B item at t=3 precedes its A item at t=5
        let u1: Vec<_> = log.rows.iter().filter(|r| r.user == 0).collect();
        assert_eq!(u1[0].domain, Domain::B);
        assert_eq!((u1[0].timestamp, u1[1].timestamp), (1, 2));
    }

    #[test]
    fn header_is_skipped_and_ties_keep_file_order() {
        let text = "user\titem\tdomain\ttimestamp\nu\tp\tA\t7\nu\tq\tA\t7\n";
        let (log, map) = parse_log(text).unwrap();
        assert_eq!(map.items_a, vec!["p", "q"]);
        assert_eq!(log.rows[0].item, 1);
        assert_eq!(log.rows[1].item, 2);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "u\tp\tA\t1\nu\tq\tA\n";
        match parse_log(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_log("u\tp\tC\t1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
