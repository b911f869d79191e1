use std::collections::HashMap;

use crate::data::{Domain, Instance, ItemField, RawLog, PAD_ID};

/// Turns the log into model instances, attaching to each interaction the
/// user's clicked items in both domains from strictly earlier days. At most
/// the `seqlen` most recent clicks are kept, oldest first.
pub fn build_histories(log: &RawLog, seqlen: usize) -> Vec<Instance> {
    // (user, domain) -> clicks sorted by (day, record id)
    let mut clicks: HashMap<(usize, Domain), Vec<(i64, usize, usize)>> = HashMap::new();
    for r in &log.records {
        if r.label == 1.0 {
            clicks
                .entry((r.user, r.domain))
                .or_default()
                .push((r.timestamp, r.id, r.item[0]));
        }
    }
    for list in clicks.values_mut() {
        list.sort_unstable();
    }
    let before = |user: usize, domain: Domain, day: i64| -> Vec<usize> {
        let Some(list) = clicks.get(&(user, domain)) else {
            return Vec::new();
        };
        let end = list.partition_point(|&(t, _, _)| t < day);
        list[end.saturating_sub(seqlen)..end].iter().map(|&(_, _, item)| item).collect()
    };
    log.records
        .iter()
        .map(|r| Instance {
            record_id: r.id,
            user: r.user,
            profile: r.profile.clone(),
            target_history: before(r.user, Domain::Target, r.timestamp),
            source_history: before(r.user, Domain::Source, r.timestamp),
            item: match r.domain {
                Domain::Target => ItemField::Target(r.item.clone()),
                Domain::Source => ItemField::Source(r.item.clone()),
            },
            y: r.label,
            domain: r.domain,
            timestamp: r.timestamp,
        })
        .collect()
}

/// The most recent `seqlen` entries of `history`, right-padded with the
/// padding id, and a mask marking the real positions.
pub fn pad_history(history: &[usize], seqlen: usize) -> (Vec<usize>, Vec<bool>) {
    let recent = &history[history.len().saturating_sub(seqlen)..];
    let mut ids = recent.to_vec();
    let mut mask = vec![true; recent.len()];
    ids.resize(seqlen, PAD_ID);
    mask.resize(seqlen, false);
    (ids, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;

    fn rec(id: usize, domain: Domain, user: usize, item: usize, label: f64, day: i64) -> Record {
        Record {
            id,
            domain,
            user,
            profile: vec![2],
            item: vec![item],
            label,
            timestamp: day,
        }
    }

    #[test]
    fn keeps_most_recent_clicks_in_order() {
        let log = RawLog {
            records: vec![
                rec(0, Domain::Source, 0, 10, 1.0, 1),
                rec(1, Domain::Source, 0, 11, 1.0, 2),
                rec(2, Domain::Source, 0, 12, 1.0, 3),
                rec(3, Domain::Source, 0, 13, 0.0, 3),
                rec(4, Domain::Target, 0, 20, 1.0, 4),
            ],
            ..RawLog::default()
        };
        let inst = build_histories(&log, 2);
        assert_eq!(inst[4].source_history, vec![11, 12]);
        assert!(inst[4].target_history.is_empty());
        assert_eq!(inst[0].source_history, Vec::<usize>::new());
        // Same-day clicks are not visible.
        assert_eq!(inst[3].source_history, vec![10, 11]);
    }

    #[test]
    fn cold_user_pads_fully_masked() {
        let (ids, mask) = pad_history(&[], 3);
        assert_eq!(ids, vec![0, 0, 0]);
        assert_eq!(mask, vec![false; 3]);
        let (ids, mask) = pad_history(&[5, 6, 7], 2);
        assert_eq!(ids, vec![6, 7]);
        assert_eq!(mask, vec![true, true]);
    }
}
