//! Selective caching on ferries: eligible contents are cut into cache-sized
//! rosters and ferries flying together pick distinct rosters.

use std::collections::BTreeSet;

use crate::demand::ContentId;
use crate::error::{Error, Result};
use crate::sort_by_score_desc;

/// Consecutive blocks of the eligible contents in descending score order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RosterPlan {
    pub rosters: Vec<Vec<ContentId>>,
}

impl RosterPlan {
    pub fn len(&self) -> usize {
        self.rosters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rosters.is_empty()
    }

    pub fn get(&self, index: usize) -> &[ContentId] {
        &self.rosters[index]
    }
}

pub fn partition_rosters(eligible: &[ContentId], scores: &[f64], roster_size: usize) -> Result<RosterPlan> {
    if roster_size == 0 {
        return Err(Error::config("roster size must be positive"));
    }
    let mut ids = eligible.to_vec();
    sort_by_score_desc(&mut ids, |c| scores[c]);
    Ok(RosterPlan {
        rosters: ids.chunks(roster_size).map(<[_]>::to_vec).collect(),
    })
}

/// What a departing ferry knows when choosing a roster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosterChoice<'a> {
    /// Roster carried by the previous ferry leaving the same anchor.
    pub previous: Option<usize>,
    /// Expected time between requests for the least popular content of the
    /// previous roster.
    pub least_popular_interval: f64,
    pub tad: f64,
    pub revisit_interval: f64,
    /// Rosters already taken by ferries of the same group.
    pub claimed: &'a [usize],
}

pub fn select_roster(plan: &RosterPlan, choice: &RosterChoice<'_>) -> Result<usize> {
    let n = plan.len();
    if n == 0 {
        return Err(Error::domain("cannot select from an empty roster plan"));
    }
    let base = match choice.previous {
        None => 0,
        Some(prev) => {
            let hot = choice.least_popular_interval <= choice.tad.min(choice.revisit_interval);
            if hot {
                prev % n
            } else {
                (prev + 1) % n
            }
        }
    };
    for step in 0..n {
        let r = (base + step) % n;
        if !choice.claimed.contains(&r) {
            return Ok(r);
        }
    }
    log::warn!("all {n} rosters claimed by group peers; reusing roster 0");
    Ok(0)
}

/// Ferry cache built from a roster: members the next anchor already holds
/// are swapped for the best-scored candidates that are neither aboard nor
/// held there. Slots stay empty once candidates run out.
pub fn refresh_ferry_cache(
    roster: &[ContentId],
    next_anchor_cache: &BTreeSet<ContentId>,
    scores: &[f64],
    candidates: &[ContentId],
) -> Vec<ContentId> {
    let mut cache: Vec<ContentId> = roster
        .iter()
        .copied()
        .filter(|c| !next_anchor_cache.contains(c))
        .collect();
    let missing = roster.len() - cache.len();
    if missing == 0 {
        return cache;
    }
    let aboard: BTreeSet<ContentId> = roster.iter().copied().collect();
    let mut pool: Vec<ContentId> = candidates
        .iter()
        .copied()
        .filter(|c| !aboard.contains(c) && !next_anchor_cache.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    sort_by_score_desc(&mut pool, |c| scores[c]);
    cache.extend(pool.into_iter().take(missing));
    cache
}
