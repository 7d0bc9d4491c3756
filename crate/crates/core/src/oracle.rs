//! Benchmark caching with a-priori demand knowledge and the analytical
//! availability bound it induces.
//!
//! The benchmark splits every anchor cache into a shared segment of the most
//! valuable contents and a private segment whose contents appear at exactly
//! one anchor system-wide. Ferries carry the most valuable contents the next
//! anchor lacks. The bound combines the value mass held locally with the
//! value mass reachable through ferries, weighted by how often a ferry is
//! reachable before a request's deadline.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demand::{CommunityProfile, ContentId};
use crate::error::{Error, Result};
use crate::sort_by_score_desc;

/// `(segment-1 size, segment-2 size)` for a segmentation factor.
pub fn segment_sizes(lambda: f64, anchor_capacity: usize) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(format!("lambda {lambda} outside [0, 1]")));
    }
    let s1 = ((lambda * anchor_capacity as f64) + 0.5).floor() as usize;
    let s1 = s1.min(anchor_capacity);
    Ok((s1, anchor_capacity - s1))
}

/// Number of distinct contents held by all anchors under homogeneous demand.
pub fn system_content_count(lambda: f64, anchor_capacity: usize, n_anchor: usize) -> Result<usize> {
    let (s1, s2) = segment_sizes(lambda, anchor_capacity)?;
    Ok(s1 + n_anchor * s2)
}

/// Normalised urgency-weighted value of a content.
pub fn content_value(popularity: f64, tad: f64, tad_min: f64, p_max: f64, kappa: f64) -> Result<f64> {
    if !(tad_min > 0.0) || tad < tad_min {
        return Err(Error::domain(format!(
            "tad {tad} below minimum {tad_min} (or minimum not positive)"
        )));
    }
    if !(popularity > 0.0 && popularity <= p_max) {
        return Err(Error::domain(format!(
            "popularity {popularity} outside (0, {p_max}]"
        )));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::domain(format!("kappa {kappa} outside [0, 1]")));
    }
    Ok(kappa * (tad_min / p_max) * (popularity / tad))
}

/// Value of every content for one community, indexed by content id.
pub fn community_values(profile: &CommunityProfile, kappa: f64) -> Result<Vec<f64>> {
    let pop = profile.popularity();
    let p_max = pop.iter().copied().fold(0.0, f64::max);
    let tad_min = profile.tad_rule.min_tad(pop.len());
    pop.iter()
        .enumerate()
        .map(|(c, &p)| content_value(p, profile.tad_rule.tad(c), tad_min, p_max, kappa))
        .collect()
}

/// Cache layout of one anchor, each list ordered by the anchor's value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorPlan {
    pub non_exclusive: Vec<ContentId>,
    pub exclusive: Vec<ContentId>,
    pub segment2: Vec<ContentId>,
}

impl AnchorPlan {
    pub fn cache(&self) -> BTreeSet<ContentId> {
        self.non_exclusive
            .iter()
            .chain(&self.exclusive)
            .chain(&self.segment2)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.non_exclusive.len() + self.exclusive.len() + self.segment2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCachePlan {
    pub lambda: f64,
    pub anchor_capacity: usize,
    pub anchors: Vec<AnchorPlan>,
}

impl SegmentedCachePlan {
    /// All exclusive segment-1 and all segment-2 contents.
    pub fn ferry_eligible(&self) -> BTreeSet<ContentId> {
        self.anchors
            .iter()
            .flat_map(|a| a.exclusive.iter().chain(&a.segment2))
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(m));
        let mut seen_s2 = BTreeSet::new();
        for (i, a) in self.anchors.iter().enumerate() {
            if a.cache().len() != a.len() {
                return bad(format!("anchor {i} segments overlap"));
            }
            if a.len() != self.anchor_capacity {
                return bad(format!(
                    "anchor {i} holds {} contents, capacity {}",
                    a.len(),
                    self.anchor_capacity
                ));
            }
            for &c in &a.segment2 {
                if !seen_s2.insert(c) {
                    return bad(format!("segment-2 content {c} repeats across anchors"));
                }
            }
            let ne: BTreeSet<_> = a.non_exclusive.iter().collect();
            let ne0: BTreeSet<_> = self.anchors[0].non_exclusive.iter().collect();
            if ne != ne0 {
                return bad(format!("anchor {i} non-exclusive set differs from anchor 0"));
            }
        }
        Ok(())
    }
}

/// How segment-2 contents are dealt out to anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Segment2Partition {
    /// Descending global value, dealt round-robin starting at anchor 0.
    #[default]
    RoundRobin,
    /// Candidates shuffled with the seed before dealing.
    Shuffled { seed: u64 },
}

fn top_by_value(values: &[f64], n: usize) -> Vec<ContentId> {
    let mut ids: Vec<ContentId> = (0..values.len()).collect();
    sort_by_score_desc(&mut ids, |c| values[c]);
    ids.truncate(n);
    ids
}

/// Builds the segmented benchmark plan from per-community content values.
pub fn preload_anchor_caches(
    values: &[Vec<f64>],
    lambda: f64,
    anchor_capacity: usize,
    partition: Segment2Partition,
) -> Result<SegmentedCachePlan> {
    let n_anchor = values.len();
    if n_anchor == 0 {
        return Err(Error::config("at least one community is required"));
    }
    let c = values[0].len();
    if values.iter().any(|v| v.len() != c) {
        return Err(Error::domain("value vectors differ in length"));
    }
    let (s1, s2) = segment_sizes(lambda, anchor_capacity)?;
    let needed = system_content_count(lambda, anchor_capacity, n_anchor)?;
    if needed > c {
        return Err(Error::config(format!(
            "plan needs {needed} distinct contents but the catalog holds {c}"
        )));
    }

    let tops: Vec<Vec<ContentId>> = values.iter().map(|v| top_by_value(v, s1)).collect();
    let top_sets: Vec<BTreeSet<ContentId>> =
        tops.iter().map(|t| t.iter().copied().collect()).collect();
    let in_all = |id: &ContentId| top_sets.iter().all(|s| s.contains(id));

    let mut anchors: Vec<AnchorPlan> = tops
        .iter()
        .map(|top| AnchorPlan {
            non_exclusive: top.iter().copied().filter(in_all).collect(),
            exclusive: top.iter().copied().filter(|c| !in_all(c)).collect(),
            segment2: Vec::new(),
        })
        .collect();

    let segment1_union: BTreeSet<ContentId> = top_sets.iter().flatten().copied().collect();
    let total_s2 = n_anchor * s2;
    if segment1_union.len() + total_s2 > c {
        return Err(Error::config(format!(
            "segment-1 union of {} plus {total_s2} segment-2 slots exceeds the catalog of {c}",
            segment1_union.len()
        )));
    }
    let global: Vec<f64> = (0..c).map(|i| values.iter().map(|v| v[i]).sum()).collect();
    let mut candidates: Vec<ContentId> =
        (0..c).filter(|i| !segment1_union.contains(i)).collect();
    sort_by_score_desc(&mut candidates, |i| global[i]);
    candidates.truncate(total_s2);
    if let Segment2Partition::Shuffled { seed } = partition {
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    for (k, id) in candidates.into_iter().enumerate() {
        anchors[k % n_anchor].segment2.push(id);
    }
    for (a, v) in anchors.iter_mut().zip(values) {
        sort_by_score_desc(&mut a.segment2, |i| v[i]);
    }

    let plan = SegmentedCachePlan {
        lambda,
        anchor_capacity,
        anchors,
    };
    plan.validate()?;
    Ok(plan)
}

/// The `ferry_capacity` most valuable ferry-eligible contents that
/// `next_anchor` does not already hold, ranked by the next community's value.
pub fn benchmark_ferry_load(
    plan: &SegmentedCachePlan,
    next_values: &[f64],
    ferry_capacity: usize,
    next_anchor: usize,
) -> Vec<ContentId> {
    let own = plan.anchors[next_anchor].cache();
    let mut pool: Vec<ContentId> = plan
        .ferry_eligible()
        .into_iter()
        .filter(|c| !own.contains(c))
        .collect();
    sort_by_score_desc(&mut pool, |c| next_values[c]);
    pool.truncate(ferry_capacity);
    pool
}

/// Inputs of the accessibility model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundParams {
    pub n_anchor: usize,
    pub n_ferry: usize,
    pub ferry_group_size: usize,
    pub hover_ratio: f64,
    pub transit_ratio: f64,
    pub cycle_time: f64,
    pub mean_tad: f64,
}

impl UpperBoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_anchor == 0 || self.n_ferry == 0 || self.ferry_group_size == 0 {
            return Err(Error::config("anchor, ferry and group counts must be positive"));
        }
        if self.ferry_group_size > self.n_ferry {
            return Err(Error::config("ferry group larger than the ferry fleet"));
        }
        if !(self.hover_ratio > 0.0 && self.transit_ratio > 0.0 && self.cycle_time > 0.0) {
            return Err(Error::config("hover, transit and cycle time must be positive"));
        }
        if self.hover_ratio + self.transit_ratio > 1.0 {
            return Err(Error::config("hover + transit ratio exceeds 1"));
        }
        if !(self.mean_tad >= 0.0) {
            return Err(Error::config("mean TAD must be nonnegative"));
        }
        Ok(())
    }

    fn group_share(&self) -> f64 {
        (self.ferry_group_size * self.n_anchor) as f64 / self.n_ferry as f64
    }
}

/// Longest wait between the departure of one ferry group and the arrival of
/// the next at the same anchor. Negative when hover periods overlap.
pub fn t_cond(p: &UpperBoundParams) -> f64 {
    let share = p.group_share();
    ((share - 1.0) * p.hover_ratio + share * p.transit_ratio) * p.cycle_time
}

/// Probability that some ferry is reachable within the mean TAD.
pub fn p_access(p: &UpperBoundParams) -> f64 {
    if p.mean_tad >= t_cond(p) {
        return 1.0;
    }
    let num = p.n_ferry as f64 * (p.hover_ratio * p.cycle_time + p.mean_tad);
    let den = (p.ferry_group_size * p.n_anchor) as f64
        * (p.hover_ratio + p.transit_ratio)
        * p.cycle_time;
    (num / den).clamp(0.0, 1.0)
}

fn value_mass(values: &[f64], ids: impl IntoIterator<Item = ContentId>) -> f64 {
    ids.into_iter().map(|c| values[c]).sum()
}

fn total_mass(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("degenerate plan: total content value is zero"));
    }
    Ok(total)
}

/// Share of the community's value mass cached at its own anchor.
pub fn p_a(plan: &SegmentedCachePlan, values: &[f64], anchor: usize) -> Result<f64> {
    let total = total_mass(values)?;
    Ok(value_mass(values, plan.anchors[anchor].cache()) / total)
}

/// Share of the community's value mass carried by an arriving ferry.
pub fn p_mf(
    plan: &SegmentedCachePlan,
    values: &[f64],
    anchor: usize,
    ferry_capacity: usize,
) -> Result<f64> {
    let total = total_mass(values)?;
    let load = benchmark_ferry_load(plan, values, ferry_capacity, anchor);
    Ok(value_mass(values, load) / total)
}

/// Components of the availability bound for one community.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBreakdown {
    pub p_a: f64,
    pub p_mf: f64,
    pub p_access: f64,
    pub bound: f64,
}

pub fn availability_upper_bound(
    plan: &SegmentedCachePlan,
    values: &[f64],
    params: &UpperBoundParams,
    anchor: usize,
    ferry_capacity: usize,
) -> Result<BoundBreakdown> {
    params.validate()?;
    let p_a = p_a(plan, values, anchor)?;
    let p_mf = p_mf(plan, values, anchor, ferry_capacity)?;
    let p_access = p_access(params);
    Ok(BoundBreakdown {
        p_a,
        p_mf,
        p_access,
        bound: (p_a + p_access * p_mf).clamp(0.0, 1.0),
    })
}
