//! Per-anchor top-k bandit: Q-table, three-part reward, UCB scores and cache
//! selection with epsilon-greedy slot replacement.

use std::collections::BTreeSet;
use std::sync::Once;

use rand::seq::index;
use rand::Rng;

use crate::demand::ContentId;
use crate::error::{Error, Result};
use crate::sort_by_score_desc;

/// Largest per-epoch reward: local, ferry and global each reach 1.
pub const R_MAX: f64 = 3.0;

/// Exploration probability decaying geometrically per epoch down to a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            initial: 0.3,
            decay: 0.99,
            floor: 0.01,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, epoch: u64) -> f64 {
        let decayed = self.initial * self.decay.powf(epoch as f64);
        decayed.max(self.floor).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentParams {
    pub learn_rate: f64,
    pub zeta_ucb: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            learn_rate: 0.01,
            zeta_ucb: 2.0,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learn_rate > 0.0 && self.learn_rate <= 1.0) {
            return Err(Error::config(format!(
                "learn_rate {} outside (0, 1]",
                self.learn_rate
            )));
        }
        if !(self.zeta_ucb >= 0.0) {
            return Err(Error::config("zeta_ucb must be nonnegative"));
        }
        let e = self.epsilon;
        for (name, v) in [("initial", e.initial), ("decay", e.decay), ("floor", e.floor)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("epsilon {name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Contents served within deadline during the last epoch, with the change in
/// the matching availability versus the epoch before.
#[derive(Debug, Clone, Copy)]
pub struct Signal<'a> {
    pub served: &'a BTreeSet<ContentId>,
    pub delta: f64,
}

impl Signal<'_> {
    fn bracket(&self, i: ContentId) -> f64 {
        let hit = self.served.contains(&i);
        if hit && self.delta >= 0.0 {
            1.0
        } else if !hit && self.delta < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

fn bracket(signal: Option<&Signal<'_>>, i: ContentId) -> f64 {
    signal.map_or(0.0, |s| s.bracket(i))
}

/// Reward signals seen by one anchor at an epoch. Remote entries are `None`
/// when the anchor holds no information about that peer yet.
#[derive(Debug, Clone)]
pub struct RewardInputs<'a> {
    pub served_local: Signal<'a>,
    pub served_ferry: Vec<Option<Signal<'a>>>,
    pub served_global: Vec<Option<Signal<'a>>>,
    pub mf_present: bool,
    pub self_anchor: usize,
}

impl RewardInputs<'_> {
    pub fn n_anchor(&self) -> usize {
        self.served_global.len()
    }
}

pub fn reward_local(i: ContentId, inputs: &RewardInputs<'_>) -> f64 {
    inputs.served_local.bracket(i)
}

static SINGLE_ANCHOR_WARNING: Once = Once::new();

pub fn reward_ferry(i: ContentId, inputs: &RewardInputs<'_>) -> f64 {
    let n = inputs.n_anchor();
    if n < 2 {
        SINGLE_ANCHOR_WARNING.call_once(|| {
            log::warn!("ferry reward is zero with fewer than two anchors");
        });
        return 0.0;
    }
    let sum: f64 = (0..n)
        .filter(|&j| j != inputs.self_anchor)
        .map(|j| bracket(inputs.served_ferry.get(j).and_then(Option::as_ref), i))
        .sum();
    sum / (n - 1) as f64
}

pub fn reward_global(i: ContentId, inputs: &RewardInputs<'_>) -> f64 {
    let n = inputs.n_anchor();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = inputs
        .served_global
        .iter()
        .map(|s| bracket(s.as_ref(), i))
        .sum();
    sum / n as f64
}

/// Tabular learner of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub q: Vec<f64>,
    pub pull_count: Vec<u64>,
    pub epoch: u64,
    pub params: AgentParams,
    pub cache_capacity: usize,
}

impl AgentState {
    pub fn new(catalog_size: usize, cache_capacity: usize, params: AgentParams) -> Result<Self> {
        params.validate()?;
        if cache_capacity > catalog_size {
            return Err(Error::config(format!(
                "cache capacity {cache_capacity} exceeds catalog size {catalog_size}"
            )));
        }
        Ok(Self {
            q: vec![0.0; catalog_size],
            pull_count: vec![0; catalog_size],
            epoch: 0,
            params,
            cache_capacity,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon.at(self.epoch)
    }

    /// Applies the recursive update to content `i` and returns its new value.
    pub fn q_update(&mut self, i: ContentId, inputs: &RewardInputs<'_>) -> f64 {
        let mut r = reward_local(i, inputs);
        if inputs.mf_present {
            r += reward_ferry(i, inputs) + reward_global(i, inputs);
        }
        let lr = self.params.learn_rate;
        self.q[i] = (1.0 - lr) * self.q[i] + lr * r;
        self.q[i]
    }

    /// Updates every content and advances the epoch counter.
    pub fn learn(&mut self, inputs: &RewardInputs<'_>) {
        for i in 0..self.q.len() {
            self.q_update(i, inputs);
        }
        self.epoch += 1;
    }

    pub fn ucb_scores(&self) -> Vec<f64> {
        let t = self.epoch.max(1) as f64;
        self.q
            .iter()
            .zip(&self.pull_count)
            .map(|(&q, &m)| ucb(q, t, m, self.params.zeta_ucb))
            .collect()
    }

    /// Counts one pull for every content placed in the cache.
    pub fn record_cached(&mut self, cache: &[ContentId]) {
        for &c in cache {
            self.pull_count[c] += 1;
        }
    }

    /// Scores, selects and records the next cache.
    pub fn choose_cache<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<ContentId>> {
        let scores = self.ucb_scores();
        let cache = select_cache_set(&scores, self.cache_capacity, self.epsilon(), rng)?;
        self.record_cached(&cache);
        Ok(cache)
    }
}

/// Upper confidence score; arms never pulled score infinity.
pub fn ucb(q: f64, t: f64, pulls: u64, zeta: f64) -> f64 {
    if pulls == 0 {
        return f64::INFINITY;
    }
    q + (zeta * t.ln() / pulls as f64).sqrt()
}

/// Top-k contents by score; with probability `epsilon` a random
/// `ceil(epsilon * k)` of the slots are refilled with unselected contents.
pub fn select_cache_set<R: Rng + ?Sized>(
    scores: &[f64],
    k: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<ContentId>> {
    let c = scores.len();
    if k > c {
        return Err(Error::config(format!("cache size {k} exceeds catalog size {c}")));
    }
    let mut ids: Vec<ContentId> = (0..c).collect();
    sort_by_score_desc(&mut ids, |i| scores[i]);
    let (top, rest) = ids.split_at(k);
    let mut chosen = top.to_vec();
    let explore = rng.random::<f64>() < epsilon;
    if explore && !rest.is_empty() && k > 0 {
        let n = ((epsilon * k as f64).ceil() as usize).min(k).min(rest.len());
        let slots = index::sample(rng, k, n);
        let picks = index::sample(rng, rest.len(), n);
        for (slot, pick) in slots.iter().zip(picks.iter()) {
            chosen[slot] = rest[pick];
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(xs: &[ContentId]) -> BTreeSet<ContentId> {
        xs.iter().copied().collect()
    }

    fn single<'a>(local: &'a BTreeSet<ContentId>, delta: f64) -> RewardInputs<'a> {
        RewardInputs {
            served_local: Signal {
                served: local,
                delta,
            },
            served_ferry: vec![None],
            served_global: vec![None],
            mf_present: false,
            self_anchor: 0,
        }
    }

    #[test]
    fn local_reward_examples() {
        let s = set(&[1]);
        assert_eq!(reward_local(1, &single(&s, 0.1)), 1.0);
        assert_eq!(reward_local(2, &single(&s, -0.1)), -1.0);
        assert_eq!(reward_local(1, &single(&s, -0.1)), 0.0);
    }

    fn multi<'a>(
        local: &'a BTreeSet<ContentId>,
        remote: Vec<Option<Signal<'a>>>,
    ) -> RewardInputs<'a> {
        RewardInputs {
            served_local: Signal {
                served: local,
                delta: 0.0,
            },
            served_ferry: remote.clone(),
            served_global: remote,
            mf_present: true,
            self_anchor: 0,
        }
    }

    #[test]
    fn ferry_reward_examples() {
        let with = set(&[7]);
        let without = set(&[]);
        let up = |s| Some(Signal { served: s, delta: 0.2 });
        let down = |s| Some(Signal { served: s, delta: -0.2 });

        let all = multi(&without, vec![None, up(&with), up(&with), up(&with)]);
        assert_eq!(reward_ferry(7, &all), 1.0);

        let none = multi(&without, vec![None, down(&without), down(&without), down(&without)]);
        assert_eq!(reward_ferry(7, &none), -1.0);

        let half = multi(&without, vec![None, up(&with), up(&without)]);
        assert_abs_diff_eq!(reward_ferry(7, &half), 0.5);

        let alone = multi(&without, vec![None]);
        assert_eq!(reward_ferry(7, &alone), 0.0);
    }

    #[test]
    fn global_reward_examples() {
        let with = set(&[3]);
        let without = set(&[]);
        let up = |s| Some(Signal { served: s, delta: 0.0 });
        let down = |s| Some(Signal { served: s, delta: -1.0 });

        let all = multi(&without, vec![up(&with); 4]);
        assert_eq!(reward_global(3, &all), 1.0);

        let zero = multi(&without, vec![up(&without); 4]);
        assert_eq!(reward_global(3, &zero), 0.0);

        let mixed = multi(&without, vec![up(&with), up(&with), down(&without), up(&without)]);
        assert_abs_diff_eq!(reward_global(3, &mixed), 0.25);
    }

    fn agent(c: usize, k: usize, lr: f64) -> AgentState {
        AgentState::new(
            c,
            k,
            AgentParams {
                learn_rate: lr,
                ..AgentParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn q_update_examples() {
        let s = set(&[0]);
        let mut a = agent(2, 1, 1.0);
        a.params.learn_rate = 0.0;
        a.q[0] = 0.7;
        assert_eq!(a.q_update(0, &single(&s, 1.0)), 0.7);

        let mut a = agent(2, 1, 1.0);
        a.q[0] = 0.7;
        assert_eq!(a.q_update(0, &single(&s, 1.0)), 1.0);

        let mut a = agent(2, 1, 0.5);
        a.q[0] = 0.4;
        let up = Signal { served: &s, delta: 1.0 };
        let inputs = RewardInputs {
            served_local: up,
            served_ferry: vec![None, Some(up)],
            served_global: vec![Some(up), Some(up)],
            mf_present: true,
            self_anchor: 0,
        };
        assert_abs_diff_eq!(a.q_update(0, &inputs), 1.7, epsilon = 1e-12);
    }

    #[test]
    fn ucb_examples() {
        let mut a = agent(3, 1, 0.5);
        a.q = vec![0.5, 0.25, 0.0];
        a.pull_count = vec![2, 1, 0];
        a.epoch = 1;
        let u = a.ucb_scores();
        assert_eq!(u[1], 0.25);
        assert_eq!(u[2], f64::INFINITY);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(ucb(0.5, e, 2, 2.0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores = [0.1, 0.9, 0.5, 0.7];
        assert_eq!(select_cache_set(&scores, 2, 0.0, &mut rng).unwrap(), vec![1, 3]);
        let mut all = select_cache_set(&scores, 4, 0.5, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        let tie = [0.9, 0.5, 0.5, 0.1];
        assert_eq!(select_cache_set(&tie, 2, 0.0, &mut rng).unwrap(), vec![0, 1]);
        assert!(matches!(
            select_cache_set(&scores, 5, 0.0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn exploration_replaces_ceil_epsilon_k_slots() {
        let scores: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut explored = 0;
        for _ in 0..200 {
            let got = select_cache_set(&scores, 5, 0.3, &mut rng).unwrap();
            assert_eq!(got.iter().collect::<BTreeSet<_>>().len(), 5);
            let outside = got.iter().filter(|&&c| c >= 5).count();
            assert!(outside == 0 || outside == 2);
            explored += usize::from(outside > 0);
        }
        assert!((40..=80).contains(&explored), "explored {explored}");
    }

    #[test]
    fn epsilon_schedule_decays_to_floor() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.at(0), 0.3);
        assert_abs_diff_eq!(e.at(1), 0.297, epsilon = 1e-12);
        assert_eq!(e.at(10_000), 0.01);
    }

    fn exhaustive_top_k(scores: &[f64], k: usize) -> Vec<ContentId> {
        // best subset under (sum of scores, then lexicographically smallest ids)
        let c = scores.len();
        let mut best: Option<(Vec<ContentId>, Vec<f64>)> = None;
        for mask in 0u32..(1 << c) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let ids: Vec<ContentId> = (0..c).filter(|b| mask & (1 << b) != 0).collect();
            let mut vals: Vec<f64> = ids.iter().map(|&i| scores[i]).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            let better = match &best {
                None => true,
                Some((bids, bvals)) => match vals
                    .iter()
                    .zip(bvals)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                {
                    Some(o) => o.is_gt(),
                    None => ids < *bids,
                },
            };
            if better {
                best = Some((ids, vals));
            }
        }
        best.map(|b| b.0).unwrap_or_default()
    }

    fn signal_strategy() -> impl Strategy<Value = (Vec<ContentId>, f64)> {
        (prop::collection::vec(0usize..8, 0..8), -1.0f64..1.0)
    }

    proptest! {
        #[test]
        fn top_k_matches_exhaustive(
            scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 1.0, 2.0]), 1..=12),
            k_frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let k = ((scores.len() as f64) * k_frac) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut got = select_cache_set(&scores, k, 0.0, &mut rng).unwrap();
            got.sort();
            prop_assert_eq!(got, exhaustive_top_k(&scores, k));
        }

        #[test]
        fn rewards_bounded(
            local in signal_strategy(),
            remotes in prop::collection::vec(prop::option::of(signal_strategy()), 1..5),
            i in 0usize..8,
        ) {
            let lset: BTreeSet<_> = local.0.iter().copied().collect();
            let rsets: Vec<Option<(BTreeSet<ContentId>, f64)>> = remotes
                .iter()
                .map(|r| r.as_ref().map(|(v, d)| (v.iter().copied().collect(), *d)))
                .collect();
            let signals: Vec<Option<Signal>> = rsets
                .iter()
                .map(|r| r.as_ref().map(|(s, d)| Signal { served: s, delta: *d }))
                .collect();
            let inputs = RewardInputs {
                served_local: Signal { served: &lset, delta: local.1 },
                served_ferry: signals.clone(),
                served_global: signals,
                mf_present: true,
                self_anchor: 0,
            };
            let rl = reward_local(i, &inputs);
            prop_assert!(rl == -1.0 || rl == 0.0 || rl == 1.0);
            for r in [reward_ferry(i, &inputs), reward_global(i, &inputs)] {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn q_stays_within_reward_bound(
            rewards in prop::collection::vec(-R_MAX..=R_MAX, 1..200),
            lr in 0.01f64..=1.0,
        ) {
            let mut q = 0.0f64;
            for r in rewards {
                q = (1.0 - lr) * q + lr * r;
                prop_assert!(q.abs() <= R_MAX + 1e-12);
            }
        }

        #[test]
        fn q_converges_to_constant_reward(lr in 0.05f64..=1.0, q0 in -3.0f64..3.0, n in 1usize..60) {
            let served = set(&[0]);
            let mut a = agent(1, 1, lr);
            a.q[0] = q0;
            let inputs = single(&served, 0.5);
            for _ in 0..n {
                a.q_update(0, &inputs);
            }
            let bound = (1.0 - lr).powi(n as i32) * (q0 - 1.0).abs() + 1e-12;
            prop_assert!((a.q[0] - 1.0).abs() <= bound);
        }

        #[test]
        fn untried_arms_dominate(
            q in prop::collection::vec(-3.0f64..3.0, 4..12),
            pulls in prop::collection::vec(0u64..3, 4..12),
            epoch in 1u64..50,
        ) {
            let c = q.len().min(pulls.len());
            let mut a = agent(c, 1, 0.5);
            a.q = q[..c].to_vec();
            a.pull_count = pulls[..c].to_vec();
            a.epoch = epoch;
            let untried = a.pull_count.iter().filter(|&&m| m == 0).count();
            for k in 1..=c {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let got = select_cache_set(&a.ucb_scores(), k, 0.0, &mut rng).unwrap();
                let tried_selected = got.iter().any(|&i| a.pull_count[i] > 0);
                if tried_selected {
                    let untried_selected = got.iter().filter(|&&i| a.pull_count[i] == 0).count();
                    prop_assert_eq!(untried_selected, untried);
                }
                prop_assert_eq!(got.iter().collect::<BTreeSet<_>>().len(), k);
            }
        }
    }
}
