//! Discrete-event engine: communities issue requests, anchors cache and
//! learn, ferries circulate contents and knowledge on a round-robin route.

mod config;
mod event;
mod state;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{adjusted_times, DemandShift, Policy, SimConfig};
pub use event::{Event, EventKind, EventQueue};
pub use state::{AnchorSnapshot, Board, Outcome, Resolution, Tally};
use state::{AnchorState, FerryState, Pending, Signals, Window};

use crate::bandit::{AgentState, RewardInputs, Signal};
use crate::demand::{
    community_seed, derive_heterogeneous_profile, derive_rank_permutation, sample_request, Catalog,
    CommunityProfile, ContentId, Heterogeneity,
};
use crate::error::{Error, Result};
use crate::federation::{
    aggregate_q, contribution_factors, federated_update, latency_gate, omega1, omega2,
    GateDecision, LatencyCounter, PopularityEstimate,
};
use crate::ferry::{partition_rosters, refresh_ferry_cache, select_roster, RosterChoice};
use crate::metrics::{availability, cdo, EpochRecord};
use crate::oracle::{
    availability_upper_bound, benchmark_ferry_load, community_values, preload_anchor_caches,
    BoundBreakdown, SegmentedCachePlan, UpperBoundParams,
};
use crate::sort_by_score_desc;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn stream_seed(seed: u64, domain: u64, index: usize) -> u64 {
    community_seed(seed ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93), index)
}

const DEMAND_STREAM: u64 = 1;
const DECISION_STREAM: u64 = 2;
const SHIFT_STREAM: u64 = 3;
const CATALOG_STREAM: u64 = 4;

/// Seeded assignment of content ids to base popularity ranks, so that ids
/// carry no hint of popularity.
fn base_ranking(config: &SimConfig) -> Vec<ContentId> {
    let mut ranking: Vec<ContentId> = (0..config.catalog_size).collect();
    ranking.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(
        config.seed,
        CATALOG_STREAM,
        0,
    )));
    ranking
}

/// Demand model, benchmark plan and bounds currently in force.
#[derive(Debug, Clone)]
struct DemandState {
    base_ranking: Vec<ContentId>,
    profiles: Vec<CommunityProfile>,
    values: Vec<Vec<f64>>,
    benchmark_ranking: Vec<Vec<ContentId>>,
    plan: SegmentedCachePlan,
    bounds: Vec<BoundBreakdown>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<EpochRecord>,
    pub tallies: Vec<Tally>,
    pub bounds: Vec<BoundBreakdown>,
    pub trace_hash: u64,
    pub resolutions: Option<Vec<Resolution>>,
}

pub struct Simulation {
    config: SimConfig,
    hover: f64,
    leg: f64,
    group_phase: Vec<f64>,
    demand: DemandState,
    anchors: Vec<AnchorState>,
    ferries: Vec<FerryState>,
    queue: EventQueue,
    clock: f64,
    demand_rngs: Vec<ChaCha8Rng>,
    next_request: u64,
    tallies: Vec<Tally>,
    records: Vec<EpochRecord>,
    trace_hash: u64,
    resolutions: Option<Vec<Resolution>>,
    finished: bool,
}

fn build_demand(config: &SimConfig, base_ranking: Vec<ContentId>, alpha: f64) -> Result<DemandState> {
    let catalog = Catalog::new(config.catalog_size, alpha)?;
    let profiles: Vec<CommunityProfile> = (0..config.n_anchor)
        .map(|n| {
            derive_heterogeneous_profile(
                &catalog,
                &base_ranking,
                n,
                config.heterogeneity,
                config.tad_rule(),
                config.request_rate,
                config.seed,
            )
        })
        .collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| community_values(p, config.kappa))
        .collect::<Result<_>>()?;
    let benchmark_ranking = values
        .iter()
        .map(|v| {
            let mut ids: Vec<ContentId> = (0..v.len()).collect();
            sort_by_score_desc(&mut ids, |c| v[c]);
            ids.truncate(config.anchor_capacity);
            ids
        })
        .collect();
    let plan = preload_anchor_caches(&values, config.lambda, config.anchor_capacity, config.segment2)?;
    let (hover, transit) = config.adjusted_times()?;
    let bounds = profiles
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let params = UpperBoundParams {
                n_anchor: config.n_anchor,
                n_ferry: config.n_ferry,
                ferry_group_size: config.ferry_group_size,
                hover_ratio: hover / config.trajectory_period,
                transit_ratio: transit.max(f64::MIN_POSITIVE) / config.trajectory_period,
                cycle_time: config.trajectory_period,
                mean_tad: p.tad_rule.mean_tad(p.popularity()),
            };
            availability_upper_bound(&plan, &values[n], &params, n, config.ferry_capacity)
        })
        .collect::<Result<_>>()?;
    Ok(DemandState {
        base_ranking,
        profiles,
        values,
        benchmark_ranking,
        plan,
        bounds,
    })
}

/// Analytical bound of every community for a configuration.
pub fn availability_bounds(config: &SimConfig) -> Result<Vec<BoundBreakdown>> {
    config.validate()?;
    Ok(build_demand(config, base_ranking(config), config.zipf_alpha)?.bounds)
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let (hover, transit) = config.adjusted_times()?;
        let leg = hover + transit;
        let cycle = leg * config.n_anchor as f64;
        let groups = config.n_groups();
        let group_phase: Vec<f64> = (0..groups).map(|g| g as f64 * cycle / groups as f64).collect();
        let demand = build_demand(&config, base_ranking(&config), config.zipf_alpha)?;

        let mut anchors = Vec::with_capacity(config.n_anchor);
        for n in 0..config.n_anchor {
            let mut agent = AgentState::new(config.catalog_size, config.anchor_capacity, config.agent)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, DECISION_STREAM, n));
            let initial: Vec<ContentId> = if config.policy.learns() {
                index::sample(&mut rng, config.catalog_size, config.anchor_capacity).into_vec()
            } else {
                demand.plan.anchors[n].cache().into_iter().collect()
            };
            agent.record_cached(&initial);
            let mut a = AnchorState {
                cache: BTreeSet::new(),
                in_cache: vec![false; config.catalog_size],
                agent,
                estimate: PopularityEstimate::new(config.catalog_size),
                latency: LatencyCounter::default(),
                popularity_at_last_federation: None,
                pending: BTreeMap::new(),
                docked: Vec::new(),
                board: Board::new(config.n_anchor),
                signals: Signals::default(),
                previous_availability: None,
                windows: VecDeque::from([Window {
                    epoch: 1,
                    ..Window::default()
                }]),
                epoch: 1,
                tick_pending_at: None,
                rosters: Default::default(),
                rng,
            };
            a.set_cache(initial);
            anchors.push(a);
        }

        let demand_rngs = (0..config.n_anchor)
            .map(|n| ChaCha8Rng::seed_from_u64(stream_seed(config.seed, DEMAND_STREAM, n)))
            .collect();
        let ferries = (0..config.n_ferry)
            .map(|f| FerryState {
                group: f / config.ferry_group_size,
                cache: Vec::new(),
                roster_index: None,
                leg: 0,
                docked: None,
                board: Board::new(config.n_anchor),
            })
            .collect();

        let mut sim = Self {
            tallies: vec![Tally::default(); config.n_anchor],
            config,
            hover,
            leg,
            group_phase,
            demand,
            anchors,
            ferries,
            queue: EventQueue::default(),
            clock: 0.0,
            demand_rngs,
            next_request: 0,
            records: Vec::new(),
            trace_hash: FNV_OFFSET,
            resolutions: None,
            finished: false,
        };
        for n in 0..sim.config.n_anchor {
            sim.publish_snapshot(n, (0.0, 0.0, 0.0));
        }
        sim.place_ferries()?;
        for n in 0..sim.config.n_anchor {
            sim.schedule_next_request(n, 0.0);
        }
        if let Some(shift) = sim.config.demand_shift {
            if shift.time < sim.config.duration {
                sim.queue.push(shift.time, EventKind::DemandShift, 0);
            }
        }
        Ok(sim)
    }

    /// Records every request resolution for inspection after the run.
    pub fn with_trace(mut self) -> Self {
        self.resolutions = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tallies(&self) -> &[Tally] {
        &self.tallies
    }

    pub fn bounds(&self) -> &[BoundBreakdown] {
        &self.demand.bounds
    }

    pub fn plan(&self) -> &SegmentedCachePlan {
        &self.demand.plan
    }

    pub fn values(&self, community: usize) -> &[f64] {
        &self.demand.values[community]
    }

    pub fn profile(&self, community: usize) -> &CommunityProfile {
        &self.demand.profiles[community]
    }

    pub fn anchor_cache(&self, anchor: usize) -> &BTreeSet<ContentId> {
        &self.anchors[anchor].cache
    }

    pub fn anchor_q(&self, anchor: usize) -> &[f64] {
        &self.anchors[anchor].agent.q
    }

    pub fn agent(&self, anchor: usize) -> &AgentState {
        &self.anchors[anchor].agent
    }

    pub fn ferry_cache(&self, ferry: usize) -> &[ContentId] {
        &self.ferries[ferry].cache
    }

    pub fn ferry_docked(&self, ferry: usize) -> Option<usize> {
        self.ferries[ferry].docked
    }

    pub fn ferry_roster(&self, ferry: usize) -> Option<usize> {
        self.ferries[ferry].roster_index
    }

    pub fn ferry_group(&self, ferry: usize) -> usize {
        self.ferries[ferry].group
    }

    pub fn pending_count(&self, community: usize) -> usize {
        self.anchors[community].pending.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn trace_hash(&self) -> u64 {
        self.trace_hash
    }

    /// Hover and leg durations after radio-overlap adjustment.
    pub fn timing(&self) -> (f64, f64) {
        (self.hover, self.leg)
    }

    fn arrival_time(&self, group: usize, leg: u64) -> f64 {
        leg as f64 * self.leg - self.group_phase[group]
    }

    fn place_ferries(&mut self) -> Result<()> {
        let na = self.config.n_anchor as u64;
        for f in 0..self.config.n_ferry {
            let g = self.ferries[f].group;
            let phase = self.group_phase[g];
            let k0 = (phase / self.leg).floor() as u64;
            let offset = phase - k0 as f64 * self.leg;
            if offset < self.hover {
                let anchor = (k0 % na) as usize;
                self.ferries[f].leg = k0;
                self.load_ferry(f, (anchor + na as usize - 1) % na as usize, anchor)?;
                self.dock(f, anchor);
                let t = self.arrival_time(g, k0) + self.hover;
                self.queue.push(t, EventKind::FerryDeparture, f as u64);
            } else {
                let from = (k0 % na) as usize;
                let to = ((k0 + 1) % na) as usize;
                self.ferries[f].leg = k0 + 1;
                self.load_ferry(f, from, to)?;
                let t = self.arrival_time(g, k0 + 1);
                self.queue.push(t, EventKind::FerryArrival, f as u64);
            }
        }
        Ok(())
    }

    fn dock(&mut self, f: usize, anchor: usize) {
        self.ferries[f].docked = Some(anchor);
        self.anchors[anchor].docked.push(f);
        let ferry_board = self.ferries[f].board.clone();
        self.anchors[anchor].board.merge_from(&ferry_board);
        let anchor_board = self.anchors[anchor].board.clone();
        self.ferries[f].board.merge_from(&anchor_board);
    }

    fn schedule_next_request(&mut self, n: usize, now: f64) {
        let gap = self.demand.profiles[n].sample_gap(&mut self.demand_rngs[n]);
        let t = now + gap;
        if t < self.config.duration {
            self.queue.push(t, EventKind::RequestArrival, n as u64);
        }
    }

    /// Processes the next event. Returns `None` once the run is complete.
    pub fn step(&mut self) -> Result<Option<Event>> {
        if self.finished {
            return Ok(None);
        }
        let drained = self.tallies.iter().all(|t| t.pending == 0);
        let next = self.queue.peek_time();
        if drained && next.is_none_or(|t| t >= self.config.duration) {
            self.finish();
            return Ok(None);
        }
        let ev = self
            .queue
            .pop()
            .ok_or_else(|| Error::Invariant("event queue ran dry".into()))?;
        if ev.time < self.clock {
            return Err(Error::Invariant(format!(
                "clock regressed from {} to {}",
                self.clock, ev.time
            )));
        }
        self.clock = ev.time;
        self.trace_hash = fnv1a(self.trace_hash, &ev.time.to_bits().to_le_bytes());
        self.trace_hash = fnv1a(self.trace_hash, &[ev.kind.code()]);
        self.trace_hash = fnv1a(self.trace_hash, &ev.entity.to_le_bytes());
        match ev.kind {
            EventKind::RequestArrival => self.on_request(ev.entity as usize)?,
            EventKind::RequestExpiry => self.on_expiry(ev.entity)?,
            EventKind::FerryArrival => self.on_ferry_arrival(ev.entity as usize)?,
            EventKind::FerryDeparture => self.on_ferry_departure(ev.entity as usize)?,
            EventKind::EpochTick => self.on_epoch_tick(ev.entity as usize)?,
            EventKind::DemandShift => self.on_demand_shift()?,
        }
        self.check_conservation()?;
        Ok(Some(ev))
    }

    pub fn run(mut self) -> Result<SimOutput> {
        while self.step()?.is_some() {}
        Ok(self.into_output())
    }

    pub fn into_output(mut self) -> SimOutput {
        self.finish();
        self.records
            .sort_by(|a, b| a.epoch.cmp(&b.epoch).then(a.community.cmp(&b.community)));
        SimOutput {
            records: self.records,
            tallies: self.tallies,
            bounds: self.demand.bounds,
            trace_hash: self.trace_hash,
            resolutions: self.resolutions,
        }
    }

    pub fn check_conservation(&self) -> Result<()> {
        for (n, t) in self.tallies.iter().enumerate() {
            if t.hits + t.downloads + t.pending != t.requests
                || t.pending != self.anchors[n].pending.len() as u64
            {
                return Err(Error::Invariant(format!(
                    "conservation broken at community {n}: {t:?}"
                )));
            }
        }
        Ok(())
    }

    fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let end = self.config.duration;
        for n in 0..self.config.n_anchor {
            let cdo = self.current_cdo(n);
            let bound = self.demand.bounds[n].bound;
            let a = &mut self.anchors[n];
            let w = a.current_window();
            if w.closed.is_none() {
                if w.requests == 0 {
                    a.windows.pop_back();
                } else {
                    w.closed = Some((end, cdo, bound));
                }
            }
            self.finalize_windows(n);
        }
    }

    fn on_request(&mut self, n: usize) -> Result<()> {
        let now = self.clock;
        let (req, next) =
            sample_request(&self.demand.profiles[n], now, &mut self.demand_rngs[n]);
        if next < self.config.duration {
            self.queue.push(next, EventKind::RequestArrival, n as u64);
        }
        let id = self.next_request;
        self.next_request += 1;
        let c = req.content_id;
        self.tallies[n].requests += 1;
        let anchor = &mut self.anchors[n];
        anchor.estimate.observe(c);
        anchor.signals.requests += 1;
        let window = {
            let w = anchor.current_window();
            w.requests += 1;
            w.epoch
        };
        let outcome = if anchor.in_cache[c] {
            Some(Outcome::Local)
        } else if anchor
            .docked
            .iter()
            .any(|&f| self.ferries[f].cache.contains(&c))
        {
            Some(Outcome::Ferry)
        } else {
            None
        };
        let pending = Pending {
            content: c,
            issue_time: now,
            tad: req.tad,
            window,
        };
        match outcome {
            Some(o) => self.record_hit(n, id, pending, o),
            None => {
                self.tallies[n].pending += 1;
                self.anchors[n].current_window().pending += 1;
                self.anchors[n].pending.insert(id, pending);
                self.queue.push(now + req.tad, EventKind::RequestExpiry, id);
                Ok(())
            }
        }
    }

    fn record_hit(&mut self, n: usize, id: u64, p: Pending, outcome: Outcome) -> Result<()> {
        let now = self.clock;
        let delay = now - p.issue_time;
        if delay > p.tad {
            return Err(Error::Invariant(format!(
                "request {id} served after {delay}s with a tolerance of {}s",
                p.tad
            )));
        }
        let t = &mut self.tallies[n];
        t.hits += 1;
        let anchor = &mut self.anchors[n];
        match outcome {
            Outcome::Local => {
                t.local_hits += 1;
                anchor.signals.local_hits += 1;
                anchor.signals.served_local.insert(p.content);
            }
            Outcome::Ferry => {
                t.ferry_hits += 1;
                anchor.signals.ferry_hits += 1;
                anchor.signals.served_ferry.insert(p.content);
            }
            Outcome::Download => unreachable!("downloads are not hits"),
        }
        let w = anchor.window_mut(p.window);
        w.hits += 1;
        w.delay_sum += delay;
        self.trace(n, id, &p, outcome);
        Ok(())
    }

    fn trace(&mut self, n: usize, id: u64, p: &Pending, outcome: Outcome) {
        if let Some(r) = self.resolutions.as_mut() {
            r.push(Resolution {
                request: id,
                community: n,
                content: p.content,
                issue_time: p.issue_time,
                resolve_time: self.clock,
                tad: p.tad,
                outcome,
            });
        }
    }

    fn on_expiry(&mut self, id: u64) -> Result<()> {
        let Some(n) = (0..self.config.n_anchor).find(|&n| self.anchors[n].pending.contains_key(&id))
        else {
            return Ok(());
        };
        let p = self.anchors[n].pending.remove(&id).expect("found above");
        self.tallies[n].pending -= 1;
        self.tallies[n].downloads += 1;
        let w = self.anchors[n].window_mut(p.window);
        w.pending -= 1;
        w.downloads += 1;
        w.delay_sum += p.tad;
        self.trace(n, id, &p, Outcome::Download);
        self.finalize_windows(n);
        Ok(())
    }

    fn on_ferry_arrival(&mut self, f: usize) -> Result<()> {
        let now = self.clock;
        let na = self.config.n_anchor as u64;
        let leg = self.ferries[f].leg;
        let anchor = (leg % na) as usize;
        self.dock(f, anchor);

        let aboard = &self.ferries[f].cache;
        let served: Vec<(u64, Pending)> = self.anchors[anchor]
            .pending
            .iter()
            .filter(|(_, p)| aboard.contains(&p.content))
            .map(|(&id, &p)| (id, p))
            .collect();
        for (id, p) in served {
            self.anchors[anchor].pending.remove(&id);
            self.tallies[anchor].pending -= 1;
            self.anchors[anchor].window_mut(p.window).pending -= 1;
            self.record_hit(anchor, id, p, Outcome::Ferry)?;
        }
        self.finalize_windows(anchor);

        if now < self.config.duration && self.anchors[anchor].tick_pending_at != Some(now) {
            self.anchors[anchor].tick_pending_at = Some(now);
            self.queue.push(now, EventKind::EpochTick, anchor as u64);
        }
        let g = self.ferries[f].group;
        let depart = self.arrival_time(g, leg) + self.hover;
        self.queue.push(depart, EventKind::FerryDeparture, f as u64);
        Ok(())
    }

    fn on_ferry_departure(&mut self, f: usize) -> Result<()> {
        let na = self.config.n_anchor;
        let from = self.ferries[f]
            .docked
            .ok_or_else(|| Error::Invariant(format!("ferry {f} departed while in transit")))?;
        self.anchors[from].docked.retain(|&x| x != f);
        self.ferries[f].docked = None;
        let to = (from + 1) % na;
        self.load_ferry(f, from, to)?;
        self.ferries[f].leg += 1;
        let t = self.arrival_time(self.ferries[f].group, self.ferries[f].leg);
        self.queue.push(t, EventKind::FerryArrival, f as u64);
        Ok(())
    }

    /// Fills ferry `f` at anchor `from` for its visit to anchor `to`.
    fn load_ferry(&mut self, f: usize, from: usize, to: usize) -> Result<()> {
        let anchor_board = self.anchors[from].board.clone();
        self.ferries[f].board.merge_from(&anchor_board);
        let cap = self.config.ferry_capacity;
        let policy = self.config.policy;

        if !policy.learns() {
            self.ferries[f].cache =
                benchmark_ferry_load(&self.demand.plan, &self.demand.values[to], cap, to);
            self.ferries[f].roster_index = Some(0);
            return Ok(());
        }

        let known_next: BTreeSet<ContentId> = self.ferries[f]
            .board
            .get(to)
            .map(|s| (*s.cache).clone())
            .unwrap_or_default();
        let a = &self.anchors[from];
        let q = a.agent.q.clone();
        let q = &q;
        let eligible: Vec<ContentId> =
            a.cache.iter().copied().filter(|c| !known_next.contains(c)).collect();
        let plan = partition_rosters(&eligible, q, cap)?;
        if plan.is_empty() {
            self.ferries[f].cache = Vec::new();
            self.ferries[f].roster_index = None;
            return Ok(());
        }
        if !policy.selective() {
            self.ferries[f].cache = plan.get(0).to_vec();
            self.ferries[f].roster_index = Some(0);
            return Ok(());
        }

        let group = self.ferries[f].group;
        let leg = self.ferries[f].leg;
        let memory = &mut self.anchors[from].rosters;
        let same_group = matches!(&memory.current, Some((g, l, _)) if *g == group && *l == leg);
        if !same_group {
            if let Some((_, _, claims)) = memory.current.take() {
                memory.previous = claims.first().copied();
            }
            memory.current = Some((group, leg, Vec::new()));
        }
        let previous = memory.previous;
        let claimed = memory.current.as_ref().map(|c| c.2.clone()).unwrap_or_default();

        let a = &self.anchors[from];
        let (interval, tad) = match previous {
            Some(prev) => {
                let roster = plan.get(prev % plan.len());
                let dist = a.estimate.as_distribution();
                let least = *roster
                    .iter()
                    .min_by(|&&x, &&y| dist[x].total_cmp(&dist[y]).then(y.cmp(&x)))
                    .expect("rosters are nonempty");
                let rate = self.config.request_rate * dist[least];
                (1.0 / rate, self.demand.profiles[from].tad_rule.tad(least))
            }
            None => (f64::INFINITY, 0.0),
        };
        let revisit = self.leg * self.config.n_anchor as f64 / self.config.n_groups() as f64;
        let r = select_roster(
            &plan,
            &RosterChoice {
                previous,
                least_popular_interval: interval,
                tad,
                revisit_interval: revisit,
                claimed: &claimed,
            },
        )?;
        let candidates: Vec<ContentId> = a.cache.iter().copied().collect();
        let cache = refresh_ferry_cache(plan.get(r), &known_next, q, &candidates);
        if let Some((_, _, claims)) = self.anchors[from].rosters.current.as_mut() {
            claims.push(r);
        }
        if cache.len() > cap {
            return Err(Error::Invariant(format!("ferry {f} overfilled")));
        }
        self.ferries[f].cache = cache;
        self.ferries[f].roster_index = Some(r);
        Ok(())
    }

    fn current_cdo(&self, n: usize) -> f64 {
        let a = &self.anchors[n];
        let mut learned: Vec<ContentId> = a.cache.iter().copied().collect();
        if self.config.policy.learns() {
            sort_by_score_desc(&mut learned, |c| a.agent.q[c]);
        } else {
            let v = &self.demand.values[n];
            sort_by_score_desc(&mut learned, |c| v[c]);
        }
        cdo(&learned, &self.demand.benchmark_ranking[n]).unwrap_or(0.0)
    }

    fn on_epoch_tick(&mut self, n: usize) -> Result<()> {
        let now = self.clock;
        self.anchors[n].tick_pending_at = None;
        if now >= self.config.duration {
            return Ok(());
        }
        let avail = self.anchors[n].signals.availabilities();
        let prev = self.anchors[n].previous_availability.unwrap_or(avail);
        let deltas = (avail.0 - prev.0, avail.1 - prev.1, avail.2 - prev.2);

        if self.config.policy.learns() {
            self.learn(n, deltas)?;
        }

        let cdo = self.current_cdo(n);
        let bound = self.demand.bounds[n].bound;
        let a = &mut self.anchors[n];
        a.current_window().closed = Some((now, cdo, bound));
        a.epoch += 1;
        let epoch = a.epoch;
        a.windows.push_back(Window {
            epoch,
            ..Window::default()
        });
        self.publish_snapshot(n, deltas);
        let a = &mut self.anchors[n];
        a.signals = Signals::default();
        a.previous_availability = Some(avail);
        self.finalize_windows(n);
        Ok(())
    }

    fn learn(&mut self, n: usize, deltas: (f64, f64, f64)) -> Result<()> {
        let na = self.config.n_anchor;
        let a = &mut self.anchors[n];
        let served_global: BTreeSet<ContentId> = a
            .signals
            .served_local
            .union(&a.signals.served_ferry)
            .copied()
            .collect();
        let board = a.board.clone();
        {
            let inputs = RewardInputs {
                served_local: Signal {
                    served: &a.signals.served_local,
                    delta: deltas.0,
                },
                served_ferry: (0..na)
                    .map(|j| {
                        board.get(j).filter(|_| j != n).map(|s| Signal {
                            served: &s.served_ferry,
                            delta: s.delta_ferry,
                        })
                    })
                    .collect(),
                served_global: (0..na)
                    .map(|j| {
                        if j == n {
                            Some(Signal {
                                served: &served_global,
                                delta: deltas.2,
                            })
                        } else {
                            board.get(j).map(|s| Signal {
                                served: &s.served_global,
                                delta: s.delta_global,
                            })
                        }
                    })
                    .collect(),
                mf_present: true,
                self_anchor: n,
            };
            a.agent.learn(&inputs);
        }

        if self.config.policy.federated()
            && latency_gate(&mut a.latency, self.config.federation.latency_threshold)
                == GateDecision::FederateAndReset
        {
            let fed = self.config.federation;
            let own_pop = a.estimate.as_distribution();
            let mut members: Vec<(Vec<f64>, Arc<Vec<f64>>)> = Vec::new();
            let mut self_index = 0;
            for j in 0..na {
                if j == n {
                    self_index = members.len();
                    members.push((own_pop.clone(), Arc::new(a.agent.q.clone())));
                } else if let Some(s) = board.get(j) {
                    members.push(((*s.popularity).clone(), Arc::clone(&s.q)));
                }
            }
            let estimates: Vec<Vec<f64>> = members.iter().map(|m| m.0.clone()).collect();
            let factors = contribution_factors(self_index, &estimates, fed.rho_rule)?;
            let tables: Vec<&[f64]> = members.iter().map(|m| m.1.as_slice()).collect();
            let agg = aggregate_q(&factors, &tables)?;
            let prev_pop = a.popularity_at_last_federation.as_ref().unwrap_or(&own_pop);
            let w1 = omega1(&own_pop, prev_pop, fed.omega1_mode)?;
            let t = a.agent.epoch;
            let w2: Vec<f64> = a.agent.q.iter().map(|&q| omega2(t, q, &fed)).collect();
            a.agent.q = federated_update(&a.agent.q, &agg, w1, &w2)?;
            a.popularity_at_last_federation = Some(own_pop);
        }

        let cache = if self.config.policy == Policy::Random {
            let c = index::sample(&mut a.rng, self.config.catalog_size, self.config.anchor_capacity)
                .into_vec();
            a.agent.record_cached(&c);
            c
        } else {
            a.agent.choose_cache(&mut a.rng)?
        };
        a.set_cache(cache);
        if a.cache.len() != self.config.anchor_capacity {
            return Err(Error::Invariant(format!(
                "anchor {n} holds {} contents instead of {}",
                a.cache.len(),
                self.config.anchor_capacity
            )));
        }
        Ok(())
    }

    fn publish_snapshot(&mut self, n: usize, deltas: (f64, f64, f64)) {
        let a = &mut self.anchors[n];
        let served_global: BTreeSet<ContentId> = a
            .signals
            .served_local
            .union(&a.signals.served_ferry)
            .copied()
            .collect();
        let snap = AnchorSnapshot {
            anchor: n,
            time: self.clock,
            epoch: a.epoch,
            cache: Arc::new(a.cache.clone()),
            q: Arc::new(a.agent.q.clone()),
            popularity: Arc::new(a.estimate.as_distribution()),
            served_local: Arc::new(a.signals.served_local.clone()),
            served_ferry: Arc::new(a.signals.served_ferry.clone()),
            served_global: Arc::new(served_global),
            delta_local: deltas.0,
            delta_ferry: deltas.1,
            delta_global: deltas.2,
        };
        a.board.put(Arc::new(snap));
    }

    fn on_demand_shift(&mut self) -> Result<()> {
        let shift = self
            .config
            .demand_shift
            .ok_or_else(|| Error::Invariant("unexpected demand shift".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, SHIFT_STREAM, 0));
        let full = Heterogeneity {
            swap_probability: 1.0,
            min_distance: 0.0,
        };
        let mut ranking = self.demand.base_ranking.clone();
        for _ in 0..shift.passes {
            ranking = derive_rank_permutation(&ranking, full, &mut rng)?;
        }
        let alpha = shift.alpha.unwrap_or(self.config.zipf_alpha);
        self.demand = build_demand(&self.config, ranking, alpha)?;
        if !self.config.policy.learns() {
            for n in 0..self.config.n_anchor {
                let cache = self.demand.plan.anchors[n].cache();
                self.anchors[n].set_cache(cache);
            }
        }
        Ok(())
    }

    fn finalize_windows(&mut self, n: usize) {
        let a = &mut self.anchors[n];
        while let Some(w) = a.windows.front() {
            let Some((time, cdo_value, bound)) = w.closed else {
                break;
            };
            if w.pending > 0 {
                break;
            }
            let w = a.windows.pop_front().expect("front exists");
            let avail = availability(w.hits, w.requests).unwrap_or(0.0);
            let resolved = w.hits + w.downloads;
            self.records.push(EpochRecord {
                epoch: w.epoch,
                time,
                community: n,
                hits: w.hits,
                requests: w.requests,
                availability: avail,
                relative_availability: if bound > 0.0 { avail / bound } else { 0.0 },
                mean_access_delay: if resolved > 0 {
                    w.delay_sum / resolved as f64
                } else {
                    0.0
                },
                downloads: w.downloads,
                cdo: cdo_value,
            });
            if a.windows.is_empty() {
                break;
            }
        }
    }
}

/// Runs one configuration to completion.
pub fn run_simulation(config: SimConfig) -> Result<SimOutput> {
    Simulation::new(config)?.run()
}
