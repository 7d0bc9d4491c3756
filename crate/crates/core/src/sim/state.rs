use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::bandit::AgentState;
use crate::demand::ContentId;
use crate::federation::{LatencyCounter, PopularityEstimate};

/// What one anchor published about itself at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSnapshot {
    pub anchor: usize,
    pub time: f64,
    pub epoch: u64,
    pub cache: Arc<BTreeSet<ContentId>>,
    pub q: Arc<Vec<f64>>,
    pub popularity: Arc<Vec<f64>>,
    pub served_local: Arc<BTreeSet<ContentId>>,
    pub served_ferry: Arc<BTreeSet<ContentId>>,
    pub served_global: Arc<BTreeSet<ContentId>>,
    pub delta_local: f64,
    pub delta_ferry: f64,
    pub delta_global: f64,
}

impl AnchorSnapshot {
    fn newer_than(&self, other: &AnchorSnapshot) -> bool {
        (self.time, self.epoch) > (other.time, other.epoch)
    }
}

/// Latest known snapshot of every anchor, as carried by anchors and ferries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Board {
    entries: Vec<Option<Arc<AnchorSnapshot>>>,
}

impl Board {
    pub fn new(n_anchor: usize) -> Self {
        Self {
            entries: vec![None; n_anchor],
        }
    }

    pub fn get(&self, anchor: usize) -> Option<&AnchorSnapshot> {
        self.entries[anchor].as_deref()
    }

    pub fn put(&mut self, snap: Arc<AnchorSnapshot>) {
        let slot = &mut self.entries[snap.anchor];
        if slot.as_ref().is_none_or(|old| snap.newer_than(old)) {
            *slot = Some(snap);
        }
    }

    pub fn merge_from(&mut self, other: &Board) {
        for s in other.entries.iter().flatten() {
            self.put(Arc::clone(s));
        }
    }
}

/// Outcome counters of one community.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub requests: u64,
    pub hits: u64,
    pub local_hits: u64,
    pub ferry_hits: u64,
    pub downloads: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pending {
    pub content: ContentId,
    pub issue_time: f64,
    pub tad: f64,
    pub window: u64,
}

/// Outcomes of requests issued between two epoch ticks of one anchor.
#[derive(Debug, Clone, Default)]
pub(crate) struct Window {
    pub epoch: u64,
    pub requests: u64,
    pub hits: u64,
    pub downloads: u64,
    pub delay_sum: f64,
    pub pending: u64,
    /// Close time, CDO and availability bound when the window closed.
    pub closed: Option<(f64, f64, f64)>,
}

/// Event-time service signals accumulated since the last epoch tick.
#[derive(Debug, Clone, Default)]
pub(crate) struct Signals {
    pub requests: u64,
    pub local_hits: u64,
    pub ferry_hits: u64,
    pub served_local: BTreeSet<ContentId>,
    pub served_ferry: BTreeSet<ContentId>,
}

impl Signals {
    /// Local, ferry and overall availability over the epoch.
    pub fn availabilities(&self) -> (f64, f64, f64) {
        if self.requests == 0 {
            return (0.0, 0.0, 0.0);
        }
        let r = self.requests as f64;
        let l = self.local_hits as f64 / r;
        let f = self.ferry_hits as f64 / r;
        (l, f, l + f)
    }
}

/// Rosters chosen by the ferries leaving one anchor.
#[derive(Debug, Clone, Default)]
pub(crate) struct RosterMemory {
    /// Roster taken by the lead ferry of the previous departing group.
    pub previous: Option<usize>,
    /// `(group, leg, claimed rosters)` of the group currently departing.
    pub current: Option<(usize, u64, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct AnchorState {
    pub cache: BTreeSet<ContentId>,
    pub in_cache: Vec<bool>,
    pub agent: AgentState,
    pub estimate: PopularityEstimate,
    pub latency: LatencyCounter,
    pub popularity_at_last_federation: Option<Vec<f64>>,
    pub pending: BTreeMap<u64, Pending>,
    pub docked: Vec<usize>,
    pub board: Board,
    pub signals: Signals,
    pub previous_availability: Option<(f64, f64, f64)>,
    pub windows: VecDeque<Window>,
    pub epoch: u64,
    pub tick_pending_at: Option<f64>,
    pub rosters: RosterMemory,
    pub rng: ChaCha8Rng,
}

impl AnchorState {
    pub fn set_cache(&mut self, cache: impl IntoIterator<Item = ContentId>) {
        for &c in &self.cache {
            self.in_cache[c] = false;
        }
        self.cache = cache.into_iter().collect();
        for &c in &self.cache {
            self.in_cache[c] = true;
        }
    }

    pub fn current_window(&mut self) -> &mut Window {
        self.windows.back_mut().expect("an open window always exists")
    }

    pub fn window_mut(&mut self, epoch: u64) -> &mut Window {
        let front = self.windows.front().expect("window present").epoch;
        &mut self.windows[(epoch - front) as usize]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FerryState {
    pub group: usize,
    pub cache: Vec<ContentId>,
    pub roster_index: Option<usize>,
    /// Legs flown: leg `k` ends with a hover at anchor `k mod n_anchor`.
    pub leg: u64,
    pub docked: Option<usize>,
    pub board: Board,
}

/// How a request was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Local,
    Ferry,
    Download,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub request: u64,
    pub community: usize,
    pub content: ContentId,
    pub issue_time: f64,
    pub resolve_time: f64,
    pub tad: f64,
    pub outcome: Outcome,
}
