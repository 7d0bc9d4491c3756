use std::fmt;
use std::str::FromStr;

use crate::bandit::AgentParams;
use crate::demand::{Heterogeneity, TadOverride, TadRule};
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::oracle::Segment2Partition;

/// Caching policy run by anchors and ferries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Random,
    BenchmarkValue,
    TopkMab,
    TopkMabSelective,
    FedMab,
    FedMabSelective,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Random,
        Policy::TopkMab,
        Policy::TopkMabSelective,
        Policy::FedMab,
        Policy::FedMabSelective,
        Policy::BenchmarkValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::BenchmarkValue => "benchmark_value",
            Policy::TopkMab => "topk_mab",
            Policy::TopkMabSelective => "topk_mab_selective",
            Policy::FedMab => "fedmab",
            Policy::FedMabSelective => "fedmab_selective",
        }
    }

    pub fn learns(self) -> bool {
        !matches!(self, Policy::BenchmarkValue)
    }

    pub fn selective(self) -> bool {
        matches!(self, Policy::TopkMabSelective | Policy::FedMabSelective)
    }

    pub fn federated(self) -> bool {
        matches!(self, Policy::FedMab | Policy::FedMabSelective)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown policy `{s}`")))
    }
}

/// Replacement of every community profile at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandShift {
    pub time: f64,
    /// Full swap passes applied to the base ranking.
    pub passes: usize,
    /// Zipf skew after the shift; unchanged when `None`.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub catalog_size: usize,
    pub n_anchor: usize,
    pub n_ferry: usize,
    pub ferry_group_size: usize,
    pub anchor_capacity: usize,
    pub ferry_capacity: usize,
    pub request_rate: f64,
    pub hover_ratio: f64,
    pub transit_ratio: f64,
    /// Seconds.
    pub trajectory_period: f64,
    pub zipf_alpha: f64,
    pub policy: Policy,
    pub federation: FederationConfig,
    pub agent: AgentParams,
    pub tad_ratio: f64,
    pub tad_overrides: Vec<TadOverride>,
    pub heterogeneity: Heterogeneity,
    /// Seconds a ferry spends within radio range before and after hovering.
    pub comm_overlap: f64,
    /// Seconds during which requests are generated.
    pub duration: f64,
    pub seed: u64,
    pub lambda: f64,
    pub kappa: f64,
    pub segment2: Segment2Partition,
    pub demand_shift: Option<DemandShift>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            catalog_size: 2000,
            n_anchor: 4,
            n_ferry: 8,
            ferry_group_size: 1,
            anchor_capacity: 200,
            ferry_capacity: 25,
            request_rate: 1.0,
            hover_ratio: 1.0 / 6.0,
            transit_ratio: 1.0 / 12.0,
            trajectory_period: 600.0,
            zipf_alpha: 0.4,
            policy: Policy::FedMabSelective,
            federation: FederationConfig::default(),
            agent: AgentParams::default(),
            tad_ratio: 1.0 / 8.0,
            tad_overrides: Vec::new(),
            heterogeneity: Heterogeneity {
                swap_probability: 0.3,
                min_distance: 0.0,
            },
            comm_overlap: 0.0,
            duration: 36_000.0,
            seed: 1,
            lambda: 0.5,
            kappa: 1.0,
            segment2: Segment2Partition::RoundRobin,
            demand_shift: None,
        }
    }
}

impl SimConfig {
    /// Desk-scale variant: smaller catalog and caches with every ratio kept.
    pub fn desk() -> Self {
        Self {
            catalog_size: 500,
            anchor_capacity: 50,
            ferry_capacity: 10,
            duration: 216_000.0,
            ..Self::default()
        }
    }

    pub fn tad_rule(&self) -> TadRule {
        TadRule {
            default_ratio: self.tad_ratio,
            overrides: self.tad_overrides.clone(),
            trajectory_period: self.trajectory_period,
        }
    }

    /// Number of ferry groups flying at distinct trajectory phases.
    pub fn n_groups(&self) -> usize {
        self.n_ferry.div_ceil(self.ferry_group_size)
    }

    /// Hover and transit durations after accounting for radio overlap.
    pub fn adjusted_times(&self) -> Result<(f64, f64)> {
        adjusted_times(
            self.hover_ratio * self.trajectory_period,
            self.transit_ratio * self.trajectory_period,
            self.comm_overlap,
            self.request_rate,
        )
    }

    /// Time for one ferry to visit every anchor once.
    pub fn cycle_time(&self) -> f64 {
        self.n_anchor as f64 * (self.hover_ratio + self.transit_ratio) * self.trajectory_period
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("catalog_size", self.catalog_size),
            ("n_anchor", self.n_anchor),
            ("n_ferry", self.n_ferry),
            ("ferry_group_size", self.ferry_group_size),
            ("anchor_capacity", self.anchor_capacity),
            ("ferry_capacity", self.ferry_capacity),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{k} must be positive")));
        }
        if self.ferry_group_size > self.n_ferry {
            return Err(Error::config("ferry_group_size exceeds n_ferry"));
        }
        if self.anchor_capacity > self.catalog_size {
            return Err(Error::config("anchor_capacity exceeds catalog_size"));
        }
        let held = self.n_anchor * self.anchor_capacity + self.n_ferry * self.ferry_capacity;
        if held >= self.catalog_size {
            return Err(Error::config(format!(
                "UAV caches hold {held} contents; the catalog of {} must be larger",
                self.catalog_size
            )));
        }
        for (k, v) in [
            ("request_rate", self.request_rate),
            ("hover_ratio", self.hover_ratio),
            ("transit_ratio", self.transit_ratio),
            ("trajectory_period", self.trajectory_period),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.n_anchor as f64 * (self.hover_ratio + self.transit_ratio) > 1.0 + 1e-12 {
            return Err(Error::config(
                "n_anchor * (hover_ratio + transit_ratio) exceeds 1",
            ));
        }
        if !(self.zipf_alpha >= 0.0 && self.zipf_alpha.is_finite()) {
            return Err(Error::config("zipf_alpha must be nonnegative"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::config("lambda and kappa must lie in [0, 1]"));
        }
        if !(self.comm_overlap >= 0.0) {
            return Err(Error::config("comm_overlap must be nonnegative"));
        }
        self.tad_rule().validate()?;
        self.agent.validate()?;
        self.federation.validate()?;
        self.adjusted_times()?;
        if let Some(s) = self.demand_shift {
            if !(s.time >= 0.0) {
                return Err(Error::config("shift_time must be nonnegative"));
            }
            if s.alpha.is_some_and(|a| !(a >= 0.0)) {
                return Err(Error::config("shift_alpha must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Stretches hover by the radio overlap when the overlap is long enough to
/// matter for request arrivals, shortening transit by the same amount.
pub fn adjusted_times(hover: f64, transit: f64, overlap: f64, request_rate: f64) -> Result<(f64, f64)> {
    if overlap > transit {
        return Err(Error::config(format!(
            "comm_overlap {overlap} exceeds the transit time {transit}"
        )));
    }
    if overlap >= 1.0 / request_rate {
        Ok((hover + overlap, transit - overlap))
    } else {
        Ok((hover, transit))
    }
}
