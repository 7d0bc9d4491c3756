//! Divergence-weighted aggregation of anchor Q-tables, local/global mixing
//! weights and the latency gate that spaces federated updates apart.

use crate::bandit::R_MAX;
use crate::demand::ContentId;
use crate::error::{Error, Result};

/// Margin added to the divergence ceiling so every peer keeps some weight.
pub const RHO_MARGIN: f64 = 1e-6;

/// Request tallies observed at one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityEstimate {
    counts: Vec<u64>,
    total: u64,
}

impl PopularityEstimate {
    pub fn new(catalog_size: usize) -> Self {
        Self {
            counts: vec![0; catalog_size],
            total: 0,
        }
    }

    pub fn observe(&mut self, content: ContentId) {
        self.counts[content] += 1;
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Smoothing mass added to every count before normalising.
    pub fn smoothing(&self) -> f64 {
        1.0 / (10.0 * self.counts.len() as f64)
    }

    pub fn as_distribution(&self) -> Vec<f64> {
        let eps = self.smoothing();
        let denom = self.total as f64 + eps * self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&n| (n as f64 + eps) / denom)
            .collect()
    }
}

fn check_lengths(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_lengths(p, q)?;
    let d: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    Ok(d.max(0.0))
}

pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_lengths(p, q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * (kl_divergence(p, &m)? + kl_divergence(q, &m)?);
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

/// How the divergence ceiling is derived from an anchor's divergences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoRule {
    #[default]
    MaxPairwise,
    SumPairwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega1Mode {
    Fixed(f64),
    Adaptive,
}

impl Default for Omega1Mode {
    fn default() -> Self {
        Omega1Mode::Fixed(0.99)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationConfig {
    pub beta_decay: f64,
    pub beta_scale: f64,
    pub latency_threshold: u64,
    pub omega1_mode: Omega1Mode,
    pub rho_rule: RhoRule,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            beta_decay: 1e-4,
            beta_scale: 100.0,
            latency_threshold: 10,
            omega1_mode: Omega1Mode::default(),
            rho_rule: RhoRule::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_scale > 0.0) {
            return Err(Error::config("beta_scale must be positive"));
        }
        if !(self.beta_decay >= 0.0) {
            return Err(Error::config("beta_decay must be nonnegative"));
        }
        if let Omega1Mode::Fixed(w) = self.omega1_mode {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config(format!("omega1 {w} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Weight `self_index` assigns to every distribution in `estimates`,
/// including its own. Closer distributions weigh more.
pub fn contribution_factors(
    self_index: usize,
    estimates: &[Vec<f64>],
    rule: RhoRule,
) -> Result<Vec<f64>> {
    let own = estimates
        .get(self_index)
        .ok_or_else(|| Error::domain("self index outside the estimate list"))?;
    let kl: Vec<f64> = estimates
        .iter()
        .map(|e| kl_divergence(own, e))
        .collect::<Result<_>>()?;
    let n = kl.len() as f64;
    if kl.iter().all(|&d| d == 0.0) {
        return Ok(vec![1.0 / n; kl.len()]);
    }
    let rho = match rule {
        RhoRule::MaxPairwise => kl.iter().copied().fold(0.0, f64::max),
        RhoRule::SumPairwise => kl.iter().sum(),
    } + RHO_MARGIN;
    let num: Vec<f64> = kl.iter().map(|d| rho - d).collect();
    let denom: f64 = num.iter().sum();
    Ok(num.into_iter().map(|x| x / denom).collect())
}

pub fn aggregate_q(factors: &[f64], q_tables: &[&[f64]]) -> Result<Vec<f64>> {
    if factors.len() != q_tables.len() || q_tables.is_empty() {
        return Err(Error::domain("factor and table counts differ"));
    }
    let c = q_tables[0].len();
    if q_tables.iter().any(|q| q.len() != c) {
        return Err(Error::domain("q-table lengths differ"));
    }
    let mut out = vec![0.0; c];
    for (&w, q) in factors.iter().zip(q_tables) {
        for (o, &v) in out.iter_mut().zip(q.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

pub fn omega1(p_now: &[f64], p_prev: &[f64], mode: Omega1Mode) -> Result<f64> {
    match mode {
        Omega1Mode::Fixed(w) => Ok(w),
        Omega1Mode::Adaptive => {
            let js = js_divergence(p_now, p_prev)?;
            Ok((1.0 - js / std::f64::consts::LN_2).clamp(0.0, 1.0))
        }
    }
}

/// Weight of the aggregated value for one content, shrinking with time and
/// with the content's normalised Q-value.
pub fn omega2(t: u64, q: f64, cfg: &FederationConfig) -> f64 {
    let q_norm = (q / R_MAX).clamp(0.0, 1.0);
    (-cfg.beta_decay * t as f64).exp() * (1.0 - q_norm) / cfg.beta_scale
}

pub fn federated_update(q_local: &[f64], q_agg: &[f64], w1: f64, w2: &[f64]) -> Result<Vec<f64>> {
    if q_local.len() != q_agg.len() || q_local.len() != w2.len() {
        return Err(Error::domain("federated update dimensions differ"));
    }
    Ok(q_local
        .iter()
        .zip(q_agg)
        .zip(w2)
        .map(|((&q, &a), &w)| w1 * q + w * a)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatencyCounter {
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    FederateAndReset,
    DeferAndIncrement,
}

pub fn latency_gate(counter: &mut LatencyCounter, threshold: u64) -> GateDecision {
    if counter.value >= threshold {
        counter.value = 0;
        GateDecision::FederateAndReset
    } else {
        counter.value += 1;
        GateDecision::DeferAndIncrement
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), LN_2);
        let a = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        let b = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((a - b).abs() > 1e-3);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn js_examples() {
        let p = [0.75, 0.25];
        let q = [0.25, 0.75];
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), LN_2);
        // m = [0.5, 0.5]; both halves equal 0.75 ln 1.5 + 0.25 ln 0.5
        let half = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert_abs_diff_eq!(js_divergence(&p, &q).unwrap(), half, epsilon = 1e-12);
    }

    #[test]
    fn contribution_examples() {
        let p = vec![0.25; 4];
        let w = contribution_factors(1, &[p.clone(), p.clone(), p], RhoRule::MaxPairwise).unwrap();
        for x in w {
            assert_abs_diff_eq!(x, 1.0 / 3.0);
        }

        let a = vec![0.7, 0.3];
        let b = vec![0.4, 0.6];
        let d = kl_divergence(&a, &b).unwrap();
        let rho = d + RHO_MARGIN;
        let w = contribution_factors(0, &[a, b], RhoRule::MaxPairwise).unwrap();
        assert_abs_diff_eq!(w[0], rho / (2.0 * rho - d), epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], (rho - d) / (2.0 * rho - d), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0] + w[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let a = [0.1, 0.2];
        assert_eq!(aggregate_q(&[0.5, 0.5], &[&a, &a]).unwrap(), vec![0.1, 0.2]);
        let b = [0.7, -0.4];
        assert_eq!(aggregate_q(&[0.0, 1.0], &[&a, &b]).unwrap(), b.to_vec());
        let x = [0.0, 1.0];
        let y = [1.0, 0.0];
        assert_eq!(aggregate_q(&[0.5, 0.5], &[&x, &y]).unwrap(), vec![0.5, 0.5]);
        assert!(aggregate_q(&[1.0], &[&x, &y]).is_err());
    }

    #[test]
    fn omega_examples() {
        let p = [0.5, 0.5];
        assert_eq!(omega1(&p, &[0.1, 0.9], Omega1Mode::default()).unwrap(), 0.99);
        assert_eq!(omega1(&p, &p, Omega1Mode::Adaptive).unwrap(), 1.0);
        assert_abs_diff_eq!(
            omega1(&[1.0, 0.0], &[0.0, 1.0], Omega1Mode::Adaptive).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        let cfg = FederationConfig {
            beta_decay: 0.1,
            beta_scale: 1.0,
            ..FederationConfig::default()
        };
        assert_eq!(omega2(0, 0.0, &cfg), 1.0);
        assert_eq!(omega2(5, R_MAX, &cfg), 0.0);
        assert_abs_diff_eq!(
            omega2(100, 0.5, &cfg) / omega2(0, 0.5, &cfg),
            (-10.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn federated_update_examples() {
        let q = [0.2, -0.1];
        let a = [0.6, 0.3];
        assert_eq!(federated_update(&q, &a, 1.0, &[0.0, 0.0]).unwrap(), q.to_vec());
        assert_eq!(federated_update(&q, &a, 0.0, &[1.0, 1.0]).unwrap(), a.to_vec());
        let got = federated_update(&[0.2], &[0.6], 0.99, &[0.5]).unwrap();
        assert_abs_diff_eq!(got[0], 0.498, epsilon = 1e-12);
    }

    #[test]
    fn latency_gate_examples() {
        let mut c = LatencyCounter::default();
        for _ in 0..5 {
            assert_eq!(latency_gate(&mut c, 0), GateDecision::FederateAndReset);
        }
        let mut c = LatencyCounter::default();
        let seq: Vec<_> = (0..4).map(|_| latency_gate(&mut c, 2)).collect();
        use GateDecision::*;
        assert_eq!(seq, vec![DeferAndIncrement, DeferAndIncrement, FederateAndReset, DeferAndIncrement]);
    }

    #[test]
    fn smoothed_estimate_is_a_distribution() {
        let mut e = PopularityEstimate::new(5);
        let d = e.as_distribution();
        for x in &d {
            assert_abs_diff_eq!(*x, 0.2, epsilon = 1e-12);
        }
        e.observe(2);
        e.observe(2);
        let d = e.as_distribution();
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(d.iter().all(|&x| x > 0.0));
        assert!(d[2] > 0.9);
    }

    #[test]
    fn mirrored_anchors_keep_their_ranking() {
        // two anchors with identical demand and Q-tables: federation only rescales
        let p = vec![0.4, 0.3, 0.2, 0.1];
        let q = vec![1.2, 0.8, -0.3, 0.5];
        let w = contribution_factors(0, &[p.clone(), p.clone()], RhoRule::MaxPairwise).unwrap();
        let agg = aggregate_q(&w, &[&q, &q]).unwrap();
        let w1 = omega1(&p, &p, Omega1Mode::Adaptive).unwrap();
        let cfg = FederationConfig::default();
        let w2: Vec<f64> = q.iter().map(|&x| omega2(3, x, &cfg)).collect();
        let upd = federated_update(&q, &agg, w1, &w2).unwrap();
        let order = |v: &[f64]| {
            let mut ids: Vec<usize> = (0..v.len()).collect();
            crate::sort_by_score_desc(&mut ids, |i| v[i]);
            ids.truncate(2);
            ids
        };
        assert_eq!(order(&upd), order(&q));
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn divergence_properties(p in distribution(6), q in distribution(6)) {
            let kpq = kl_divergence(&p, &q).unwrap();
            prop_assert!(kpq >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            let j1 = js_divergence(&p, &q).unwrap();
            let j2 = js_divergence(&q, &p).unwrap();
            prop_assert!((j1 - j2).abs() < 1e-12);
            prop_assert!((0.0..=LN_2).contains(&j1));
            prop_assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn factors_form_a_simplex(ests in prop::collection::vec(distribution(5), 1..6), pick in 0usize..6, sum_rule in any::<bool>()) {
            let me = pick % ests.len();
            let rule = if sum_rule { RhoRule::SumPairwise } else { RhoRule::MaxPairwise };
            let w = contribution_factors(me, &ests, rule).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            let max = w.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(w[me] >= max - 1e-12);
        }

        #[test]
        fn aggregate_within_input_range(
            tables in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
            raw in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let n = tables.len();
            let s: f64 = raw[..n].iter().sum();
            let w: Vec<f64> = raw[..n].iter().map(|x| x / s).collect();
            let refs: Vec<&[f64]> = tables.iter().map(|t| t.as_slice()).collect();
            let agg = aggregate_q(&w, &refs).unwrap();
            for (i, v) in agg.iter().enumerate() {
                let lo = tables.iter().map(|t| t[i]).fold(f64::MAX, f64::min);
                let hi = tables.iter().map(|t| t[i]).fold(f64::MIN, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn gate_fires_once_per_period(threshold in 0u64..12, periods in 1usize..6) {
            let mut c = LatencyCounter::default();
            let period = threshold as usize + 1;
            let fired: Vec<bool> = (0..period * periods)
                .map(|_| latency_gate(&mut c, threshold) == GateDecision::FederateAndReset)
                .collect();
            for chunk in fired.chunks(period) {
                prop_assert_eq!(chunk.iter().filter(|&&f| f).count(), 1);
            }
        }
    }
}
