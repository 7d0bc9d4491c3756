//! Evaluation measures: availability, cache distribution optimality via
//! Jaro-Winkler similarity, and reactivity after a demand shift.

use std::fmt::Write as _;

use crate::demand::ContentId;
use crate::error::{Error, Result};

/// Consecutive improvements that mark the start of a recovery.
pub const RECOVERY_RUN: usize = 3;
pub const WINKLER_SCALE: f64 = 0.1;
pub const WINKLER_PREFIX_CAP: usize = 4;

pub fn availability(hits: u64, requests: u64) -> Result<f64> {
    if hits > requests {
        return Err(Error::domain(format!("{hits} hits exceed {requests} requests")));
    }
    if requests == 0 {
        return Ok(0.0);
    }
    Ok(hits as f64 / requests as f64)
}

pub fn jaro<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, x) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_hit[j] && b[j] == *x {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let a_seq = a.iter().zip(&a_hit).filter(|(_, &h)| h).map(|(x, _)| x);
    let b_seq = b.iter().zip(&b_hit).filter(|(_, &h)| h).map(|(x, _)| x);
    let half_transpositions = a_seq.zip(b_seq).filter(|(x, y)| x != y).count();
    let m = matches as f64;
    let t = (half_transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

pub fn jaro_winkler<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let j = jaro(a, b);
    let prefix = a
        .iter()
        .zip(b)
        .take(WINKLER_PREFIX_CAP)
        .take_while(|(x, y)| x == y)
        .count();
    (j + prefix as f64 * WINKLER_SCALE * (1.0 - j)).clamp(0.0, 1.0)
}

/// Similarity between a learned cache ranking and the benchmark ranking.
pub fn cdo(learned: &[ContentId], benchmark: &[ContentId]) -> Result<f64> {
    if learned.len() != benchmark.len() {
        return Err(Error::domain(format!(
            "ranking lengths differ: {} vs {}",
            learned.len(),
            benchmark.len()
        )));
    }
    Ok(jaro_winkler(learned, benchmark))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactivityReport {
    pub psi: f64,
    pub chi: f64,
    pub zeta_cross: f64,
    pub tau: f64,
    pub tau_c: f64,
}

/// Value of a step series at `t`: the last point at or before `t`.
fn value_at(series: &[(f64, f64)], t: f64) -> Option<f64> {
    series.iter().take_while(|(s, _)| *s <= t).last().map(|p| p.1)
}

/// Reactivity of `series` after a shift at `shift_time`, compared with
/// `baseline` over a horizon of `tau` seconds. Series are `(time, value)`.
pub fn reactivity(
    series: &[(f64, f64)],
    shift_time: f64,
    baseline: &[(f64, f64)],
    tau: f64,
) -> Result<ReactivityReport> {
    if !(tau > 0.0) {
        return Err(Error::domain("reactivity horizon must be positive"));
    }
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= shift_time && *t <= shift_time + tau)
        .collect();
    if window.len() < RECOVERY_RUN + 1 {
        return Err(Error::domain(format!(
            "{} points after the shift; at least {} are needed",
            window.len(),
            RECOVERY_RUN + 1
        )));
    }
    let onset = (0..window.len() - RECOVERY_RUN)
        .find(|&k| (k..k + RECOVERY_RUN).all(|j| window[j + 1].1 > window[j].1));
    let (psi, chi_end) = match onset {
        Some(k) => (window[k].0 - shift_time, k),
        None => (tau, window.len() - 1),
    };
    let chi = window[..=chi_end]
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let tau_c = window
        .iter()
        .find(|(t, v)| value_at(baseline, *t).is_some_and(|b| *v > b))
        .map_or(tau, |(t, _)| (t - shift_time).min(tau));
    Ok(ReactivityReport {
        psi,
        chi,
        zeta_cross: ((tau - tau_c) / tau).clamp(0.0, 1.0),
        tau,
        tau_c,
    })
}

/// Averages `(time, value)` points into consecutive bins of `width` seconds
/// starting at `origin`. Each bin is stamped with its start time.
pub fn bin_series(points: &[(f64, f64)], origin: f64, width: f64) -> Result<Vec<(f64, f64)>> {
    if !(width > 0.0) {
        return Err(Error::domain("bin width must be positive"));
    }
    let mut bins: Vec<(i64, f64, usize)> = Vec::new();
    for &(t, v) in points {
        let b = ((t - origin) / width).floor() as i64;
        match bins.iter_mut().find(|x| x.0 == b) {
            Some(x) => {
                x.1 += v;
                x.2 += 1;
            }
            None => bins.push((b, v, 1)),
        }
    }
    bins.sort_by_key(|x| x.0);
    Ok(bins
        .into_iter()
        .map(|(b, s, n)| (origin + b as f64 * width, s / n as f64))
        .collect())
}

/// Mean and sample standard deviation; the deviation is 0 below two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Measurements of one community over one epoch window.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub time: f64,
    pub community: usize,
    pub hits: u64,
    pub requests: u64,
    pub availability: f64,
    pub relative_availability: f64,
    pub mean_access_delay: f64,
    pub downloads: u64,
    pub cdo: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,time,community,hits,requests,availability,\
relative_availability,mean_access_delay,downloads,cdo";

    pub fn write_csv_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{},{:.6},{:.6},{:.6},{},{:.6}",
            self.epoch,
            self.time,
            self.community,
            self.hits,
            self.requests,
            self.availability,
            self.relative_availability,
            self.mean_access_delay,
            self.downloads,
            self.cdo
        );
    }
}

pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(EpochRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        r.write_csv_row(&mut out);
    }
    out
}
