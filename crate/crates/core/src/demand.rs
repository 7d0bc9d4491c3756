//! Content universe, per-community popularity profiles and the request stream.
//!
//! Content ids are the global popularity ranks shifted to zero: content `0`
//! is the most popular item of the base catalog. A community sees the same
//! Zipf law applied to its own ranking, which is a locally perturbed copy of
//! the base ranking.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::error::{Error, Result};

pub type ContentId = usize;

/// Half-width of the neighbourhood a rank may be swapped into.
pub const SWAP_WINDOW: usize = 10;

/// Upper bound on rejection-sampling rounds when enforcing a minimum
/// Smith-Waterman distance.
pub const MAX_PROFILE_RETRIES: usize = 64;

pub const SW_MATCH: i64 = 2;
pub const SW_MISMATCH: i64 = -1;
pub const SW_GAP: i64 = -1;

/// Zipf probability of the content at 1-based `rank` in a catalog of
/// `catalog_size` items.
pub fn zipf_popularity(rank: usize, alpha: f64, catalog_size: usize) -> Result<f64> {
    if catalog_size == 0 {
        return Err(Error::domain("catalog size must be positive"));
    }
    if rank == 0 || rank > catalog_size {
        return Err(Error::domain(format!(
            "rank {rank} outside 1..={catalog_size}"
        )));
    }
    check_alpha(alpha)?;
    let norm: f64 = (1..=catalog_size).map(|k| (k as f64).powf(-alpha)).sum();
    Ok((rank as f64).powf(-alpha) / norm)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::domain(format!(
            "zipf exponent must be finite and nonnegative, got {alpha}"
        )));
    }
    Ok(())
}

/// The global content pool and its rank-indexed Zipf popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    catalog_size: usize,
    zipf_alpha: f64,
    base_popularity: Vec<f64>,
}

impl Catalog {
    pub fn new(catalog_size: usize, zipf_alpha: f64) -> Result<Self> {
        if catalog_size == 0 {
            return Err(Error::domain("catalog size must be positive"));
        }
        check_alpha(zipf_alpha)?;
        let weights: Vec<f64> = (1..=catalog_size)
            .map(|k| (k as f64).powf(-zipf_alpha))
            .collect();
        let norm: f64 = weights.iter().sum();
        let base_popularity = weights.into_iter().map(|w| w / norm).collect();
        Ok(Self {
            catalog_size,
            zipf_alpha,
            base_popularity,
        })
    }

    pub fn size(&self) -> usize {
        self.catalog_size
    }

    pub fn alpha(&self) -> f64 {
        self.zipf_alpha
    }

    /// Popularity indexed by zero-based rank.
    pub fn popularity_by_rank(&self) -> &[f64] {
        &self.base_popularity
    }

    pub fn identity_ranking(&self) -> Vec<ContentId> {
        (0..self.catalog_size).collect()
    }
}

/// A content-id range whose TAD ratio differs from the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TadOverride {
    /// First content id covered.
    pub start: ContentId,
    /// One past the last content id covered.
    pub end: ContentId,
    pub ratio: f64,
}

/// Piecewise-constant tolerable access delay, expressed as a fraction of the
/// trajectory period.
#[derive(Debug, Clone, PartialEq)]
pub struct TadRule {
    pub default_ratio: f64,
    pub overrides: Vec<TadOverride>,
    pub trajectory_period: f64,
}

impl TadRule {
    pub fn uniform(ratio: f64, trajectory_period: f64) -> Self {
        Self {
            default_ratio: ratio,
            overrides: Vec::new(),
            trajectory_period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r.is_finite() && r > 0.0;
        if !ok(self.default_ratio) || self.overrides.iter().any(|o| !ok(o.ratio)) {
            return Err(Error::config("TAD ratios must be strictly positive"));
        }
        if !ok(self.trajectory_period) {
            return Err(Error::config("trajectory period must be positive"));
        }
        if let Some(o) = self.overrides.iter().find(|o| o.start >= o.end) {
            return Err(Error::config(format!(
                "empty TAD override range {}..{}",
                o.start, o.end
            )));
        }
        Ok(())
    }

    /// Ratio for one content. Later overrides win over earlier ones.
    pub fn ratio(&self, content: ContentId) -> f64 {
        self.overrides
            .iter()
            .rev()
            .find(|o| (o.start..o.end).contains(&content))
            .map_or(self.default_ratio, |o| o.ratio)
    }

    pub fn tad(&self, content: ContentId) -> f64 {
        self.ratio(content) * self.trajectory_period
    }

    /// Smallest TAD over the first `catalog_size` contents.
    pub fn min_tad(&self, catalog_size: usize) -> f64 {
        (0..catalog_size)
            .map(|c| self.tad(c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Request-weighted mean TAD under a per-content popularity vector.
    pub fn mean_tad(&self, popularity_by_content: &[f64]) -> f64 {
        popularity_by_content
            .iter()
            .enumerate()
            .map(|(c, p)| p * self.tad(c))
            .sum()
    }
}

/// Swap probability and minimum divergence used to derive community rankings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heterogeneity {
    pub swap_probability: f64,
    /// Required Smith-Waterman distance from the base ranking, measured as
    /// `identity_score - score`.
    pub min_distance: f64,
}

impl Heterogeneity {
    pub const HOMOGENEOUS: Heterogeneity = Heterogeneity {
        swap_probability: 0.0,
        min_distance: 0.0,
    };
}

/// One community's demand model.
#[derive(Debug, Clone)]
pub struct CommunityProfile {
    pub community_id: usize,
    /// `ranking[r]` is the content holding this community's rank `r + 1`.
    ranking: Vec<ContentId>,
    /// Request probability indexed by content id.
    popularity: Vec<f64>,
    pub tad_rule: TadRule,
    pub request_rate: f64,
    sampler: WeightedIndex<f64>,
    inter_arrival: Exp<f64>,
}

impl CommunityProfile {
    pub fn new(
        catalog: &Catalog,
        community_id: usize,
        ranking: Vec<ContentId>,
        tad_rule: TadRule,
        request_rate: f64,
    ) -> Result<Self> {
        let c = catalog.size();
        if ranking.len() != c {
            return Err(Error::domain(format!(
                "ranking has {} entries for a catalog of {c}",
                ranking.len()
            )));
        }
        let mut seen = vec![false; c];
        for &id in &ranking {
            if id >= c || std::mem::replace(&mut seen[id], true) {
                return Err(Error::domain(format!(
                    "ranking is not a permutation (content {id})"
                )));
            }
        }
        if !(request_rate.is_finite() && request_rate > 0.0) {
            return Err(Error::config("request rate must be positive"));
        }
        tad_rule.validate()?;
        let mut popularity = vec![0.0; c];
        for (rank, &id) in ranking.iter().enumerate() {
            popularity[id] = catalog.popularity_by_rank()[rank];
        }
        let sampler = WeightedIndex::new(catalog.popularity_by_rank())
            .map_err(|e| Error::domain(format!("popularity vector: {e}")))?;
        let inter_arrival =
            Exp::new(request_rate).map_err(|e| Error::config(format!("request rate: {e}")))?;
        Ok(Self {
            community_id,
            ranking,
            popularity,
            tad_rule,
            request_rate,
            sampler,
            inter_arrival,
        })
    }

    pub fn ranking(&self) -> &[ContentId] {
        &self.ranking
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn catalog_size(&self) -> usize {
        self.ranking.len()
    }

    /// Exponential gap until the next request of this community.
    pub fn sample_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inter_arrival.sample(rng)
    }
}

/// Applies the windowed swap walk once to `ranking`.
fn swap_walk<R: Rng + ?Sized>(ranking: &mut [ContentId], swap_probability: f64, rng: &mut R) {
    let c = ranking.len();
    for i in 0..c {
        if rng.random::<f64>() < swap_probability {
            let lo = i.saturating_sub(SWAP_WINDOW);
            let hi = (i + SWAP_WINDOW).min(c - 1);
            let j = rng.random_range(lo..=hi);
            ranking.swap(i, j);
        }
    }
}

/// Perturbs `base` by windowed random swaps, resampling until the
/// Smith-Waterman distance to `base` reaches `min_distance`.
pub fn derive_rank_permutation<R: Rng + ?Sized>(
    base: &[ContentId],
    heterogeneity: Heterogeneity,
    rng: &mut R,
) -> Result<Vec<ContentId>> {
    let Heterogeneity {
        swap_probability,
        min_distance,
    } = heterogeneity;
    if !(0.0..=1.0).contains(&swap_probability) {
        return Err(Error::config(format!(
            "swap probability {swap_probability} outside [0, 1]"
        )));
    }
    if base.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = (SW_MATCH * base.len() as i64) as f64 - min_distance;
    for _ in 0..MAX_PROFILE_RETRIES {
        let mut ranking = base.to_vec();
        swap_walk(&mut ranking, swap_probability, rng);
        if smith_waterman(base, &ranking) as f64 <= threshold {
            return Ok(ranking);
        }
    }
    Err(Error::config(format!(
        "could not reach Smith-Waterman score <= {threshold} (min_distance {min_distance}) \
         after {MAX_PROFILE_RETRIES} attempts"
    )))
}

/// Seed for community `community_id` under a heterogeneity seed.
pub fn community_seed(seed: u64, community_id: usize) -> u64 {
    seed ^ (community_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the ranking of one community from a base ranking.
pub fn derive_heterogeneous_profile(
    catalog: &Catalog,
    base_ranking: &[ContentId],
    community_id: usize,
    heterogeneity: Heterogeneity,
    tad_rule: TadRule,
    request_rate: f64,
    seed: u64,
) -> Result<CommunityProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(community_seed(seed, community_id));
    let ranking = derive_rank_permutation(base_ranking, heterogeneity, &mut rng)?;
    CommunityProfile::new(catalog, community_id, ranking, tad_rule, request_rate)
}

/// Local-alignment score with match +2, mismatch -1 and linear gap -1.
pub fn smith_waterman<T: PartialEq>(seq_a: &[T], seq_b: &[T]) -> u64 {
    // Iterate the shorter sequence in the inner loop; the score is symmetric.
    let (outer, inner) = if seq_a.len() >= seq_b.len() {
        (seq_a, seq_b)
    } else {
        (seq_b, seq_a)
    };
    let mut prev = vec![0i64; inner.len() + 1];
    let mut row = vec![0i64; inner.len() + 1];
    let mut best = 0i64;
    for a in outer {
        for (j, b) in inner.iter().enumerate() {
            let diag = prev[j] + if a == b { SW_MATCH } else { SW_MISMATCH };
            let up = prev[j + 1] + SW_GAP;
            let left = row[j] + SW_GAP;
            let cell = diag.max(up).max(left).max(0);
            row[j + 1] = cell;
            best = best.max(cell);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    best as u64
}

/// One demand event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub community_id: usize,
    pub content_id: ContentId,
    pub issue_time: f64,
    pub tad: f64,
}

/// Draws the content of a request issued at `now` and the time of the next
/// arrival from the same community.
pub fn sample_request<R: Rng + ?Sized>(
    profile: &CommunityProfile,
    now: f64,
    rng: &mut R,
) -> (Request, f64) {
    let rank = profile.sampler.sample(rng);
    let content_id = profile.ranking[rank];
    let request = Request {
        community_id: profile.community_id,
        content_id,
        issue_time: now,
        tad: profile.tad_rule.tad(content_id),
    };
    let next_arrival = now + profile.inter_arrival.sample(rng);
    (request, next_arrival)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exhaustive local alignment: best global alignment score over every
    /// pair of substrings, each found by unmemoised recursion.
    fn brute_global(a: &[u32], b: &[u32]) -> i64 {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0,
            (None, Some(_)) => SW_GAP * b.len() as i64,
            (Some(_), None) => SW_GAP * a.len() as i64,
            (Some((x, ra)), Some((y, rb))) => {
                let s = if x == y { SW_MATCH } else { SW_MISMATCH };
                (s + brute_global(ra, rb))
                    .max(SW_GAP + brute_global(ra, b))
                    .max(SW_GAP + brute_global(a, rb))
            }
        }
    }

    fn brute_local(a: &[u32], b: &[u32]) -> u64 {
        let mut best = 0;
        for i in 0..=a.len() {
            for j in i..=a.len() {
                for k in 0..=b.len() {
                    for l in k..=b.len() {
                        best = best.max(brute_global(&a[i..j], &b[k..l]));
                    }
                }
            }
        }
        best as u64
    }

    #[test]
    fn zipf_uniform_when_alpha_zero() {
        assert_abs_diff_eq!(zipf_popularity(3, 0.0, 10).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn zipf_two_items() {
        assert_abs_diff_eq!(
            zipf_popularity(1, 1.0, 2).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn zipf_table_defaults_normalise() {
        let total: f64 = (1..=2000)
            .map(|r| zipf_popularity(r, 0.4, 2000).unwrap())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zipf_rejects_bad_rank() {
        assert!(matches!(zipf_popularity(0, 1.0, 5), Err(Error::Domain(_))));
        assert!(matches!(zipf_popularity(6, 1.0, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn smith_waterman_reference_values() {
        let s = [4u32, 7, 1, 9, 9, 2];
        assert_eq!(smith_waterman(&s, &s), 12);
        assert_eq!(smith_waterman::<u32>(&[], &s), 0);
        assert_eq!(smith_waterman(&[1u32, 2, 3, 4], &[9, 2, 3, 9]), 4);
        assert_eq!(brute_local(&[1, 2, 3, 4], &[9, 2, 3, 9]), 4);
    }

    #[test]
    fn smith_waterman_matches_brute_force_on_small_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let la = rng.random_range(0..=5);
            let lb = rng.random_range(0..=5);
            let a: Vec<u32> = (0..la).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.random_range(0..3)).collect();
            assert_eq!(smith_waterman(&a, &b), brute_local(&a, &b), "{a:?} {b:?}");
        }
    }

    #[test]
    fn no_swaps_gives_identity() {
        let cat = Catalog::new(50, 0.4).unwrap();
        let p = derive_heterogeneous_profile(
            &cat,
            &cat.identity_ranking(),
            0,
            Heterogeneity::HOMOGENEOUS,
            TadRule::uniform(0.125, 60.0),
            1.0,
            3,
        )
        .unwrap();
        assert_eq!(p.ranking(), cat.identity_ranking().as_slice());
    }

    #[test]
    fn swaps_are_deterministic_under_seed() {
        let cat = Catalog::new(200, 0.4).unwrap();
        let het = Heterogeneity {
            swap_probability: 1.0,
            min_distance: 0.0,
        };
        let mk = || {
            derive_heterogeneous_profile(
                &cat,
                &cat.identity_ranking(),
                2,
                het,
                TadRule::uniform(0.125, 60.0),
                1.0,
                99,
            )
            .unwrap()
            .ranking()
            .to_vec()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn swapped_profile_scores_below_identity() {
        let cat = Catalog::new(50, 0.4).unwrap();
        let base = cat.identity_ranking();
        let p = derive_heterogeneous_profile(
            &cat,
            &base,
            1,
            Heterogeneity {
                swap_probability: 0.3,
                min_distance: 1.0,
            },
            TadRule::uniform(0.125, 60.0),
            1.0,
            11,
        )
        .unwrap();
        assert!(smith_waterman(&base, p.ranking()) < 2 * 50);
    }

    #[test]
    fn unreachable_distance_is_a_config_error() {
        let base: Vec<ContentId> = (0..20).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = derive_rank_permutation(
            &base,
            Heterogeneity {
                swap_probability: 0.0,
                min_distance: 5.0,
            },
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("35")), "{err}");
    }

    #[test]
    fn tad_overrides_apply_to_ranges() {
        let mut rule = TadRule::uniform(0.125, 80.0);
        rule.overrides.push(TadOverride {
            start: 50,
            end: 75,
            ratio: 0.0625,
        });
        assert_eq!(rule.tad(49), 10.0);
        assert_eq!(rule.tad(50), 5.0);
        assert_eq!(rule.tad(74), 5.0);
        assert_eq!(rule.tad(75), 10.0);
        assert_eq!(rule.min_tad(100), 5.0);
    }

    #[test]
    fn exponential_mean_matches_rate() {
        let cat = Catalog::new(10, 0.4).unwrap();
        let mu = 2.5;
        let p = CommunityProfile::new(
            &cat,
            0,
            cat.identity_ranking(),
            TadRule::uniform(0.125, 60.0),
            mu,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut now = 0.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let (req, next) = sample_request(&p, now, &mut rng);
            assert!(req.tad > 0.0 && req.issue_time >= 0.0);
            sum += next - now;
            now = next;
        }
        let mean = sum / n as f64;
        // exponential: sigma = mean
        let tol = 3.0 * (1.0 / mu) / (n as f64).sqrt();
        assert!((mean - 1.0 / mu).abs() < tol, "mean {mean}");
    }

    #[test]
    fn single_content_catalog_always_yields_zero() {
        let cat = Catalog::new(1, 0.4).unwrap();
        let p = CommunityProfile::new(&cat, 0, vec![0], TadRule::uniform(0.125, 60.0), 1.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_request(&p, 0.0, &mut rng).0.content_id, 0);
        }
    }

    #[test]
    fn rank_one_frequency_matches_zipf() {
        let cat = Catalog::new(2000, 0.4).unwrap();
        let p = CommunityProfile::new(
            &cat,
            0,
            cat.identity_ranking(),
            TadRule::uniform(0.125, 60.0),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| sample_request(&p, 0.0, &mut rng).0.content_id == 0)
            .count();
        let expected = zipf_popularity(1, 0.4, 2000).unwrap();
        assert!((hits as f64 / n as f64 - expected).abs() < 0.002);
    }

    #[test]
    fn profile_rejects_non_permutation() {
        let cat = Catalog::new(3, 0.4).unwrap();
        let r = CommunityProfile::new(&cat, 0, vec![0, 0, 1], TadRule::uniform(0.1, 1.0), 1.0);
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn popularity_normalised_and_monotone(alpha in 0.0f64..3.0, c in 1usize..400) {
            let cat = Catalog::new(c, alpha).unwrap();
            let p = cat.popularity_by_rank();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for w in p.windows(2) {
                prop_assert!(w[0] >= w[1]);
                if alpha > 0.0 {
                    prop_assert!(w[0] > w[1]);
                }
            }
        }

        #[test]
        fn derived_rankings_are_bijections(seed in any::<u64>(), prob in 0.0f64..=1.0, c in 1usize..120) {
            let base: Vec<ContentId> = (0..c).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let het = Heterogeneity { swap_probability: prob, min_distance: 0.0 };
            let mut r = derive_rank_permutation(&base, het, &mut rng).unwrap();
            r.sort_unstable();
            prop_assert_eq!(r, base);
        }

        #[test]
        fn smith_waterman_is_symmetric(
            a in proptest::collection::vec(0u8..4, 0..20),
            b in proptest::collection::vec(0u8..4, 0..20),
        ) {
            prop_assert_eq!(smith_waterman(&a, &b), smith_waterman(&b, &a));
        }
    }
}
