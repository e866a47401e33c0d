//! Benchmark records, medians with bootstrap intervals, and particle-count
//! searches (time to reach a score, equal-time calibration).

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub particles: usize,
    pub target: String,
    pub seed: u64,
    pub checkpoint_hash: Option<String>,
    pub seconds: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub variant: String,
    pub particles: usize,
    pub runs: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub median_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub variant: String,
    pub threshold: f64,
    /// Smallest particle count found whose median score reaches the threshold.
    pub particles: Option<usize>,
    pub median_seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub summaries: Vec<ConditionSummary>,
    pub thresholds: Vec<ThresholdRow>,
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile-bootstrap 95% interval of the median.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = StreamRng::new(seed, &[0x4253]);
    let n = values.len();
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..n).map(|_| values[rng.below(n)]).collect();
            median(&sample)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    (percentile(&meds, 0.025), percentile(&meds, 0.975))
}

/// Groups records by (variant, particles), in first-appearance order.
pub fn summarize(records: &[BenchRecord], resamples: usize, seed: u64) -> Vec<ConditionSummary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in records {
        let k = (r.variant.clone(), r.particles);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(variant, particles)| {
            let rs: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.variant == variant && r.particles == particles)
                .collect();
            let scores: Vec<f64> = rs.iter().map(|r| r.score).collect();
            let secs: Vec<f64> = rs.iter().map(|r| r.seconds).collect();
            let (lower, upper) = bootstrap_median_ci(&scores, resamples, seed);
            ConditionSummary {
                variant,
                particles,
                runs: rs.len(),
                median: median(&scores),
                lower,
                upper,
                median_seconds: median(&secs),
            }
        })
        .collect()
}

/// Smallest `n` in `[1, n_max]` with `score(n) >= threshold`, assuming the
/// score is nondecreasing in `n`. Returns `None` if even `n_max` falls short.
pub fn bisect_particles(n_max: usize, threshold: f64, mut score: impl FnMut(usize) -> f64) -> Option<usize> {
    if score(n_max) < threshold {
        return None;
    }
    let (mut lo, mut hi) = (0usize, n_max);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if score(mid) >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Largest particle count whose measured cost stays within `budget`
/// seconds; doubling then bisection, at least 1.
pub fn calibrate_equal_time(budget: f64, n_max: usize, mut cost: impl FnMut(usize) -> f64) -> usize {
    let mut lo = 1usize;
    if cost(1) >= budget {
        return 1;
    }
    let mut hi = 2usize;
    while hi < n_max && cost(hi) < budget {
        lo = hi;
        hi *= 2;
    }
    let mut hi = hi.min(n_max);
    if cost(hi) < budget {
        return hi;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cost(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick whichever neighbor lands closer to the budget
    if (cost(hi) - budget).abs() < (budget - cost(lo)).abs() {
        hi
    } else {
        lo
    }
}

impl BenchReport {
    pub fn records_csv(&self) -> String {
        let mut out = String::from("variant,particles,target,seed,checkpoint_hash,seconds,score\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{:?},{:?}\n",
                r.variant,
                r.particles,
                r.target,
                r.seed,
                r.checkpoint_hash.as_deref().unwrap_or(""),
                r.seconds,
                r.score
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,particles,runs,median,lower95,upper95,median_seconds\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{:?},{:?}\n",
                s.variant, s.particles, s.runs, s.median, s.lower, s.upper, s.median_seconds
            ));
        }
        out
    }

    pub fn thresholds_csv(&self) -> String {
        let mut out = String::from("variant,threshold,particles,median_seconds\n");
        for t in &self.thresholds {
            out.push_str(&format!(
                "{},{:?},{},{}\n",
                t.variant,
                t.threshold,
                t.particles.map(|n| n.to_string()).unwrap_or_default(),
                t.median_seconds.map(|s| format!("{s:?}")).unwrap_or_default()
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(variant: &str, n: usize, score: f64) -> BenchRecord {
        BenchRecord {
            variant: variant.into(),
            particles: n,
            target: "t".into(),
            seed: 1,
            checkpoint_hash: None,
            seconds: 0.5,
            score,
        }
    }

    #[test]
    fn single_record_report() {
        let s = summarize(&[rec("guided", 10, 0.7)], 1000, 3);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].median, s[0].lower, s[0].upper, s[0].runs), (0.7, 0.7, 0.7, 1));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn bisection_finds_first_passing_count() {
        let mut calls = 0;
        let n = bisect_particles(1000, 0.8, |n| {
            calls += 1;
            1.0 - 1.0 / (n as f64).sqrt()
        });
        assert_eq!(n, Some(25));
        assert!(calls < 15);
        assert_eq!(bisect_particles(10, 2.0, |_| 1.0), None);
        assert_eq!(bisect_particles(10, 0.0, |_| 1.0), Some(1));
    }

    #[test]
    fn equal_time_calibration_with_linear_cost() {
        // fake cost model: fixed overhead plus per-particle time
        for (budget, per, fixed) in [(1.0, 0.01, 0.02), (0.25, 0.0007, 0.001), (3.0, 0.2, 0.0)] {
            let cost = |n: usize| fixed + per * n as f64;
            let n = calibrate_equal_time(budget, 100_000, cost);
            let t = cost(n);
            assert!((t - budget).abs() <= 0.2 * budget, "budget {budget}: n={n} t={t}");
        }
        assert_eq!(calibrate_equal_time(0.1, 100, |n| n as f64), 1);
        assert_eq!(calibrate_equal_time(1e9, 100, |n| n as f64), 100);
    }

    proptest! {
        #[test]
        fn medians_ignore_order(mut v in proptest::collection::vec(-5.0f64..5.0, 1..40), seed in 0u64..1000) {
            let m = median(&v);
            let mut rng = StreamRng::new(seed, &[]);
            for i in (1..v.len()).rev() {
                let j = rng.below(i + 1);
                v.swap(i, j);
            }
            prop_assert_eq!(median(&v), m);
        }

        #[test]
        fn bootstrap_bounds_bracket_median(v in proptest::collection::vec(0.0f64..1.0, 1..40), seed in 0u64..1000) {
            let (lo, hi) = bootstrap_median_ci(&v, 1000, seed);
            let m = median(&v);
            prop_assert!(lo <= m && m <= hi, "{} {} {}", lo, m, hi);
        }
    }
}
