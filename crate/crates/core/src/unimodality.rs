//! Empirical unimodality check.
//!
//! The empirical CDF is covered by a greedy sequence of chords, each staying
//! within `xi` of every sample point it spans. A unimodal law has a CDF that
//! is convex up to the mode and concave after it, so the chord slopes must
//! rise and then fall. Any rise after a fall rejects unimodality.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted sample values; the i-th (0-based) point has height `(i + 1) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    values: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "an empirical CDF needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InsufficientData("samples must be finite".into()));
        }
        let mut values = samples.to_vec();
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn height(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.values.len() as f64
    }

    /// `F(x)`: fraction of samples at or below `x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.values.partition_point(|v| *v <= x) as f64 / self.values.len() as f64
    }
}

/// Dvoretzky–Kiefer–Wolfowitz half-width at confidence `1 - delta`.
pub fn dkw_half_width(samples: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnimodalityConfig {
    /// Chord tolerance; defaults to twice the DKW half-width at 99 %.
    pub xi: Option<f64>,
    /// Below this many samples the check still runs but logs a warning.
    pub min_samples: usize,
}

impl Default for UnimodalityConfig {
    fn default() -> Self {
        Self {
            xi: None,
            min_samples: 10_000,
        }
    }
}

impl UnimodalityConfig {
    pub fn xi_for(&self, samples: usize) -> f64 {
        self.xi.unwrap_or_else(|| 2.0 * dkw_half_width(samples, 0.01))
    }
}

/// One chord `[start, end]` of the fit, by sample index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub slope: f64,
}

/// Greedy chord cover of the empirical CDF. From each anchor the chord goes
/// to the farthest sample such that every intermediate point lies within
/// `xi` of it.
pub fn fit_segments(ecdf: &Ecdf, xi: f64) -> Vec<Segment> {
    let x = ecdf.values();
    let n = x.len();
    let mut segments = Vec::new();
    let mut i = 0;
    while i + 1 < n {
        let fi = ecdf.height(i);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut best: Option<(usize, f64)> = None;
        for j in i + 1..n {
            let dx = x[j] - x[i];
            let df = ecdf.height(j) - fi;
            if dx > 0.0 {
                let slope = df / dx;
                if slope >= lo && slope <= hi {
                    best = Some((j, slope));
                }
                lo = lo.max((df - xi) / dx);
                hi = hi.min((df + xi) / dx);
                if lo > hi {
                    break;
                }
            } else if df > xi {
                // a tie this tall cannot be spanned by any chord from x[i]
                break;
            }
        }
        match best {
            Some((j, slope)) => {
                segments.push(Segment {
                    start: i,
                    end: j,
                    slope,
                });
                i = j;
            }
            None => i += 1,
        }
    }
    segments
}

/// Slopes that rise (weakly) then strictly fall pass; anything else fails.
pub fn slopes_unimodal(segments: &[Segment]) -> bool {
    if segments.len() < 3 {
        return true;
    }
    let mut falling = false;
    for w in segments.windows(2) {
        if w[1].slope < w[0].slope {
            falling = true;
        } else if falling {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalityOutcome {
    pub unimodal: bool,
    pub samples: usize,
    pub xi: f64,
    pub segments: usize,
    /// Fewer samples than the configured minimum.
    pub low_sample_count: bool,
}

pub fn check_unimodal(samples: &[f64], cfg: &UnimodalityConfig) -> Result<UnimodalityOutcome> {
    let ecdf = Ecdf::new(samples)?;
    let n = ecdf.len();
    let xi = cfg.xi_for(n);
    if !(xi > 0.0) {
        return Err(Error::param("xi", format!("must be positive, got {xi}")));
    }
    let low = n < cfg.min_samples;
    if low {
        warn!("unimodality check on {n} samples, fewer than {}", cfg.min_samples);
    }
    let segments = fit_segments(&ecdf, xi);
    if segments.len() < 3 {
        debug!("only {} chords; treating the sample as unimodal", segments.len());
    }
    Ok(UnimodalityOutcome {
        unimodal: slopes_unimodal(&segments),
        samples: n,
        xi,
        segments: segments.len(),
        low_sample_count: low,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn normal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn ecdf_heights_and_eval() {
        let e = Ecdf::new(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(e.values(), &[1.0, 2.0, 3.0]);
        assert!((e.height(0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.eval(0.5), 0.0);
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.eval(9.0), 1.0);
        assert!(Ecdf::new(&[1.0]).is_err());
        assert!(Ecdf::new(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn chords_stay_within_tolerance() {
        let data = normal(5_000, 3);
        let e = Ecdf::new(&data).unwrap();
        let xi = 0.02;
        for s in fit_segments(&e, xi) {
            let (x0, f0) = (e.values()[s.start], e.height(s.start));
            for k in s.start..=s.end {
                let line = f0 + s.slope * (e.values()[k] - x0);
                assert!((e.height(k) - line).abs() <= xi + 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_and_uniform_pass() {
        let cfg = UnimodalityConfig::default();
        assert!(check_unimodal(&normal(50_000, 11), &cfg).unwrap().unimodal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..50_000).map(|_| u.sample(&mut rng)).collect();
        assert!(check_unimodal(&data, &cfg).unwrap().unimodal);
    }

    #[test]
    fn separated_mixture_fails() {
        let mut data: Vec<f64> = normal(50_000, 7);
        for (i, v) in data.iter_mut().enumerate() {
            *v += if i % 2 == 0 { -3.0 } else { 3.0 };
        }
        assert!(!check_unimodal(&data, &UnimodalityConfig::default()).unwrap().unimodal);
    }

    #[test]
    fn point_mass_and_two_points_pass() {
        let cfg = UnimodalityConfig {
            xi: Some(0.01),
            min_samples: 0,
        };
        assert!(check_unimodal(&[1.0; 100], &cfg).unwrap().unimodal);
        assert!(check_unimodal(&[0.0, 1.0], &cfg).unwrap().unimodal);
    }

    #[test]
    fn slope_pattern_rules() {
        let seg = |slope| Segment {
            start: 0,
            end: 1,
            slope,
        };
        assert!(slopes_unimodal(&[seg(1.0), seg(2.0), seg(1.0)]));
        assert!(slopes_unimodal(&[seg(3.0), seg(2.0), seg(1.0)]));
        assert!(!slopes_unimodal(&[seg(1.0), seg(2.0), seg(1.0), seg(2.0)]));
        assert!(!slopes_unimodal(&[seg(2.0), seg(1.0), seg(1.0)]));
    }

    #[test]
    fn shift_invariance() {
        let data = normal(20_000, 9);
        let cfg = UnimodalityConfig::default();
        let base = check_unimodal(&data, &cfg).unwrap();
        let moved: Vec<f64> = data.iter().map(|v| 2.5 * v + 40.0).collect();
        let other = check_unimodal(&moved, &cfg).unwrap();
        assert_eq!(base.unimodal, other.unimodal);
        assert_eq!(base.segments, other.segments);
    }
}
