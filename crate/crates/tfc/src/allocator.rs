//! Granularity allocation: turning entropy tracks and user ratios into
//! per-tier binary masks, plus the frame-rate arithmetic around them.
//!
//! Allocation is exact rank selection rather than a quantile threshold: the
//! requested fraction of coarse slots with the lowest coarse entropy is
//! locked first, medium positions are then chosen among the slots coarse did
//! not cover, and whatever remains stays fine. Ties break toward the smaller
//! index, so allocation is fully deterministic and the three masks always
//! partition the timeline exactly.

use crate::entropy::EntropyTracks;
use crate::error::{Error, Result};

/// How long a signal's time span each granularity tier should cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GranularityRatios {
    pub r_f: f64,
    pub r_m: f64,
    pub r_c: f64,
}

impl GranularityRatios {
    /// Validates non-negativity and that the components sum to 1 (within
    /// 1e-9, absorbing decimal-literal rounding).
    pub fn new(r_f: f64, r_m: f64, r_c: f64) -> Result<GranularityRatios> {
        if r_f < 0.0 || r_m < 0.0 || r_c < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "granularity ratios must be non-negative, got ({r_f}, {r_m}, {r_c})"
            )));
        }
        let sum = r_f + r_m + r_c;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "granularity ratios must sum to 1, got ({r_f}, {r_m}, {r_c}) = {sum}"
            )));
        }
        Ok(GranularityRatios { r_f, r_m, r_c })
    }

    /// Everything at the full frame rate.
    pub fn all_fine() -> GranularityRatios {
        GranularityRatios {
            r_f: 1.0,
            r_m: 0.0,
            r_c: 0.0,
        }
    }
}

/// Binary granularity masks over the fine timeline.
///
/// `b_f` has one entry per fine frame (T), `b_m` one per medium frame (T/2),
/// `b_c` one per coarse frame (T/4). A valid assignment covers every fine
/// position exactly once across the three tiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularityMasks {
    pub b_f: Vec<bool>,
    pub b_m: Vec<bool>,
    pub b_c: Vec<bool>,
}

impl GranularityMasks {
    /// Number of fine-frame positions T.
    pub fn num_fine_slots(&self) -> usize {
        self.b_f.len()
    }

    /// Selected frames per tier: (fine, medium, coarse).
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        (count(&self.b_f), count(&self.b_m), count(&self.b_c))
    }

    /// Total frames that will be coded.
    pub fn total_frames(&self) -> usize {
        let (f, m, c) = self.counts();
        f + m + c
    }

    /// True when lengths are in 1:2:4 proportion and every fine position is
    /// covered by exactly one tier (the partition identity).
    pub fn is_valid_partition(&self) -> bool {
        let t = self.b_f.len();
        if t % 4 != 0 || self.b_m.len() != t / 2 || self.b_c.len() != t / 4 {
            return false;
        }
        (0..t).all(|i| {
            u8::from(self.b_f[i]) + u8::from(self.b_m[i / 2]) + u8::from(self.b_c[i / 4]) == 1
        })
    }
}

/// Indices of the `k` smallest values, ties broken toward the smaller index.
fn lowest_k(indexed: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = indexed.iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    order.iter().take(k).map(|&&(i, _)| i).collect()
}

/// Assigns granularity by entropy rank.
///
/// Locks `round(r_c · T/4)` coarse slots with the lowest coarse entropy,
/// then `round(r_m · T/2)` medium positions (among those coarse left free)
/// with the lowest medium entropy, and marks the rest fine.
pub fn allocate_masks(
    tracks: &EntropyTracks,
    ratios: GranularityRatios,
) -> Result<GranularityMasks> {
    let t = tracks.h_f.len();
    if tracks.h_m.len() * 2 != t || tracks.h_c.len() * 4 != t {
        return Err(Error::ShapeMismatch(format!(
            "entropy track lengths {}/{}/{} are not in 1:2:4 proportion",
            t,
            tracks.h_m.len(),
            tracks.h_c.len()
        )));
    }

    let num_coarse = t / 4;
    let num_medium = t / 2;

    let k_c = ((ratios.r_c * num_coarse as f64).round() as usize).min(num_coarse);
    let coarse_pop: Vec<(usize, f64)> = tracks.h_c.iter().cloned().enumerate().collect();
    let mut b_c = vec![false; num_coarse];
    for i in lowest_k(&coarse_pop, k_c) {
        b_c[i] = true;
    }

    // medium candidates: positions whose coarse slot stayed unselected
    let medium_pop: Vec<(usize, f64)> = tracks
        .h_m
        .iter()
        .cloned()
        .enumerate()
        .filter(|(m, _)| !b_c[m / 2])
        .collect();
    let k_m = ((ratios.r_m * num_medium as f64).round() as usize).min(medium_pop.len());
    let mut b_m = vec![false; num_medium];
    for i in lowest_k(&medium_pop, k_m) {
        b_m[i] = true;
    }

    let b_f = (0..t).map(|i| !b_m[i / 2] && !b_c[i / 4]).collect();

    Ok(GranularityMasks { b_f, b_m, b_c })
}

/// Average frame rate implied by the span ratios: F·(r_f + r_m/2 + r_c/4).
pub fn average_frame_rate(ratios: GranularityRatios, base_rate: f64) -> f64 {
    base_rate * (ratios.r_f + ratios.r_m / 2.0 + ratios.r_c / 4.0)
}

/// Which two tiers to mix when solving for a target frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Mix fine and coarse; reaches any target in [F/4, F].
    FineCoarseMix,
    /// Mix fine and medium; reaches targets in [F/2, F].
    FineMediumMix,
    /// Mix medium and coarse; reaches targets in [F/4, F/2].
    MediumCoarseMix,
}

impl TargetPolicy {
    /// Achievable average-frame-rate interval for base rate `f`.
    pub fn range(self, f: f64) -> (f64, f64) {
        match self {
            TargetPolicy::FineCoarseMix => (f / 4.0, f),
            TargetPolicy::FineMediumMix => (f / 2.0, f),
            TargetPolicy::MediumCoarseMix => (f / 4.0, f / 2.0),
        }
    }
}

/// Solves for the two-tier ratio mix whose average frame rate equals
/// `target`. The full base rate is always answered with all-fine,
/// regardless of policy.
pub fn ratios_for_target(
    target: f64,
    base_rate: f64,
    policy: TargetPolicy,
) -> Result<GranularityRatios> {
    if target == base_rate {
        return Ok(GranularityRatios::all_fine());
    }
    let (min_hz, max_hz) = policy.range(base_rate);
    if !(target >= min_hz && target <= max_hz) {
        return Err(Error::InfeasibleTarget {
            target_hz: target,
            min_hz,
            max_hz,
        });
    }
    let x = target / base_rate;
    let (r_f, r_m, r_c) = match policy {
        // r_f + r_c/4 = x, r_f + r_c = 1
        TargetPolicy::FineCoarseMix => {
            let r_f = (4.0 * x - 1.0) / 3.0;
            (r_f, 0.0, 1.0 - r_f)
        }
        // r_f + r_m/2 = x, r_f + r_m = 1
        TargetPolicy::FineMediumMix => {
            let r_f = 2.0 * x - 1.0;
            (r_f, 1.0 - r_f, 0.0)
        }
        // r_m/2 + r_c/4 = x, r_m + r_c = 1
        TargetPolicy::MediumCoarseMix => {
            let r_m = 4.0 * x - 1.0;
            (0.0, r_m, 1.0 - r_m)
        }
    };
    GranularityRatios::new(r_f.max(0.0), r_m.max(0.0), r_c.max(0.0))
}

/// Realized allocation report for a set of masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStatistics {
    pub fine_frames: usize,
    pub medium_frames: usize,
    pub coarse_frames: usize,
    pub total_frames: usize,
    /// Fine-frame positions T (the timeline length).
    pub fine_slots: usize,
    /// total_frames / duration — what the coded stream actually averages.
    pub realized_rate_hz: f64,
    /// Fraction of the time span carried at each tier; sums to 1.
    pub fine_span_fraction: f64,
    pub medium_span_fraction: f64,
    pub coarse_span_fraction: f64,
}

/// Counts frames per tier and computes the realized average frame rate
/// (total frames over the duration implied by `base_rate`).
pub fn mask_statistics(masks: &GranularityMasks, base_rate: f64) -> MaskStatistics {
    let (f, m, c) = masks.counts();
    let t = masks.num_fine_slots();
    let total = f + m + c;
    let (rate, fine_span, medium_span, coarse_span) = if t == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (
            total as f64 * base_rate / t as f64,
            f as f64 / t as f64,
            2.0 * m as f64 / t as f64,
            4.0 * c as f64 / t as f64,
        )
    };
    MaskStatistics {
        fine_frames: f,
        medium_frames: m,
        coarse_frames: c,
        total_frames: total,
        fine_slots: t,
        realized_rate_hz: rate,
        fine_span_fraction: fine_span,
        medium_span_fraction: medium_span,
        coarse_span_fraction: coarse_span,
    }
}
