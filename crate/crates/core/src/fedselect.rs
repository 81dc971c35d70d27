//! Layer-divergence measurement and adaptive layer selection.
//!
//! Each client reports, per layer, the relative distance between its target
//! and online nets. The server keeps a sliding window of those values and
//! broadcasts their `tau`-quantile as a boundary; clients skip uploading the
//! online layers whose divergence falls strictly below it. `tau` follows a
//! per-round curve whose integral over training fixes the online-upload
//! budget.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::nn::LayeredParams;

/// Per-layer divergence values of one client in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmVector {
    pub values: Vec<f64>,
    pub client_id: usize,
    pub round: usize,
}

/// `||target[j] - online[j]|| / ||online[j]||` for every layer `j`, with
/// weights and bias flattened together.
///
/// A zero online layer yields 0 if the target layer is zero too, and
/// `+inf` otherwise; `+inf` always uploads.
pub fn fsm_values(online: &LayeredParams, target: &LayeredParams) -> Result<Vec<f64>> {
    online.check_congruent(target)?;
    Ok(online
        .layers
        .iter()
        .zip(&target.layers)
        .map(|(s, t)| {
            let diff = s
                .values()
                .zip(t.values())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt();
            let norm = s.l2_norm();
            if norm > 0.0 {
                diff / norm
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

pub fn fsm(
    online: &LayeredParams,
    target: &LayeredParams,
    client_id: usize,
    round: usize,
) -> Result<FsmVector> {
    Ok(FsmVector {
        values: fsm_values(online, target)?,
        client_id,
        round,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurveKind {
    #[default]
    Linear,
    Rectangle,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Linear => "linear",
            CurveKind::Rectangle => "rectangle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(CurveKind::Linear),
            "rectangle" => Some(CurveKind::Rectangle),
            _ => None,
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Quantile level per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSchedule {
    pub kind: CurveKind,
    /// Target reduction of the online-net upload rate, in `[0, 1]`.
    pub mu: f64,
    /// First tipping point; `tau` is zero up to and including it.
    pub phi_g: usize,
    /// Second tipping point of the rectangle curve.
    pub varphi_g: usize,
    pub total_rounds: usize,
}

impl TauSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::config("mu", "must lie in [0, 1]"));
        }
        if self.phi_g >= self.total_rounds {
            return Err(Error::config(
                "phi_g",
                format!(
                    "tipping point {} must be below the {} total rounds",
                    self.phi_g, self.total_rounds
                ),
            ));
        }
        if self.kind == CurveKind::Rectangle
            && !(self.phi_g < self.varphi_g && self.varphi_g <= self.total_rounds)
        {
            return Err(Error::config(
                "varphi_g",
                format!(
                    "rectangle curve needs phi_g < varphi_g <= rounds, got {} / {} / {}",
                    self.phi_g, self.varphi_g, self.total_rounds
                ),
            ));
        }
        Ok(())
    }

    /// The curve before clamping, at a (possibly fractional) round.
    pub fn unclamped(&self, round: f64) -> f64 {
        let total = self.total_rounds as f64;
        let phi = self.phi_g as f64;
        match self.kind {
            CurveKind::Linear => {
                if round <= phi || round > total {
                    0.0
                } else {
                    -2.0 * (1.0 - self.mu) * total / ((total - phi) * (total - phi))
                        * (round - total)
                }
            }
            CurveKind::Rectangle => {
                let varphi = self.varphi_g as f64;
                if round > phi && round < varphi {
                    (1.0 - self.mu) * total / (varphi - phi)
                } else {
                    0.0
                }
            }
        }
    }

    /// `tau` for a 1-based round, clamped to `[0, 1]`.
    pub fn tau(&self, round: usize) -> f64 {
        self.unclamped(round as f64).clamp(0.0, 1.0)
    }
}

pub fn tau_linear(round: usize, sched: &TauSchedule) -> f64 {
    TauSchedule {
        kind: CurveKind::Linear,
        ..*sched
    }
    .tau(round)
}

pub fn tau_rectangle(round: usize, sched: &TauSchedule) -> f64 {
    TauSchedule {
        kind: CurveKind::Rectangle,
        ..*sched
    }
    .tau(round)
}

/// Server-side window of the most recent rounds' divergence vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceLog {
    capacity_rounds: usize,
    window: VecDeque<Vec<FsmVector>>,
}

impl DivergenceLog {
    pub fn new(capacity_rounds: usize) -> Self {
        Self {
            capacity_rounds: capacity_rounds.max(1),
            window: VecDeque::new(),
        }
    }

    /// Appends one round's vectors, evicting the oldest rounds beyond capacity.
    pub fn update(&mut self, round_vectors: Vec<FsmVector>) {
        self.window.push_back(round_vectors);
        while self.window.len() > self.capacity_rounds {
            self.window.pop_front();
        }
    }

    pub fn rounds(&self) -> usize {
        self.window.len()
    }

    /// Stored scalars, sentinels included.
    pub fn len_scalars(&self) -> usize {
        self.window
            .iter()
            .flatten()
            .map(|v| v.values.len())
            .sum()
    }

    pub fn contains_round(&self, round: usize) -> bool {
        self.window.iter().flatten().any(|v| v.round == round)
    }

    /// All finite stored values.
    pub fn finite_values(&self) -> Vec<f64> {
        self.window
            .iter()
            .flatten()
            .flat_map(|v| v.values.iter().copied())
            .filter(|v| v.is_finite())
            .collect()
    }
}

/// `tau`-quantile of sorted values, interpolating linearly between the
/// closest ranks at position `(n - 1) * tau`.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Skip boundary for the coming round. `tau == 0` or an empty log yields
/// `-inf`, which skips nothing.
pub fn boundary(log: &DivergenceLog, tau: f64) -> f64 {
    if tau <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut values = log.finite_values();
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    values.sort_by(f64::total_cmp);
    quantile_sorted(&values, tau.min(1.0))
}

/// `true` uploads the online layer; layers strictly below the boundary are
/// skipped.
pub fn select_layers(fsm: &FsmVector, boundary: f64) -> Vec<bool> {
    fsm.values.iter().map(|&v| !(v < boundary)).collect()
}
