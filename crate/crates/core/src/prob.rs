//! Probability models that decide when a node should evolve.
//!
//! Inserts only consult these on a conflict, and lookups only every
//! `lookup_sample_period` operations, so the common paths never touch shared
//! counters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::clock::Tick;
use crate::config::EvolveConfig;
use crate::node::{EvolveCause, NodeMeta};

/// Source of Bernoulli draws. Tests substitute scripted outcomes.
pub trait Coin {
    fn flip(&mut self, p: f64) -> bool;
}

impl Coin for ChaCha8Rng {
    #[inline]
    fn flip(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if !(p > 0.0) {
            return false;
        }
        self.random_bool(p)
    }
}

/// Scripted draws, consumed front to back. Panics when exhausted.
#[derive(Debug, Default, Clone)]
pub struct Scripted {
    outcomes: std::collections::VecDeque<bool>,
    pub draws: usize,
}

impl Scripted {
    pub fn new(outcomes: impl IntoIterator<Item = bool>) -> Self {
        Scripted {
            outcomes: outcomes.into_iter().collect(),
            draws: 0,
        }
    }
}

impl Coin for Scripted {
    fn flip(&mut self, _p: f64) -> bool {
        self.draws += 1;
        self.outcomes.pop_front().expect("scripted coin exhausted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerCause {
    Insert,
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision {
    pub evolve: bool,
    pub cause: TriggerCause,
    pub measured_speed: f64,
}

/// `1 / (α·(β−1)·build_num)`, clamped to `(0, 1]`.
pub fn p_conflict(build_num: u64, cfg: &EvolveConfig) -> f64 {
    let denom = cfg.alpha * (cfg.beta - 1.0) * build_num.max(1) as f64;
    if denom <= 1.0 {
        1.0
    } else {
        1.0 / denom
    }
}

/// `(speed·(now − build_time) + depth/ε_div) / ((β−1)·build_num)`, clamped
/// to `[0, 1]`.
pub fn p_acc_raw(
    speed: f64,
    elapsed: Tick,
    depth: u32,
    build_num: u64,
    cfg: &EvolveConfig,
) -> f64 {
    let eps = depth as f64 / cfg.epsilon_divisor;
    let p = (speed * elapsed as f64 + eps) / ((cfg.beta - 1.0) * build_num.max(1) as f64);
    p.clamp(0.0, 1.0)
}

pub fn p_acc(meta: &NodeMeta, now: Tick, cfg: &EvolveConfig) -> f64 {
    p_acc_raw(
        meta.speed,
        now.saturating_sub(meta.build_time),
        meta.depth_hint,
        meta.build_num,
        cfg,
    )
}

/// Keys inserted since the last build divided by elapsed ticks. Returns the
/// old speed when no time has passed.
pub fn update_speed(meta: &NodeMeta, current_num: u64, now: Tick) -> f64 {
    speed_between(meta.speed, meta.build_num, meta.build_time, current_num, now)
}

pub fn speed_between(old: f64, build_num: u64, build_time: Tick, current: u64, now: Tick) -> f64 {
    if now <= build_time {
        return old;
    }
    current.saturating_sub(build_num) as f64 / (now - build_time) as f64
}

/// `p_hl`, scaled by `λ` when the node's last evolve came from lookups.
pub fn effective_p_hl(meta: &NodeMeta, cfg: &EvolveConfig) -> f64 {
    if meta.last_evolve_cause == EvolveCause::LookupEvolve {
        cfg.p_hl * cfg.lambda
    } else {
        cfg.p_hl
    }
}

/// Conflict trial: P_conflict first, then P_acc only if that succeeded.
pub fn on_conflict(
    meta: &NodeMeta,
    now: Tick,
    coin: &mut impl Coin,
    cfg: &EvolveConfig,
) -> TriggerDecision {
    let evolve = coin.flip(p_conflict(meta.build_num, cfg)) && coin.flip(p_acc(meta, now, cfg));
    TriggerDecision {
        evolve,
        cause: TriggerCause::Insert,
        measured_speed: meta.speed,
    }
}

/// Hot-lookup trial: P_hl (with penalty) first, then P_acc.
pub fn hot_lookup_trial(
    meta: &NodeMeta,
    now: Tick,
    coin: &mut impl Coin,
    cfg: &EvolveConfig,
) -> TriggerDecision {
    let evolve = coin.flip(effective_p_hl(meta, cfg)) && coin.flip(p_acc(meta, now, cfg));
    TriggerDecision {
        evolve,
        cause: TriggerCause::Lookup,
        measured_speed: meta.speed,
    }
}

/// Advances a per-thread lookup counter; true once every `period` calls.
#[inline]
pub fn lookup_sample_due(counter: &mut u32, period: u32) -> bool {
    *counter += 1;
    if *counter >= period.max(1) {
        *counter = 0;
        true
    } else {
        false
    }
}

/// Counts one lookup and, when the sampling period wraps, runs the
/// hot-lookup trial. Returns `None` when no draw was made.
pub fn sample_hot_lookup(
    counter: &mut u32,
    meta: &NodeMeta,
    now: Tick,
    coin: &mut impl Coin,
    cfg: &EvolveConfig,
) -> Option<TriggerDecision> {
    if !lookup_sample_due(counter, cfg.lookup_sample_period) {
        return None;
    }
    Some(hot_lookup_trial(meta, now, coin, cfg))
}

/// Deterministic trigger used by the counter-based modes: the node has
/// grown by a factor of β and at least α of its inserts conflicted.
pub fn counter_trigger(build_num: u64, inserts: u64, conflicts: u64, cfg: &EvolveConfig) -> bool {
    inserts > 0
        && (build_num + inserts) as f64 >= cfg.beta * build_num as f64
        && conflicts as f64 >= cfg.alpha * inserts as f64
}
