//! Gentleness monitor and episode outcome classification.
//!
//! A contact is excessive when the net wrench force (or the largest taxel
//! force) stays at or above its threshold for an entire reaction window. The
//! impulse limits are threshold force times window length.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::geom::{Side, TaxelGrid, Vec2, Wrench2D};
use crate::sim::WorldState;
use crate::Error;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConfig {
    pub net_force_threshold: f64,
    pub peak_force_threshold: f64,
    pub reaction_time: f64,
    pub sample_period: f64,
    pub timeout: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            net_force_threshold: 26.0,
            peak_force_threshold: 6.0,
            reaction_time: 0.8,
            sample_period: 0.1,
            timeout: 120.0,
        }
    }
}

impl SafetyConfig {
    /// Net impulse limit, N*s.
    pub fn net_impulse_limit(&self) -> f64 {
        self.net_force_threshold * self.reaction_time
    }

    /// Peak impulse limit, N*s.
    pub fn peak_impulse_limit(&self) -> f64 {
        self.peak_force_threshold * self.reaction_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    Running,
    Success,
    Timeout,
    ExcessiveNet,
    ExcessivePeak,
}

impl Verdict {
    pub fn is_terminal(self) -> bool {
        self != Verdict::Running
    }

    pub fn is_excessive(self) -> bool {
        matches!(self, Verdict::ExcessiveNet | Verdict::ExcessivePeak)
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Running => "running",
            Verdict::Success => "success",
            Verdict::Timeout => "timeout",
            Verdict::ExcessiveNet => "excessive_net",
            Verdict::ExcessivePeak => "excessive_peak",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Verdict::Running,
            1 => Verdict::Success,
            2 => Verdict::Timeout,
            3 => Verdict::ExcessiveNet,
            4 => Verdict::ExcessivePeak,
            _ => return None,
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        (0..5)
            .filter_map(Verdict::from_code)
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown verdict {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub config: SafetyConfig,
    /// (time, |F_net|) samples spanning at most one reaction window.
    pub net_window: VecDeque<(f64, f64)>,
    /// (time, F_peak) samples spanning at most one reaction window.
    pub peak_window: VecDeque<(f64, f64)>,
    pub f_net: f64,
    pub f_peak: f64,
    pub warn_net: f64,
    pub warn_peak: f64,
    pub warn_peak_left: f64,
    pub warn_peak_right: f64,
    pub verdict: Verdict,
    pub verdict_time: Option<f64>,
    last_time: Option<f64>,
}

impl MonitorState {
    pub fn new(config: SafetyConfig) -> Self {
        Self {
            config,
            net_window: VecDeque::new(),
            peak_window: VecDeque::new(),
            f_net: 0.0,
            f_peak: 0.0,
            warn_net: 0.0,
            warn_peak: 0.0,
            warn_peak_left: 0.0,
            warn_peak_right: 0.0,
            verdict: Verdict::Running,
            verdict_time: None,
            last_time: None,
        }
    }

    /// Feeds one noise-free sample taken at time `t`.
    pub fn update(&mut self, t: f64, wrench: &Wrench2D, taxels: &TaxelGrid) -> Result<&Self, Error> {
        if let Some(prev) = self.last_time {
            if t <= prev {
                return Err(Error::NonMonotonicTime { prev, next: t });
            }
        }
        self.last_time = Some(t);
        let cfg = self.config;
        self.f_net = wrench.force_norm();
        let left = taxels.side_peak(Side::Left);
        let right = taxels.side_peak(Side::Right);
        self.f_peak = left.max(right);
        self.warn_net = self.f_net / cfg.net_force_threshold;
        self.warn_peak = self.f_peak / cfg.peak_force_threshold;
        self.warn_peak_left = left / cfg.peak_force_threshold;
        self.warn_peak_right = right / cfg.peak_force_threshold;

        // A window holds the samples whose periods fall inside the last
        // reaction_time seconds.
        let horizon = t - (cfg.reaction_time - cfg.sample_period) - TIME_EPS;
        for (win, v) in [
            (&mut self.net_window, self.f_net),
            (&mut self.peak_window, self.f_peak),
        ] {
            win.push_back((t, v));
            while win.front().is_some_and(|&(ts, _)| ts < horizon) {
                win.pop_front();
            }
        }

        if self.verdict.is_terminal() {
            return Ok(self);
        }
        let needed = (cfg.reaction_time / cfg.sample_period).round() as usize;
        let sustained = |win: &VecDeque<(f64, f64)>, thresh: f64| {
            win.len() >= needed && win.iter().all(|&(_, v)| v >= thresh)
        };
        if sustained(&self.net_window, cfg.net_force_threshold) {
            self.set_verdict(Verdict::ExcessiveNet, t);
        } else if sustained(&self.peak_window, cfg.peak_force_threshold) {
            self.set_verdict(Verdict::ExcessivePeak, t);
        }
        Ok(self)
    }

    fn set_verdict(&mut self, v: Verdict, t: f64) {
        if !self.verdict.is_terminal() {
            self.verdict = v;
            self.verdict_time = Some(t);
        }
    }
}

/// Drop zone in front of the shelf, world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomeRegion {
    pub min: Vec2,
    pub max: Vec2,
}

impl Default for HomeRegion {
    fn default() -> Self {
        Self {
            min: Vec2::new(0.04, -0.25),
            max: Vec2::new(0.34, -0.07),
        }
    }
}

impl HomeRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub verdict: Verdict,
    pub elapsed: f64,
    pub acquired_target: bool,
}

/// Updates the monitor's verdict for the current tick and reports the outcome.
/// Precedence within a tick: excessive force, then success, then timeout.
/// The first terminal verdict is kept.
pub fn classify_outcome(world: &WorldState, monitor: &mut MonitorState, home: &HomeRegion) -> Outcome {
    let t = world.time;
    if !monitor.verdict.is_terminal() {
        let delivered = world.target_acquired
            && world
                .target()
                .is_some_and(|b| home.contains(b.pose.position()));
        if delivered {
            monitor.set_verdict(Verdict::Success, t);
        } else if t >= monitor.config.timeout - TIME_EPS {
            monitor.set_verdict(Verdict::Timeout, t);
        }
    }
    Outcome {
        verdict: monitor.verdict,
        elapsed: monitor.verdict_time.unwrap_or(t),
        acquired_target: world.target_acquired,
    }
}
