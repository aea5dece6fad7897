//! Ablation driver, success statistics, and force/motion analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::EpisodeLog;
use crate::geom::Vec2;
use crate::policy::{PolicyController, PolicyWeights, Variant};
use crate::rollout::{derive_seed, rollout, RolloutOptions, TraceSample};
use crate::safety::{SafetyConfig, Verdict};
use crate::scene::{generate, ShelfSpec};
use crate::sim::{SimParams, WorldState};
use crate::Error;

/// Two-sided pooled two-proportion z-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p: f64,
}

/// Pooled z statistic of `s_a / n_a` against `s_b / n_b` with its two-sided
/// p-value. A pooled rate of exactly 0 or 1 leaves z undefined.
pub fn z_test(s_a: u64, n_a: u64, s_b: u64, n_b: u64) -> Result<ZTest, Error> {
    if n_a == 0 || n_b == 0 || s_a > n_a || s_b > n_b {
        return Err(Error::InvalidConfig("z_test needs 0 <= s <= n and n > 0".into()));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pooled = (s_a + s_b) as f64 / (na + nb);
    if pooled == 0.0 || pooled == 1.0 {
        return Err(Error::DegenerateProportion(pooled));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let z = (s_a as f64 / na - s_b as f64 / nb) / se;
    let normal = Normal::standard();
    let p = 2.0 * normal.sf(z.abs());
    Ok(ZTest { z, p: p.min(1.0) })
}

/// [`z_test`] with the degenerate case mapped to z = 0, p = 1: a pooled rate
/// of 0 or 1 means both proportions are equal.
pub fn z_test_or_equal(s_a: u64, n_a: u64, s_b: u64, n_b: u64) -> Result<ZTest, Error> {
    match z_test(s_a, n_a, s_b, n_b) {
        Err(Error::DegenerateProportion(_)) => Ok(ZTest { z: 0.0, p: 1.0 }),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub force_bin: f64,
    pub force_max: f64,
    pub displacement_bin: f64,
    pub displacement_max: f64,
    /// Look-ahead window for displacement, s.
    pub window: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            force_bin: 2.0,
            force_max: 40.0,
            displacement_bin: 0.005,
            displacement_max: 0.08,
            window: 0.8,
        }
    }
}

impl HeatmapSpec {
    pub fn force_bins(&self) -> usize {
        (self.force_max / self.force_bin).round() as usize
    }

    pub fn displacement_bins(&self) -> usize {
        (self.displacement_max / self.displacement_bin).round() as usize
    }

    /// Bin of `v`, values past the last edge land in the last bin.
    fn bin(v: f64, width: f64, n: usize) -> usize {
        ((v.max(0.0) / width).floor() as usize).min(n - 1)
    }
}

/// Counts indexed `[force_bin][displacement_bin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub spec: HeatmapSpec,
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn new(spec: HeatmapSpec) -> Self {
        Self {
            spec,
            counts: vec![vec![0; spec.displacement_bins()]; spec.force_bins()],
        }
    }

    pub fn add(&mut self, force: f64, displacement: f64) {
        let s = &self.spec;
        let f = HeatmapSpec::bin(force, s.force_bin, s.force_bins());
        let d = HeatmapSpec::bin(displacement, s.displacement_bin, s.displacement_bins());
        self.counts[f][d] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &Heatmap) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Per-tick force and tool position, the input of the motion analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub t: f64,
    pub f_net: f64,
    pub f_peak: f64,
    pub position: Vec2,
}

impl From<&TraceSample> for MotionSample {
    fn from(s: &TraceSample) -> Self {
        Self {
            t: s.t,
            f_net: s.f_net,
            f_peak: s.f_peak,
            position: s.pose.position(),
        }
    }
}

/// Motion samples of a recorded episode; empty when it carries no frames.
pub fn episode_motion(log: &EpisodeLog) -> Vec<MotionSample> {
    log.ticks
        .iter()
        .filter_map(|k| {
            let f = k.frame.as_ref()?;
            Some(MotionSample {
                t: k.t as f64,
                f_net: k.f_net as f64,
                f_peak: k.f_peak as f64,
                position: Vec2::new(f.pose[0] as f64, f.pose[1] as f64),
            })
        })
        .collect()
}

/// (force sample, displacement over the following window) for every tick with
/// a full window ahead of it.
fn reactions(samples: &[MotionSample], window: f64) -> impl Iterator<Item = (&MotionSample, f64)> + '_ {
    let mut j = 0;
    samples.iter().enumerate().filter_map(move |(i, s)| {
        j = j.max(i);
        while j < samples.len() && samples[j].t < s.t + window - 1e-6 {
            j += 1;
        }
        let end = samples.get(j)?;
        Some((s, (end.position - s.position).norm()))
    })
}

/// Net-force and peak-force heatmaps of resulting displacement.
pub fn force_motion_heatmap(episodes: &[Vec<MotionSample>], spec: HeatmapSpec) -> (Heatmap, Heatmap) {
    let mut net = Heatmap::new(spec);
    let mut peak = Heatmap::new(spec);
    for ep in episodes {
        for (s, d) in reactions(ep, spec.window) {
            net.add(s.f_net, d);
            peak.add(s.f_peak, d);
        }
    }
    (net, peak)
}

/// Ticks whose force exceeded a threshold yet were followed by less than
/// `min_displacement` of tool motion within the reaction window.
pub fn failed_reactions(episodes: &[Vec<MotionSample>], safety: &SafetyConfig, min_displacement: f64) -> u64 {
    episodes
        .iter()
        .flat_map(|ep| reactions(ep, safety.reaction_time))
        .filter(|(s, d)| {
            (s.f_net > safety.net_force_threshold || s.f_peak > safety.peak_force_threshold) && *d < min_displacement
        })
        .count() as u64
}

pub const FAILED_REACTION_DISPLACEMENT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub n: u64,
    pub success: u64,
    pub timeout: u64,
    pub excessive_net: u64,
    pub excessive_peak: u64,
    /// Mean time of successful episodes, s.
    pub mean_success_time: Option<f64>,
    pub success_time_stderr: Option<f64>,
    pub failed_reactions: u64,
    /// Against the baseline variant, when one was evaluated.
    pub vs_baseline: Option<ZTest>,
    pub heatmap_net: Heatmap,
    pub heatmap_peak: Heatmap,
    /// Verdict of each scene, in scene order.
    pub verdicts: Vec<String>,
}

impl VariantReport {
    pub fn excessive(&self) -> u64 {
        self.excessive_net + self.excessive_peak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub scene_seeds: Vec<u64>,
    pub variants: Vec<VariantReport>,
}

/// Outcome and trace of one evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub scene_seed: u64,
    pub verdict: Verdict,
    pub elapsed: f64,
    pub motion: Vec<MotionSample>,
}

/// Aggregates episode results of one variant.
pub fn summarize(variant: &str, results: &[EpisodeResult], safety: &SafetyConfig) -> VariantReport {
    let count = |v: Verdict| results.iter().filter(|r| r.verdict == v).count() as u64;
    let times: Vec<f64> = results
        .iter()
        .filter(|r| r.verdict == Verdict::Success)
        .map(|r| r.elapsed)
        .collect();
    let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    let stderr = mean.filter(|_| times.len() > 1).map(|m| {
        let var = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (times.len() - 1) as f64;
        (var / times.len() as f64).sqrt()
    });
    let motions: Vec<Vec<MotionSample>> = results.iter().map(|r| r.motion.clone()).collect();
    let (heatmap_net, heatmap_peak) = force_motion_heatmap(&motions, HeatmapSpec::default());
    VariantReport {
        variant: variant.to_string(),
        n: results.len() as u64,
        success: count(Verdict::Success),
        timeout: count(Verdict::Timeout),
        excessive_net: count(Verdict::ExcessiveNet),
        excessive_peak: count(Verdict::ExcessivePeak),
        mean_success_time: mean,
        success_time_stderr: stderr,
        failed_reactions: failed_reactions(&motions, safety, FAILED_REACTION_DISPLACEMENT),
        vs_baseline: None,
        heatmap_net,
        heatmap_peak,
        verdicts: results.iter().map(|r| r.verdict.to_string()).collect(),
    }
}

/// Fills in z-tests of every variant against the baseline entry.
pub fn compare_to_baseline(reports: &mut [VariantReport]) -> Result<(), Error> {
    let Some(base) = reports.iter().find(|r| r.variant == Variant::Baseline.name()).cloned() else {
        return Ok(());
    };
    for r in reports.iter_mut() {
        r.vs_baseline = Some(z_test_or_equal(r.success, r.n, base.success, base.n)?);
    }
    Ok(())
}

/// Scene seeds used by an evaluation run.
pub fn eval_scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(seed, 0x6576_616c, i)).collect()
}

/// Rolls out one policy on one scene.
pub fn evaluate_episode(weights: &PolicyWeights, scene_seed: u64, safety: SafetyConfig) -> Result<EpisodeResult, Error> {
    let spec = ShelfSpec::default();
    let schematic = generate(scene_seed, &spec)?;
    let mut world = WorldState::from_schematic(&schematic, spec, SimParams::default())?;
    let mut controller = PolicyController::new(weights.clone(), derive_seed(scene_seed, 2, 0));
    let opts = RolloutOptions {
        safety,
        sensor_seed: derive_seed(scene_seed, 1, 0),
        ..RolloutOptions::default()
    };
    let r = rollout(&mut world, &mut controller, &opts)?;
    Ok(EpisodeResult {
        scene_seed,
        verdict: r.outcome.verdict,
        elapsed: r.outcome.elapsed,
        motion: r.trace.iter().map(MotionSample::from).collect(),
    })
}

/// Evaluates every requested variant on the same `n_eval` scenes.
pub fn run_ablation(
    weights: &BTreeMap<Variant, PolicyWeights>,
    variants: &[Variant],
    n_eval: usize,
    seed: u64,
) -> Result<EvalReport, Error> {
    for v in variants {
        if !weights.contains_key(v) {
            return Err(Error::MissingWeights(v.name().into()));
        }
    }
    let scene_seeds = eval_scene_seeds(seed, n_eval);
    let safety = SafetyConfig::default();
    let mut reports = Vec::new();
    for v in variants {
        let w = &weights[v];
        let results = scene_seeds
            .iter()
            .map(|&s| evaluate_episode(w, s, safety))
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(summarize(v.name(), &results, &safety));
    }
    compare_to_baseline(&mut reports)?;
    Ok(EvalReport {
        seed,
        scene_seeds,
        variants: reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::Parse(format!("unknown report format {s:?}"))),
        }
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$}"))
}

impl EvalReport {
    pub fn render(&self, format: ReportFormat, heatmaps: bool) -> String {
        match format {
            ReportFormat::Text => self.to_text(heatmaps),
            ReportFormat::Csv => self.to_csv(heatmaps),
            ReportFormat::Svg => self.to_svg(),
        }
    }

    pub fn to_text(&self, heatmaps: bool) -> String {
        let mut s = String::new();
        let n = self.scene_seeds.len();
        writeln!(s, "evaluation seed {} on {n} scenes", self.seed).unwrap();
        writeln!(
            s,
            "{:<10} {:>7} {:>7} {:>7} {:>7} {:>12} {:>9} {:>8} {:>8}",
            "variant", "success", "timeout", "exc_net", "exc_pk", "time_s", "failed_rx", "z", "p"
        )
        .unwrap();
        for r in &self.variants {
            let time = match (r.mean_success_time, r.success_time_stderr) {
                (Some(m), Some(e)) => format!("{m:.1}+-{e:.1}"),
                (Some(m), None) => format!("{m:.1}"),
                _ => "-".into(),
            };
            writeln!(
                s,
                "{:<10} {:>7} {:>7} {:>7} {:>7} {:>12} {:>9} {:>8} {:>8}",
                r.variant,
                r.success,
                r.timeout,
                r.excessive_net,
                r.excessive_peak,
                time,
                r.failed_reactions,
                opt(r.vs_baseline.map(|z| z.z), 3),
                opt(r.vs_baseline.map(|z| z.p), 4),
            )
            .unwrap();
        }
        if heatmaps {
            for r in &self.variants {
                for (name, h) in [("net", &r.heatmap_net), ("peak", &r.heatmap_peak)] {
                    writeln!(s, "\n{} {name} force (rows, 2 N bins) vs displacement (cols, 0.5 cm bins)", r.variant).unwrap();
                    for (i, row) in h.counts.iter().enumerate() {
                        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
                        writeln!(s, "{:>3} {}", i as f64 * h.spec.force_bin, cells.join("")).unwrap();
                    }
                }
            }
        }
        s
    }

    pub fn to_csv(&self, heatmaps: bool) -> String {
        let mut s = String::from(
            "variant,n,success,timeout,excessive_net,excessive_peak,mean_success_time,success_time_stderr,failed_reactions,z,p\n",
        );
        for r in &self.variants {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.n,
                r.success,
                r.timeout,
                r.excessive_net,
                r.excessive_peak,
                r.mean_success_time.map_or(String::new(), |v| v.to_string()),
                r.success_time_stderr.map_or(String::new(), |v| v.to_string()),
                r.failed_reactions,
                r.vs_baseline.map_or(String::new(), |z| z.z.to_string()),
                r.vs_baseline.map_or(String::new(), |z| z.p.to_string()),
            )
            .unwrap();
        }
        if heatmaps {
            s.push_str("\nvariant,kind,force_bin,displacement_bin,count\n");
            for r in &self.variants {
                for (name, h) in [("net", &r.heatmap_net), ("peak", &r.heatmap_peak)] {
                    for (i, row) in h.counts.iter().enumerate() {
                        for (j, c) in row.iter().enumerate() {
                            writeln!(s, "{},{name},{i},{j},{c}", r.variant).unwrap();
                        }
                    }
                }
            }
        }
        s
    }

    /// Heatmaps of every variant as one SVG, net on top and peak below, with
    /// the force threshold marked.
    pub fn to_svg(&self) -> String {
        let cell = 12.0;
        let spec = self
            .variants
            .first()
            .map_or(HeatmapSpec::default(), |r| r.heatmap_net.spec);
        let (fb, db) = (spec.force_bins(), spec.displacement_bins());
        let panel_w = fb as f64 * cell + 40.0;
        let panel_h = db as f64 * cell + 40.0;
        let width = panel_w * self.variants.len().max(1) as f64;
        let height = panel_h * 2.0;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
        )
        .unwrap();
        let safety = SafetyConfig::default();
        for (k, r) in self.variants.iter().enumerate() {
            for (row, (name, h, thresh)) in [
                ("net", &r.heatmap_net, safety.net_force_threshold),
                ("peak", &r.heatmap_peak, safety.peak_force_threshold),
            ]
            .into_iter()
            .enumerate()
            {
                let x0 = k as f64 * panel_w + 30.0;
                let y0 = row as f64 * panel_h + 15.0;
                writeln!(s, r#"<text x="{x0}" y="{}">{} {name}</text>"#, y0 - 4.0, r.variant).unwrap();
                let max = h.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
                for (i, col) in h.counts.iter().enumerate() {
                    for (j, c) in col.iter().enumerate() {
                        // Log shading so sparse bins stay visible.
                        let v = ((1.0 + *c as f64).ln() / (1.0 + max).ln() * 255.0).round() as u8;
                        let shade = 255 - v;
                        let x = x0 + i as f64 * cell;
                        let y = y0 + (db - 1 - j) as f64 * cell;
                        writeln!(
                            s,
                            r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)"><title>{c}</title></rect>"#
                        )
                        .unwrap();
                    }
                }
                let tx = x0 + thresh / spec.force_bin * cell;
                writeln!(
                    s,
                    r#"<line x1="{tx}" y1="{y0}" x2="{tx}" y2="{}" stroke="red" stroke-dasharray="3,2"/>"#,
                    y0 + db as f64 * cell
                )
                .unwrap();
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
