//! Runs the nine processing/branching/strategy configurations over a set of
//! scenes and summarizes success counts and runtimes.
//!
//! Each row of the JSON-lines report is one scene under one configuration:
//!
//! ```text
//! {"scene":0,"seed":1,"config":"i","label":"...","matched":true,"best_score":990,
//!  "score_threshold":950,"num_points":1002,"trans_err":0.4,"rot_err":0.01,
//!  "success":true,"runtime_ms":123.4,"stats":{...},"gt_pose":{...},"pose":{...}}
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{build_map, downsample_scan, EvalOutcome, HarnessError, Scene};
use crate::bnb::{search, BranchMode, SearchConfig, Stats, Strategy, WorkerMode};
use crate::geometry::Pose6;

/// Where batch scoring runs. The accelerator rows are served by a worker
/// pool; their labels say so.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Processing {
    Single,
    Multi,
    GpuSubstitute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub id: String,
    pub processing: Processing,
    pub workers: usize,
    pub branch_mode: BranchMode,
    pub strategy: Strategy,
}

impl BenchConfig {
    pub fn label(&self) -> String {
        let processing = match self.processing {
            Processing::Single => "cpu single".to_string(),
            Processing::Multi => format!("cpu multi x{}", self.workers),
            Processing::GpuSubstitute => format!("gpu -> multi x{}", self.workers),
        };
        let branch = match self.branch_mode {
            BranchMode::TransOnly => "trans",
            BranchMode::RotoTrans => "trans+rot",
        };
        let strategy = match self.strategy {
            Strategy::Dfs => "dfs",
            Strategy::Bfs => "bfs",
        };
        format!("({}) {processing}, {branch}, {strategy}", self.id)
    }

    pub fn apply(&self, base: &SearchConfig) -> SearchConfig {
        SearchConfig {
            workers: WorkerMode::from(self.workers),
            branch_mode: self.branch_mode,
            strategy: self.strategy,
            ..base.clone()
        }
    }
}

/// Configurations (a) to (i): single, multi and accelerator-substitute
/// processing for translation-only DFS, translation-only BFS and
/// roto-translational BFS.
pub fn standard_configs(multi_workers: usize, substitute_workers: usize) -> Vec<BenchConfig> {
    let combos = [
        (BranchMode::TransOnly, Strategy::Dfs),
        (BranchMode::TransOnly, Strategy::Bfs),
        (BranchMode::RotoTrans, Strategy::Bfs),
    ];
    let processing = [
        (Processing::Single, 1),
        (Processing::Multi, multi_workers),
        (Processing::GpuSubstitute, substitute_workers),
    ];
    let mut out = Vec::new();
    for (ci, (branch_mode, strategy)) in combos.into_iter().enumerate() {
        for (pi, (p, workers)) in processing.into_iter().enumerate() {
            out.push(BenchConfig {
                id: ((b'a' + (ci * 3 + pi) as u8) as char).to_string(),
                processing: p,
                workers,
                branch_mode,
                strategy,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene: usize,
    pub seed: u64,
    pub config: String,
    pub label: String,
    pub matched: bool,
    pub best_score: u32,
    pub score_threshold: u32,
    pub num_points: usize,
    pub trans_err: f64,
    pub rot_err: f64,
    pub success: bool,
    /// Scan preparation plus localization, excluding the map build.
    pub runtime_ms: f64,
    pub stats: Stats,
    pub gt_pose: Pose6,
    pub pose: Pose6,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub label: String,
    pub runs: usize,
    pub successes: usize,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    /// Median of each phase over the runs, in breakdown order.
    pub phase_median_ms: Vec<(String, f64)>,
}

impl ConfigSummary {
    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<ConfigSummary>,
}

/// Median and first/third quartiles with linear interpolation.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.25), q(0.75))
}

impl BenchReport {
    fn summarize(rows: &[BenchRow], configs: &[BenchConfig]) -> Vec<ConfigSummary> {
        configs
            .iter()
            .map(|c| {
                let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.config == c.id).collect();
                let runtimes: Vec<f64> = mine.iter().map(|r| r.runtime_ms).collect();
                let (median_ms, q1_ms, q3_ms) = median_iqr(&runtimes);
                let mut phase_median_ms = Vec::new();
                if let Some(first) = mine.first() {
                    for (gi, group) in first.stats.breakdown().iter().enumerate() {
                        for (pi, (name, _)) in group.phases.iter().enumerate() {
                            let vals: Vec<f64> = mine
                                .iter()
                                .map(|r| r.stats.breakdown()[gi].phases[pi].1)
                                .collect();
                            phase_median_ms.push((name.clone(), median_iqr(&vals).0));
                        }
                    }
                }
                ConfigSummary {
                    config: c.id.clone(),
                    label: c.label(),
                    runs: mine.len(),
                    successes: mine.iter().filter(|r| r.success).count(),
                    median_ms,
                    q1_ms,
                    q3_ms,
                    phase_median_ms,
                }
            })
            .collect()
    }

    /// One JSON object per scene and configuration.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<36} {:>9} {:>12} {:>12} {:>12} {:>12}",
            "configuration", "success", "median [ms]", "q1 [ms]", "q3 [ms]", "IQR [ms]"
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<36} {:>9} {:>12.1} {:>12.1} {:>12.1} {:>12.1}",
                s.label,
                format!("{}/{}", s.successes, s.runs),
                s.median_ms,
                s.q1_ms,
                s.q3_ms,
                s.iqr_ms()
            );
        }
        if let Some(first) = self.summaries.first() {
            let _ = writeln!(out, "\nphase medians [ms]");
            let _ = write!(out, "{:<36}", "configuration");
            for (name, _) in &first.phase_median_ms {
                let _ = write!(out, " {name:>26}");
            }
            let _ = writeln!(out);
            for s in &self.summaries {
                let _ = write!(out, "{:<36}", s.label);
                for (_, v) in &s.phase_median_ms {
                    let _ = write!(out, " {v:>26.1}");
                }
                let _ = writeln!(out);
            }
        }
        out
    }
}

/// Localizes every scene under every configuration.
///
/// The map of each scene is built once with `base.r` and `base.l_max`; its
/// build time is reported in every row of that scene. The scan is
/// downsampled once per scene and the downsampling time is added to each
/// row's `set_source_ms`.
pub fn run_benchmark(
    scenes: &[Scene],
    configs: &[BenchConfig],
    base: &SearchConfig,
    downsample_target: Option<usize>,
) -> Result<BenchReport, HarnessError> {
    let mut rows = Vec::with_capacity(scenes.len() * configs.len());
    for (si, scene) in scenes.iter().enumerate() {
        let (map, build_ms) = build_map(&scene.map_cloud, base)?;
        let (scan, ds_ms) = match downsample_target {
            Some(t) => downsample_scan(&scene.scan_cloud, t)?,
            None => (scene.scan_cloud.clone(), 0.0),
        };
        for c in configs {
            let cfg = c.apply(base);
            let mut result = search(&map, &scan, &cfg)?;
            result.stats.create_voxel_maps_ms = build_ms;
            result.stats.set_source_ms += ds_ms;
            let runtime_ms = result.stats.set_source_ms + result.stats.localization_ms();
            let eval = EvalOutcome::new(
                &result.best_pose,
                &scene.gt_pose,
                runtime_ms,
                result.stats.clone(),
            );
            log::info!(
                "scene {si} config {}: success {} score {} ({:.1} ms)",
                c.id,
                eval.success,
                result.best_score,
                runtime_ms
            );
            rows.push(BenchRow {
                scene: si,
                seed: scene.rng_seed,
                config: c.id.clone(),
                label: c.label(),
                matched: result.matched,
                best_score: result.best_score,
                score_threshold: result.score_threshold,
                num_points: result.num_points,
                trans_err: eval.trans_err,
                rot_err: eval.rot_err,
                success: eval.success,
                runtime_ms,
                stats: result.stats,
                gt_pose: scene.gt_pose,
                pose: result.best_pose,
            });
        }
    }
    let summaries = BenchReport::summarize(&rows, configs);
    Ok(BenchReport { rows, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_configs_in_table_order() {
        let c = standard_configs(4, 8);
        let ids: String = c.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, "abcdefghi");
        assert_eq!(
            (
                c[0].processing,
                c[0].branch_mode,
                c[0].strategy,
                c[0].workers
            ),
            (Processing::Single, BranchMode::TransOnly, Strategy::Dfs, 1)
        );
        assert_eq!(
            (c[4].processing, c[4].strategy, c[4].workers),
            (Processing::Multi, Strategy::Bfs, 4)
        );
        assert_eq!(
            (
                c[8].processing,
                c[8].branch_mode,
                c[8].strategy,
                c[8].workers
            ),
            (
                Processing::GpuSubstitute,
                BranchMode::RotoTrans,
                Strategy::Bfs,
                8
            )
        );
        assert!(c[8].label().contains("gpu -> multi x8"));
        assert_eq!(
            c[8].apply(&SearchConfig::default()).workers,
            WorkerMode::Multi(8)
        );
    }

    #[test]
    fn quartiles() {
        assert_eq!(median_iqr(&[3.0, 1.0, 2.0]), (2.0, 1.5, 2.5));
        assert_eq!(median_iqr(&[5.0]), (5.0, 5.0, 5.0));
        let (m, q1, q3) = median_iqr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((m, q1, q3), (2.5, 1.75, 3.25));
        assert!(median_iqr(&[]).0.is_nan());
    }
}
