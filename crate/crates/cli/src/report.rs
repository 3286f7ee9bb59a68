//! JSON shapes printed by the commands.

use bbs3d::bnb::{PhaseGroup, SearchResult, Stats};
use bbs3d::geometry::{pose_to_transform, Pose6};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct PoseOut {
    pub xyz: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub rpy: [f64; 3],
    pub rpy_deg: [f64; 3],
    /// Row-major homogeneous transform from sensor to map frame.
    pub matrix_4x4: [[f64; 4]; 4],
}

impl PoseOut {
    pub fn new(p: &Pose6) -> Self {
        let m = pose_to_transform(p).to_matrix4();
        Self {
            xyz: [p.x, p.y, p.z],
            rpy: [p.roll, p.pitch, p.yaw],
            rpy_deg: [
                p.roll.to_degrees(),
                p.pitch.to_degrees(),
                p.yaw.to_degrees(),
            ],
            matrix_4x4: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LocalizeOut<'a> {
    pub pose: PoseOut,
    pub score: u32,
    pub matched: bool,
    pub score_threshold: u32,
    pub num_points: usize,
    pub d_max: f64,
    pub stats: &'a Stats,
    pub breakdown: Vec<PhaseGroup>,
    pub config: &'a RunConfig,
}

impl<'a> LocalizeOut<'a> {
    pub fn new(result: &'a SearchResult, config: &'a RunConfig) -> Self {
        Self {
            pose: PoseOut::new(&result.best_pose),
            score: result.best_score,
            matched: result.matched,
            score_threshold: result.score_threshold,
            num_points: result.num_points,
            d_max: result.d_max,
            stats: &result.stats,
            breakdown: result.stats.breakdown(),
            config,
        }
    }
}

/// Two-process timing table in the layout of the phase breakdown.
pub fn render_breakdown(groups: &[PhaseGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for (i, (name, ms)) in g.phases.iter().enumerate() {
            let process = if i == 0 { g.name.as_str() } else { "" };
            out.push_str(&format!("{process:<14} {name:<26} {ms:>10.1} ms\n"));
        }
        out.push_str(&format!(
            "{:<14} {:<26} {:>10.1} ms\n",
            "", "Total", g.total_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_matches_pose() {
        let p = Pose6::new(1.0, 2.0, 3.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = PoseOut::new(&p);
        assert_eq!(out.matrix_4x4[0][3], 1.0);
        assert_eq!(out.matrix_4x4[1][3], 2.0);
        assert_eq!(out.matrix_4x4[2][3], 3.0);
        assert_eq!(out.matrix_4x4[3], [0.0, 0.0, 0.0, 1.0]);
        assert!((out.matrix_4x4[1][0] - 1.0).abs() < 1e-12);
        assert!((out.rpy_deg[2] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn breakdown_table_lists_every_phase() {
        let s = Stats {
            create_voxel_maps_ms: 10.0,
            set_source_ms: 1.0,
            ..Stats::default()
        };
        let table = render_breakdown(&s.breakdown());
        for name in [
            "Create voxel maps",
            "Set source point cloud",
            "Initial nodes calculation",
            "Find best score",
            "Pop remaining queue",
        ] {
            assert!(table.contains(name), "{name}");
        }
        assert!(table.contains("11.0 ms"));
    }
}
