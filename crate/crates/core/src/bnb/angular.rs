//! Angular step sizes and nested per-level rotation grids.

use std::f64::consts::{PI, TAU};

use super::{BranchMode, SearchError};
use crate::voxelmap::level_resolution;

pub const ROLL: usize = 0;
pub const PITCH: usize = 1;
pub const YAW: usize = 2;

/// Rotation step that moves a point at range `d_max` by at most `r_l`.
///
/// Evaluated as `2 asin(r_l / (2 d_max))`, which equals
/// `acos(1 - r_l² / (2 d_max²))` and keeps the chord identity
/// `2 d_max sin(δ/2) = r_l` accurate for small steps. Clamped to π when
/// `r_l >= 2 d_max`.
pub fn angular_step(r_l: f64, d_max: f64) -> f64 {
    let half_chord = r_l / (2.0 * d_max);
    if half_chord >= 1.0 {
        PI
    } else {
        2.0 * half_chord.asin()
    }
}

/// Splits `range` into the fewest equal segments no wider than `step`.
/// Returns `(range / segments, segments)`.
pub fn adjusted_step(range: f64, step: f64) -> (f64, u32) {
    let segments = ((range / step).ceil() as u32).max(1);
    (range / segments as f64, segments)
}

/// Rotation grid of one axis at one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisGrid {
    pub min: f64,
    pub max: f64,
    /// Adjusted step `δ'`; zero for an empty range.
    pub step: f64,
    pub segments: u32,
    /// Valid indices are `0..index_count`.
    pub index_count: u32,
    /// Whether the range is a full turn, in which case the endpoint is the
    /// same angle as the start and is excluded.
    pub periodic: bool,
}

impl AxisGrid {
    fn new(min: f64, max: f64, segments: u32, periodic: bool) -> Self {
        let range = max - min;
        if range == 0.0 {
            return Self {
                min,
                max,
                step: 0.0,
                segments: 1,
                index_count: 1,
                periodic: false,
            };
        }
        Self {
            min,
            max,
            step: range / segments as f64,
            segments,
            index_count: if periodic { segments } else { segments + 1 },
            periodic,
        }
    }

    #[inline]
    pub fn angle(&self, index: i32) -> f64 {
        self.min + self.step * index as f64
    }

    #[inline]
    pub fn contains(&self, index: i32) -> bool {
        index >= 0 && (index as u32) < self.index_count
    }
}

/// Rotation grids for every level and axis (roll, pitch, yaw).
///
/// The level-`l_max` grid divides each range into `ceil(range / δ(r_lmax))`
/// segments. Every finer level multiplies the segment count of its parent by
/// `a = ceil(δ'(r_{l+1}) / δ(r_l))`, so each coarse cell splits into exactly
/// `a` fine cells and the branch factor is the ratio of adjacent steps.
/// In translation-only mode every level reuses the leaf grid and the branch
/// factor is one.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularGrid {
    mode: BranchMode,
    d_max: f64,
    levels: Vec<[AxisGrid; 3]>,
    /// `factors[l][axis]`: children per parent index when branching from
    /// level `l` to `l - 1`. `factors[0]` is unused and set to one.
    factors: Vec<[u32; 3]>,
}

impl AngularGrid {
    pub fn new(
        ranges: [(f64, f64); 3],
        r: f64,
        l_max: u32,
        d_max: f64,
        mode: BranchMode,
    ) -> Result<Self, SearchError> {
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(SearchError::DegenerateScan(format!(
                "maximum range {d_max} is not positive"
            )));
        }
        let n = l_max as usize + 1;
        let mut segments = vec![[1u32; 3]; n];
        let mut factors = vec![[1u32; 3]; n];
        for axis in 0..3 {
            let (lo, hi) = ranges[axis];
            let range = hi - lo;
            if range == 0.0 {
                continue;
            }
            segments[n - 1][axis] =
                adjusted_step(range, angular_step(level_resolution(r, l_max), d_max)).1;
            for l in (0..n - 1).rev() {
                let parent_step = range / segments[l + 1][axis] as f64;
                let a = ((parent_step / angular_step(level_resolution(r, l as u32), d_max)).ceil()
                    as u32)
                    .max(1);
                segments[l][axis] = segments[l + 1][axis].checked_mul(a).ok_or_else(|| {
                    SearchError::InvalidConfig("rotation grid is too fine".into())
                })?;
                factors[l + 1][axis] = a;
            }
        }
        if mode == BranchMode::TransOnly {
            let leaf = segments[0];
            segments.iter_mut().for_each(|s| *s = leaf);
            factors.iter_mut().for_each(|f| *f = [1; 3]);
        }
        let levels = segments
            .iter()
            .map(|seg| {
                std::array::from_fn(|axis| {
                    let (lo, hi) = ranges[axis];
                    let periodic = axis == YAW && ((hi - lo) - TAU).abs() <= 1e-9;
                    AxisGrid::new(lo, hi, seg[axis], periodic)
                })
            })
            .collect();
        Ok(Self {
            mode,
            d_max,
            levels,
            factors,
        })
    }

    pub fn mode(&self) -> BranchMode {
        self.mode
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    #[inline]
    pub fn axis(&self, level: u32, axis: usize) -> &AxisGrid {
        &self.levels[level as usize][axis]
    }

    /// `[roll, pitch, yaw]` grids at `level`.
    #[inline]
    pub fn level(&self, level: u32) -> &[AxisGrid; 3] {
        &self.levels[level as usize]
    }

    /// Number of children per rotational index when branching a node at
    /// `level` (`level >= 1`).
    #[inline]
    pub fn branch_factor(&self, level: u32, axis: usize) -> u32 {
        self.factors[level as usize][axis]
    }

    /// Number of rotation combinations at `level`.
    pub fn rotation_count(&self, level: u32) -> u64 {
        self.level(level)
            .iter()
            .map(|a| a.index_count as u64)
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn default_ranges() -> [(f64, f64); 3] {
        [(-0.02, 0.02), (-0.02, 0.02), (0.0, TAU)]
    }

    #[test]
    fn step_examples() {
        assert_relative_eq!(angular_step(30.0, 30.0), PI / 3.0, epsilon = 1e-15);
        // independent form
        let expected = (1.0f64 - 1.0 / 5000.0).acos();
        assert_relative_eq!(angular_step(1.0, 50.0), expected, epsilon = 1e-12);
        assert!((angular_step(1.0, 50.0) - 0.020000).abs() < 5e-6);
        assert_eq!(angular_step(100.0, 50.0), PI);
        assert_eq!(angular_step(1e3, 50.0), PI);
    }

    #[test]
    fn adjusted_step_examples() {
        let (s, n) = adjusted_step(TAU, 1.0);
        assert_eq!(n, 7);
        assert_relative_eq!(s, 0.897598, epsilon = 1e-6);
        assert_eq!(adjusted_step(TAU, TAU), (TAU, 1));
        assert_eq!(adjusted_step(TAU, 10.0), (TAU, 1));
        let (s, n) = adjusted_step(0.04, 0.03);
        assert_eq!(n, 2);
        assert_relative_eq!(s, 0.02, epsilon = 1e-15);
    }

    #[test]
    fn nested_yaw_segments_for_reference_parameters() {
        let g = AngularGrid::new(default_ranges(), 1.0, 6, 30.0, BranchMode::RotoTrans).unwrap();
        let yaw: Vec<u32> = (0..=6).map(|l| g.axis(l, YAW).segments).collect();
        assert_eq!(yaw, [192, 96, 48, 24, 12, 6, 2]);
        let factors: Vec<u32> = (1..=6).map(|l| g.branch_factor(l, YAW)).collect();
        assert_eq!(factors, [2, 2, 2, 2, 2, 3]);
        for l in 1..=6 {
            assert_eq!(g.axis(l, ROLL).segments, 1);
            assert_eq!(g.axis(l, ROLL).index_count, 2);
        }
        assert_eq!(g.axis(0, ROLL).segments, 2);
        assert_eq!(g.axis(0, PITCH).index_count, 3);
        assert_eq!(g.branch_factor(1, ROLL), 2);
        assert_eq!(g.axis(0, YAW).index_count, 192);
        assert!(g.axis(0, YAW).periodic);
        assert!(!g.axis(0, ROLL).periodic);
    }

    #[test]
    fn initial_yaw_segments_match_direct_formula() {
        let g = AngularGrid::new(default_ranges(), 1.0, 3, 30.0, BranchMode::RotoTrans).unwrap();
        let direct = (TAU / (1.0f64 - 64.0 / 1800.0).acos()).ceil() as u32;
        assert_eq!(direct, 24);
        assert_eq!(g.axis(3, YAW).segments, 24);
    }

    #[test]
    fn trans_only_reuses_the_leaf_grid() {
        let roto = AngularGrid::new(default_ranges(), 1.0, 4, 30.0, BranchMode::RotoTrans).unwrap();
        let trans =
            AngularGrid::new(default_ranges(), 1.0, 4, 30.0, BranchMode::TransOnly).unwrap();
        for l in 0..=4 {
            assert_eq!(trans.level(l), roto.level(0));
            if l > 0 {
                assert_eq!([0, 1, 2].map(|a| trans.branch_factor(l, a)), [1, 1, 1]);
            }
        }
    }

    #[test]
    fn single_segment_full_turn_has_one_index() {
        let (step, n) = adjusted_step(TAU, 7.0);
        assert_eq!(n, 1);
        let a = AxisGrid::new(0.0, TAU, n, true);
        assert_eq!(a.index_count, 1);
        assert_eq!(a.step, step);
    }

    #[test]
    fn empty_and_tiny_ranges() {
        let g = AngularGrid::new(
            [(0.0, 0.0), (0.0, 0.0), (0.0, TAU)],
            1.0,
            2,
            10.0,
            BranchMode::RotoTrans,
        )
        .unwrap();
        for l in 0..=2 {
            assert_eq!(g.axis(l, ROLL).index_count, 1);
            assert_eq!(g.axis(l, ROLL).angle(0), 0.0);
        }
        assert_eq!(g.branch_factor(1, ROLL), 1);
        assert!(AngularGrid::new(default_ranges(), 1.0, 2, 0.0, BranchMode::RotoTrans).is_err());
    }

    #[test]
    fn closed_yaw_range_keeps_endpoint() {
        let g = AngularGrid::new(
            [(0.0, 0.0), (0.0, 0.0), (-0.5, 0.5)],
            1.0,
            0,
            10.0,
            BranchMode::RotoTrans,
        )
        .unwrap();
        let a = g.axis(0, YAW);
        assert!(!a.periodic);
        assert_eq!(a.index_count, a.segments + 1);
        assert_relative_eq!(a.angle(a.segments as i32), 0.5, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn chord_identity(r in 1e-3f64..10.0, ratio in 0.5001f64..1e4) {
            let d_max = r * ratio;
            let delta = angular_step(r, d_max);
            prop_assert!((2.0 * d_max * (delta / 2.0).sin() - r).abs() <= 1e-12 * r.max(1.0));
        }

        #[test]
        fn segments_times_step_is_range(range in 1e-4f64..TAU, step in 1e-4f64..7.0) {
            let (s, n) = adjusted_step(range, step);
            prop_assert!((s * n as f64 - range).abs() <= 1e-12);
            prop_assert!(s <= step * (1.0 + 1e-15));
        }

        #[test]
        fn grids_nest_exactly(
            r in 0.25f64..4.0,
            l_max in 0u32..7,
            d_max in 2.0f64..200.0,
            rp in 0.0f64..0.3,
        ) {
            let ranges = [(-rp, rp), (-rp, rp), (0.0, TAU)];
            let g = AngularGrid::new(ranges, r, l_max, d_max, BranchMode::RotoTrans).unwrap();
            for l in 0..=l_max {
                for (axis, (lo, hi)) in ranges.iter().enumerate() {
                    let a = g.axis(l, axis);
                    let range = hi - lo;
                    prop_assert!((a.step * a.segments as f64 - range).abs() <= 1e-12);
                    prop_assert!(a.step <= angular_step(level_resolution(r, l), d_max) * (1.0 + 1e-12));
                    if l > 0 {
                        let child = g.axis(l - 1, axis);
                        let f = g.branch_factor(l, axis);
                        prop_assert_eq!(child.segments, a.segments * f);
                        if range > 0.0 {
                            let ratio = a.step / child.step;
                            prop_assert!((ratio - f as f64).abs() < 1e-9);
                            prop_assert_eq!(f, (ratio - 1e-9).ceil() as u32);
                        }
                    }
                }
            }
        }
    }
}
