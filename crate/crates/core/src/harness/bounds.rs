use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnb::{branch, node_score, AngularGrid, Node, ScoreContext, TransRange};
use crate::geometry::Point3;
use crate::voxelmap::MultiResVoxelMap;

/// How parent nodes are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParentSampling {
    /// Uniform over the level, translation and rotation indices of the tree.
    Uniform,
    /// Uniform parents kept only when their score reaches the given value,
    /// i.e. nodes a search with that incumbent would branch.
    AtLeast(u32),
}

/// Parent/child score comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub parents: u64,
    pub pairs: u64,
    /// Pairs where the child scored higher than its parent.
    pub violations: u64,
    /// Mean of `(child - parent) / child` over the violating pairs.
    pub mean_exceedance: f64,
    pub max_exceedance: f64,
}

impl BoundSample {
    pub fn violation_rate(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.violations as f64 / self.pairs as f64
        }
    }

    pub fn merge(&mut self, other: &BoundSample) {
        let total = self.violations + other.violations;
        if total > 0 {
            self.mean_exceedance = (self.mean_exceedance * self.violations as f64
                + other.mean_exceedance * other.violations as f64)
                / total as f64;
        }
        self.max_exceedance = self.max_exceedance.max(other.max_exceedance);
        self.parents += other.parents;
        self.pairs += other.pairs;
        self.violations = total;
    }
}

/// Samples parents at random levels `1..=l_max`, scores them and all their
/// children exactly, and counts children that beat their parent. Stops once
/// at least `min_pairs` pairs were compared.
///
/// With translation-only grids every child keeps its parent's rotation, so
/// this measures the translational bound alone.
pub fn sample_bound_pairs(
    map: &MultiResVoxelMap,
    scan: &[Point3],
    grids: &AngularGrid,
    range: &TransRange,
    min_pairs: u64,
    sampling: ParentSampling,
    seed: u64,
) -> BoundSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = ScoreContext {
        map,
        scan,
        grids,
        r: map.resolution(),
    };
    let l_max = grids.max_level();
    let mut out = BoundSample::default();
    let mut exceedance_sum = 0.0;
    if l_max == 0 {
        return out;
    }
    let mut draws = 0u64;
    while out.pairs < min_pairs {
        draws += 1;
        // guards against an AtLeast filter nothing can pass
        if out.parents == 0 && draws > 1_000_000 {
            break;
        }
        let level = rng.gen_range(1..=l_max);
        let scale = 1i64 << (l_max - level);
        let trans: [i32; 3] = std::array::from_fn(|a| {
            let lo = range.min[a] as i64 * scale;
            let hi = (range.max[a] as i64 + 1) * scale - 1;
            rng.gen_range(lo..=hi) as i32
        });
        let g = grids.level(level);
        let rot: [i32; 3] = std::array::from_fn(|a| rng.gen_range(0..g[a].index_count as i32));
        let parent = Node::new(trans, rot, level);
        let ps = node_score(&parent, &ctx);
        if let ParentSampling::AtLeast(min) = sampling {
            if ps < min {
                continue;
            }
        }
        out.parents += 1;
        for child in branch(&parent, grids).expect("parent level is at least 1") {
            let cs = node_score(&child, &ctx);
            out.pairs += 1;
            if cs > ps {
                out.violations += 1;
                let e = (cs - ps) as f64 / cs as f64;
                exceedance_sum += e;
                out.max_exceedance = out.max_exceedance.max(e);
            }
        }
    }
    if out.violations > 0 {
        out.mean_exceedance = exceedance_sum / out.violations as f64;
    }
    out
}
