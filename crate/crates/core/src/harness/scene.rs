use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::cloud::PointCloud;
use crate::geometry::{pose_to_transform, Point3, Pose6};

/// Parameters of a synthetic urban-like scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    /// Map extent in meters; the ground plane covers `[0, x] × [0, y]` at
    /// `z = 0` and buildings reach at most `z`.
    pub size: [f64; 3],
    pub buildings: usize,
    /// Footprint side range of a building, meters.
    pub footprint: (f64, f64),
    /// Height range of a building, meters; capped at `size[2]`.
    pub height: (f64, f64),
    /// Grid spacing of the map surface samples.
    pub map_spacing: f64,
    /// Sensor range; surfaces farther away are not in the scan.
    pub d_max: f64,
    /// Random surface samples drawn for the raw scan, before range culling.
    pub scan_samples: usize,
    /// Sensor height above the ground.
    pub sensor_height: (f64, f64),
    /// Distance the sensor keeps from the map border and from buildings.
    pub margin: f64,
    /// Roll and pitch of the ground truth are drawn from `[-n, n]`.
    pub roll_pitch_noise: f64,
    /// Uniform per-axis point jitter in meters.
    pub jitter: f64,
    /// Distance used by the feasibility check.
    pub r: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: [64.0, 64.0, 16.0],
            buildings: 10,
            footprint: (4.0, 12.0),
            height: (4.0, 16.0),
            map_spacing: 0.5,
            d_max: 30.0,
            scan_samples: 20_000,
            sensor_height: (1.0, 2.5),
            margin: 6.0,
            roll_pitch_noise: 0.01,
            jitter: 0.02,
            r: 1.0,
            max_attempts: 50,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<(), HarnessError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let ok = self.size.iter().all(|&s| positive(s))
            && positive(self.map_spacing)
            && positive(self.d_max)
            && positive(self.r)
            && self.footprint.0 > 0.0
            && self.footprint.0 <= self.footprint.1
            && self.height.0 > 0.0
            && self.height.0 <= self.height.1
            && self.sensor_height.0 <= self.sensor_height.1
            && self.margin >= 0.0
            && 2.0 * self.margin < self.size[0].min(self.size[1])
            && self.roll_pitch_noise >= 0.0
            && self.jitter >= 0.0
            && self.scan_samples > 0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub map_cloud: PointCloud,
    /// Raw scan in the sensor frame, before downsampling.
    pub scan_cloud: PointCloud,
    pub gt_pose: Pose6,
    pub rng_seed: u64,
    /// Fraction of scan points within `r` of a map point under `gt_pose`.
    pub feasible_fraction: f64,
}

/// Axis-aligned rectangle `origin + s u + t v`, `s, t ∈ [0, 1]`.
#[derive(Clone, Copy, Debug)]
struct Rect {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
}

impl Rect {
    fn area(&self) -> f64 {
        self.u.norm() * self.v.norm()
    }

    fn at(&self, s: f64, t: f64) -> Point3 {
        Point3::from(self.origin + self.u * s + self.v * t)
    }

    fn grid_samples(&self, spacing: f64, out: &mut Vec<Point3>) {
        let nu = (self.u.norm() / spacing).ceil().max(1.0) as usize;
        let nv = (self.v.norm() / spacing).ceil().max(1.0) as usize;
        for i in 0..=nu {
            for j in 0..=nv {
                out.push(self.at(i as f64 / nu as f64, j as f64 / nv as f64));
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Building {
    min: [f64; 2],
    max: [f64; 2],
    height: f64,
}

impl Building {
    fn surfaces(&self) -> [Rect; 5] {
        let [x0, y0] = self.min;
        let [x1, y1] = self.max;
        let h = Vector3::new(0.0, 0.0, self.height);
        let dx = Vector3::new(x1 - x0, 0.0, 0.0);
        let dy = Vector3::new(0.0, y1 - y0, 0.0);
        [
            Rect {
                origin: Vector3::new(x0, y0, 0.0),
                u: dx,
                v: h,
            },
            Rect {
                origin: Vector3::new(x0, y1, 0.0),
                u: dx,
                v: h,
            },
            Rect {
                origin: Vector3::new(x0, y0, 0.0),
                u: dy,
                v: h,
            },
            Rect {
                origin: Vector3::new(x1, y0, 0.0),
                u: dy,
                v: h,
            },
            Rect {
                origin: Vector3::new(x0, y0, self.height),
                u: dx,
                v: dy,
            },
        ]
    }

    fn contains_xy(&self, x: f64, y: f64, pad: f64) -> bool {
        x >= self.min[0] - pad
            && x <= self.max[0] + pad
            && y >= self.min[1] - pad
            && y <= self.max[1] + pad
    }
}

/// Fraction of `points` within `r` of some point of `map` (exact distances,
/// hashed on an `r`-grid).
pub fn fraction_within(points: &[Point3], map: &[Point3], r: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let cell = |p: &Point3| {
        [
            (p.x / r).floor() as i64,
            (p.y / r).floor() as i64,
            (p.z / r).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<Point3>> = HashMap::new();
    for m in map {
        grid.entry(cell(m)).or_default().push(*m);
    }
    let r2 = r * r;
    let hits = points
        .iter()
        .filter(|p| {
            let c = cell(p);
            (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dz| {
                        grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz])
                            .is_some_and(|v| v.iter().any(|m| (m - *p).norm_squared() <= r2))
                    })
                })
            })
        })
        .count();
    hits as f64 / points.len() as f64
}

/// Generates a deterministic scene for `seed`.
///
/// Buildings are random boxes on a ground plane. The ground-truth pose is
/// drawn until the scan it sees passes the feasibility check (at least 95 %
/// of points within `r` of the map), up to `max_attempts` times.
pub fn gen_scene(params: &SceneParams, seed: u64) -> Result<Scene, HarnessError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [sx, sy, sz] = params.size;

    let mut buildings = Vec::with_capacity(params.buildings);
    for _ in 0..params.buildings {
        let w = rng
            .gen_range(params.footprint.0..=params.footprint.1)
            .min(sx - 2.0);
        let d = rng
            .gen_range(params.footprint.0..=params.footprint.1)
            .min(sy - 2.0);
        let h = rng.gen_range(params.height.0..=params.height.1).min(sz);
        let x0 = rng.gen_range(1.0..=(sx - 1.0 - w).max(1.0));
        let y0 = rng.gen_range(1.0..=(sy - 1.0 - d).max(1.0));
        buildings.push(Building {
            min: [x0, y0],
            max: [x0 + w, y0 + d],
            height: h,
        });
    }
    let mut surfaces = vec![Rect {
        origin: Vector3::zeros(),
        u: Vector3::new(sx, 0.0, 0.0),
        v: Vector3::new(0.0, sy, 0.0),
    }];
    for b in &buildings {
        surfaces.extend(b.surfaces());
    }

    let mut map_points = Vec::new();
    for s in &surfaces {
        s.grid_samples(params.map_spacing, &mut map_points);
    }

    let areas: Vec<f64> = surfaces.iter().map(Rect::area).collect();
    let total_area: f64 = areas.iter().sum();

    for _ in 0..params.max_attempts {
        let (x, y) = loop {
            let x = rng.gen_range(params.margin..=sx - params.margin);
            let y = rng.gen_range(params.margin..=sy - params.margin);
            if !buildings.iter().any(|b| b.contains_xy(x, y, 1.0)) {
                break (x, y);
            }
        };
        let z = rng.gen_range(params.sensor_height.0..=params.sensor_height.1);
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let (roll, pitch) = if params.roll_pitch_noise > 0.0 {
            let n = params.roll_pitch_noise;
            (rng.gen_range(-n..=n), rng.gen_range(-n..=n))
        } else {
            (0.0, 0.0)
        };
        let gt = Pose6::new(x, y, z, roll, pitch, yaw);
        let sensor = Vector3::new(x, y, z);

        let mut world = Vec::new();
        for _ in 0..params.scan_samples {
            let mut pick = rng.gen_range(0.0..total_area);
            let mut idx = 0;
            while idx + 1 < areas.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let p = surfaces[idx].at(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            if (p.coords - sensor).norm() > params.d_max {
                continue;
            }
            let j = params.jitter;
            let jit = if j > 0.0 {
                Vector3::new(
                    rng.gen_range(-j..=j),
                    rng.gen_range(-j..=j),
                    rng.gen_range(-j..=j),
                )
            } else {
                Vector3::zeros()
            };
            world.push(p + jit);
        }
        if world.len() < 100 {
            continue;
        }
        let feasible = fraction_within(&world, &map_points, params.r);
        if feasible < 0.95 {
            log::debug!("seed {seed}: pose {gt:?} infeasible ({feasible:.3})");
            continue;
        }
        let to_sensor = pose_to_transform(&gt).inverse();
        let scan = world.iter().map(|p| to_sensor.apply(p)).collect();
        return Ok(Scene {
            map_cloud: PointCloud::new(map_points),
            scan_cloud: scan,
            gt_pose: gt,
            rng_seed: seed,
            feasible_fraction: feasible,
        });
    }
    Err(HarnessError::InfeasiblePose {
        seed,
        attempts: params.max_attempts,
    })
}
