//! Point clouds: ASCII PLY/PCD/XYZ loading, voxel-grid downsampling and
//! simple summaries (bounding box, maximum range).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Transform};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn parse_err(line: usize, reason: impl Into<String>) -> CloudError {
    CloudError::Parse {
        line,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn transformed(&self, t: &Transform) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| t.apply(p)).collect())
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| {
            self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] <= self.max[a]
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    #[default]
    Auto,
    Ply,
    Pcd,
    Xyz,
}

/// A parsed cloud plus the number of non-finite points that were dropped.
#[derive(Clone, Debug)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    pub dropped: usize,
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<LoadedCloud, CloudError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CloudError::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| CloudError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format = match format {
        CloudFormat::Auto => detect_format(path, &text),
        f => f,
    };
    parse_cloud(&text, format)
}

/// Parses in-memory text in the given format (`Auto` sniffs the header).
pub fn parse_cloud(text: &str, format: CloudFormat) -> Result<LoadedCloud, CloudError> {
    let raw = match format {
        CloudFormat::Ply => parse_ply(text)?,
        CloudFormat::Pcd => parse_pcd(text)?,
        CloudFormat::Xyz => parse_xyz(text)?,
        CloudFormat::Auto => return parse_cloud(text, sniff_format(text)),
    };
    let total = raw.len();
    let points: Vec<Point3> = raw
        .into_iter()
        .filter(|p| p.iter().all(|c| c.is_finite()))
        .map(|p| Point3::new(p[0], p[1], p[2]))
        .collect();
    let dropped = total - points.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} non-finite points");
    }
    if points.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    Ok(LoadedCloud {
        cloud: PointCloud::new(points),
        dropped,
    })
}

fn detect_format(path: &Path, text: &str) -> CloudFormat {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ply") => CloudFormat::Ply,
        Some("pcd") => CloudFormat::Pcd,
        Some("xyz") | Some("txt") => CloudFormat::Xyz,
        _ => sniff_format(text),
    }
}

fn sniff_format(text: &str) -> CloudFormat {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    if first == "ply" {
        CloudFormat::Ply
    } else if first.starts_with("# .PCD")
        || first.starts_with("VERSION")
        || first.starts_with("FIELDS")
    {
        CloudFormat::Pcd
    } else {
        CloudFormat::Xyz
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, CloudError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid number '{tok}'")))
}

fn parse_ply(text: &str) -> Result<Vec<[f64; 3]>, CloudError> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => match tok.next() {
                Some("ascii") => {}
                Some(other) => {
                    return Err(parse_err(n, format!("unsupported PLY format '{other}'")))
                }
                None => return Err(parse_err(n, "incomplete format line")),
            },
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| parse_err(n, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(n, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(n, "property before element"))?;
                let parts: Vec<&str> = tok.collect();
                let name = parts
                    .last()
                    .ok_or_else(|| parse_err(n, "property without name"))?;
                if parts.first() == Some(&"list") && el.name == "vertex" {
                    return Err(parse_err(
                        n,
                        "list properties on vertices are not supported",
                    ));
                }
                el.props.push(name.to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_err(n, format!("unknown header keyword '{other}'"))),
        }
    }
    if !header_done {
        return Err(parse_err(0, "missing end_header"));
    }

    let mut out = Vec::new();
    let mut last_line = 0;
    for el in &elements {
        let idx = if el.name == "vertex" {
            let find = |axis: &str| {
                el.props
                    .iter()
                    .position(|p| p == axis)
                    .ok_or_else(|| parse_err(0, format!("vertex element lacks property '{axis}'")))
            };
            Some([find("x")?, find("y")?, find("z")?])
        } else {
            None
        };
        let mut read = 0;
        while read < el.count {
            let (n, line) = lines.next().ok_or_else(|| {
                parse_err(
                    last_line + 1,
                    format!("expected {} {} rows", el.count, el.name),
                )
            })?;
            last_line = n;
            if line.is_empty() {
                continue;
            }
            read += 1;
            if let Some(idx) = idx {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() < el.props.len() {
                    return Err(parse_err(
                        n,
                        format!("expected {} values, found {}", el.props.len(), toks.len()),
                    ));
                }
                out.push([
                    parse_f64(toks[idx[0]], n)?,
                    parse_f64(toks[idx[1]], n)?,
                    parse_f64(toks[idx[2]], n)?,
                ]);
            }
        }
    }
    Ok(out)
}

fn parse_pcd(text: &str) -> Result<Vec<[f64; 3]>, CloudError> {
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut points: Option<usize> = None;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut data_seen = false;

    for (n, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap_or_default().to_ascii_uppercase();
        match key.as_str() {
            "FIELDS" => fields = tok.map(str::to_string).collect(),
            "COUNT" => {
                counts = tok
                    .map(|c| {
                        c.parse::<usize>()
                            .map_err(|_| parse_err(n, "invalid COUNT"))
                    })
                    .collect::<Result<_, _>>()?
            }
            "POINTS" => {
                points = Some(
                    tok.next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| parse_err(n, "invalid POINTS"))?,
                )
            }
            "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            "DATA" => {
                match tok.next() {
                    Some("ascii") => {}
                    other => {
                        return Err(parse_err(
                            n,
                            format!("unsupported PCD data encoding '{}'", other.unwrap_or("")),
                        ))
                    }
                }
                data_seen = true;
                break;
            }
            other => return Err(parse_err(n, format!("unknown PCD header key '{other}'"))),
        }
    }
    if !data_seen {
        return Err(parse_err(0, "missing DATA line"));
    }
    if counts.is_empty() {
        counts = vec![1; fields.len()];
    }
    if counts.len() != fields.len() {
        return Err(parse_err(0, "FIELDS and COUNT lengths differ"));
    }
    // column offset of each field after COUNT expansion
    let mut offsets = Vec::with_capacity(fields.len());
    let mut acc = 0;
    for c in &counts {
        offsets.push(acc);
        acc += c;
    }
    let width = acc;
    let col = |axis: &str| {
        fields
            .iter()
            .position(|f| f == axis)
            .map(|i| offsets[i])
            .ok_or_else(|| parse_err(0, format!("FIELDS lacks '{axis}'")))
    };
    let idx = [col("x")?, col("y")?, col("z")?];

    let mut out = Vec::with_capacity(points.unwrap_or(0));
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < width {
            return Err(parse_err(
                n,
                format!("expected {width} values, found {}", toks.len()),
            ));
        }
        out.push([
            parse_f64(toks[idx[0]], n)?,
            parse_f64(toks[idx[1]], n)?,
            parse_f64(toks[idx[2]], n)?,
        ]);
    }
    if let Some(expected) = points {
        if expected != out.len() {
            return Err(parse_err(
                0,
                format!("POINTS says {expected}, found {} rows", out.len()),
            ));
        }
    }
    Ok(out)
}

fn parse_xyz(text: &str) -> Result<Vec<[f64; 3]>, CloudError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(
                n,
                format!("expected 'x y z', found {} values", toks.len()),
            ));
        }
        out.push([
            parse_f64(toks[0], n)?,
            parse_f64(toks[1], n)?,
            parse_f64(toks[2], n)?,
        ]);
    }
    Ok(out)
}

/// Writes one `x y z` line per point using shortest round-trip formatting.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    let path = path.as_ref();
    let io_err = |source| CloudError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for p in cloud.iter() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Integer grid cell of `p` for cell size `leaf`, using true floor.
#[inline]
pub fn grid_cell(p: &Point3, leaf: f64) -> [i64; 3] {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Replaces the points of each occupied `leaf`-sized cell by their centroid.
///
/// Output is sorted by ascending cell coordinate.
pub fn voxel_grid_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(CloudError::InvalidArgument(format!(
            "leaf size must be positive, got {leaf}"
        )));
    }
    struct Acc {
        sum: [f64; 3],
        n: usize,
        lo: [f64; 3],
        hi: [f64; 3],
    }
    let mut cells: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    for p in cloud.iter() {
        let e = cells.entry(grid_cell(p, leaf)).or_insert(Acc {
            sum: [0.0; 3],
            n: 0,
            lo: [p.x, p.y, p.z],
            hi: [p.x, p.y, p.z],
        });
        e.n += 1;
        for a in 0..3 {
            e.sum[a] += p[a];
            e.lo[a] = e.lo[a].min(p[a]);
            e.hi[a] = e.hi[a].max(p[a]);
        }
    }
    // rounding can push a mean outside its members' extent (and so out of
    // the cell); clamping keeps it inside both
    let points = cells
        .into_values()
        .map(|acc| {
            let n = acc.n as f64;
            Point3::new(
                (acc.sum[0] / n).clamp(acc.lo[0], acc.hi[0]),
                (acc.sum[1] / n).clamp(acc.lo[1], acc.hi[1]),
                (acc.sum[2] / n).clamp(acc.lo[2], acc.hi[2]),
            )
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Leaf size chosen by [`auto_leaf`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafChoice {
    pub leaf: f64,
    /// Point count after downsampling with `leaf`.
    pub count: usize,
    /// False when the count could not be brought into `[target/2, 2*target]`.
    pub converged: bool,
}

const AUTO_LEAF_ITERATIONS: usize = 32;

/// Searches (bisection in log space) for a leaf size whose downsampled
/// count lands in `[0.5 * target, 2 * target]`.
pub fn auto_leaf(cloud: &PointCloud, target_points: usize) -> Result<LeafChoice, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    if target_points == 0 {
        return Err(CloudError::InvalidArgument(
            "target_points must be >= 1".into(),
        ));
    }
    let lo_count = target_points as f64 * 0.5;
    let hi_count = target_points as f64 * 2.0;
    let in_bracket = |n: usize| (n as f64) >= lo_count && (n as f64) <= hi_count;

    let bb = bounding_box(cloud)?;
    let e = bb.extent();
    let diag = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let (mut lo, mut hi) = if diag > 0.0 {
        (diag * 1e-6, diag * 2.0)
    } else {
        (1.0, 1.0)
    };
    let count_at = |leaf: f64| voxel_grid_downsample(cloud, leaf).map(|c| c.len());

    let n_lo = count_at(lo)?;
    if n_lo as f64 <= hi_count || lo == hi {
        // shrinking the leaf further cannot add points
        let converged = in_bracket(n_lo);
        if !converged {
            log::warn!("auto_leaf: {n_lo} points cannot reach target {target_points}");
        }
        return Ok(LeafChoice {
            leaf: lo,
            count: n_lo,
            converged,
        });
    }

    let mut best = LeafChoice {
        leaf: lo,
        count: n_lo,
        converged: false,
    };
    for _ in 0..AUTO_LEAF_ITERATIONS {
        let mid = (lo * hi).sqrt();
        let n = count_at(mid)?;
        let dist = |c: usize| ((c as f64).ln() - (target_points as f64).ln()).abs();
        if dist(n) < dist(best.count) {
            best = LeafChoice {
                leaf: mid,
                count: n,
                converged: false,
            };
        }
        if in_bracket(n) {
            return Ok(LeafChoice {
                leaf: mid,
                count: n,
                converged: true,
            });
        }
        if (n as f64) > hi_count {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    log::warn!(
        "auto_leaf: no convergence after {AUTO_LEAF_ITERATIONS} iterations, using leaf {} ({} points)",
        best.leaf,
        best.count
    );
    Ok(best)
}

pub fn bounding_box(cloud: &PointCloud) -> Result<Aabb, CloudError> {
    let first = cloud.points.first().ok_or(CloudError::EmptyCloud)?;
    let mut bb = Aabb::new([first.x, first.y, first.z], [first.x, first.y, first.z]);
    for p in cloud.iter().skip(1) {
        for a in 0..3 {
            bb.min[a] = bb.min[a].min(p[a]);
            bb.max[a] = bb.max[a].max(p[a]);
        }
    }
    Ok(bb)
}

/// Largest distance of any point from the sensor origin.
pub fn max_range(cloud: &PointCloud) -> Result<f64, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    Ok(cloud.iter().map(|p| p.coords.norm()).fold(0.0, f64::max))
}
