//! Sparse voxel occupancy map merged from robot and device point clouds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;

/// Integer voxel index; voxel `i` spans `[i·s, (i+1)·s)` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelKey(pub [i64; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Robot,
    Device,
}

impl Source {
    fn bit(self) -> u8 {
        match self {
            Source::Robot => 0b01,
            Source::Device => 0b10,
        }
    }
}

/// Non-empty subset of {robot, device}. Serialized as `"robot"`,
/// `"device"` or `"robot,device"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SourceSet(u8);

impl From<SourceSet> for String {
    fn from(s: SourceSet) -> Self {
        s.label().to_owned()
    }
}

impl TryFrom<String> for SourceSet {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        SourceSet::parse(&s).ok_or_else(|| format!("bad source set `{s}`"))
    }
}

impl SourceSet {
    pub fn contains(self, s: Source) -> bool {
        self.0 & s.bit() != 0
    }

    fn insert(&mut self, s: Source) -> bool {
        let before = self.0;
        self.0 |= s.bit();
        before != self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            0b01 => "robot",
            0b10 => "device",
            0b11 => "robot,device",
            _ => "",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut set = SourceSet::default();
        for part in s.split(',') {
            match part.trim() {
                "robot" => set.insert(Source::Robot),
                "device" => set.insert(Source::Device),
                _ => return None,
            };
        }
        (!set.is_empty()).then_some(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSample {
    pub points: Vec<Vec3>,
    pub source: Source,
    pub stamp: f64,
}

/// A voxel whose source tags changed during integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelUpdate {
    pub key: VoxelKey,
    pub sources: SourceSet,
    /// The voxel was free before.
    pub fresh: bool,
}

/// An occupied voxel within a query horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonVoxel {
    pub center: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    voxel_size: f64,
    occupied: BTreeMap<VoxelKey, SourceSet>,
}

impl Default for VoxelMap {
    fn default() -> Self {
        Self::new(DEFAULT_VOXEL_SIZE).expect("default voxel size is positive")
    }
}

impl VoxelMap {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidParam(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self { voxel_size, occupied: BTreeMap::new() })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn key_of(&self, p: &Vec3) -> VoxelKey {
        VoxelKey([0, 1, 2].map(|k| (p[k] / self.voxel_size).floor() as i64))
    }

    pub fn center_of(&self, key: VoxelKey) -> Vec3 {
        let [x, y, z] = key.0;
        Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    pub fn sources(&self, key: VoxelKey) -> Option<SourceSet> {
        self.occupied.get(&key).copied()
    }

    pub fn is_occupied(&self, key: VoxelKey) -> bool {
        self.occupied.contains_key(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelKey, SourceSet)> + '_ {
        self.occupied.iter().map(|(k, s)| (*k, *s))
    }

    /// Marks the voxel of every point occupied and tags it with the sample's
    /// source. Returns the number of voxels that were previously free.
    pub fn integrate_point_cloud(&mut self, sample: &PointCloudSample) -> Result<usize> {
        Ok(self.integrate_with_delta(sample)?.iter().filter(|u| u.fresh).count())
    }

    /// Like [`integrate_point_cloud`](Self::integrate_point_cloud) but returns
    /// every voxel whose source tags changed, in first-touch order.
    pub fn integrate_with_delta(&mut self, sample: &PointCloudSample) -> Result<Vec<VoxelUpdate>> {
        if let Some(i) = sample.points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinitePoint(i));
        }
        let mut changed: Vec<VoxelUpdate> = Vec::new();
        for p in &sample.points {
            let key = self.key_of(p);
            let entry = self.occupied.entry(key).or_default();
            let fresh = entry.is_empty();
            if entry.insert(sample.source) {
                changed.push(VoxelUpdate { key, sources: *entry, fresh });
            }
        }
        Ok(changed)
    }

    /// Occupied voxel centers regardless of source, in key order.
    pub fn merged_map(&self) -> Vec<Vec3> {
        self.occupied.keys().map(|k| self.center_of(*k)).collect()
    }

    pub fn count_by_source(&self, source: Source) -> usize {
        self.occupied.values().filter(|s| s.contains(source)).count()
    }

    /// Visits occupied voxels whose key lies in the axis-aligned key box
    /// covering `[lo, hi]`, falling back to a full scan when that is cheaper.
    fn for_each_in_region(&self, lo: &Vec3, hi: &Vec3, mut f: impl FnMut(VoxelKey, Vec3)) {
        let a = self.key_of(lo).0;
        let b = self.key_of(hi).0;
        let cells: f64 = (0..3).map(|k| (b[k] - a[k] + 1) as f64).product();
        if cells > self.occupied.len() as f64 {
            for key in self.occupied.keys() {
                if (0..3).all(|k| key.0[k] >= a[k] && key.0[k] <= b[k]) {
                    f(*key, self.center_of(*key));
                }
            }
        } else {
            for x in a[0]..=b[0] {
                for y in a[1]..=b[1] {
                    for z in a[2]..=b[2] {
                        let key = VoxelKey([x, y, z]);
                        if self.occupied.contains_key(&key) {
                            f(key, self.center_of(key));
                        }
                    }
                }
            }
        }
    }

    /// Occupied voxels with center within `h` of `center`, ascending by distance.
    pub fn voxels_within_horizon(&self, center: &Vec3, h: f64) -> Vec<HorizonVoxel> {
        let pad = Vec3::repeat(h + self.voxel_size);
        let mut found = Vec::new();
        self.for_each_in_region(&(center - pad), &(center + pad), |key, c| {
            let distance = (c - center).norm();
            if distance <= h {
                found.push((key, HorizonVoxel { center: c, distance }));
            }
        });
        found.sort_by(|(ka, a), (kb, b)| a.distance.total_cmp(&b.distance).then(ka.cmp(kb)));
        found.into_iter().map(|(_, v)| v).collect()
    }

    /// True iff no occupied voxel center lies within `clearance` of segment `ab`.
    pub fn is_segment_free(&self, a: &Vec3, b: &Vec3, clearance: f64) -> bool {
        let pad = Vec3::repeat(clearance + self.voxel_size);
        let lo = a.inf(b) - pad;
        let hi = a.sup(b) + pad;
        let mut free = true;
        self.for_each_in_region(&lo, &hi, |_, c| {
            if free && point_segment_distance(&c, a, b) <= clearance {
                free = false;
            }
        });
        free
    }

    /// Exact distance to the nearest occupied voxel center, `INFINITY` when empty.
    pub fn distance_to_nearest_occupied(&self, p: &Vec3) -> f64 {
        self.occupied
            .keys()
            .map(|k| (self.center_of(*k) - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Line-oriented dump: a `# voxel_size` header then `ix iy iz sources` per voxel.
    pub fn dump(&self) -> String {
        let mut out = format!("# voxel_size {}\n", self.voxel_size);
        for (key, src) in &self.occupied {
            let [x, y, z] = key.0;
            let _ = writeln!(out, "{x} {y} {z} {}", src.label());
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut map: Option<VoxelMap> = None;
        let mut pending = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("voxel_size") {
                    let size = it
                        .next()
                        .and_then(|s| s.parse::<f64>().ok())
                        .ok_or_else(|| Error::MapFormat { line: line_no, msg: "bad voxel_size".into() })?;
                    map = Some(VoxelMap::new(size).map_err(|e| Error::MapFormat { line: line_no, msg: e.to_string() })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::MapFormat { line: line_no, msg: "expected `ix iy iz sources`".into() });
            }
            let mut idx = [0i64; 3];
            for k in 0..3 {
                idx[k] = fields[k]
                    .parse()
                    .map_err(|_| Error::MapFormat { line: line_no, msg: format!("bad index `{}`", fields[k]) })?;
            }
            let src = SourceSet::parse(fields[3])
                .ok_or_else(|| Error::MapFormat { line: line_no, msg: format!("bad sources `{}`", fields[3]) })?;
            pending.push((VoxelKey(idx), src));
        }
        let mut map = map.unwrap_or_default();
        map.occupied.extend(pending);
        Ok(map)
    }
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(points: Vec<Vec3>, source: Source) -> PointCloudSample {
        PointCloudSample { points, source, stamp: 0.0 }
    }

    fn map_with_centers(centers: &[Vec3]) -> VoxelMap {
        let mut m = VoxelMap::default();
        m.integrate_point_cloud(&sample(centers.to_vec(), Source::Robot)).unwrap();
        m
    }

    #[test]
    fn empty_cloud_adds_nothing() {
        let mut m = VoxelMap::default();
        assert_eq!(m.integrate_point_cloud(&sample(vec![], Source::Robot)).unwrap(), 0);
    }

    #[test]
    fn single_point_lands_in_floor_index() {
        let mut m = VoxelMap::new(0.2).unwrap();
        assert_eq!(m.integrate_point_cloud(&sample(vec![Vec3::new(1.0, 0.0, 0.0)], Source::Robot)).unwrap(), 1);
        assert!(m.is_occupied(VoxelKey([5, 0, 0])));
        assert_eq!(m.integrate_point_cloud(&sample(vec![Vec3::new(1.0, 0.0, 0.0)], Source::Robot)).unwrap(), 0);
    }

    #[test]
    fn non_finite_point_reports_index() {
        let mut m = VoxelMap::default();
        let pts = vec![Vec3::zeros(), Vec3::new(0.0, f64::NAN, 0.0)];
        assert_eq!(m.integrate_point_cloud(&sample(pts, Source::Device)), Err(Error::NonFinitePoint(1)));
        assert!(m.is_empty());
    }

    #[test]
    fn merge_is_union_of_sources() {
        let mut m = VoxelMap::new(1.0).unwrap();
        let a = Vec3::new(0.5, 0.5, 0.5);
        let b = Vec3::new(1.5, 0.5, 0.5);
        let c = Vec3::new(2.5, 0.5, 0.5);
        m.integrate_point_cloud(&sample(vec![a, b], Source::Robot)).unwrap();
        m.integrate_point_cloud(&sample(vec![b, c], Source::Device)).unwrap();
        assert_eq!(m.merged_map(), vec![a, b, c]);
        assert_eq!(m.count_by_source(Source::Robot), 2);
        assert_eq!(m.count_by_source(Source::Device), 2);
        let both = m.sources(m.key_of(&b)).unwrap();
        assert!(both.contains(Source::Robot) && both.contains(Source::Device));
    }

    #[test]
    fn device_only_merge_equals_device_set() {
        let mut m = VoxelMap::new(1.0).unwrap();
        m.integrate_point_cloud(&sample(vec![Vec3::new(0.5, 0.5, 0.5)], Source::Device)).unwrap();
        assert_eq!(m.merged_map(), vec![Vec3::new(0.5, 0.5, 0.5)]);
    }

    #[test]
    fn horizon_query() {
        assert!(VoxelMap::default().voxels_within_horizon(&Vec3::zeros(), 1.5).is_empty());
        let m = map_with_centers(&[Vec3::new(0.7, 0.1, 0.1)]);
        let c = m.merged_map()[0];
        let origin = c - Vec3::new(0.75, 0.0, 0.0);
        let found = m.voxels_within_horizon(&origin, 1.5);
        assert_eq!(found.len(), 1);
        assert!((found[0].distance - 0.75).abs() < 1e-12);
        let far = c - Vec3::new(1.51, 0.0, 0.0);
        assert!(m.voxels_within_horizon(&far, 1.5).is_empty());
    }

    #[test]
    fn horizon_sorted_ascending() {
        let m = map_with_centers(&[Vec3::new(1.1, 0.1, 0.1), Vec3::new(0.3, 0.1, 0.1), Vec3::new(-0.5, 0.1, 0.1)]);
        let d: Vec<f64> = m.voxels_within_horizon(&Vec3::new(0.1, 0.1, 0.1), 2.0).iter().map(|v| v.distance).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn segment_checks() {
        let empty = VoxelMap::default();
        assert!(empty.is_segment_free(&Vec3::zeros(), &Vec3::new(3.0, 0.0, 0.0), 0.3));
        let m = map_with_centers(&[Vec3::new(1.05, 0.05, 0.05)]);
        let c = m.merged_map()[0];
        let a = c - Vec3::new(1.0, 0.0, 0.0);
        let b = c + Vec3::new(1.0, 0.0, 0.0);
        assert!(!m.is_segment_free(&a, &b, 0.3));
        // perpendicular offset 0.35 from the segment
        let off = Vec3::new(0.0, 0.35, 0.0);
        assert!(m.is_segment_free(&(a + off), &(b + off), 0.3));
        assert!(!m.is_segment_free(&(a + off), &(b + off), 0.36));
    }

    #[test]
    fn nearest_distance() {
        assert_eq!(VoxelMap::default().distance_to_nearest_occupied(&Vec3::zeros()), f64::INFINITY);
        let m = VoxelMap::load("# voxel_size 0.2\n4 -1 -1 robot\n").unwrap();
        let c = m.merged_map()[0];
        assert!((m.distance_to_nearest_occupied(&(c - Vec3::new(1.0, 0.0, 0.0))) - 1.0).abs() < 1e-12);
        let m = map_with_centers(&[Vec3::new(0.5, 0.1, 0.1), Vec3::new(1.0, 0.1, 0.1)]);
        let centers = m.merged_map();
        let p = centers[0] - Vec3::new(0.4, 0.0, 0.0);
        assert!((m.distance_to_nearest_occupied(&p) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dump_load_roundtrip() {
        let mut m = VoxelMap::new(0.25).unwrap();
        m.integrate_point_cloud(&sample(vec![Vec3::new(1.0, -2.0, 0.3), Vec3::new(0.0, 0.0, 0.0)], Source::Robot)).unwrap();
        m.integrate_point_cloud(&sample(vec![Vec3::new(1.0, -2.0, 0.3), Vec3::new(5.0, 5.0, 5.0)], Source::Device)).unwrap();
        let text = m.dump();
        assert!(text.contains("4 -8 1 robot,device"));
        assert_eq!(VoxelMap::load(&text).unwrap(), m);
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(matches!(VoxelMap::load("1 2 robot"), Err(Error::MapFormat { line: 1, .. })));
        assert!(matches!(VoxelMap::load("1 2 3 lidar"), Err(Error::MapFormat { line: 1, .. })));
    }
}
