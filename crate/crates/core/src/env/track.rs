use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of polyline samples used to represent the closed path.
pub const PATH_SAMPLES: usize = 1000;

/// Track description as stored in track files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    /// Closed loop of control points; the path passes through every one.
    pub waypoints: Vec<[f64; 2]>,
    pub half_width: f64,
    pub start_a: [f64; 2],
    pub start_b: [f64; 2],
    pub noise_radius: f64,
    /// Side of the square world `[0, world_size]^2` that the renderer shows.
    #[serde(default = "default_world_size")]
    pub world_size: f64,
}

fn default_world_size() -> f64 {
    10.0
}

impl TrackSpec {
    /// Rounded loop with one tight and one gentle bend, sized for a 10x10 world.
    pub fn default_loop() -> Self {
        Self {
            waypoints: vec![
                [2.0, 2.0],
                [5.0, 1.6],
                [8.0, 2.0],
                [8.5, 4.8],
                [7.6, 8.0],
                [5.2, 7.0],
                [2.6, 8.2],
                [1.5, 5.0],
            ],
            half_width: 0.7,
            start_a: [5.0, 1.6],
            start_b: [7.6, 8.0],
            noise_radius: 0.2,
            world_size: 10.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Nearest-point projection onto the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: [f64; 2],
    pub distance: f64,
    /// Direction of travel at the projected point, radians.
    pub tangent: f64,
    /// Arc length from the first sample.
    pub arclength: f64,
}

/// A validated track: its `TrackSpec` plus a dense closed polyline.
#[derive(Debug, Clone)]
pub struct Track {
    spec: TrackSpec,
    points: Vec<[f64; 2]>,
    /// `cumulative[i]` is the arc length at `points[i]`; one extra entry for the closing segment.
    cumulative: Vec<f64>,
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self> {
        if spec.waypoints.len() < 3 {
            return Err(Error::InvalidConfig("a closed track needs at least 3 waypoints".into()));
        }
        if !(spec.half_width > 0.0) {
            return Err(Error::InvalidConfig("track half_width must be positive".into()));
        }
        if !(spec.noise_radius >= 0.0) || !(spec.world_size > 0.0) {
            return Err(Error::InvalidConfig(
                "noise_radius must be >= 0 and world_size > 0".into(),
            ));
        }
        let points = catmull_rom_loop(&spec.waypoints, PATH_SAMPLES);
        let mut cumulative = Vec::with_capacity(points.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 0..points.len() {
            acc += dist(points[i], points[(i + 1) % points.len()]);
            cumulative.push(acc);
        }
        let track = Self {
            spec,
            points,
            cumulative,
        };
        if let Some((i, j)) = track.first_self_intersection() {
            return Err(Error::InvalidConfig(format!(
                "track path self-intersects (segments {i} and {j})"
            )));
        }
        Ok(track)
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let n = self.points.len();
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
            let len2 = abx * abx + aby * aby;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * abx, a[1] + t * aby];
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (d2, i, t) = best;
        let a = self.points[i];
        let b = self.points[(i + 1) % n];
        Projection {
            point: [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
            distance: d2.sqrt(),
            tangent: (b[1] - a[1]).atan2(b[0] - a[0]),
            arclength: self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]),
        }
    }

    /// Point on the path at arc length `s` (wrapped around the loop).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let total = self.length();
        let s = s.rem_euclid(total);
        let i = match self.cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 1),
            Err(i) => i - 1,
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        let a = self.points[i];
        let b = self.points[(i + 1) % self.points.len()];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.points.len();
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (self.points[j], self.points[(j + 1) % n]);
                if segments_cross(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0 {
        // Collinear: overlapping extents count as an intersection.
        let overlap = |i: usize| {
            a[i].min(b[i]) <= c[i].max(d[i]) && c[i].min(d[i]) <= a[i].max(b[i])
        };
        return overlap(0) && overlap(1);
    }
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Uniform Catmull-Rom spline through a closed loop of control points.
fn catmull_rom_loop(ctrl: &[[f64; 2]], samples: usize) -> Vec<[f64; 2]> {
    let n = ctrl.len();
    (0..samples)
        .map(|k| {
            let u = k as f64 * n as f64 / samples as f64;
            let seg = (u.floor() as usize) % n;
            let t = u - u.floor();
            let p0 = ctrl[(seg + n - 1) % n];
            let p1 = ctrl[seg];
            let p2 = ctrl[(seg + 1) % n];
            let p3 = ctrl[(seg + 2) % n];
            let (t2, t3) = (t * t, t * t * t);
            let mut out = [0.0; 2];
            for (dim, o) in out.iter_mut().enumerate() {
                *o = 0.5
                    * (2.0 * p1[dim]
                        + (-p0[dim] + p2[dim]) * t
                        + (2.0 * p0[dim] - 5.0 * p1[dim] + 4.0 * p2[dim] - p3[dim]) * t2
                        + (-p0[dim] + 3.0 * p1[dim] - 3.0 * p2[dim] + p3[dim]) * t3);
            }
            out
        })
        .collect()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_loop_is_valid() {
        let t = Track::new(TrackSpec::default_loop()).unwrap();
        assert_eq!(t.points().len(), PATH_SAMPLES);
        assert!(t.length() > 15.0 && t.length() < 30.0, "{}", t.length());
        for w in &t.spec().waypoints {
            assert!(t.project(*w).distance < 1e-9);
        }
    }

    #[test]
    fn figure_eight_rejected() {
        let spec = TrackSpec {
            waypoints: vec![[2.0, 2.0], [8.0, 8.0], [8.0, 2.0], [2.0, 8.0]],
            ..TrackSpec::default_loop()
        };
        assert!(Track::new(spec).is_err());
    }

    #[test]
    fn projection_distance_and_point_at() {
        let t = Track::new(TrackSpec::default_loop()).unwrap();
        let p = t.point_at(3.0);
        let proj = t.project(p);
        assert!(proj.distance < 1e-9);
        assert!((proj.arclength - 3.0).abs() < 1e-6);
        let q = t.point_at(3.0 + t.length());
        assert!(dist(p, q) < 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let spec = TrackSpec::default_loop();
        let back: TrackSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
