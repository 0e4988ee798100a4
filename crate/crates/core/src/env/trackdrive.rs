use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{downsample, Canvas};
use super::track::{wrap_angle, Track, TrackSpec};
use super::{ActionBounds, DoneReason, Environment, Observation, StepInfo, StepOutcome};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Speed weight of the per-step return.
pub const RETURN_C: f64 = 100.0;
/// Distance weight of the per-step return.
pub const RETURN_D: f64 = 1.0;

const BACKGROUND: f64 = 0.1;
const ROAD: f64 = 0.55;
const BODY: f64 = 1.0;
const NOSE: f64 = 0.0;
const GAUGE: f64 = 1.0;
/// Road raster resolution used by the chase camera, pixels per world unit.
const ROAD_MAP_DENSITY: f64 = 32.0;

/// `C * v * alignment - D * d` with `C = 100`, `D = 1`.
pub fn step_return(v: f64, alignment: f64, d: f64) -> f64 {
    RETURN_C * v * alignment - RETURN_D * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackDriveConfig {
    pub track: TrackSpec,
    /// Observation side length in pixels.
    pub image_size: usize,
    /// Frames are rasterised at `image_size * render_scale` and area-averaged down.
    pub render_scale: usize,
    pub max_steps: usize,
    /// Speed gained per step at full throttle.
    pub max_accel: f64,
    /// Fraction of speed lost per step.
    pub drag: f64,
    /// Heading change per unit distance at full steer.
    pub max_curvature: f64,
    pub camera: Camera,
}

/// Viewpoint of the top-down frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Camera {
    /// Fixed view of the whole world square.
    Global,
    /// Window of `view_size` world units that follows the vehicle, heading up,
    /// with the vehicle a quarter of the way up from the bottom edge and a
    /// speed gauge along the bottom rows.
    Chase { view_size: f64 },
}

impl Default for Camera {
    fn default() -> Self {
        Camera::Chase { view_size: 4.0 }
    }
}

impl Default for TrackDriveConfig {
    fn default() -> Self {
        Self {
            track: TrackSpec::default_loop(),
            image_size: 32,
            render_scale: 2,
            max_steps: 1000,
            max_accel: 0.01,
            drag: 0.05,
            max_curvature: 1.0,
            camera: Camera::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: [f64; 2],
    /// Radians in `(-pi, pi]`, counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
}

/// Top-down track driving. Action is `[steer, throttle]` with steer in
/// `[-1, 1]` (negative turns left) and throttle in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TrackDrive {
    config: TrackDriveConfig,
    track: Track,
    bounds: ActionBounds,
    background: Canvas,
    road_map: Option<Arc<RoadMap>>,
    state: VehicleState,
    timestep: usize,
    done: bool,
}

impl TrackDrive {
    pub fn new(config: TrackDriveConfig) -> Result<Self> {
        if config.image_size < 4 || config.render_scale == 0 || config.max_steps == 0 {
            return Err(Error::InvalidConfig(
                "image_size >= 4, render_scale >= 1 and max_steps >= 1 required".into(),
            ));
        }
        if !(config.max_accel > 0.0 && config.drag > 0.0 && config.drag < 1.0 && config.max_curvature > 0.0) {
            return Err(Error::InvalidConfig("vehicle constants out of range".into()));
        }
        if let Camera::Chase { view_size } = config.camera {
            if !(view_size > 0.0) {
                return Err(Error::InvalidConfig("chase view_size must be positive".into()));
            }
        }
        let track = Track::new(config.track.clone())?;
        let background = paint_track(&track, config.image_size * config.render_scale);
        let road_map = match config.camera {
            Camera::Chase { .. } => Some(Arc::new(RoadMap::new(&track, ROAD_MAP_DENSITY))),
            Camera::Global => None,
        };
        let start = track.project(config.track.start_a);
        Ok(Self {
            bounds: ActionBounds::new(vec![-1.0, 0.0], vec![1.0, 1.0])?,
            background,
            road_map,
            state: VehicleState {
                position: config.track.start_a,
                heading: wrap_angle(start.tangent),
                speed: 0.0,
            },
            track,
            config,
            timestep: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &TrackDriveConfig {
        &self.config
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    /// Places the vehicle directly; used by tests and oracle probes.
    pub fn set_state(&mut self, state: VehicleState) {
        self.state = state;
        self.done = false;
    }

    /// Steady-state speed reached at a constant throttle.
    pub fn terminal_speed(&self, throttle: f64) -> f64 {
        throttle * self.config.max_accel / self.config.drag
    }

    /// `(v, alignment, d)` for the current state.
    pub fn measure(&self) -> (f64, f64, f64) {
        let proj = self.track.project(self.state.position);
        let alignment = (self.state.heading - proj.tangent).cos();
        (self.state.speed, alignment, proj.distance)
    }

    pub fn render(&self, state: &VehicleState) -> Observation {
        let full = self.render_full(state);
        let tensor = Tensor::new(vec![full.height, full.width], full.pixels).expect("canvas shape");
        downsample(&tensor, self.config.image_size, self.config.image_size).expect("render scale >= 1")
    }

    /// Full-resolution frame before area averaging.
    pub fn render_full(&self, state: &VehicleState) -> Canvas {
        match (self.config.camera, &self.road_map) {
            (Camera::Chase { view_size }, Some(map)) => self.render_chase(state, view_size, map),
            _ => self.render_global(state),
        }
    }

    fn render_chase(&self, state: &VehicleState, view_size: f64, map: &RoadMap) -> Canvas {
        let side = self.config.image_size * self.config.render_scale;
        let mut canvas = Canvas::new(side, side, BACKGROUND);
        let (sin, cos) = state.heading.sin_cos();
        let unit = view_size / side as f64;
        let car_row = 0.75 * side as f64;
        for y in 0..side {
            let ahead = (car_row - (y as f64 + 0.5)) * unit;
            for x in 0..side {
                let right = ((x as f64 + 0.5) - side as f64 / 2.0) * unit;
                let p = [
                    state.position[0] + ahead * cos + right * sin,
                    state.position[1] + ahead * sin - right * cos,
                ];
                canvas.pixels[y * side + x] = map.sample(p);
            }
        }
        let px_per_obs = self.config.render_scale as f64;
        let cx = side as f64 / 2.0 - 0.5;
        canvas.blob(cx, car_row - 0.5, 0.7 * px_per_obs, BODY);
        canvas.blob(cx, car_row - 0.5 - 0.5 / unit, 0.5 * px_per_obs, NOSE);
        let top_speed = self.terminal_speed(1.0);
        let filled = ((state.speed / top_speed).clamp(0.0, 1.0) * side as f64).round() as usize;
        let rows = (2 * self.config.render_scale).min(side);
        for y in (side - rows)..side {
            for x in 0..side {
                canvas.pixels[y * side + x] = if x < filled { GAUGE } else { BACKGROUND };
            }
        }
        canvas
    }

    fn render_global(&self, state: &VehicleState) -> Canvas {
        let mut canvas = self.background.clone();
        let side = canvas.width as f64;
        let scale = side / self.config.track.world_size;
        let to_px = |p: [f64; 2]| {
            (
                p[0] * scale - 0.5,
                (self.config.track.world_size - p[1]) * scale - 0.5,
            )
        };
        let px_per_obs = self.config.render_scale as f64;
        let (bx, by) = to_px(state.position);
        let nose = [
            state.position[0] + 0.5 * state.heading.cos(),
            state.position[1] + 0.5 * state.heading.sin(),
        ];
        let (nx, ny) = to_px(nose);
        canvas.blob(bx, by, 0.7 * px_per_obs, BODY);
        canvas.blob(nx, ny, 0.5 * px_per_obs, NOSE);
        canvas
    }

    /// Whole-world frame of the empty track, whatever the camera.
    pub fn render_track_only(&self) -> Observation {
        let full = self.background.clone();
        let tensor = Tensor::new(vec![full.height, full.width], full.pixels).expect("canvas shape");
        downsample(&tensor, self.config.image_size, self.config.image_size).expect("render scale >= 1")
    }
}

impl Environment for TrackDrive {
    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = &self.config.track;
        let base = if rng.gen_bool(0.5) { spec.start_a } else { spec.start_b };
        let r = spec.noise_radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let position = [base[0] + r * phi.cos(), base[1] + r * phi.sin()];
        let heading = wrap_angle(self.track.project(position).tangent);
        self.state = VehicleState {
            position,
            heading,
            speed: 0.0,
        };
        self.timestep = 0;
        self.done = false;
        self.render(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action.len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "TrackDrive action".into(),
                expected: vec![2],
                found: vec![action.len()],
            });
        }
        let a = self.bounds.clip(action);
        let (steer, throttle) = (a[0], a[1]);
        let c = &self.config;
        let s = &mut self.state;
        s.speed = (s.speed + throttle * c.max_accel - c.drag * s.speed).max(0.0);
        s.heading = wrap_angle(s.heading - steer * c.max_curvature * s.speed);
        s.position[0] += s.speed * s.heading.cos();
        s.position[1] += s.speed * s.heading.sin();
        self.timestep += 1;

        let (v, alignment, d) = self.measure();
        let done_reason = if d > self.track.half_width() {
            Some(DoneReason::OffRoad)
        } else if self.timestep >= self.config.max_steps {
            Some(DoneReason::TimeLimit)
        } else {
            None
        };
        self.done = done_reason.is_some();
        Ok(StepOutcome {
            observation: self.render(&self.state),
            done: self.done,
            info: StepInfo {
                timestep: self.timestep,
                action: a,
                v,
                alignment,
                d,
                step_return: step_return(v, alignment, d),
                done_reason,
            },
        })
    }

    fn observe(&self) -> Observation {
        self.render(&self.state)
    }

    fn action_bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn observation_shape(&self) -> (usize, usize) {
        (self.config.image_size, self.config.image_size)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

/// High-resolution raster of the road over the world square, sampled
/// bilinearly by the chase camera.
#[derive(Debug)]
struct RoadMap {
    side: usize,
    density: f64,
    pixels: Vec<f64>,
}

impl RoadMap {
    fn new(track: &Track, density: f64) -> Self {
        let world = track.spec().world_size;
        let side = (world * density).ceil() as usize;
        let px = 1.0 / density;
        // Bucket path segments by the coarse cells they can influence.
        let cell = 0.5;
        let cells = (world / cell).ceil() as usize;
        let margin = track.half_width() + 2.0 * px;
        let mut buckets = vec![Vec::new(); cells * cells];
        let points = track.points();
        let n = points.len();
        let to_cell = |v: f64| ((v / cell).floor().max(0.0) as usize).min(cells - 1);
        for i in 0..n {
            let (a, b) = (points[i], points[(i + 1) % n]);
            let (x0, x1) = (a[0].min(b[0]) - margin, a[0].max(b[0]) + margin);
            let (y0, y1) = (a[1].min(b[1]) - margin, a[1].max(b[1]) + margin);
            if x1 < 0.0 || y1 < 0.0 || x0 > world || y0 > world {
                continue;
            }
            for cy in to_cell(y0)..=to_cell(y1) {
                for cx in to_cell(x0)..=to_cell(x1) {
                    buckets[cy * cells + cx].push(i);
                }
            }
        }
        let mut pixels = vec![BACKGROUND; side * side];
        for row in 0..side {
            let wy = (row as f64 + 0.5) * px;
            for col in 0..side {
                let wx = (col as f64 + 0.5) * px;
                let candidates = &buckets[to_cell(wy) * cells + to_cell(wx)];
                let d = candidates
                    .iter()
                    .map(|&i| segment_distance([wx, wy], points[i], points[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min);
                let cover = ((track.half_width() - d) / px + 0.5).clamp(0.0, 1.0);
                pixels[row * side + col] = BACKGROUND + (ROAD - BACKGROUND) * cover;
            }
        }
        Self {
            side,
            density,
            pixels,
        }
    }

    fn sample(&self, p: [f64; 2]) -> f64 {
        let fx = p[0] * self.density - 0.5;
        let fy = p[1] * self.density - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let at = |x: f64, y: f64| {
            if x < 0.0 || y < 0.0 || x >= self.side as f64 || y >= self.side as f64 {
                BACKGROUND
            } else {
                self.pixels[y as usize * self.side + x as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * abx).powi(2) + (p[1] - a[1] - t * aby).powi(2)).sqrt()
}

fn paint_track(track: &Track, side: usize) -> Canvas {
    let world = track.spec().world_size;
    let px = world / side as f64;
    let mut canvas = Canvas::new(side, side, BACKGROUND);
    for y in 0..side {
        for x in 0..side {
            let p = [(x as f64 + 0.5) * px, world - (y as f64 + 0.5) * px];
            let d = track.project(p).distance;
            let cover = ((track.half_width() - d) / px + 0.5).clamp(0.0, 1.0);
            canvas.pixels[y * side + x] = BACKGROUND + (ROAD - BACKGROUND) * cover;
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TrackDrive {
        TrackDrive::new(TrackDriveConfig::default()).unwrap()
    }

    fn global_env() -> TrackDrive {
        TrackDrive::new(TrackDriveConfig {
            camera: Camera::Global,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn return_formula() {
        assert_eq!(step_return(0.0, 1.0, 0.0), 0.0);
        assert_eq!(step_return(0.5, 1.0, 0.0), 50.0);
        assert_eq!(step_return(0.0, 1.0, 10.0), -10.0);
    }

    #[test]
    fn same_seed_same_start() {
        let mut a = env();
        let mut b = env();
        assert_eq!(a.reset(17), b.reset(17));
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn zero_noise_starts_exactly_at_a_or_b() {
        let mut cfg = TrackDriveConfig::default();
        cfg.track.noise_radius = 0.0;
        let mut e = TrackDrive::new(cfg.clone()).unwrap();
        for seed in 0..20 {
            e.reset(seed);
            let p = e.state().position;
            assert!(p == cfg.track.start_a || p == cfg.track.start_b);
        }
    }

    #[test]
    fn null_action_from_standstill() {
        let mut e = env();
        e.reset(3);
        let before = *e.state();
        let out = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(e.state().position, before.position);
        assert!(!out.done);
    }

    #[test]
    fn full_steer_leaves_the_road() {
        let mut e = env();
        e.reset(1);
        let reason = loop {
            let out = e.step(&[1.0, 1.0]).unwrap();
            if out.done {
                break out.info.done_reason.unwrap();
            }
        };
        assert_eq!(reason, DoneReason::OffRoad);
        assert!(e.timestep() < 1000);
        assert!(matches!(e.step(&[0.0, 0.0]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn time_limit_when_parked_on_track() {
        let mut e = env();
        e.reset(2);
        let mut last = None;
        for _ in 0..1000 {
            last = Some(e.step(&[0.0, 0.0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.info.done_reason, Some(DoneReason::TimeLimit));
        assert_eq!(last.info.timestep, 1000);
    }

    #[test]
    fn render_is_pure_and_bounded() {
        let mut e = global_env();
        e.reset(5);
        let s = *e.state();
        let a = e.render(&s);
        assert_eq!(a, e.render(&s));
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!((a.height(), a.width()), (32, 32));
        let far = VehicleState {
            position: [-40.0, 99.0],
            heading: 0.3,
            speed: 0.0,
        };
        let clamped = e.render(&far);
        assert!(clamped.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn empty_track_mean_is_constant() {
        let e = env();
        let m1 = e.render_track_only().mean();
        let mut e2 = env();
        e2.reset(99);
        assert_eq!(m1, e2.render_track_only().mean());
        assert!(m1 > BACKGROUND && m1 < ROAD);
    }

    #[test]
    fn marker_changes_frame() {
        let mut e = global_env();
        let obs = e.reset(0);
        assert_ne!(obs, e.render_track_only());
    }

    #[test]
    fn chase_view_follows_the_vehicle() {
        let mut e = env();
        e.reset(4);
        let s = *e.state();
        let a = e.render(&s);
        assert_eq!(a, e.render(&s));
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        // Centred on the path and heading along it, the road fills the middle
        // column ahead of the car.
        let on_path = VehicleState {
            position: e.track().point_at(2.0),
            heading: e.track().project(e.track().point_at(2.0)).tangent,
            speed: 0.0,
        };
        let obs = e.render(&on_path);
        let ahead = obs.pixels()[4 * 32 + 16];
        assert!((ahead - ROAD).abs() < 0.05, "{ahead}");
        let far = VehicleState {
            position: [-40.0, 99.0],
            ..on_path
        };
        let outside = e.render(&far);
        assert!((outside.pixels()[0] - BACKGROUND).abs() < 1e-12);
    }

    #[test]
    fn speed_gauge_grows_with_speed() {
        let e = env();
        let base = VehicleState {
            position: e.track().point_at(0.0),
            heading: 0.0,
            speed: 0.0,
        };
        let bottom = |o: &Observation| o.pixels()[31 * 32..].iter().sum::<f64>();
        let slow = e.render(&base);
        let fast = e.render(&VehicleState { speed: 0.1, ..base });
        assert!(bottom(&fast) > bottom(&slow) + 10.0);
    }

    #[test]
    fn road_map_matches_direct_projection() {
        let e = env();
        let map = e.road_map.as_ref().unwrap();
        for s in [0.0, 3.3, 7.9, 12.4] {
            let p = e.track().point_at(s);
            assert!((map.sample(p) - ROAD).abs() < 1e-9);
        }
        assert!((map.sample([0.05, 9.95]) - BACKGROUND).abs() < 1e-12);
    }
}
