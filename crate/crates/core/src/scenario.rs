//! The simulated world: base stations, box-shaped obstacles and targets.
//!
//! A [`Scenario`] is built once from a [`ScenarioConfig`] and is immutable
//! afterwards. Obstacles are axis-aligned boxes; line-of-sight is decided on
//! their 2-D footprints only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Propagation;
use crate::error::{Error, Result};
use crate::rng;
use crate::units::{wavelength, HIGH_BAND_THRESHOLD_HZ, THERMAL_NOISE_PSD_DBM_HZ};

pub type StationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandClass {
    Low,
    High,
}

impl BandClass {
    pub fn of(carrier_frequency: f64) -> Self {
        if carrier_frequency >= HIGH_BAND_THRESHOLD_HZ {
            BandClass::High
        } else {
            BandClass::Low
        }
    }
}

/// Base station description as it appears in a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStationConfig {
    pub id: StationId,
    pub position: [f64; 3],
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    /// Defaults to 16 elements in the high band and 8 in the low band.
    #[serde(default)]
    pub antenna_count: Option<usize>,
    /// Defaults to half a wavelength at the carrier.
    #[serde(default)]
    pub antenna_spacing: Option<f64>,
    #[serde(default = "default_max_power_dbm")]
    pub max_power_dbm: f64,
    /// Defaults to `antenna_count` (fully digital).
    #[serde(default)]
    pub rf_chain_count: Option<usize>,
    #[serde(default)]
    pub clock_offset: f64,
    /// Azimuth of the array broadside, radians from the +x axis.
    #[serde(default)]
    pub boresight: f64,
}

fn default_max_power_dbm() -> f64 {
    30.0
}

/// A validated base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: StationId,
    pub position: [f64; 3],
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub antenna_count: usize,
    pub antenna_spacing: f64,
    pub max_power_dbm: f64,
    pub rf_chain_count: usize,
    pub clock_offset: f64,
    pub boresight: f64,
}

impl BaseStation {
    pub fn band_class(&self) -> BandClass {
        BandClass::of(self.carrier_frequency)
    }

    pub fn position_2d(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.carrier_frequency)
    }

    /// Array-relative angle (from broadside) towards a point in the plane.
    pub fn angle_to(&self, point: [f64; 2]) -> f64 {
        let az = (point[1] - self.position[1]).atan2(point[0] - self.position[0]);
        crate::units::wrap_angle(az - self.boresight)
    }

    /// True when both stations share carrier and bandwidth, so one can
    /// receive the other's waveform.
    pub fn same_band(&self, other: &BaseStation) -> bool {
        self.carrier_frequency == other.carrier_frequency && self.bandwidth == other.bandwidth
    }

    fn from_config(cfg: &BaseStationConfig, index: usize) -> Result<Self> {
        let path = |field: &str| format!("base_stations[{index}].{field}");
        if !(cfg.carrier_frequency > 0.0 && cfg.carrier_frequency.is_finite()) {
            return Err(Error::config(path("carrier_frequency"), "must be positive"));
        }
        if !(cfg.bandwidth > 0.0) {
            return Err(Error::config(path("bandwidth"), "must be positive"));
        }
        if cfg.bandwidth >= cfg.carrier_frequency {
            return Err(Error::config(path("bandwidth"), "must be below the carrier frequency"));
        }
        let antenna_count = cfg.antenna_count.unwrap_or(match BandClass::of(cfg.carrier_frequency) {
            BandClass::High => 16,
            BandClass::Low => 8,
        });
        if antenna_count == 0 {
            return Err(Error::config(path("antenna_count"), "must be at least 1"));
        }
        let rf_chain_count = cfg.rf_chain_count.unwrap_or(antenna_count);
        if rf_chain_count == 0 || rf_chain_count > antenna_count {
            return Err(Error::config(path("rf_chain_count"), "must be in 1..=antenna_count"));
        }
        let antenna_spacing = cfg.antenna_spacing.unwrap_or(wavelength(cfg.carrier_frequency) / 2.0);
        if !(antenna_spacing > 0.0) {
            return Err(Error::config(path("antenna_spacing"), "must be positive"));
        }
        if !cfg.clock_offset.is_finite() {
            return Err(Error::config(path("clock_offset"), "must be finite"));
        }
        Ok(BaseStation {
            id: cfg.id,
            position: cfg.position,
            carrier_frequency: cfg.carrier_frequency,
            bandwidth: cfg.bandwidth,
            antenna_count,
            antenna_spacing,
            max_power_dbm: cfg.max_power_dbm,
            rf_chain_count,
            clock_offset: cfg.clock_offset,
            boresight: cfg.boresight,
        })
    }
}

/// Axis-aligned building footprint with a height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl Obstacle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= self.width / 2.0
            && (p[1] - self.center[1]).abs() <= self.depth / 2.0
    }

    /// Whether the open segment `a -> b` passes through the footprint for a
    /// positive length (slab clipping).
    pub fn blocks(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let half = [self.width / 2.0, self.depth / 2.0];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for axis in 0..2 {
            let lo = self.center[axis] - half[axis];
            let hi = self.center[axis] + half[axis];
            let d = b[axis] - a[axis];
            if d == 0.0 {
                if a[axis] < lo || a[axis] > hi {
                    return false;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo - a[axis]) / d, (hi - a[axis]) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        t0 < t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRanges {
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub height: [f64; 2],
}

impl Default for SizeRanges {
    fn default() -> Self {
        SizeRanges { width: [10.0, 60.0], depth: [10.0, 60.0], height: [5.0, 40.0] }
    }
}

/// Random obstacle field settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleField {
    pub count: usize,
    pub sizes: SizeRanges,
    /// Obstacles listed verbatim in addition to the random ones.
    pub fixed: Vec<Obstacle>,
    /// Random obstacles whose footprint would come within this distance of a
    /// station or target are redrawn. Negative disables the check.
    pub clearance: f64,
}

impl Default for ObstacleField {
    fn default() -> Self {
        ObstacleField { count: 40, sizes: SizeRanges::default(), fixed: Vec::new(), clearance: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Radar cross section, m².
    #[serde(default = "default_rcs")]
    pub rcs: f64,
}

fn default_rcs() -> f64 {
    1.0
}

impl Target {
    pub fn at(x: f64, y: f64) -> Self {
        Target { position: [x, y, 0.0], velocity: [0.0; 3], rcs: 1.0 }
    }

    pub fn position_2d(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

/// Scenario document, usually read from JSON (see `docs/scenario-schema.md`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_area")]
    pub area_width: f64,
    #[serde(default = "default_area")]
    pub area_depth: f64,
    pub base_stations: Vec<BaseStationConfig>,
    #[serde(default)]
    pub obstacles: ObstacleField,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default = "default_noise_psd")]
    pub noise_psd_dbm_hz: f64,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_area() -> f64 {
    500.0
}

fn default_noise_psd() -> f64 {
    THERMAL_NOISE_PSD_DBM_HZ
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_width: f64,
    pub area_depth: f64,
    pub base_stations: Vec<BaseStation>,
    pub obstacles: Vec<Obstacle>,
    pub targets: Vec<Target>,
    pub propagation: Propagation,
    pub noise_psd_dbm_hz: f64,
    pub master_seed: u64,
}

fn inside(area: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= 0.0 && p[0] <= area[0] && p[1] >= 0.0 && p[1] <= area[1]
}

/// Build a validated, deterministic scenario.
///
/// Random obstacles come from the stream `(master_seed, OBSTACLES)`, so
/// changing anything else in the config never moves them.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    if !(config.area_width > 0.0 && config.area_depth > 0.0) {
        return Err(Error::config("area_width", "area dimensions must be positive"));
    }
    if config.base_stations.is_empty() {
        return Err(Error::config("base_stations", "at least one base station is required"));
    }
    let area = [config.area_width, config.area_depth];
    let mut stations = Vec::with_capacity(config.base_stations.len());
    for (i, cfg) in config.base_stations.iter().enumerate() {
        if stations.iter().any(|s: &BaseStation| s.id == cfg.id) {
            return Err(Error::config(format!("base_stations[{i}].id"), "duplicate station id"));
        }
        if !inside(area, [cfg.position[0], cfg.position[1]]) {
            return Err(Error::config(format!("base_stations[{i}].position"), "outside the area"));
        }
        stations.push(BaseStation::from_config(cfg, i)?);
    }
    for (i, t) in config.targets.iter().enumerate() {
        if !inside(area, t.position_2d()) {
            return Err(Error::config(format!("targets[{i}].position"), "outside the area"));
        }
        if !(t.rcs > 0.0) {
            return Err(Error::config(format!("targets[{i}].rcs"), "must be positive"));
        }
    }
    let sizes = &config.obstacles.sizes;
    for (name, r) in [("width", sizes.width), ("depth", sizes.depth), ("height", sizes.height)] {
        if !(r[0] > 0.0 && r[1] >= r[0]) {
            return Err(Error::config(format!("obstacles.sizes.{name}"), "range must be positive and ordered"));
        }
        if name != "height" && r[1] > area[0].min(area[1]) {
            return Err(Error::config(format!("obstacles.sizes.{name}"), "larger than the area"));
        }
    }
    let mut obstacles = Vec::new();
    for (i, o) in config.obstacles.fixed.iter().enumerate() {
        if !(o.width > 0.0 && o.depth > 0.0 && o.height > 0.0) {
            return Err(Error::config(format!("obstacles.fixed[{i}]"), "dimensions must be positive"));
        }
        obstacles.push(*o);
    }
    let mut keep_out: Vec<[f64; 2]> = stations.iter().map(BaseStation::position_2d).collect();
    keep_out.extend(config.targets.iter().map(Target::position_2d));
    let mut stream = rng::stream(config.master_seed, &[rng::label::OBSTACLES]);
    obstacles.extend(sample_obstacles_clear(
        &mut stream,
        config.obstacles.count,
        area,
        sizes,
        &keep_out,
        config.obstacles.clearance,
    ));
    Ok(Scenario {
        area_width: config.area_width,
        area_depth: config.area_depth,
        base_stations: stations,
        obstacles,
        targets: config.targets.clone(),
        propagation: config.propagation.clone(),
        noise_psd_dbm_hz: config.noise_psd_dbm_hz,
        master_seed: config.master_seed,
    })
}

fn draw_obstacle<R: Rng + ?Sized>(rng: &mut R, area: [f64; 2], sizes: &SizeRanges) -> Obstacle {
    let mut uniform = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let width = uniform(sizes.width);
    let depth = uniform(sizes.depth);
    let height = uniform(sizes.height);
    let cx = uniform([width / 2.0, area[0] - width / 2.0]);
    let cy = uniform([depth / 2.0, area[1] - depth / 2.0]);
    Obstacle { center: [cx, cy], width, depth, height }
}

/// Draw `count` obstacles with uniform sizes and uniform placement; every
/// footprint lies inside the area.
///
/// Draws are sequential, so the first `k` obstacles of a call with
/// `count >= k` equal a call with `count = k` on the same stream state.
pub fn sample_obstacles<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    area: [f64; 2],
    sizes: &SizeRanges,
) -> Vec<Obstacle> {
    (0..count).map(|_| draw_obstacle(rng, area, sizes)).collect()
}

/// Like [`sample_obstacles`], redrawing any obstacle whose footprint comes
/// within `clearance` metres of a keep-out point.
pub fn sample_obstacles_clear<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    area: [f64; 2],
    sizes: &SizeRanges,
    keep_out: &[[f64; 2]],
    clearance: f64,
) -> Vec<Obstacle> {
    const MAX_REDRAWS: usize = 1000;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ob = draw_obstacle(rng, area, sizes);
        if clearance >= 0.0 {
            let mut tries = 0;
            while tries < MAX_REDRAWS
                && keep_out.iter().any(|p| {
                    let grown = Obstacle {
                        width: ob.width + 2.0 * clearance,
                        depth: ob.depth + 2.0 * clearance,
                        ..ob
                    };
                    grown.contains(*p)
                })
            {
                ob = draw_obstacle(rng, area, sizes);
                tries += 1;
            }
            if tries == MAX_REDRAWS {
                continue;
            }
        }
        out.push(ob);
    }
    out
}

impl Scenario {
    pub fn station(&self, id: StationId) -> Option<&BaseStation> {
        self.base_stations.iter().find(|s| s.id == id)
    }

    /// Line-of-sight test between two points in the plane.
    pub fn is_los(&self, a: [f64; 2], b: [f64; 2]) -> Result<bool> {
        is_los(&self.obstacles, a, b)
    }
}

/// `false` iff the open segment `a -> b` crosses any obstacle footprint.
pub fn is_los(obstacles: &[Obstacle], a: [f64; 2], b: [f64; 2]) -> Result<bool> {
    if a == b {
        return Err(Error::DegenerateSegment);
    }
    Ok(!obstacles.iter().any(|o| o.blocks(a, b)))
}
