//! Cell instances: device placement, channel gains, thresholds and budgets.
//!
//! Draw order is fixed so that a seed fully determines a scenario. A
//! `ChaCha8Rng` seeded with `rng_seed` is consumed device by device in id
//! order (URLLC first, then mMTC). For each device it draws the radius
//! variate, the angle, the rate threshold, and then one unit-mean exponential
//! fading variate per subcarrier in index order. Nothing else touches the
//! generator, so changing `num_clusters` or `max_rank` leaves the devices
//! untouched.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// dBm (or dBm/Hz) to W (or W/Hz).
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Linear power gain for a fading variate `fading` at `distance` metres.
pub fn channel_gain(fading: f64, distance: f64, pathloss_exponent: f64) -> f64 {
    fading * distance.powf(-pathloss_exponent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_urllc: usize,
    pub num_mmtc: usize,
    pub num_subcarriers: usize,
    pub num_clusters: usize,
    pub max_rank: usize,
    /// Tone bandwidth, Hz.
    pub subcarrier_bandwidth: f64,
    /// Resource block bandwidth, Hz.
    pub rb_bandwidth: f64,
    /// Metres.
    pub cell_radius: f64,
    pub pathloss_exponent: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// W.
    pub power_budget_urllc: f64,
    /// W.
    pub power_budget_mmtc: f64,
    /// bps, inclusive.
    pub urllc_rate_threshold_range: (f64, f64),
    /// bps, inclusive.
    pub mmtc_rate_threshold_range: (f64, f64),
    /// Metres.
    pub min_distance: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_urllc: 10,
            num_mmtc: 30,
            num_subcarriers: 48,
            num_clusters: 20,
            max_rank: 2,
            subcarrier_bandwidth: 3_750.0,
            rb_bandwidth: 180_000.0,
            cell_radius: 500.0,
            pathloss_exponent: 3.0,
            noise_psd: dbm_to_watts(-173.0),
            power_budget_urllc: dbm_to_watts(23.0),
            power_budget_mmtc: dbm_to_watts(23.0),
            urllc_rate_threshold_range: (100.0, 20_000.0),
            mmtc_rate_threshold_range: (100.0, 2_000.0),
            min_distance: 0.1,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn num_devices(&self) -> usize {
        self.num_urllc + self.num_mmtc
    }

    /// Noise power over one tone, W.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.subcarrier_bandwidth
    }

    /// Checks every invariant and reports the first one that fails.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_urllc + self.num_mmtc == 0 {
            return fail("at least one device is required".into());
        }
        if self.num_subcarriers == 0 {
            return fail("num_subcarriers must be >= 1".into());
        }
        if self.num_clusters == 0 {
            return fail("num_clusters must be >= 1".into());
        }
        if self.max_rank < 2 {
            return fail(format!("max_rank must be >= 2, got {}", self.max_rank));
        }
        if self.num_devices() > self.num_clusters * self.max_rank {
            return fail(format!(
                "U + M = {} exceeds C * k_max = {}",
                self.num_devices(),
                self.num_clusters * self.max_rank
            ));
        }
        let positive = [
            ("subcarrier_bandwidth", self.subcarrier_bandwidth),
            ("rb_bandwidth", self.rb_bandwidth),
            ("cell_radius", self.cell_radius),
            ("pathloss_exponent", self.pathloss_exponent),
            ("noise_psd", self.noise_psd),
            ("power_budget_urllc", self.power_budget_urllc),
            ("power_budget_mmtc", self.power_budget_mmtc),
            ("min_distance", self.min_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        // Allow one ulp of slack so 48 * 3750 == 180000 never trips on rounding.
        let used = self.num_subcarriers as f64 * self.subcarrier_bandwidth;
        if used > self.rb_bandwidth * (1.0 + f64::EPSILON) {
            return fail(format!(
                "S * W = {used} Hz exceeds rb_bandwidth = {} Hz",
                self.rb_bandwidth
            ));
        }
        if self.min_distance > self.cell_radius {
            return fail(format!(
                "min_distance {} exceeds cell_radius {}",
                self.min_distance, self.cell_radius
            ));
        }
        for (name, (lo, hi)) in [
            ("urllc_rate_threshold_range", self.urllc_rate_threshold_range),
            ("mmtc_rate_threshold_range", self.mmtc_rate_threshold_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
                return fail(format!("{name} must satisfy 0 <= min <= max, got [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` format. Keys not present keep their
    /// default values; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| Error::ConfigParse { line: line_no, message })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn count(v: &str) -> std::result::Result<usize, String> {
            v.parse().map_err(|e| format!("bad count `{v}`: {e}"))
        }
        fn real(v: &str) -> std::result::Result<f64, String> {
            v.parse().map_err(|e| format!("bad number `{v}`: {e}"))
        }
        fn range(v: &str) -> std::result::Result<(f64, f64), String> {
            let parts: Vec<&str> = v
                .trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(str::trim)
                .collect();
            match parts.as_slice() {
                [lo, hi] => Ok((real(lo)?, real(hi)?)),
                _ => Err(format!("expected `min, max`, got `{v}`")),
            }
        }
        match key {
            "num_urllc" => self.num_urllc = count(value)?,
            "num_mmtc" => self.num_mmtc = count(value)?,
            "num_subcarriers" => self.num_subcarriers = count(value)?,
            "num_clusters" => self.num_clusters = count(value)?,
            "max_rank" => self.max_rank = count(value)?,
            "subcarrier_bandwidth" => self.subcarrier_bandwidth = real(value)?,
            "rb_bandwidth" => self.rb_bandwidth = real(value)?,
            "cell_radius" => self.cell_radius = real(value)?,
            "pathloss_exponent" => self.pathloss_exponent = real(value)?,
            "noise_psd" => self.noise_psd = real(value)?,
            "noise_psd_dbm" => self.noise_psd = dbm_to_watts(real(value)?),
            "power_budget_urllc" => self.power_budget_urllc = real(value)?,
            "power_budget_urllc_dbm" => self.power_budget_urllc = dbm_to_watts(real(value)?),
            "power_budget_mmtc" => self.power_budget_mmtc = real(value)?,
            "power_budget_mmtc_dbm" => self.power_budget_mmtc = dbm_to_watts(real(value)?),
            "urllc_rate_threshold_range" => self.urllc_rate_threshold_range = range(value)?,
            "mmtc_rate_threshold_range" => self.mmtc_rate_threshold_range = range(value)?,
            "min_distance" => self.min_distance = real(value)?,
            "rng_seed" => self.rng_seed = value.parse().map_err(|e| format!("bad seed `{value}`: {e}"))?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceKind {
    Urllc,
    Mmtc,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceKind::Urllc => f.write_str("URLLC"),
            DeviceKind::Mmtc => f.write_str("mMTC"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: usize,
    pub kind: DeviceKind,
    /// Distance to the eNB, metres.
    pub distance: f64,
    /// Linear power gain per subcarrier.
    pub gains: Vec<f64>,
    /// bps.
    pub rate_threshold: f64,
    /// W.
    pub power_budget: f64,
}

/// An immutable cell instance. Devices are ordered URLLC first, then mMTC,
/// and `devices[i].id == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    config: ScenarioConfig,
    devices: Vec<Device>,
}

impl Scenario {
    /// Builds a scenario from explicit devices, checking every invariant.
    pub fn from_parts(config: ScenarioConfig, devices: Vec<Device>) -> Result<Self> {
        config.validate()?;
        let s = config.num_subcarriers;
        if devices.len() != config.num_devices() {
            return Err(Error::InvalidConfig(format!(
                "expected {} devices, got {}",
                config.num_devices(),
                devices.len()
            )));
        }
        for (i, d) in devices.iter().enumerate() {
            let expected = if i < config.num_urllc {
                DeviceKind::Urllc
            } else {
                DeviceKind::Mmtc
            };
            if d.id != i || d.kind != expected {
                return Err(Error::InvalidConfig(format!(
                    "device at position {i} must have id {i} and kind {expected}"
                )));
            }
            if d.gains.len() != s || d.gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "device {i} must have {s} finite positive gains"
                )));
            }
            if !(d.rate_threshold >= 0.0) || !(d.power_budget > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "device {i} needs R_th >= 0 and P_max > 0"
                )));
            }
        }
        Ok(Self { config, devices })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, id: usize) -> &Device {
        &self.devices[id]
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.config.num_subcarriers
    }

    pub fn gain(&self, device: usize, subcarrier: usize) -> f64 {
        self.devices[device].gains[subcarrier]
    }

    pub fn noise_power(&self) -> f64 {
        self.config.noise_power()
    }

    pub fn bandwidth(&self) -> f64 {
        self.config.subcarrier_bandwidth
    }

    /// Same devices and physics, different cluster layout.
    pub fn with_clustering(&self, num_clusters: usize, max_rank: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.num_clusters = num_clusters;
        config.max_rank = max_rank;
        Self::from_parts(config, self.devices.clone())
    }

    /// Same placement and fading with every device's threshold replaced.
    pub fn with_thresholds(&self, threshold: impl Fn(&Device) -> f64) -> Result<Self> {
        let devices = self
            .devices
            .iter()
            .map(|d| Device {
                rate_threshold: threshold(d),
                ..d.clone()
            })
            .collect();
        Self::from_parts(self.config.clone(), devices)
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws a scenario. Locations are uniform in area over the annulus
/// `[min_distance, cell_radius]`; fading is i.i.d. unit-mean exponential per
/// (device, subcarrier).
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let r0sq = config.min_distance * config.min_distance;
    let r1sq = config.cell_radius * config.cell_radius;
    let mut devices = Vec::with_capacity(config.num_devices());
    for id in 0..config.num_devices() {
        let kind = if id < config.num_urllc {
            DeviceKind::Urllc
        } else {
            DeviceKind::Mmtc
        };
        let u: f64 = rng.gen();
        let distance = (r0sq + u * (r1sq - r0sq))
            .sqrt()
            .clamp(config.min_distance, config.cell_radius);
        // Angle is drawn to keep the documented stream layout; rates only
        // depend on distance.
        let _angle = 2.0 * PI * rng.gen::<f64>();
        let (range, power_budget) = match kind {
            DeviceKind::Urllc => (config.urllc_rate_threshold_range, config.power_budget_urllc),
            DeviceKind::Mmtc => (config.mmtc_rate_threshold_range, config.power_budget_mmtc),
        };
        let rate_threshold = uniform_in(&mut rng, range);
        let gains = (0..config.num_subcarriers)
            .map(|_| {
                let y: f64 = rng.sample(Exp1);
                // Exp1 can return exactly 0 with vanishing probability.
                channel_gain(y.max(f64::MIN_POSITIVE), distance, config.pathloss_exponent)
            })
            .collect();
        devices.push(Device {
            id,
            kind,
            distance,
            gains,
            rate_threshold,
            power_budget,
        });
    }
    Scenario::from_parts(config.clone(), devices)
}
