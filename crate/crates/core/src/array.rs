//! Uniform linear array responses, geometric multipath channels and seeded scenarios.
//!
//! Complex numbers serialize as `[re, im]` pairs in every JSON document produced here.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Receive array: `num_antennas` elements along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub num_antennas: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
    /// Static per-antenna complex gain applied multiplicatively to every response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impairment: Option<Vec<C64>>,
}

impl ArrayGeometry {
    /// Half-wavelength array without impairments.
    pub fn ula(num_antennas: usize) -> Result<Self> {
        Self::new(num_antennas, 0.5, None)
    }

    pub fn new(num_antennas: usize, element_spacing: f64, impairment: Option<Vec<C64>>) -> Result<Self> {
        let geometry = Self { num_antennas, element_spacing, impairment };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::invalid("array needs at least one antenna"));
        }
        if !(self.element_spacing > 0.0 && self.element_spacing.is_finite()) {
            return Err(Error::invalid(format!("element spacing must be positive, got {}", self.element_spacing)));
        }
        if let Some(imp) = &self.impairment {
            if imp.len() != self.num_antennas {
                return Err(Error::invalid(format!(
                    "impairment vector has length {}, expected {}",
                    imp.len(),
                    self.num_antennas
                )));
            }
            if imp.iter().any(|g| !g.is_finite()) {
                return Err(Error::invalid("impairment gains must be finite"));
            }
        }
        Ok(())
    }
}

/// One propagation path: complex gain (path loss included) and angles of arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathComponent {
    pub gain: C64,
    /// Azimuth in radians, within (-pi, pi].
    pub azimuth: f64,
    /// Elevation in radians; pi/2 is broadside.
    #[serde(default = "default_elevation")]
    pub elevation: f64,
}

fn default_elevation() -> f64 {
    FRAC_PI_2
}

impl PathComponent {
    pub fn new(gain: C64, azimuth: f64) -> Self {
        Self { gain, azimuth, elevation: FRAC_PI_2 }
    }

    fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() {
            return Err(Error::invalid("path gain must be finite"));
        }
        if !(self.azimuth > -PI && self.azimuth <= PI) {
            return Err(Error::invalid(format!("azimuth {} outside (-pi, pi]", self.azimuth)));
        }
        if !(0.0..=PI).contains(&self.elevation) {
            return Err(Error::invalid(format!("elevation {} outside [0, pi]", self.elevation)));
        }
        Ok(())
    }
}

/// A length-M complex channel vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Channel(pub Vec<C64>);

impl Channel {
    pub fn coefficients(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Array response toward `(azimuth, elevation)`:
/// entry m is `impairment_m * exp(j 2 pi d m sin(azimuth) sin(elevation))`.
pub fn array_response(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> Channel {
    let step = 2.0 * PI * geometry.element_spacing * azimuth.sin() * elevation.sin();
    let coeffs = (0..geometry.num_antennas)
        .map(|m| {
            let phase = C64::from_polar(1.0, step * m as f64);
            match &geometry.impairment {
                Some(imp) => imp[m] * phase,
                None => phase,
            }
        })
        .collect();
    Channel(coeffs)
}

/// Gain-weighted sum of per-path array responses.
pub fn synthesize_channel(geometry: &ArrayGeometry, paths: &[PathComponent]) -> Result<Channel> {
    if paths.is_empty() {
        return Err(Error::invalid("channel needs at least one path"));
    }
    let mut coeffs = vec![C64::new(0.0, 0.0); geometry.num_antennas];
    for path in paths {
        path.validate()?;
        let response = array_response(geometry, path.azimuth, path.elevation);
        for (acc, a) in coeffs.iter_mut().zip(response.0) {
            *acc += path.gain * a;
        }
    }
    Ok(Channel(coeffs))
}

/// Ground truth hidden from the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub ue_channel: Channel,
    pub interferer_channels: Vec<Channel>,
    /// Per-transmitter power in linear watts.
    pub tx_power: f64,
    /// Receiver noise power in linear watts.
    pub noise_power: f64,
    pub phase_bits: u32,
    pub seed: u64,
    /// Paths behind `ue_channel`, kept for pattern and null-depth analysis.
    #[serde(default)]
    pub ue_paths: Vec<PathComponent>,
    #[serde(default)]
    pub interferer_paths: Vec<Vec<PathComponent>>,
}

impl Scenario {
    pub fn num_antennas(&self) -> usize {
        self.geometry.num_antennas
    }

    pub fn num_interferers(&self) -> usize {
        self.interferer_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let m = self.geometry.num_antennas;
        if self.ue_channel.len() != m || self.interferer_channels.iter().any(|h| h.len() != m) {
            return Err(Error::invalid(format!("all channels must have length {m}")));
        }
        let all_finite = self
            .ue_channel
            .0
            .iter()
            .chain(self.interferer_channels.iter().flat_map(|h| h.0.iter()))
            .all(|c| c.is_finite());
        if !all_finite {
            return Err(Error::invalid("channel coefficients must be finite"));
        }
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return Err(Error::invalid("tx power must be positive"));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::invalid("noise power must be positive"));
        }
        if self.phase_bits == 0 || self.phase_bits > 16 {
            return Err(Error::invalid(format!("phase bits {} outside 1..=16", self.phase_bits)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// How one transmitter's channel is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSource {
    /// Fixed, fully specified paths.
    Paths { paths: Vec<PathComponent> },
    /// `num_paths` paths with azimuths uniform over the spec's azimuth range and
    /// complex normal gains of total mean power `mean_power`.
    Random { num_paths: usize, mean_power: f64 },
}

/// Declarative description of a scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub num_antennas: usize,
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
    #[serde(default = "default_phase_bits")]
    pub phase_bits: u32,
    pub tx_power: f64,
    pub noise_power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impairment: Option<Vec<C64>>,
    /// Azimuth sampling range `[lo, hi)` for random paths.
    #[serde(default = "default_azimuth_range")]
    pub azimuth_range: [f64; 2],
    pub ue: ChannelSource,
    #[serde(default)]
    pub interferers: Vec<ChannelSource>,
}

fn default_spacing() -> f64 {
    0.5
}

fn default_phase_bits() -> u32 {
    3
}

fn default_azimuth_range() -> [f64; 2] {
    [-FRAC_PI_2, FRAC_PI_2]
}

impl ScenarioSpec {
    /// The default experiment family: K interferers with one line-of-sight path each,
    /// a three-path UE channel and azimuths uniform over (-pi/2, pi/2).
    pub fn default_family(num_antennas: usize, phase_bits: u32, num_interferers: usize) -> Self {
        Self {
            num_antennas,
            element_spacing: 0.5,
            phase_bits,
            tx_power: 1.0,
            noise_power: DEFAULT_NOISE_POWER,
            impairment: None,
            azimuth_range: default_azimuth_range(),
            ue: ChannelSource::Random { num_paths: 3, mean_power: 1.0 },
            interferers: vec![
                ChannelSource::Random { num_paths: 1, mean_power: DEFAULT_INTERFERER_POWER };
                num_interferers
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::config("num_antennas must be at least 1"));
        }
        if self.phase_bits == 0 || self.phase_bits > 16 {
            return Err(Error::config(format!("phase_bits {} outside 1..=16", self.phase_bits)));
        }
        if !(self.tx_power > 0.0) || !(self.noise_power > 0.0) {
            return Err(Error::config("tx_power and noise_power must be positive"));
        }
        let [lo, hi] = self.azimuth_range;
        if !(lo < hi && lo >= -PI && hi <= PI) {
            return Err(Error::config(format!("azimuth_range [{lo}, {hi}] must be increasing within [-pi, pi]")));
        }
        if let Some(imp) = &self.impairment {
            if imp.len() != self.num_antennas {
                return Err(Error::config(format!(
                    "impairment length {} does not match num_antennas {}",
                    imp.len(),
                    self.num_antennas
                )));
            }
        }
        for source in std::iter::once(&self.ue).chain(&self.interferers) {
            match source {
                ChannelSource::Paths { paths } if paths.is_empty() => {
                    return Err(Error::config("explicit channel needs at least one path"));
                }
                ChannelSource::Random { num_paths, mean_power } if *num_paths == 0 || !(*mean_power > 0.0) => {
                    return Err(Error::config("random channel needs num_paths >= 1 and mean_power > 0"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether any quantity is drawn from the seeded stream.
    pub fn is_random(&self) -> bool {
        std::iter::once(&self.ue)
            .chain(&self.interferers)
            .any(|s| matches!(s, ChannelSource::Random { .. }))
    }
}

/// Default receiver noise power (linear watts) of the experiment family.
pub const DEFAULT_NOISE_POWER: f64 = 0.1;
/// Default per-interferer mean channel power relative to the UE's unit mean power.
pub const DEFAULT_INTERFERER_POWER: f64 = 1.0;

/// Builds a scenario from `spec`; a pure function of `(spec, seed)`.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let geometry = ArrayGeometry::new(spec.num_antennas, spec.element_spacing, spec.impairment.clone())
        .map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut realize = |source: &ChannelSource| -> Result<(Vec<PathComponent>, Channel)> {
        let paths = match source {
            ChannelSource::Paths { paths } => paths.clone(),
            ChannelSource::Random { num_paths, mean_power } => {
                let [lo, hi] = spec.azimuth_range;
                let std = (mean_power / *num_paths as f64 / 2.0).sqrt();
                (0..*num_paths)
                    .map(|_| {
                        let azimuth = rng.random_range(lo..hi);
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        PathComponent::new(C64::new(std * re, std * im), wrap_azimuth(azimuth))
                    })
                    .collect()
            }
        };
        let channel = synthesize_channel(&geometry, &paths).map_err(|e| Error::config(e.to_string()))?;
        Ok((paths, channel))
    };

    let (ue_paths, ue_channel) = realize(&spec.ue)?;
    let mut interferer_paths = Vec::with_capacity(spec.interferers.len());
    let mut interferer_channels = Vec::with_capacity(spec.interferers.len());
    for source in &spec.interferers {
        let (paths, channel) = realize(source)?;
        interferer_paths.push(paths);
        interferer_channels.push(channel);
    }

    let scenario = Scenario {
        geometry,
        ue_channel,
        interferer_channels,
        tx_power: spec.tx_power,
        noise_power: spec.noise_power,
        phase_bits: spec.phase_bits,
        seed,
        ue_paths,
        interferer_paths,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn wrap_azimuth(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}
