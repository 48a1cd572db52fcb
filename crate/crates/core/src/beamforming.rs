//! Quantized-phase analog combiners and exact power oracles.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::array::{array_response, ArrayGeometry, Channel, Scenario};
use crate::{Error, Result, C64};

/// The `2^r` realizable phases `{-pi + k 2pi / 2^r : k = 1..2^r}`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodebook {
    bits: u32,
    values: Vec<f64>,
}

/// Distance used when snapping a continuous phase onto the codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMetric {
    /// Plain `|x - theta|`.
    #[default]
    Linear,
    /// Wrapped angular distance.
    Circular,
}

impl PhaseCodebook {
    pub fn new(bits: u32) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::invalid(format!("phase resolution {bits} bits outside 1..=16")));
        }
        let n = 1usize << bits;
        let step = 2.0 * PI / n as f64;
        let mut values: Vec<f64> = (1..=n).map(|k| -PI + k as f64 * step).collect();
        // exact top value
        values[n - 1] = PI;
        Ok(Self { bits, values })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn contains(&self, phase: f64) -> bool {
        self.index_of(phase).is_some()
    }

    /// Index of `phase` in the codebook, if it is (to 1e-9) one of its values.
    pub fn index_of(&self, phase: f64) -> Option<usize> {
        let i = self.nearest_linear(phase);
        ((self.values[i] - phase).abs() < 1e-9).then_some(i)
    }

    fn nearest_linear(&self, x: f64) -> usize {
        let upper = self.values.partition_point(|&v| v < x);
        if upper == 0 {
            return 0;
        }
        if upper == self.values.len() {
            return upper - 1;
        }
        let lower = upper - 1;
        // ties go to the smaller value
        if (x - self.values[lower]).abs() <= (self.values[upper] - x).abs() {
            lower
        } else {
            upper
        }
    }

    fn nearest_circular(&self, x: f64) -> usize {
        let wrapped = wrap_phase(x);
        let candidates = [
            self.nearest_linear(wrapped),
            self.nearest_linear(wrapped).saturating_sub(1),
            (self.nearest_linear(wrapped) + 1).min(self.values.len() - 1),
            0,
            self.values.len() - 1,
        ];
        let dist = |i: usize| {
            let d = (wrapped - self.values[i]).abs() % (2.0 * PI);
            d.min(2.0 * PI - d)
        };
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            let (dc, db) = (dist(c), dist(best));
            if dc < db - 1e-15 || ((dc - db).abs() <= 1e-15 && c < best) {
                best = c;
            }
        }
        best
    }

    /// Codebook index nearest to `x` under `metric`.
    pub fn nearest_index(&self, x: f64, metric: QuantizeMetric) -> usize {
        match metric {
            QuantizeMetric::Linear => self.nearest_linear(x),
            QuantizeMetric::Circular => self.nearest_circular(x),
        }
    }
}

/// Codebook for `bits` of phase resolution.
pub fn phase_set(bits: u32) -> Result<PhaseCodebook> {
    PhaseCodebook::new(bits)
}

/// Element-wise nearest codebook value, linear distance, ties toward the smaller value.
pub fn quantize_phases(predicted: &[f64], codebook: &PhaseCodebook) -> Vec<f64> {
    quantize_phases_with(predicted, codebook, QuantizeMetric::Linear)
}

pub fn quantize_phases_with(predicted: &[f64], codebook: &PhaseCodebook, metric: QuantizeMetric) -> Vec<f64> {
    predicted
        .iter()
        .map(|&x| codebook.value(codebook.nearest_index(x, metric)))
        .collect()
}

/// Maps any real angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Analog combiner `w = exp(j theta) / sqrt(M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    phases: Vec<f64>,
    weights: Vec<C64>,
}

impl Serialize for Combiner {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.phases.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Combiner {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let phases = Vec::<f64>::deserialize(deserializer)?;
        Combiner::from_phases(&phases).map_err(serde::de::Error::custom)
    }
}

impl Combiner {
    /// Phases are wrapped into (-pi, pi].
    pub fn from_phases(phases: &[f64]) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::invalid("combiner needs at least one phase"));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("combiner phases must be finite"));
        }
        let phases: Vec<f64> = phases.iter().map(|&p| wrap_phase(p)).collect();
        let scale = 1.0 / (phases.len() as f64).sqrt();
        let weights = phases.iter().map(|&p| C64::from_polar(scale, p)).collect();
        Ok(Self { phases, weights })
    }

    /// Combiner from codebook indices.
    pub fn from_indices(indices: &[usize], codebook: &PhaseCodebook) -> Result<Self> {
        let phases: Vec<f64> = indices.iter().map(|&i| codebook.value(i)).collect();
        Self::from_phases(&phases)
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// `w^H h`.
    pub fn inner(&self, channel: &[C64]) -> C64 {
        self.weights.iter().zip(channel).map(|(w, h)| w.conj() * h).sum()
    }

    /// Codebook indices, if every phase lies in `codebook`.
    pub fn indices(&self, codebook: &PhaseCodebook) -> Option<Vec<usize>> {
        self.phases.iter().map(|&p| codebook.index_of(p)).collect()
    }
}

/// Exact expected powers of one combiner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub signal_power: f64,
    pub interference_noise_power: f64,
    pub sinr: f64,
    /// Achievable rate in bits/s/Hz.
    pub rate: f64,
}

impl PowerReport {
    pub fn new(signal_power: f64, interference_noise_power: f64) -> Self {
        let sinr = signal_power / interference_noise_power;
        Self { signal_power, interference_noise_power, sinr, rate: (1.0 + sinr).log2() }
    }

    pub fn sinr_db(&self) -> f64 {
        crate::to_db(self.sinr)
    }
}

fn check_dims(combiner: &Combiner, scenario: &Scenario) -> Result<()> {
    if combiner.len() != scenario.num_antennas() {
        return Err(Error::invalid(format!(
            "combiner has {} phases, scenario has {} antennas",
            combiner.len(),
            scenario.num_antennas()
        )));
    }
    Ok(())
}

/// `P_S = |w^H h|^2 P_x` and `P_I+N = sum_k |w^H h_k|^2 P_x + sigma^2`.
pub fn compute_powers(combiner: &Combiner, scenario: &Scenario) -> Result<PowerReport> {
    check_dims(combiner, scenario)?;
    let signal = combiner.inner(scenario.ue_channel.coefficients()).norm_sqr() * scenario.tx_power;
    let interference: f64 = scenario
        .interferer_channels
        .iter()
        .map(|h| combiner.inner(h.coefficients()).norm_sqr())
        .sum::<f64>()
        * scenario.tx_power;
    Ok(PowerReport::new(signal, interference + scenario.noise_power))
}

/// `A = P_x H H^H + sigma^2 I`, so that `P_I+N = w^H A w`.
pub fn gram_matrix(scenario: &Scenario) -> Array2<C64> {
    let m = scenario.num_antennas();
    let mut a = Array2::<C64>::zeros((m, m));
    for h in &scenario.interferer_channels {
        let h = h.coefficients();
        for i in 0..m {
            for j in 0..m {
                a[[i, j]] += h[i] * h[j].conj() * scenario.tx_power;
            }
        }
    }
    for i in 0..m {
        a[[i, i]] += scenario.noise_power;
    }
    a
}

/// `P_x h h^H` for the UE channel.
pub fn signal_matrix(scenario: &Scenario) -> Array2<C64> {
    let h = scenario.ue_channel.coefficients();
    let m = h.len();
    Array2::from_shape_fn((m, m), |(i, j)| h[i] * h[j].conj() * scenario.tx_power)
}

/// `w^H A w` for a square matrix `A`.
pub fn quadratic_form(matrix: &Array2<C64>, combiner: &Combiner) -> C64 {
    let w = combiner.weights();
    let mut acc = C64::new(0.0, 0.0);
    for (i, wi) in w.iter().enumerate() {
        let row: C64 = w.iter().enumerate().map(|(j, wj)| matrix[[i, j]] * wj).sum();
        acc += wi.conj() * row;
    }
    acc
}

/// Linear gain `|w^H a(phi, pi/2)|^2` over an azimuth grid.
pub fn beam_gain_pattern(combiner: &Combiner, geometry: &ArrayGeometry, azimuth_grid: &[f64]) -> Result<Vec<f64>> {
    if azimuth_grid.is_empty() {
        return Err(Error::invalid("azimuth grid is empty"));
    }
    if combiner.len() != geometry.num_antennas {
        return Err(Error::invalid("combiner and geometry sizes differ"));
    }
    Ok(azimuth_grid
        .iter()
        .map(|&phi| {
            let a = array_response(geometry, phi, FRAC_PI_2);
            combiner.inner(a.coefficients()).norm_sqr()
        })
        .collect())
}

/// Null depth in dB: gain toward `ue_azimuth` over gain toward `interferer_azimuth`.
pub fn null_depth_db(combiner: &Combiner, geometry: &ArrayGeometry, ue_azimuth: f64, interferer_azimuth: f64) -> Result<f64> {
    let g = beam_gain_pattern(combiner, geometry, &[ue_azimuth, interferer_azimuth])?;
    Ok(crate::to_db(g[0]) - crate::to_db(g[1]))
}

/// Default enumeration cap of [`exhaustive_search`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 24;

/// Relative SINR difference under which two beams count as tied.
pub const SINR_TIE_TOLERANCE: f64 = 1e-12;

/// Global SINR optimum over all codebook phase assignments.
///
/// Ties (within [`SINR_TIE_TOLERANCE`]) go to the lexicographically smallest
/// phase-index vector. A common codebook offset on every phase leaves the SINR
/// unchanged and cyclically shifts the indices, so the lexicographic minimum of any
/// tie class has first index 0; only that slice of the index space is visited.
pub fn exhaustive_search(scenario: &Scenario, cap: u64) -> Result<(Combiner, PowerReport)> {
    scenario.validate()?;
    let codebook = PhaseCodebook::new(scenario.phase_bits)?;
    let m = scenario.num_antennas();
    let total_bits = scenario.phase_bits as u64 * m as u64;
    if total_bits >= 64 || (1u64 << total_bits) > cap {
        return Err(Error::Budget(format!(
            "exhaustive search over 2^{total_bits} beams exceeds the enumeration cap {cap}"
        )));
    }
    let n = codebook.len();
    let scale = 1.0 / (m as f64).sqrt();
    // terms[c][m][p] = conj(w_m) h_c[m] for phase index p
    let channels: Vec<&Channel> = std::iter::once(&scenario.ue_channel)
        .chain(scenario.interferer_channels.iter())
        .collect();
    let terms: Vec<Vec<Vec<C64>>> = channels
        .iter()
        .map(|h| {
            (0..m)
                .map(|ant| {
                    (0..n)
                        .map(|p| C64::from_polar(scale, -codebook.value(p)) * h.coefficients()[ant])
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut search = Search {
        terms: &terms,
        tx_power: scenario.tx_power,
        noise_power: scenario.noise_power,
        n,
        m,
        indices: vec![0; m],
        best_indices: vec![0; m],
        best_sinr: f64::NEG_INFINITY,
        partial: vec![vec![C64::new(0.0, 0.0); channels.len()]; m + 1],
    };
    search.indices[0] = 0;
    for c in 0..channels.len() {
        search.partial[1][c] = terms[c][0][0];
    }
    search.descend(1);

    let combiner = Combiner::from_indices(&search.best_indices, &codebook)?;
    let report = compute_powers(&combiner, scenario)?;
    Ok((combiner, report))
}

struct Search<'a> {
    terms: &'a [Vec<Vec<C64>>],
    tx_power: f64,
    noise_power: f64,
    n: usize,
    m: usize,
    indices: Vec<usize>,
    best_indices: Vec<usize>,
    best_sinr: f64,
    partial: Vec<Vec<C64>>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize) {
        if depth == self.m {
            let sums = &self.partial[depth];
            let signal = sums[0].norm_sqr() * self.tx_power;
            let interference: f64 = sums[1..].iter().map(|s| s.norm_sqr()).sum::<f64>() * self.tx_power;
            let sinr = signal / (interference + self.noise_power);
            // enumeration is lexicographic, so only a strict improvement replaces the incumbent
            if sinr > self.best_sinr + SINR_TIE_TOLERANCE * self.best_sinr.abs() || self.best_sinr == f64::NEG_INFINITY {
                self.best_sinr = sinr;
                self.best_indices.copy_from_slice(&self.indices);
            }
            return;
        }
        for p in 0..self.n {
            self.indices[depth] = p;
            for c in 0..self.terms.len() {
                self.partial[depth + 1][c] = self.partial[depth][c] + self.terms[c][depth][p];
            }
            self.descend(depth + 1);
        }
    }
}

/// Interference-blind reference beam: the UE channel's conjugate phases, quantized.
pub fn matched_filter_beam(scenario: &Scenario) -> Result<Combiner> {
    let codebook = PhaseCodebook::new(scenario.phase_bits)?;
    let phases: Vec<f64> = scenario.ue_channel.coefficients().iter().map(|h| h.arg()).collect();
    Combiner::from_phases(&quantize_phases(&phases, &codebook))
}
