//! Power-predicting twins.
//!
//! Two interchangeable architectures predict either the interference-plus-noise
//! power or the signal power of a combiner:
//!
//! - [`QuadraticPredictor`]: `f(w) = w^H Q Q^H w = ||Q^H w||^2` with `Q` complex `M x r`. The
//!   true powers have exactly this form, so a rank-`r` `Q` can represent them.
//! - [`DensePredictor`]: an `M -> M' -> M' -> 1` network on the phase vector.
//!
//! Both train by mini-batch Adam on the mean squared error over a [`PowerDataset`].

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamforming::Combiner;
use crate::nn::{Adam, DenseNetworkSpec, Network, OutputActivation};
use crate::{Error, Result, C64};

/// Which observable a predictor or dataset refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRole {
    Interference,
    Signal,
}

impl std::fmt::Display for PowerRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PowerRole::Interference => "interference",
            PowerRole::Signal => "signal",
        })
    }
}

/// Dense-twin input: the phase vector, the M real degrees of freedom of `w`.
pub fn encode_input(combiner: &Combiner) -> Vec<f64> {
    combiner.phases().to_vec()
}

// ---------------------------------------------------------------------------
// Quadratic predictor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPredictor {
    q: Array2<C64>,
    trained: bool,
}

impl QuadraticPredictor {
    /// Explicitly initialized predictor; usable for prediction immediately.
    pub fn from_matrix(q: Array2<C64>) -> Self {
        Self { q, trained: true }
    }

    /// Random `M x rank` start with independent complex normal entries of scale
    /// `1/sqrt(M rank)`; must be trained before use in a twin.
    pub fn random<R: Rng + ?Sized>(num_antennas: usize, rank: usize, rng: &mut R) -> Self {
        let scale = 1.0 / ((num_antennas * rank) as f64).sqrt() / std::f64::consts::SQRT_2;
        let q = Array2::from_shape_simple_fn((num_antennas, rank), || {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * scale, im * scale)
        });
        Self { q, trained: false }
    }

    /// Exact factor `Q = L` of a Hermitian positive-definite `A = L L^H` (Cholesky), so that
    /// `||Q^H w||^2 = w^H A w` for every `w`.
    pub fn from_hermitian(a: &Array2<C64>) -> Result<Self> {
        Ok(Self::from_matrix(cholesky(a)?))
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.q
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn num_antennas(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// `||Q^H w||^2`.
    pub fn predict(&self, combiner: &Combiner) -> Result<f64> {
        if combiner.len() != self.q.nrows() {
            return Err(Error::invalid(format!(
                "combiner has {} phases, predictor expects {}",
                combiner.len(),
                self.q.nrows()
            )));
        }
        Ok(quadratic_value(&self.q, combiner.weights()))
    }
}

fn quadratic_value(q: &Array2<C64>, w: &[C64]) -> f64 {
    (0..q.ncols())
        .map(|j| {
            let u: C64 = w.iter().enumerate().map(|(i, wi)| q[[i, j]].conj() * wi).sum();
            u.norm_sqr()
        })
        .sum()
}

/// Wirtinger gradient `dL/dconj(Q)` of `L = |target - ||Q^H w||^2|^2`:
/// `-2 (target - ||Q^H w||^2) w w^H Q`.
///
/// The gradient with respect to the real and imaginary parts of `Q` is twice the real
/// and imaginary parts of this matrix. At `Q = 0` it vanishes (a saddle point).
pub fn quadratic_gradient(q: &Array2<C64>, combiner: &Combiner, target: f64) -> Result<Array2<C64>> {
    let w = combiner.weights();
    if w.len() != q.nrows() {
        return Err(Error::invalid("combiner and parameter matrix sizes differ"));
    }
    let residual = target - quadratic_value(q, w);
    let mut grad = Array2::<C64>::zeros(q.dim());
    for j in 0..q.ncols() {
        // (w^H Q)_j
        let u: C64 = w.iter().enumerate().map(|(i, wi)| wi.conj() * q[[i, j]]).sum();
        for (i, wi) in w.iter().enumerate() {
            grad[[i, j]] = *wi * u * (-2.0 * residual);
        }
    }
    Ok(grad)
}

/// Lower-triangular `L` with `A = L L^H` for Hermitian positive-definite `A`.
pub fn cholesky(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("cholesky needs a square matrix"));
    }
    let mut l = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if d <= 0.0 {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        let d = d.sqrt();
        l[[j, j]] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

// ---------------------------------------------------------------------------
// Dense predictor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensePredictor {
    network: Network,
    target_mean: f64,
    target_std: f64,
    trained: bool,
}

impl DensePredictor {
    /// `M -> hidden -> hidden -> 1`, batch norm and ReLU on hidden layers, linear output.
    pub fn new<R: Rng + ?Sized>(num_antennas: usize, hidden_width: usize, rng: &mut R) -> Result<Self> {
        let spec = DenseNetworkSpec::new(
            vec![num_antennas, hidden_width, hidden_width, 1],
            true,
            OutputActivation::Linear,
        )?;
        Ok(Self { network: Network::new(spec, rng)?, target_mean: 0.0, target_std: 1.0, trained: false })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn num_antennas(&self) -> usize {
        self.network.spec().input_size()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Predictions for many phase vectors at once, clamped at zero.
    pub fn predict_phases(&self, phases: &Array2<f64>) -> Result<Vec<f64>> {
        let out = self.network.forward_eval(phases)?;
        Ok(out.column(0).iter().map(|y| (y * self.target_std + self.target_mean).max(0.0)).collect())
    }

    pub fn predict(&self, combiner: &Combiner) -> Result<f64> {
        if combiner.len() != self.num_antennas() {
            return Err(Error::invalid("combiner and predictor sizes differ"));
        }
        let x = Array2::from_shape_vec((1, combiner.len()), encode_input(combiner)).expect("shape");
        Ok(self.predict_phases(&x)?[0])
    }
}

// ---------------------------------------------------------------------------
// Either architecture
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum TwinPredictor {
    Quadratic(QuadraticPredictor),
    Dense(DensePredictor),
}

impl TwinPredictor {
    pub fn predict(&self, combiner: &Combiner) -> Result<f64> {
        match self {
            TwinPredictor::Quadratic(q) => q.predict(combiner),
            TwinPredictor::Dense(d) => d.predict(combiner),
        }
    }

    /// Predictions for every sample of `dataset`.
    pub fn predict_dataset(&self, dataset: &PowerDataset) -> Result<Vec<f64>> {
        match self {
            TwinPredictor::Quadratic(q) => dataset
                .samples()
                .iter()
                .map(|s| q.predict(&Combiner::from_phases(&s.phases)?))
                .collect(),
            TwinPredictor::Dense(d) => d.predict_phases(&dataset.phase_matrix()),
        }
    }

    pub fn is_trained(&self) -> bool {
        match self {
            TwinPredictor::Quadratic(q) => q.is_trained(),
            TwinPredictor::Dense(d) => d.is_trained(),
        }
    }

    pub fn num_antennas(&self) -> usize {
        match self {
            TwinPredictor::Quadratic(q) => q.num_antennas(),
            TwinPredictor::Dense(d) => d.num_antennas(),
        }
    }

    pub fn architecture(&self) -> TwinArchitecture {
        match self {
            TwinPredictor::Quadratic(_) => TwinArchitecture::Quadratic,
            TwinPredictor::Dense(_) => TwinArchitecture::Dense,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub phases: Vec<f64>,
    /// Watts.
    pub power: f64,
}

/// `(combiner phases, measured power)` pairs for one observable.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDataset {
    role: PowerRole,
    num_antennas: usize,
    samples: Vec<PowerSample>,
}

/// JSON sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub role: PowerRole,
    pub num_antennas: usize,
    pub size: usize,
    pub scenario_hash: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl PowerDataset {
    pub fn new(role: PowerRole, num_antennas: usize) -> Self {
        Self { role, num_antennas, samples: Vec::new() }
    }

    pub fn role(&self) -> PowerRole {
        self.role
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, combiner: &Combiner, power: f64) -> Result<()> {
        self.push_phases(combiner.phases().to_vec(), power)
    }

    pub fn push_phases(&mut self, phases: Vec<f64>, power: f64) -> Result<()> {
        if phases.len() != self.num_antennas {
            return Err(Error::invalid(format!(
                "sample has {} phases, dataset expects {}",
                phases.len(),
                self.num_antennas
            )));
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::invalid(format!("power {power} must be finite and non-negative")));
        }
        self.samples.push(PowerSample { phases, power });
        Ok(())
    }

    pub fn extend_from(&mut self, other: &PowerDataset) -> Result<()> {
        if other.role != self.role || other.num_antennas != self.num_antennas {
            return Err(Error::invalid("datasets differ in role or antenna count"));
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    pub fn powers(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.power).collect()
    }

    pub fn phase_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.samples.len(), self.num_antennas), |(i, j)| self.samples[i].phases[j])
    }

    fn subset(&self, indices: &[usize]) -> PowerDataset {
        PowerDataset {
            role: self.role,
            num_antennas: self.num_antennas,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Seeded shuffle split into `(train, validation)` with `validation_fraction` of the
    /// samples (at least one when the dataset has two or more) held out.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> (PowerDataset, PowerDataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut n_val = (self.len() as f64 * validation_fraction).round() as usize;
        if self.len() >= 2 {
            n_val = n_val.clamp(1, self.len() - 1);
        } else {
            n_val = 0;
        }
        let (val, train) = idx.split_at(n_val);
        (self.subset(train), self.subset(val))
    }

    /// CSV with columns `theta_0..theta_{M-1},power`; `header` lines are written as `#` comments.
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in header {
            writeln!(file, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut cols: Vec<String> = (0..self.num_antennas).map(|m| format!("theta_{m}")).collect();
        cols.push("power".into());
        w.write_record(&cols)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.phases.iter().map(|p| format!("{p:?}")).collect();
            rec.push(format!("{:?}", s.power));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, role: PowerRole) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let m = r.headers()?.len().checked_sub(1).filter(|&m| m > 0).ok_or_else(|| {
            Error::invalid(format!("{} has no phase columns", path.display()))
        })?;
        let mut ds = PowerDataset::new(role, m);
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad number {v:?}: {e}"))))
                .collect::<Result<_>>()?;
            let power = vals[m];
            ds.push_phases(vals[..m].to_vec(), power)?;
        }
        Ok(ds)
    }

    pub fn sidecar(&self, scenario_hash: &str, meta: serde_json::Value) -> DatasetSidecar {
        DatasetSidecar {
            role: self.role,
            num_antennas: self.num_antennas,
            size: self.len(),
            scenario_hash: scenario_hash.to_string(),
            meta,
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinArchitecture {
    Quadratic,
    Dense,
}

impl std::fmt::Display for TwinArchitecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TwinArchitecture::Quadratic => "quadratic",
            TwinArchitecture::Dense => "dense",
        })
    }
}

/// Supervised-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl TrainHyper {
    /// Batch 512, 500 epochs, Adam at 0.1 decayed by 0.1 at epochs 50, 300 and 400.
    pub fn quadratic() -> Self {
        Self { batch_size: 512, epochs: 500, learning_rate: 0.1, milestones: vec![50, 300, 400], decay_factor: 0.1, seed: 0 }
    }

    /// Batch 512, 500 epochs, Adam at 0.01 decayed by 0.1 at epochs 100, 300 and 400.
    pub fn dense() -> Self {
        Self { batch_size: 512, epochs: 500, learning_rate: 0.01, milestones: vec![100, 300, 400], decay_factor: 0.1, seed: 0 }
    }

    pub fn for_architecture(arch: TwinArchitecture) -> Self {
        match arch {
            TwinArchitecture::Quadratic => Self::quadratic(),
            TwinArchitecture::Dense => Self::dense(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("batch size, epochs and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Trains `predictor` on `dataset`, warm-starting from its current parameters.
/// Returns the mean training loss of every epoch, in watts squared.
pub fn train_twin(predictor: &mut TwinPredictor, dataset: &PowerDataset, hyper: &TrainHyper) -> Result<Vec<f64>> {
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train a twin on an empty dataset"));
    }
    if dataset.num_antennas() != predictor.num_antennas() {
        return Err(Error::invalid("dataset and predictor antenna counts differ"));
    }
    match predictor {
        TwinPredictor::Quadratic(q) => train_quadratic(q, dataset, hyper),
        TwinPredictor::Dense(d) => train_dense(d, dataset, hyper),
    }
}

fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng, min_batch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().unwrap().len() < min_batch {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

fn train_quadratic(pred: &mut QuadraticPredictor, dataset: &PowerDataset, hyper: &TrainHyper) -> Result<Vec<f64>> {
    let m = pred.num_antennas();
    let r = pred.rank();
    // Targets are scaled so their mean is 1/M, the expected output of the random start.
    // A random start is taken as already in scaled units; a trained one is divided down.
    // Q absorbs sqrt(scale) afterwards.
    let powers = dataset.powers();
    let mean = powers.iter().sum::<f64>() / powers.len() as f64;
    let scale = if mean > 0.0 { mean * m as f64 } else { 1.0 };
    let root = scale.sqrt();
    let targets: Vec<f64> = powers.iter().map(|p| p / scale).collect();
    let weights: Vec<Vec<C64>> = dataset
        .samples()
        .iter()
        .map(|s| Combiner::from_phases(&s.phases).map(|c| c.weights().to_vec()))
        .collect::<Result<_>>()?;

    let start = if pred.trained { root } else { 1.0 };
    let mut re: Vec<f64> = pred.q.iter().map(|c| c.re / start).collect();
    let mut im: Vec<f64> = pred.q.iter().map(|c| c.im / start).collect();
    let mut adam = Adam::new(hyper.learning_rate).with_schedule(hyper.milestones.clone(), hyper.decay_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut g_re = vec![0.0; m * r];
    let mut g_im = vec![0.0; m * r];
    let mut u = vec![C64::new(0.0, 0.0); r];

    for epoch in 0..hyper.epochs {
        adam.set_epoch(epoch);
        let mut epoch_loss = 0.0;
        let batches = minibatches(dataset.len(), hyper.batch_size, &mut rng, 1);
        for batch in &batches {
            g_re.iter_mut().for_each(|g| *g = 0.0);
            g_im.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            let inv_b = 1.0 / batch.len() as f64;
            for &n in batch {
                let w = &weights[n];
                // u = Q^H w
                for (j, uj) in u.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (i, wi) in w.iter().enumerate() {
                        acc += C64::new(re[i * r + j], -im[i * r + j]) * wi;
                    }
                    *uj = acc;
                }
                let f: f64 = u.iter().map(|x| x.norm_sqr()).sum();
                let e = targets[n] - f;
                loss += e * e;
                // d(mean e^2)/d conj(Q) = -(2/B) e w u^H; real-part gradient is twice that
                let coeff = -4.0 * e * inv_b;
                for (i, wi) in w.iter().enumerate() {
                    for (j, uj) in u.iter().enumerate() {
                        let g = *wi * uj.conj() * coeff;
                        g_re[i * r + j] += g.re;
                        g_im[i * r + j] += g.im;
                    }
                }
            }
            epoch_loss += loss;
            adam.step(vec![&mut re, &mut im], vec![&g_re, &g_im]);
        }
        trace.push(epoch_loss / dataset.len() as f64 * scale * scale);
    }

    pred.q = Array2::from_shape_fn((m, r), |(i, j)| C64::new(re[i * r + j] * root, im[i * r + j] * root));
    pred.trained = true;
    Ok(trace)
}

fn train_dense(pred: &mut DensePredictor, dataset: &PowerDataset, hyper: &TrainHyper) -> Result<Vec<f64>> {
    if dataset.len() < 2 {
        return Err(Error::invalid("the dense twin needs at least two samples for batch normalization"));
    }
    let powers = dataset.powers();
    let n = powers.len() as f64;
    let mean = powers.iter().sum::<f64>() / n;
    let var = powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 * mean.abs().max(1e-300) { var.sqrt() } else { 1.0 };
    pred.target_mean = mean;
    pred.target_std = std;

    let x = dataset.phase_matrix();
    let y: Vec<f64> = powers.iter().map(|p| (p - mean) / std).collect();
    let mut adam = Adam::new(hyper.learning_rate).with_schedule(hyper.milestones.clone(), hyper.decay_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut trace = Vec::with_capacity(hyper.epochs);
    let m = dataset.num_antennas();

    for epoch in 0..hyper.epochs {
        adam.set_epoch(epoch);
        let mut epoch_loss = 0.0;
        for batch in minibatches(dataset.len(), hyper.batch_size, &mut rng, 2) {
            let xb = Array2::from_shape_fn((batch.len(), m), |(i, j)| x[[batch[i], j]]);
            let yb = Array2::from_shape_fn((batch.len(), 1), |(i, _)| y[batch[i]]);
            let trace_fw = pred.network.forward_train(&xb)?;
            let (loss, d_out) = crate::nn::mse_loss(&trace_fw.output, &yb);
            let (grads, _) = pred.network.backward(&trace_fw, &d_out)?;
            pred.network.update_running_stats(&trace_fw);
            pred.network.adam_step(&grads, &mut adam);
            epoch_loss += loss * batch.len() as f64;
        }
        trace.push(epoch_loss / dataset.len() as f64 * std * std);
    }
    pred.trained = true;
    Ok(trace)
}

/// Mean squared prediction error over `dataset`, in watts squared.
pub fn training_mse(predictor: &TwinPredictor, dataset: &PowerDataset) -> Result<f64> {
    let pred = predictor.predict_dataset(dataset)?;
    Ok(pred.iter().zip(dataset.samples()).map(|(p, s)| (p - s.power).powi(2)).sum::<f64>() / dataset.len() as f64)
}

/// Normalized MSE `sum (P - P_hat)^2 / sum (P - mean P)^2` on held-out samples.
pub fn evaluate_nmse(predictor: &TwinPredictor, heldout: &PowerDataset) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    let powers = heldout.powers();
    let mean = powers.iter().sum::<f64>() / powers.len() as f64;
    let denom: f64 = powers.iter().map(|p| (p - mean).powi(2)).sum();
    let scale: f64 = powers.iter().map(|p| p * p).sum();
    if denom <= 1e-24 * scale || denom == 0.0 {
        return Err(Error::DegenerateInput("held-out targets are constant".into()));
    }
    let pred = predictor.predict_dataset(heldout)?;
    let num: f64 = pred.iter().zip(&powers).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(num / denom)
}

/// Twin architecture and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinConfig {
    pub architecture: TwinArchitecture,
    /// Rank of `Q_in`; defaults to `K + 2`.
    #[serde(default)]
    pub rank_in: Option<usize>,
    /// Rank of `Q_s`; defaults to 2.
    #[serde(default)]
    pub rank_s: Option<usize>,
    /// Hidden width `M'` of the dense twin; defaults to `16 M`.
    #[serde(default)]
    pub hidden_width: Option<usize>,
    /// Overrides the architecture's default training hyperparameters.
    #[serde(default)]
    pub train: Option<TrainHyper>,
    /// Fraction of the collected data held out for the switching gate.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl TwinConfig {
    pub fn new(architecture: TwinArchitecture) -> Self {
        Self {
            architecture,
            rank_in: None,
            rank_s: None,
            hidden_width: None,
            train: None,
            validation_fraction: default_validation_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_in == Some(0) || self.rank_s == Some(0) || self.hidden_width == Some(0) {
            return Err(Error::config("twin ranks and hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must lie in [0, 1)"));
        }
        if let Some(h) = &self.train {
            h.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn hyper(&self, seed: u64) -> TrainHyper {
        self.train.clone().unwrap_or_else(|| TrainHyper::for_architecture(self.architecture)).with_seed(seed)
    }

    /// Fresh, untrained predictor for `role`.
    pub fn build<R: Rng + ?Sized>(
        &self,
        role: PowerRole,
        num_antennas: usize,
        num_interferers: usize,
        rng: &mut R,
    ) -> Result<TwinPredictor> {
        Ok(match self.architecture {
            TwinArchitecture::Quadratic => {
                let rank = match role {
                    PowerRole::Interference => self.rank_in.unwrap_or(num_interferers + 2),
                    PowerRole::Signal => self.rank_s.unwrap_or(2),
                };
                TwinPredictor::Quadratic(QuadraticPredictor::random(num_antennas, rank, rng))
            }
            TwinArchitecture::Dense => {
                let width = self.hidden_width.unwrap_or(16 * num_antennas);
                TwinPredictor::Dense(DensePredictor::new(num_antennas, width, rng)?)
            }
        })
    }
}
