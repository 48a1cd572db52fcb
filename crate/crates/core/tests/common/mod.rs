//! Finite-difference gradient checks shared by the gradient tests and the acceptance suite.

use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twinbeam::beamforming::Combiner;
use twinbeam::nn::{mse_loss, DenseNetworkSpec, Network, OutputActivation};
use twinbeam::twin::{quadratic_gradient, QuadraticPredictor};

pub const REL_TOL: f64 = 1e-5;
const H: f64 = 1e-6;

// entries below the floor are compared absolutely; bias terms feeding batch norm have
// an exact zero gradient and a finite-difference residue around 1e-10
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
}

fn loss(net: &Network, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let trace = net.forward_train(x).unwrap();
    mse_loss(&trace.output, y).0
}

/// Network shape of instance `seed`: batch-normed regression, scaled-tanh actor, plain MLP.
pub fn network_instance(seed: u64) -> DenseNetworkSpec {
    match seed % 3 {
        0 => DenseNetworkSpec::new(vec![4, 7, 5, 1], true, OutputActivation::Linear),
        1 => DenseNetworkSpec::new(vec![3, 6, 6, 3], true, OutputActivation::ScaledTanh),
        _ => DenseNetworkSpec::new(vec![5, 8, 2], false, OutputActivation::Linear),
    }
    .unwrap()
}

/// Worst relative error over all parameter and input gradients of one random instance.
pub fn network_gradient_error(spec: DenseNetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec.clone(), &mut rng).unwrap();
    let x = random_batch(&mut rng, 6, spec.input_size());
    let y = random_batch(&mut rng, 6, spec.output_size());
    let (_, grads) = net.mse_backward(&x, &y).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (ti, g) in analytic.iter().enumerate() {
        for (pi, &a) in g.iter().enumerate() {
            let orig = net.tensors()[ti][pi];
            net.tensors_mut()[ti][pi] = orig + H;
            let up = loss(&net, &x, &y);
            net.tensors_mut()[ti][pi] = orig - H;
            let down = loss(&net, &x, &y);
            net.tensors_mut()[ti][pi] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * H)));
        }
    }

    // input gradient, as used by the actor update through the critic
    let trace = net.forward_train(&x).unwrap();
    let (_, d_out) = mse_loss(&trace.output, &y);
    let (_, d_in) = net.backward(&trace, &d_out).unwrap();
    let mut xp = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            xp[[i, j]] = x[[i, j]] + H;
            let up = loss(&net, &xp, &y);
            xp[[i, j]] = x[[i, j]] - H;
            let down = loss(&net, &xp, &y);
            xp[[i, j]] = x[[i, j]];
            worst = worst.max(rel_err(d_in[[i, j]], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Worst relative error of the Wirtinger gradient of `(t - ||Q^H w||^2)^2` on one instance.
pub fn quadratic_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (m, r) = (3 + seed as usize % 4, 1 + seed as usize % 3);
    let q = QuadraticPredictor::random(m, r, &mut rng).matrix().clone();
    let phases: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    let w = Combiner::from_phases(&phases).unwrap();
    let target = rng.random_range(0.0..2.0);
    let loss = |q: &Array2<Complex<f64>>| {
        let f = QuadraticPredictor::from_matrix(q.clone()).predict(&w).unwrap();
        (target - f).powi(2)
    };
    // dL/dconj(Q) = (dL/dRe + j dL/dIm) / 2
    let g = quadratic_gradient(&q, &w, target).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..r {
            let mut qp = q.clone();
            let mut fd = [0.0; 2];
            for (k, step) in [Complex::new(H, 0.0), Complex::new(0.0, H)].into_iter().enumerate() {
                qp[[i, j]] = q[[i, j]] + step;
                let up = loss(&qp);
                qp[[i, j]] = q[[i, j]] - step;
                let down = loss(&qp);
                qp[[i, j]] = q[[i, j]];
                fd[k] = (up - down) / (2.0 * H);
            }
            worst = worst.max(rel_err(2.0 * g[[i, j]].re, fd[0]));
            worst = worst.max(rel_err(2.0 * g[[i, j]].im, fd[1]));
        }
    }
    worst
}
