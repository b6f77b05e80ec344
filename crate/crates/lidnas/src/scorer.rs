//! Training-free scoring of untrained networks.
//!
//! Each probe input induces a binary activation code (one bit per rectifier
//! unit). Codes feed a Hamming kernel whose entry `(i, j)` is
//! `N_A - d_H(c_i, c_j)`, and the score is the natural log of the absolute
//! kernel determinant, computed in log space from the pivots of a partially
//! pivoted LU factorization so large `N_A` cannot overflow.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::net::{forward, ActivationTrace, NetworkInstance, ParamStore, Tensor};
use crate::{Error, Result};

/// Relative pivot tolerance: a pivot below `SINGULAR_TOL * N_A` makes the
/// determinant count as zero.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Hamming kernel over a batch of activation codes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    order: usize,
    n_a: usize,
    entries: Vec<i64>,
}

impl KernelMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> i64 {
        self.entries[i * self.order + j]
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }
}

/// Score of one untrained candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    /// `ln |det K_H|`, or `-inf` when the determinant is zero to tolerance.
    pub score: f64,
    /// Probe batch size.
    pub n: usize,
    /// Rectifier unit count.
    pub n_a: usize,
    /// Conditioning diagnostic: `log10(max |pivot| / min |pivot|)`.
    pub condition_log10: f64,
    /// Set when codes collide, a code is constant, or the kernel is singular.
    pub degenerate: bool,
}

/// The shared probe batch: `n` standard-normal inputs from a fixed stream.
pub fn probe_batch(seed: u64, n: usize, shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = shape;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..n * c * h * w)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::from_vec([n, c, h, w], data).expect("shape matches")
}

/// Binary activation codes of a batch: one trace per input.
pub fn activation_codes(
    net: &NetworkInstance,
    store: &ParamStore,
    probe: &Tensor,
) -> Result<Vec<ActivationTrace>> {
    let (_, traces) = forward(net, store, probe, true)?;
    Ok(traces)
}

/// Builds the kernel: entry `(i, j) = N_A - d_H(c_i, c_j)`.
pub fn kernel_matrix(codes: &[ActivationTrace]) -> Result<KernelMatrix> {
    if codes.is_empty() {
        return Err(Error::Shape("kernel needs at least one code".into()));
    }
    let n_a = codes[0].len();
    let order = codes.len();
    let mut entries = vec![0i64; order * order];
    for i in 0..order {
        entries[i * order + i] = n_a as i64;
        for j in i + 1..order {
            let distance = codes[i].hamming(&codes[j])? as i64;
            let value = n_a as i64 - distance;
            entries[i * order + j] = value;
            entries[j * order + i] = value;
        }
    }
    Ok(KernelMatrix {
        order,
        n_a,
        entries,
    })
}

/// Log-determinant by partially pivoted Gaussian elimination, accumulating
/// `ln |pivot|` instead of the raw product.
struct LogDet {
    log_abs_det: f64,
    singular: bool,
    condition_log10: f64,
}

fn log_abs_det(kernel: &KernelMatrix) -> LogDet {
    let n = kernel.order;
    let tol = SINGULAR_TOL * kernel.n_a as f64;
    let mut a: Vec<f64> = kernel.entries.iter().map(|&v| v as f64).collect();
    let mut log_abs = 0.0;
    let mut min_pivot = f64::INFINITY;
    let mut max_pivot = 0.0f64;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag < tol {
            return LogDet {
                log_abs_det: f64::NEG_INFINITY,
                singular: true,
                condition_log10: f64::INFINITY,
            };
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
        }
        let pivot = a[col * n + col];
        log_abs += pivot.abs().ln();
        min_pivot = min_pivot.min(pivot.abs());
        max_pivot = max_pivot.max(pivot.abs());
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    LogDet {
        log_abs_det: log_abs,
        singular: false,
        condition_log10: (max_pivot / min_pivot).log10(),
    }
}

/// Scores a set of codes: kernel construction, degeneracy checks, log-det.
pub fn score_codes(codes: &[ActivationTrace]) -> Result<ScoreReport> {
    let kernel = kernel_matrix(codes)?;
    let n_a = kernel.n_a;
    let mut degenerate = false;
    for (i, code) in codes.iter().enumerate() {
        let ones = code.count_ones();
        if ones == 0 || ones == n_a as u64 {
            degenerate = true;
        }
        for other in &codes[i + 1..] {
            if code == other {
                degenerate = true;
            }
        }
    }
    let det = log_abs_det(&kernel);
    Ok(ScoreReport {
        score: det.log_abs_det,
        n: codes.len(),
        n_a,
        condition_log10: det.condition_log10,
        degenerate: degenerate || det.singular,
    })
}

/// End-to-end score of an initialized network on a probe batch.
pub fn score(net: &NetworkInstance, store: &ParamStore, probe: &Tensor) -> Result<ScoreReport> {
    let codes = activation_codes(net, store, probe)?;
    score_codes(&codes)
}
