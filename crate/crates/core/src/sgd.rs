//! SGD engines over shared fp32 parameters: a deterministic sequential
//! baseline, lock-free multi-worker training with inconsistent reads and
//! writes, and a single-process parameter-server simulation with a fixed
//! staleness lag.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use thiserror::Error;

use crate::fmtnum::g17;

/// Loss above this value aborts a run as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

const LSQ_MAX_ATTEMPTS: u64 = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("could not synthesize a full-rank problem after {attempts} attempts")]
    DegenerateProblem { attempts: u64 },
}

/// Shared fp32 parameter store with element-level indivisible access.
///
/// Every read and write of a single element is atomic (no torn values), but
/// there is no ordering or consistency guarantee across elements: a reader
/// may observe a mixture of old and new elements. All accesses use relaxed
/// ordering, which is exactly the contract lock-free workers rely on.
#[derive(Clone, Debug)]
pub struct ParamVector {
    values: Arc<[AtomicU32]>,
}

impl ParamVector {
    pub fn new(init: &[f32]) -> Self {
        let values: Vec<AtomicU32> = init.iter().map(|v| AtomicU32::new(v.to_bits())).collect();
        ParamVector {
            values: values.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.values[i].load(Ordering::Relaxed))
    }

    pub fn set(&self, i: usize, v: f32) {
        self.values[i].store(v.to_bits(), Ordering::Relaxed);
    }

    /// Element-by-element uncoordinated read of the whole vector.
    pub fn snapshot(&self) -> Vec<f32> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// A differentiable training problem exposed as per-sample gradients.
///
/// The gradient evaluator must be deterministic given (params, sample); the
/// full loss must be finite on finite params. `Sync` because lock-free
/// workers share one objective.
pub trait Objective: Sync {
    fn sample_count(&self) -> usize;
    fn param_dim(&self) -> usize;
    /// Parameters a run starts from.
    fn initial_params(&self) -> Vec<f32>;
    /// Gradient of the per-sample loss at `params`, written into `out`.
    fn sample_grad(&self, params: &[f32], sample: usize, out: &mut [f32]);
    /// Full-dataset loss in f64.
    fn loss(&self, params: &[f32]) -> f64;
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub seed: u64,
    /// Parameter-server mode only: number of updates a worker's snapshot
    /// lags the current parameters.
    pub staleness: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            workers: 1,
            seed: 0,
            staleness: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        // The config contract asks for a positive learning rate, but a zero
        // rate is accepted so "no update" runs stay expressible; only
        // negative or non-finite rates are rejected.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(TrainError::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses, final parameters and the total update count of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
    pub final_params: Vec<f32>,
    pub total_updates: u64,
}

impl TrainTrace {
    /// CSV with header `epoch,loss`, one row per epoch, `\n` line endings
    /// and 17-significant-digit losses.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,loss")?;
        for (i, loss) in self.epoch_loss.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, g17(*loss))?;
        }
        Ok(())
    }
}

fn epoch_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Mean gradient over a mini-batch: f32 accumulation in index order, one
/// f32 division per element. Identical across engines so single-worker and
/// zero-staleness runs reproduce the sequential baseline bit for bit.
fn batch_grad<O: Objective + ?Sized>(
    obj: &O,
    params: &[f32],
    batch: &[usize],
    grad: &mut [f32],
    scratch: &mut [f32],
) {
    grad.fill(0.0);
    for &i in batch {
        obj.sample_grad(params, i, scratch);
        for (g, &s) in grad.iter_mut().zip(scratch.iter()) {
            *g += s;
        }
    }
    let len = batch.len() as f32;
    for g in grad.iter_mut() {
        *g /= len;
    }
}

fn check_loss(loss: f64, epoch: usize) -> Result<f64, TrainError> {
    if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
        return Err(TrainError::Diverged { epoch, loss });
    }
    Ok(loss)
}

/// Sequential mini-batch SGD. Fully deterministic: identical (objective,
/// config) pairs produce bitwise-identical traces. The `workers` field is
/// ignored.
pub fn sgd_sync<O: Objective + ?Sized>(
    obj: &O,
    cfg: &TrainConfig,
) -> Result<TrainTrace, TrainError> {
    cfg.validate()?;
    let dim = obj.param_dim();
    let n = obj.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = obj.initial_params();
    let mut grad = vec![0.0f32; dim];
    let mut scratch = vec![0.0f32; dim];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut total_updates = 0u64;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut rng, n);
        for batch in order.chunks(cfg.batch_size) {
            batch_grad(obj, &params, batch, &mut grad, &mut scratch);
            for (p, &g) in params.iter_mut().zip(grad.iter()) {
                *p -= cfg.learning_rate * g;
            }
            total_updates += 1;
        }
        epoch_loss.push(check_loss(obj.loss(&params), epoch)?);
    }

    Ok(TrainTrace {
        epoch_loss,
        final_params: params,
        total_updates,
    })
}

/// Lock-free multi-worker SGD over a shared [`ParamVector`].
///
/// Each epoch's shuffled sample sequence is cut into mini-batches and the
/// batch list is partitioned contiguously across workers. Workers loop
/// without any coordination: read the parameters element by element,
/// compute the mini-batch gradient at that snapshot, then write the update
/// element by element with plain read-modify-write stores. Racing updates
/// on the same element may lose increments; that is accepted behavior.
/// Workers only meet at the epoch boundary, where the loss is recorded —
/// a measurement barrier, not part of the update semantics. With one
/// worker the run is bitwise equal to [`sgd_sync`]; with more, runs are
/// inherently nondeterministic.
pub fn sgd_hogwild<O: Objective + ?Sized>(
    obj: &O,
    cfg: &TrainConfig,
) -> Result<TrainTrace, TrainError> {
    cfg.validate()?;
    let dim = obj.param_dim();
    let n = obj.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ParamVector::new(&obj.initial_params());
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut total_updates = 0u64;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut rng, n);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let share = batches.len().div_ceil(cfg.workers).max(1);
        let lr = cfg.learning_rate;

        let worker_updates: Vec<u64> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches
                .chunks(share)
                .map(|mine| {
                    let params = &params;
                    scope.spawn(move || {
                        let mut local = vec![0.0f32; dim];
                        let mut grad = vec![0.0f32; dim];
                        let mut scratch = vec![0.0f32; dim];
                        let mut updates = 0u64;
                        for batch in mine {
                            for (i, slot) in local.iter_mut().enumerate() {
                                *slot = params.get(i);
                            }
                            batch_grad(obj, &local, batch, &mut grad, &mut scratch);
                            for (i, &g) in grad.iter().enumerate() {
                                params.set(i, params.get(i) - lr * g);
                            }
                            updates += 1;
                        }
                        updates
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        total_updates += worker_updates.iter().sum::<u64>();

        let snap = params.snapshot();
        epoch_loss.push(check_loss(obj.loss(&snap), epoch)?);
    }

    Ok(TrainTrace {
        epoch_loss,
        final_params: params.snapshot(),
        total_updates,
    })
}

/// Single-threaded parameter-server simulation with a fixed staleness lag.
///
/// A ring buffer keeps the last `staleness + 1` parameter states. Each
/// simulated worker computes its mini-batch gradient at the state
/// `staleness` updates behind the current parameters (clamped to the
/// initial state early on) and the server applies it to the current
/// parameters. With `staleness == 0` the update sequence reduces exactly
/// to [`sgd_sync`].
pub fn sgd_param_server<O: Objective + ?Sized>(
    obj: &O,
    cfg: &TrainConfig,
) -> Result<TrainTrace, TrainError> {
    cfg.validate()?;
    let dim = obj.param_dim();
    let n = obj.sample_count();
    let tau = cfg.staleness;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = obj.initial_params();
    let mut ring: VecDeque<Vec<f32>> = VecDeque::with_capacity(tau + 2);
    ring.push_back(params.clone());
    let mut grad = vec![0.0f32; dim];
    let mut scratch = vec![0.0f32; dim];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut total_updates = 0u64;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut rng, n);
        for batch in order.chunks(cfg.batch_size) {
            let stale = ring.front().expect("ring is never empty");
            batch_grad(obj, stale, batch, &mut grad, &mut scratch);
            for (p, &g) in params.iter_mut().zip(grad.iter()) {
                *p -= cfg.learning_rate * g;
            }
            ring.push_back(params.clone());
            if ring.len() > tau + 1 {
                ring.pop_front();
            }
            total_updates += 1;
        }
        epoch_loss.push(check_loss(obj.loss(&params), epoch)?);
    }

    Ok(TrainTrace {
        epoch_loss,
        final_params: params,
        total_updates,
    })
}

/// Synthetic least-squares problem with its closed-form optimum attached.
///
/// Loss is mean squared residual over the dataset, 0.5 * ||Xw - y||^2 / n.
/// Data is stored in fp32 (what the engines train on); the attached optimum
/// comes from solving the normal equations of the stored fp32 data in f64.
pub struct LeastSquares {
    x: Vec<f32>,
    y: Vec<f32>,
    n: usize,
    d: usize,
    true_weights: Vec<f32>,
    optimum: Vec<f64>,
    optimum_loss: f64,
}

impl LeastSquares {
    pub fn true_weights(&self) -> &[f32] {
        &self.true_weights
    }

    /// Normal-equations solution in f64.
    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    /// Loss at the normal-equations solution.
    pub fn optimum_loss(&self) -> f64 {
        self.optimum_loss
    }

    fn loss_f64(&self, params_f64: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0f64;
        for i in 0..self.n {
            let row = &self.x[i * self.d..(i + 1) * self.d];
            let mut r = -(self.y[i] as f64);
            for (j, &xij) in row.iter().enumerate() {
                r += xij as f64 * params_f64(j);
            }
            total += 0.5 * r * r;
        }
        total / self.n as f64
    }
}

impl Objective for LeastSquares {
    fn sample_count(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.d
    }

    fn initial_params(&self) -> Vec<f32> {
        vec![0.0; self.d]
    }

    fn sample_grad(&self, params: &[f32], sample: usize, out: &mut [f32]) {
        let row = &self.x[sample * self.d..(sample + 1) * self.d];
        let mut r = 0.0f32;
        for (&xij, &w) in row.iter().zip(params.iter()) {
            r += xij * w;
        }
        r -= self.y[sample];
        for (o, &xij) in out.iter_mut().zip(row.iter()) {
            *o = r * xij;
        }
    }

    fn loss(&self, params: &[f32]) -> f64 {
        self.loss_f64(|j| params[j] as f64)
    }
}

/// Synthesize a seeded least-squares problem: X is n x d standard normal,
/// targets are X w* + noise * eps. Rank-deficient draws are re-sampled with
/// an incremented seed, up to a bounded number of retries.
pub fn make_least_squares(
    n: usize,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<LeastSquares, TrainError> {
    if d == 0 || n < d {
        return Err(TrainError::InvalidConfig(format!(
            "need n >= d >= 1, got n = {n}, d = {d}"
        )));
    }
    for attempt in 0..LSQ_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let normal = StandardNormal;
        let x: Vec<f32> = (0..n * d)
            .map(|_| {
                let v: f64 = normal.sample(&mut rng);
                v as f32
            })
            .collect();
        let true_weights: Vec<f32> = (0..d)
            .map(|_| {
                let v: f64 = normal.sample(&mut rng);
                v as f32
            })
            .collect();
        let y: Vec<f32> = (0..n)
            .map(|i| {
                let mut t = 0.0f64;
                for j in 0..d {
                    t += x[i * d + j] as f64 * true_weights[j] as f64;
                }
                let eps: f64 = normal.sample(&mut rng);
                (t + noise * eps) as f32
            })
            .collect();

        // Normal equations in f64 on the stored fp32 data.
        let mut gram = vec![0.0f64; d * d];
        let mut rhs = vec![0.0f64; d];
        for i in 0..n {
            for j in 0..d {
                let xij = x[i * d + j] as f64;
                rhs[j] += xij * y[i] as f64;
                for k in j..d {
                    gram[j * d + k] += xij * x[i * d + k] as f64;
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                gram[j * d + k] = gram[k * d + j];
            }
        }

        if let Some(optimum) = lu_solve(gram, rhs, d) {
            let mut problem = LeastSquares {
                x,
                y,
                n,
                d,
                true_weights,
                optimum,
                optimum_loss: 0.0,
            };
            problem.optimum_loss = problem.loss_f64(|j| problem.optimum[j]);
            return Ok(problem);
        }
    }
    Err(TrainError::DegenerateProblem {
        attempts: LSQ_MAX_ATTEMPTS,
    })
}

/// Dense f64 solve via LU with partial pivoting. Returns None when a pivot
/// collapses relative to the matrix scale.
fn lu_solve(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if a[piv * d + col].abs() < scale * 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..d {
                a.swap(piv * d + c, col * d + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..d {
            let f = a[r * d + col] / a[col * d + col];
            if f == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= f * a[col * d + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; d];
    for col in (0..d).rev() {
        let mut t = b[col];
        for c in col + 1..d {
            t -= a[col * d + c] * x[c];
        }
        x[col] = t / a[col * d + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_of(v: &[f32]) -> Vec<u32> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    fn loss_bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn lu_solver_inverts_a_known_system() {
        // [[2, 1], [1, 3]] x = [3, 5] has solution [4/5, 7/5].
        let a = vec![2.0, 1.0, 1.0, 3.0];
        let b = vec![3.0, 5.0];
        let x = lu_solve(a, b, 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);

        assert!(lu_solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0], 2).is_none());
    }

    #[test]
    fn least_squares_is_seeded_and_oracle_matches_noiseless_weights() {
        let a = make_least_squares(200, 10, 0.0, 3).unwrap();
        let b = make_least_squares(200, 10, 0.0, 3).unwrap();
        assert_eq!(bits_of(&a.x), bits_of(&b.x));
        assert_eq!(bits_of(&a.y), bits_of(&b.y));

        // With zero noise the optimum loss collapses to the fp32
        // quantization floor of the stored targets, and the solution
        // recovers the generating weights to the same precision.
        assert!(a.optimum_loss() <= 1e-12, "loss {}", a.optimum_loss());
        for (w_opt, &w_true) in a.optimum().iter().zip(a.true_weights()) {
            assert!((w_opt - w_true as f64).abs() <= 1e-5);
        }

        let c = make_least_squares(1000, 20, 0.1, 7).unwrap();
        assert!(c.optimum_loss().is_finite());
        assert!(c.optimum_loss() > 1e-4 && c.optimum_loss() < 1e-2);

        assert!(make_least_squares(3, 5, 0.0, 1).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let obj = make_least_squares(50, 5, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            ..TrainConfig::default()
        };
        let trace = sgd_sync(&obj, &cfg).unwrap();
        assert_eq!(trace.final_params, obj.initial_params());
        let first = trace.epoch_loss[0];
        assert!(trace.epoch_loss.iter().all(|&l| l == first));
    }

    #[test]
    fn sync_converges_to_the_normal_equations_optimum() {
        let obj = make_least_squares(1000, 20, 0.1, 42).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let trace = sgd_sync(&obj, &cfg).unwrap();
        let gap = trace.epoch_loss.last().unwrap() - obj.optimum_loss();
        assert!(gap.abs() <= 1e-3, "gap {gap:e}");
        assert_eq!(trace.total_updates, 50 * 1000usize.div_ceil(32) as u64);
    }

    #[test]
    fn sync_loss_trend_is_monotone_within_one_percent() {
        let obj = make_least_squares(500, 10, 0.1, 9).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 25,
            ..TrainConfig::default()
        };
        let trace = sgd_sync(&obj, &cfg).unwrap();
        for pair in trace.epoch_loss.windows(2) {
            assert!(pair[1] <= pair[0] * 1.01, "epoch losses {pair:?}");
        }
    }

    #[test]
    fn sync_is_bitwise_deterministic() {
        let obj = make_least_squares(300, 8, 0.05, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let a = sgd_sync(&obj, &cfg).unwrap();
        let b = sgd_sync(&obj, &cfg).unwrap();
        assert_eq!(bits_of(&a.final_params), bits_of(&b.final_params));
        assert_eq!(loss_bits(&a.epoch_loss), loss_bits(&b.epoch_loss));
        assert_eq!(a.total_updates, b.total_updates);
    }

    #[test]
    fn single_worker_hogwild_degenerates_to_sync() {
        let obj = make_least_squares(300, 8, 0.05, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            workers: 1,
            ..TrainConfig::default()
        };
        let sync = sgd_sync(&obj, &cfg).unwrap();
        let hog = sgd_hogwild(&obj, &cfg).unwrap();
        assert_eq!(bits_of(&sync.final_params), bits_of(&hog.final_params));
        assert_eq!(loss_bits(&sync.epoch_loss), loss_bits(&hog.epoch_loss));
        assert_eq!(sync.total_updates, hog.total_updates);
    }

    #[test]
    fn zero_staleness_param_server_degenerates_to_sync() {
        let obj = make_least_squares(300, 8, 0.05, 6).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            staleness: 0,
            ..TrainConfig::default()
        };
        let sync = sgd_sync(&obj, &cfg).unwrap();
        let ps = sgd_param_server(&obj, &cfg).unwrap();
        assert_eq!(bits_of(&sync.final_params), bits_of(&ps.final_params));
        assert_eq!(loss_bits(&sync.epoch_loss), loss_bits(&ps.epoch_loss));
        assert_eq!(sync.total_updates, ps.total_updates);
    }

    #[test]
    fn hogwild_with_four_workers_still_converges() {
        let obj = make_least_squares(1000, 20, 0.1, 42).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            workers: 4,
            ..TrainConfig::default()
        };
        let sync = sgd_sync(&obj, &cfg).unwrap();
        let hog = sgd_hogwild(&obj, &cfg).unwrap();
        let sync_final = *sync.epoch_loss.last().unwrap();
        let hog_final = *hog.epoch_loss.last().unwrap();
        assert!(
            hog_final <= 1.05 * sync_final,
            "hogwild {hog_final} vs sync {sync_final}"
        );
        assert!((hog_final - obj.optimum_loss()).abs() <= 1e-2);
        assert_eq!(hog.total_updates, sync.total_updates);
    }

    #[test]
    fn update_counts_are_conserved_for_awkward_batch_splits() {
        // 10 samples, batch 2 -> 5 batches per epoch, shared across 3
        // workers: no batch may be lost or duplicated.
        let obj = make_least_squares(10, 2, 0.1, 8).unwrap();
        let cfg = TrainConfig {
            epochs: 7,
            batch_size: 2,
            workers: 3,
            ..TrainConfig::default()
        };
        let expected = 7 * 5;
        assert_eq!(sgd_sync(&obj, &cfg).unwrap().total_updates, expected);
        assert_eq!(sgd_hogwild(&obj, &cfg).unwrap().total_updates, expected);
        assert_eq!(
            sgd_param_server(&obj, &cfg).unwrap().total_updates,
            expected
        );
    }

    #[test]
    fn param_server_with_moderate_staleness_converges() {
        let obj = make_least_squares(1000, 20, 0.1, 42).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.02,
            epochs: 60,
            batch_size: 32,
            staleness: 4,
            ..TrainConfig::default()
        };
        let trace = sgd_param_server(&obj, &cfg).unwrap();
        let gap = trace.epoch_loss.last().unwrap() - obj.optimum_loss();
        assert!(gap.abs() <= 1e-2, "gap {gap:e}");
    }

    #[test]
    fn param_server_with_heavy_staleness_and_hot_rate_diverges() {
        let obj = make_least_squares(1000, 20, 0.1, 42).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            epochs: 200,
            batch_size: 32,
            staleness: 64,
            ..TrainConfig::default()
        };
        match sgd_param_server(&obj, &cfg) {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let obj = make_least_squares(10, 2, 0.0, 1).unwrap();
        for cfg in [
            TrainConfig {
                learning_rate: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: f32::NAN,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                workers: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                sgd_sync(&obj, &cfg),
                Err(TrainError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn param_vector_elements_never_tear() {
        // Writers race two distinct bit patterns into every slot while
        // readers assert no third value is ever observed.
        let patterns = [1.0f32, -2.5f32];
        let pv = ParamVector::new(&[1.0f32; 32]);
        std::thread::scope(|scope| {
            for w in 0..4 {
                let pv = pv.clone();
                scope.spawn(move || {
                    for round in 0..20_000 {
                        let v = patterns[(round + w) % 2];
                        for i in 0..pv.len() {
                            pv.set(i, v);
                        }
                    }
                });
            }
            for _ in 0..2 {
                let pv = pv.clone();
                scope.spawn(move || {
                    let allowed: Vec<u32> = patterns.iter().map(|p| p.to_bits()).collect();
                    for _ in 0..20_000 {
                        for i in 0..pv.len() {
                            let bits = pv.get(i).to_bits();
                            assert!(
                                allowed.contains(&bits),
                                "torn element: {bits:#010x} not one of the written patterns"
                            );
                        }
                    }
                });
            }
        });
    }

    #[test]
    fn trace_csv_is_stable() {
        let trace = TrainTrace {
            epoch_loss: vec![1.0986122886681098, 0.5],
            final_params: vec![],
            total_updates: 2,
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epoch,loss\n1,1.0986122886681098e0\n2,5.0000000000000000e-1\n"
        );
    }
}
