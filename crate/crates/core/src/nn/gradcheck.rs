use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, ParameterStore, Stack, Tensor};

/// Max relative error of one parameter block (or of the stack input).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn failed_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !b.passed)
            .map(|b| b.name.as_str())
            .collect()
    }

    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Central-difference step used throughout.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so gradients that are zero up to
/// round-off do not register as failures.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic parameter gradients with central finite differences.
///
/// `objective` must zero nothing itself: it evaluates the scalar loss and
/// accumulates its analytic gradient into `store`. The checker zeroes the
/// buffers before the analytic call. `tamper` may edit the analytic gradient
/// copy before comparison (used to confirm the checker catches bugs).
pub fn check_with<F, T>(
    store: &mut ParameterStore,
    tolerance: f64,
    mut objective: F,
    tamper: T,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&mut ParameterStore) -> Result<f64, NnError>,
    T: FnOnce(&mut [Vec<f64>], &ParameterStore),
{
    store.zero_grad();
    objective(store)?;
    let mut analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad().to_vec()).collect();
    tamper(&mut analytic, store);

    let mut blocks = Vec::with_capacity(store.len());
    for slot in 0..store.len() {
        let mut worst = 0.0f64;
        for j in 0..store.get(slot).len() {
            let orig = store.value(slot)[j];
            store.value_mut(slot)[j] = orig + FD_STEP;
            let plus = objective(store)?;
            store.value_mut(slot)[j] = orig - FD_STEP;
            let minus = objective(store)?;
            store.value_mut(slot)[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[slot][j], numeric));
        }
        blocks.push(BlockError {
            name: store.get(slot).name().to_string(),
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    store.zero_grad();
    Ok(GradCheckReport { tolerance, blocks })
}

/// Random linear read-out `sum(r * y)` of a stack output on a seeded random input.
struct ProbeProblem {
    input: Tensor,
    readout: Vec<f64>,
}

impl ProbeProblem {
    fn new(stack: &Stack, batch: usize, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = stack.input_shape().batch_dims(batch);
        let n: usize = dims.iter().product();
        let input = Tensor::from_vec(&dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let m = stack.output_shape().numel() * batch;
        let readout = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { input, readout })
    }

    fn loss(&self, stack: &Stack, store: &ParameterStore, input: &Tensor) -> Result<f64, NnError> {
        let y = stack.infer(store, input)?;
        Ok(y.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum())
    }
}

/// Finite-difference check of a stack's parameter gradients and input gradient.
///
/// The scalar objective is a seeded random projection of the stack output.
pub fn check_gradients(
    stack: &Stack,
    store: &mut ParameterStore,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    check_gradients_tampered(stack, store, tolerance, seed, |_, _| {})
}

pub fn check_gradients_tampered<T>(
    stack: &Stack,
    store: &mut ParameterStore,
    tolerance: f64,
    seed: u64,
    tamper: T,
) -> Result<GradCheckReport, NnError>
where
    T: FnOnce(&mut [Vec<f64>], &ParameterStore),
{
    let problem = ProbeProblem::new(stack, 2, seed)?;
    let grad_out_shape = stack.output_shape().batch_dims(2);
    let grad_out = Tensor::from_vec(&grad_out_shape, problem.readout.clone())?;

    let mut report = check_with(
        store,
        tolerance,
        |s| {
            let acts = stack.forward(s, &problem.input)?;
            let loss = acts
                .output()
                .data()
                .iter()
                .zip(&problem.readout)
                .map(|(a, b)| a * b)
                .sum();
            stack.accumulate_gradients(s, &acts, &grad_out)?;
            Ok(loss)
        },
        tamper,
    )?;

    // input gradient
    let acts = stack.forward(store, &problem.input)?;
    let gx = stack.backward(store, &acts, &grad_out)?;
    store.zero_grad();
    let mut worst = 0.0f64;
    let mut x = problem.input.clone();
    for j in 0..x.data().len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + FD_STEP;
        let plus = problem.loss(stack, store, &x)?;
        x.data_mut()[j] = orig - FD_STEP;
        let minus = problem.loss(stack, store, &x)?;
        x.data_mut()[j] = orig;
        worst = worst.max(relative_error(gx.data()[j], (plus - minus) / (2.0 * FD_STEP)));
    }
    report.blocks.push(BlockError {
        name: format!("{}.input", stack.name()),
        max_rel_error: worst,
        passed: worst < tolerance,
    });
    Ok(report)
}
