//! Supervised contrastive terms over code-layer rows and the CorrNet-style
//! correlation term.
//!
//! Distances are Euclidean norms smoothed as `sqrt(s + eps) - sqrt(eps)`, which
//! is exactly zero for coincident points and differentiable everywhere.

use crate::nn::Tensor;

pub const DISTANCE_EPS: f64 = 1e-12;
const CORR_EPS: f64 = 1e-12;

/// `+1` for a same-class pair, `-1` otherwise.
pub fn indicator(ci: usize, cj: usize) -> f64 {
    if ci == cj {
        1.0
    } else {
        -1.0
    }
}

pub fn smoothed_distance(x: &[f64], y: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (s + DISTANCE_EPS).sqrt() - DISTANCE_EPS.sqrt()
}

/// Signed contribution of one pair and its derivative with respect to the distance.
///
/// Same-class pairs attract with `+d`. Different-class pairs repel with `-d`,
/// or with the hinge `max(0, margin - d)` when a margin is configured.
#[inline]
fn pair_weight(same: bool, d: f64, margin: Option<f64>) -> (f64, f64) {
    match (same, margin) {
        (true, _) => (d, 1.0),
        (false, None) => (-d, -1.0),
        (false, Some(m)) if d < m => (m - d, -1.0),
        (false, Some(_)) => (0.0, 0.0),
    }
}

/// Gradient sinks for the two row sets of [`pair_sum`].
pub struct PairGrads<'a> {
    pub x: &'a mut [f64],
    pub y: &'a mut [f64],
}

/// `sum_i sum_j w(c_i, c_j, ||x_i - y_j||)` over all row pairs, optionally
/// skipping `i == j`. Accumulates gradients into `grads` when given.
pub fn pair_sum(
    x: &Tensor,
    y: &Tensor,
    labels_x: &[usize],
    labels_y: &[usize],
    exclude_diagonal: bool,
    margin: Option<f64>,
    grads: Option<PairGrads<'_>>,
) -> f64 {
    let (nx, ny, w) = (x.batch(), y.batch(), x.row_len());
    debug_assert_eq!(w, y.row_len());
    // squared distances first, then the weighted reduction
    let mut sq = vec![0.0; nx * ny];
    for i in 0..nx {
        let xi = x.row(i);
        for j in 0..ny {
            sq[i * ny + j] = xi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    let root_eps = DISTANCE_EPS.sqrt();
    let mut total = 0.0;
    let mut coef = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if exclude_diagonal && i == j {
                continue;
            }
            let root = (sq[i * ny + j] + DISTANCE_EPS).sqrt();
            let (value, dd) = pair_weight(labels_x[i] == labels_y[j], root - root_eps, margin);
            total += value;
            coef[i * ny + j] = dd / root;
        }
    }
    if let Some(g) = grads {
        for i in 0..nx {
            let xi = x.row(i);
            for j in 0..ny {
                let c = coef[i * ny + j];
                if c == 0.0 {
                    continue;
                }
                let yj = y.row(j);
                for k in 0..w {
                    let diff = c * (xi[k] - yj[k]);
                    g.x[i * w + k] += diff;
                    g.y[j * w + k] -= diff;
                }
            }
        }
    }
    total
}

/// Joint-mode term: ordered pairs over one batch of codes (the `i == j`
/// pairs contribute exactly zero).
pub fn joint_contrastive(codes: &Tensor, labels: &[usize], margin: Option<f64>) -> f64 {
    pair_sum(codes, codes, labels, labels, false, margin, None)
}

pub fn joint_contrastive_grad(codes: &Tensor, labels: &[usize], margin: Option<f64>) -> (f64, Tensor) {
    let mut gx = vec![0.0; codes.data().len()];
    let mut gy = vec![0.0; codes.data().len()];
    let v = pair_sum(
        codes,
        codes,
        labels,
        labels,
        false,
        margin,
        Some(PairGrads { x: &mut gx, y: &mut gy }),
    );
    gx.iter_mut().zip(&gy).for_each(|(a, b)| *a += b);
    (v, Tensor::from_vec(codes.shape(), gx).expect("same shape"))
}

/// Single-modal term over both masked-input code sets: within-set pairs skip
/// `i == j`, cross-set pairs include it.
pub fn single_contrastive(codes_a: &Tensor, codes_v: &Tensor, labels: &[usize], margin: Option<f64>) -> f64 {
    single_contrastive_grad_impl(codes_a, codes_v, labels, margin, false).0
}

pub fn single_contrastive_grad(
    codes_a: &Tensor,
    codes_v: &Tensor,
    labels: &[usize],
    margin: Option<f64>,
) -> (f64, Tensor, Tensor) {
    single_contrastive_grad_impl(codes_a, codes_v, labels, margin, true)
}

fn single_contrastive_grad_impl(
    a: &Tensor,
    v: &Tensor,
    labels: &[usize],
    margin: Option<f64>,
    want_grad: bool,
) -> (f64, Tensor, Tensor) {
    let mut ga = vec![0.0; a.data().len()];
    let mut gv = vec![0.0; v.data().len()];
    let mut scratch_a = vec![0.0; a.data().len()];
    let mut scratch_v = vec![0.0; v.data().len()];
    let mut total = 0.0;
    // (a, a) and (v, v): both gradient sinks land on the same set
    for (t, g, s) in [(a, &mut ga, &mut scratch_a), (v, &mut gv, &mut scratch_v)] {
        let grads = want_grad.then(|| PairGrads { x: g.as_mut_slice(), y: s.as_mut_slice() });
        total += pair_sum(t, t, labels, labels, true, margin, grads);
    }
    ga.iter_mut().zip(&scratch_a).for_each(|(x, y)| *x += y);
    gv.iter_mut().zip(&scratch_v).for_each(|(x, y)| *x += y);
    // (a, v) and (v, a)
    {
        let grads = want_grad.then(|| PairGrads { x: &mut ga, y: &mut gv });
        total += pair_sum(a, v, labels, labels, false, margin, grads);
    }
    {
        let grads = want_grad.then(|| PairGrads { x: &mut gv, y: &mut ga });
        total += pair_sum(v, a, labels, labels, false, margin, grads);
    }
    (
        total,
        Tensor::from_vec(a.shape(), ga).expect("same shape"),
        Tensor::from_vec(v.shape(), gv).expect("same shape"),
    )
}

/// Negated sum over code coordinates of the batch Pearson correlation between
/// the two single-modal code sets. Needs at least two rows.
pub fn correlation_term(codes_a: &Tensor, codes_v: &Tensor) -> (f64, Tensor, Tensor) {
    let (n, d) = (codes_a.batch(), codes_a.row_len());
    let mut ga = vec![0.0; n * d];
    let mut gv = vec![0.0; n * d];
    let mut total = 0.0;
    let mut ca = vec![0.0; n];
    let mut cv = vec![0.0; n];
    for k in 0..d {
        let ma = (0..n).map(|i| codes_a.row(i)[k]).sum::<f64>() / n as f64;
        let mv = (0..n).map(|i| codes_v.row(i)[k]).sum::<f64>() / n as f64;
        for i in 0..n {
            ca[i] = codes_a.row(i)[k] - ma;
            cv[i] = codes_v.row(i)[k] - mv;
        }
        let saa = ca.iter().map(|x| x * x).sum::<f64>() + CORR_EPS;
        let svv = cv.iter().map(|x| x * x).sum::<f64>() + CORR_EPS;
        let sav = ca.iter().zip(&cv).map(|(x, y)| x * y).sum::<f64>();
        let denom = (saa * svv).sqrt();
        let rho = sav / denom;
        total -= rho;
        // d(-rho)/da_i; centring drops out because the centred vectors sum to zero
        for i in 0..n {
            ga[i * d + k] = -(cv[i] / denom - rho * ca[i] / saa);
            gv[i * d + k] = -(ca[i] / denom - rho * cv[i] / svv);
        }
    }
    (
        total,
        Tensor::from_vec(&[n, d], ga).expect("shape"),
        Tensor::from_vec(&[n, d], gv).expect("shape"),
    )
}
