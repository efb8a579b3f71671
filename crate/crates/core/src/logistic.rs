//! Weighted, L2-penalized logistic regression fitted by Newton/IRLS.
//!
//! Maximizes
//! `sum_i c_i [z_i eta_i - log(1 + exp(eta_i))] - (lambda / 2) sum_{j>0} beta_j^2`
//! where `eta_i = x_i . beta`, column 0 of the design is the intercept and
//! `c_i` are instance weights. Each Newton step is halved until the
//! objective does not decrease.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub l2: f64,
    /// Converged when the largest coefficient update is below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            l2: 1e-6,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Row-major design with a leading intercept column.
pub struct Design<'a> {
    pub rows: &'a [f64],
    pub width: usize,
}

impl Design<'_> {
    fn len(&self) -> usize {
        self.rows.len() / self.width
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(design: &Design<'_>, z: &[bool], c: &[f64], beta: &[f64], l2: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..design.len() {
        let eta = dot(design.row(i), beta);
        ll += c[i] * (if z[i] { eta } else { 0.0 } - softplus(eta));
    }
    ll - 0.5 * l2 * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

pub fn fit(design: &Design<'_>, z: &[bool], c: &[f64], opts: IrlsOptions) -> LogisticFit {
    let d = design.width;
    let n = design.len();
    let mut beta = vec![0.0; d];
    // Start the intercept at the weighted prior log-odds.
    let (w1, w0) = (0..n).fold(
        (0.0, 0.0),
        |(a, b), i| if z[i] { (a + c[i], b) } else { (a, b + c[i]) },
    );
    if w1 > 0.0 && w0 > 0.0 {
        beta[0] = (w1 / w0).ln();
    }
    let mut current = objective(design, z, c, &beta, opts.l2);

    for iteration in 1..=opts.max_iterations {
        let mut hess = DMatrix::<f64>::zeros(d, d);
        let mut grad = DVector::<f64>::zeros(d);
        for i in 0..n {
            let x = design.row(i);
            let p = sigmoid(dot(x, &beta));
            let resid = c[i] * (if z[i] { 1.0 } else { 0.0 } - p);
            let w = c[i] * p * (1.0 - p);
            for a in 0..d {
                grad[a] += resid * x[a];
                let wa = w * x[a];
                for b in a..d {
                    hess[(a, b)] += wa * x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for j in 1..d {
            grad[j] -= opts.l2 * beta[j];
            hess[(j, j)] += opts.l2;
        }
        let step = newton_direction(hess, &grad);

        let mut scale = 1.0;
        let mut accepted = None;
        while scale > 1e-12 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let value = objective(design, z, c, &trial, opts.l2);
            if value >= current || !current.is_finite() {
                accepted = Some((trial, value));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            return LogisticFit {
                coefficients: beta,
                converged: true,
                iterations: iteration,
            };
        };
        let max_update = beta
            .iter()
            .zip(&trial)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = trial;
        current = value;
        if max_update < opts.tolerance {
            return LogisticFit {
                coefficients: beta,
                converged: true,
                iterations: iteration,
            };
        }
    }
    LogisticFit {
        coefficients: beta,
        converged: false,
        iterations: opts.max_iterations,
    }
}

fn newton_direction(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Vec<f64> {
    let d = hess.nrows();
    let mut jitter = 0.0;
    loop {
        if let Some(chol) = hess.clone().cholesky() {
            return chol.solve(grad).iter().copied().collect();
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        for j in 0..d {
            hess[(j, j)] += jitter;
        }
        if jitter > 1e6 {
            return grad.iter().copied().collect();
        }
    }
}
