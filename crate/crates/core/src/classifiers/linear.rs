//! Logistic regression, linear SVM and perceptron.

pub(crate) const LOGREG_ITERS: usize = 5000;
pub(crate) const LOGREG_STEP: f64 = 0.1;
pub(crate) const SVM_ITERS: usize = 10_000;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eᶻ) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sign(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

/// Mean negative log-likelihood plus `λ/2·‖w‖²` (bias unpenalized), and its
/// gradient `(∂w, ∂b)`.
pub fn logreg_loss_and_grad(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let z = dot(w, row) + b;
        let s = sign(yi);
        // −log σ(s·z) = softplus(−s·z)
        loss += softplus(-s * z);
        let r = sigmoid(z) - f64::from(u8::from(yi));
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, wj) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * wj;
    }
    loss += 0.5 * lambda * dot(w, w);
    (loss, gw, gb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogregTrace {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Loss after each iteration, starting with the initial point.
    pub losses: Vec<f64>,
    /// Number of times the step had to be halved to keep descent monotone.
    pub halvings: usize,
}

impl LogregTrace {
    pub(crate) fn params(self) -> (Vec<f64>, f64) {
        (self.weights, self.bias)
    }
}

/// Full-batch gradient descent from zero with a fixed step; if a step would
/// increase the loss, the step is halved (persistently) until it does not.
pub(crate) fn train_logreg(x: &[Vec<f64>], y: &[bool], lambda: f64) -> LogregTrace {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut step = LOGREG_STEP;
    let mut halvings = 0;
    let (mut loss, mut gw, mut gb) = logreg_loss_and_grad(x, y, &w, b, lambda);
    let mut losses = Vec::with_capacity(LOGREG_ITERS + 1);
    losses.push(loss);
    for _ in 0..LOGREG_ITERS {
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wj, g)| wj - step * g).collect();
            let nb = b - step * gb;
            let (nl, ngw, ngb) = logreg_loss_and_grad(x, y, &nw, nb, lambda);
            if nl <= loss || step < 1e-12 {
                w = nw;
                b = nb;
                loss = nl;
                gw = ngw;
                gb = ngb;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        losses.push(loss);
    }
    if halvings > 0 {
        log::debug!("logreg: step halved {halvings} times (final step {step})");
    }
    LogregTrace { weights: w, bias: b, losses, halvings }
}

/// `λ/2·‖w‖² + mean hinge loss`.
pub fn svm_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = x.iter().zip(y).map(|(r, &yi)| (1.0 - sign(yi) * (dot(w, r) + b)).max(0.0)).sum();
    0.5 * lambda * dot(w, w) + hinge / x.len() as f64
}

/// Full-batch subgradient descent with step `1/(λt)`; returns the iterate
/// with the lowest objective seen (the origin included).
pub(crate) fn train_svm(x: &[Vec<f64>], y: &[bool], lambda: f64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (svm_objective(x, y, &w, b, lambda), w.clone(), b);
    for t in 1..=SVM_ITERS {
        let eta = 1.0 / (lambda * t as f64);
        let mut gw: Vec<f64> = w.iter().map(|wj| lambda * wj).collect();
        let mut gb = 0.0;
        for (r, &yi) in x.iter().zip(y) {
            let s = sign(yi);
            if s * (dot(&w, r) + b) < 1.0 {
                for (g, v) in gw.iter_mut().zip(r) {
                    *g -= s * v / n;
                }
                gb -= s / n;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= eta * g;
        }
        b -= eta * gb;
        let obj = svm_objective(x, y, &w, b, lambda);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    (best.1, best.2)
}

/// Rosenblatt updates in sorted-subject-id order; stops early after an
/// error-free epoch. Returns the final weights, bias and epochs run.
pub(crate) fn train_perceptron(
    x: &[Vec<f64>],
    y: &[bool],
    ids: &[String],
    eta: f64,
    epochs: usize,
) -> (Vec<f64>, f64, usize) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]).then(a.cmp(&b)));
    let mut w = vec![0.0; x[0].len()];
    let mut b = 0.0;
    for epoch in 1..=epochs {
        let mut mistakes = 0;
        for &i in &order {
            let s = sign(y[i]);
            let pred = dot(&w, &x[i]) + b > 0.0;
            if pred != y[i] {
                for (wj, v) in w.iter_mut().zip(&x[i]) {
                    *wj += eta * s * v;
                }
                b += eta * s;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return (w, b, epoch);
        }
    }
    (w, b, epochs)
}
