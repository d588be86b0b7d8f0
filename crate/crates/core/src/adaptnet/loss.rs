use crate::data::Labels;
use crate::numeric::Matrix;
use crate::{Error, Result};

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Mean softmax cross-entropy over class logits, or mean squared error over a single output
/// column, with its gradient with respect to `pred`.
pub fn task_loss(pred: &Matrix, labels: &Labels) -> Result<(f64, Matrix)> {
    let n = pred.rows();
    if n == 0 {
        return Err(Error::Empty("task loss on an empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape("task_loss labels", n, labels.len()));
    }
    let inv = 1.0 / n as f64;
    match labels {
        Labels::Classes(y) => {
            let k = pred.cols();
            if let Some(&c) = y.iter().find(|&&c| c >= k) {
                return Err(Error::InvalidArgument(format!("class {c} has no logit among {k}")));
            }
            let mut grad = softmax_rows(pred);
            let mut loss = 0.0;
            for (r, &c) in y.iter().enumerate() {
                let row = pred.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - row[c];
                let g = grad.row_mut(r);
                g[c] -= 1.0;
                g.iter_mut().for_each(|v| *v *= inv);
            }
            Ok((loss * inv, grad))
        }
        Labels::Real(y) => {
            if pred.cols() != 1 {
                return Err(Error::shape("regression predictions", 1, pred.cols()));
            }
            let mut grad = Matrix::zeros(n, 1);
            let mut loss = 0.0;
            for (r, &t) in y.iter().enumerate() {
                let e = pred.get(r, 0) - t;
                loss += e * e;
                grad.set(r, 0, 2.0 * e * inv);
            }
            Ok((loss * inv, grad))
        }
    }
}
