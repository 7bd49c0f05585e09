use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.rows(),
            got: labels.len(),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::EmptySample);
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::Precondition(format!(
            "label {l} outside 0..{}",
            logits.cols()
        )));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// `−log softmax(row)[label]` via log-sum-exp.
fn row_nll(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

/// Mean cross-entropy over rows.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check(logits, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| row_nll(logits.row(i), l))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let loss = cross_entropy(logits, labels)?;
    let mut grad = softmax_rows(logits);
    let n = labels.len() as f64;
    for (i, &l) in labels.iter().enumerate() {
        grad[(i, l)] -= 1.0;
    }
    grad.scale(1.0 / n);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let l = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let v = cross_entropy(&l, &[0, 1]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_logits_are_stable() {
        let l = Matrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        let v = cross_entropy(&l, &[0]).unwrap();
        assert!(v.is_finite() && v.abs() < 1e-300);
        let w = cross_entropy(&l, &[1]).unwrap();
        assert!((w - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let l = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(cross_entropy(&l, &[2]).is_err());
        assert!(cross_entropy(&l, &[0, 1]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let l = Matrix::from_rows(&[[0.3, -1.2, 2.0], [5.0, 5.0, -5.0]]).unwrap();
        let (_, g) = cross_entropy_with_grad(&l, &[2, 0]).unwrap();
        for i in 0..2 {
            assert!(g.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
