use super::tensor::{gemm, Tensor};
use super::NumError;

fn check(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize), NumError> {
    let (out, inp) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(NumError::ShapeMismatch(format!("dense W {s:?}"))),
    };
    if b.shape() != [out] || x.cols() != inp {
        return Err(NumError::ShapeMismatch(format!("dense x {:?} W {:?} b {:?}", x.shape(), w.shape(), b.shape())));
    }
    Ok((x.rows(), inp, out))
}

/// `y = x Wᵀ + b` row-wise; `x` is `n × in`, `W` is `out × in`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    let (n, inp, out) = check(x, w, b)?;
    let mut y = vec![0.0; n * out];
    dense_forward_raw(x.data(), n, inp, w.data(), b.data(), &mut y);
    Tensor::matrix(n, out, y)
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward(dy: &Tensor, x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor, Tensor), NumError> {
    let b = Tensor::zeros(&[w.rows()]);
    let (n, inp, out) = check(x, w, &b)?;
    if dy.shape() != [n, out] {
        return Err(NumError::ShapeMismatch(format!("dense dy {:?}", dy.shape())));
    }
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[out]);
    let mut dx = vec![0.0; n * inp];
    dense_backward_raw(dy.data(), x.data(), n, inp, out, w.data(), dw.data_mut(), db.data_mut(), Some(&mut dx));
    Ok((Tensor::matrix(n, inp, dx)?, dw, db))
}

pub(crate) fn dense_forward_raw(x: &[f64], n: usize, inp: usize, w: &[f64], b: &[f64], y: &mut [f64]) {
    let out = b.len();
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(b);
    }
    gemm(n, inp, out, 1.0, x, false, w, true, 1.0, y);
}

/// Accumulates into `dw`, `db`; writes `dx` when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_raw(
    dy: &[f64],
    x: &[f64],
    n: usize,
    inp: usize,
    out: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    gemm(out, n, inp, 1.0, dy, true, x, false, 1.0, dw);
    for row in dy.chunks_exact(out) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    if let Some(dx) = dx {
        gemm(n, out, inp, 1.0, dy, false, w, false, 0.0, dx);
    }
}
