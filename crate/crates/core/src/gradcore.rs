//! Dense double-precision numerics with hand-derived gradients.
//!
//! Score matrices on the training side are laid out classes x proposals.
//! [`linear_forward`] produces proposals x outputs, callers transpose.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                data.len().to_string(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(format!("row of {cols}"), r.len().to_string()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stack `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::shape(
                format!("{} columns", self.cols),
                other.cols.to_string(),
            ));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Stable softmax of each column (normalizes over classes).
pub fn softmax_over_classes(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for c in 0..x.cols {
        let max = (0..x.rows)
            .map(|r| x[(r, c)])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..x.rows {
            let e = (x[(r, c)] - max).exp();
            out[(r, c)] = e;
            sum += e;
        }
        for r in 0..x.rows {
            out[(r, c)] /= sum;
        }
    }
    out
}

/// Stable softmax of each row (normalizes over proposals).
pub fn softmax_over_proposals(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Backward pass of a column softmax: given `p = softmax_over_classes(z)` and
/// `dL/dp`, return `dL/dz`.
pub fn softmax_over_classes_backward(p: &Matrix, grad_p: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(p.rows, p.cols);
    for c in 0..p.cols {
        let dot: f64 = (0..p.rows).map(|r| p[(r, c)] * grad_p[(r, c)]).sum();
        for r in 0..p.rows {
            out[(r, c)] = p[(r, c)] * (grad_p[(r, c)] - dot);
        }
    }
    out
}

/// Backward pass of a row softmax.
pub fn softmax_over_proposals_backward(p: &Matrix, grad_p: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(p.rows, p.cols);
    for r in 0..p.rows {
        let dot: f64 = p.row(r).iter().zip(grad_p.row(r)).map(|(a, b)| a * b).sum();
        for c in 0..p.cols {
            out[(r, c)] = p[(r, c)] * (grad_p[(r, c)] - dot);
        }
    }
    out
}

/// Scalar loss plus its gradient with respect to the scores it consumed.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

impl LossValue {
    pub fn zero(rows: usize, cols: usize) -> Self {
        LossValue {
            value: 0.0,
            grad: Matrix::zeros(rows, cols),
        }
    }
}

/// An affine layer `features * W + b` with its momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    momentum_weights: Matrix,
    momentum_bias: Vec<f64>,
}

/// Parameter gradients of a [`LinearHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(head: &LinearHead) -> Self {
        HeadGrads {
            weights: Matrix::zeros(head.in_dim(), head.out_dim()),
            bias: vec![0.0; head.out_dim()],
        }
    }

    pub fn accumulate(&mut self, other: &HeadGrads) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        if self.bias.len() != other.bias.len() {
            return Err(Error::shape(
                self.bias.len().to_string(),
                other.bias.len().to_string(),
            ));
        }
        self.bias
            .iter_mut()
            .zip(&other.bias)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.scale(k);
        self.bias.iter_mut().for_each(|v| *v *= k);
    }
}

impl LinearHead {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearHead::from_params(Matrix::zeros(in_dim, out_dim), vec![0.0; out_dim])
            .expect("consistent shapes")
    }

    /// Weights drawn from N(0, std^2), zero bias.
    pub fn gaussian<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..in_dim * out_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect();
        LinearHead::from_params(
            Matrix::from_vec(in_dim, out_dim, data).expect("sized"),
            vec![0.0; out_dim],
        )
        .expect("consistent shapes")
    }

    pub fn from_params(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::shape(
                format!("bias of {}", weights.cols()),
                bias.len().to_string(),
            ));
        }
        Ok(LinearHead {
            momentum_weights: Matrix::zeros(weights.rows(), weights.cols()),
            momentum_bias: vec![0.0; bias.len()],
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn momentum(&self) -> (&Matrix, &[f64]) {
        (&self.momentum_weights, &self.momentum_bias)
    }

    /// Gradients of the parameters given `dL/d(output)` for a batch of rows.
    pub fn backward(&self, features: &Matrix, grad_out: &Matrix) -> Result<HeadGrads> {
        if features.rows() != grad_out.rows() || grad_out.cols() != self.out_dim() {
            return Err(Error::shape(
                format!("{}x{}", features.rows(), self.out_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        let mut gw = Matrix::zeros(self.in_dim(), self.out_dim());
        let mut gb = vec![0.0; self.out_dim()];
        for r in 0..features.rows() {
            let f = features.row(r);
            let g = grad_out.row(r);
            for (k, &fk) in f.iter().enumerate() {
                if fk == 0.0 {
                    continue;
                }
                let row = gw.row_mut(k);
                row.iter_mut().zip(g).for_each(|(w, &gj)| *w += fk * gj);
            }
            gb.iter_mut().zip(g).for_each(|(b, &gj)| *b += gj);
        }
        Ok(HeadGrads {
            weights: gw,
            bias: gb,
        })
    }
}

/// Affine map, one output row per feature row.
pub fn linear_forward(head: &LinearHead, features: &Matrix) -> Result<Matrix> {
    if features.cols() != head.in_dim() {
        return Err(Error::shape(
            format!("feature dim {}", head.in_dim()),
            features.cols().to_string(),
        ));
    }
    let mut out = Matrix::zeros(features.rows(), head.out_dim());
    for r in 0..features.rows() {
        let orow = out.row_mut(r);
        orow.copy_from_slice(&head.bias);
        for (k, &fk) in features.row(r).iter().enumerate() {
            if fk == 0.0 {
                continue;
            }
            orow.iter_mut()
                .zip(head.weights.row(k))
                .for_each(|(o, &w)| *o += fk * w);
        }
    }
    Ok(out)
}

/// SGD with momentum and L2 weight decay:
/// `buf = momentum * buf + grad + weight_decay * param; param -= lr * buf`.
pub fn sgd_step(
    head: &mut LinearHead,
    grads: &HeadGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    head.weights.check_same(&grads.weights)?;
    if grads.bias.len() != head.bias.len() {
        return Err(Error::shape(
            head.bias.len().to_string(),
            grads.bias.len().to_string(),
        ));
    }
    let update = |p: &mut f64, buf: &mut f64, g: f64| {
        *buf = momentum * *buf + g + weight_decay * *p;
        *p -= lr * *buf;
    };
    for ((p, buf), &g) in head
        .weights
        .data
        .iter_mut()
        .zip(head.momentum_weights.data.iter_mut())
        .zip(&grads.weights.data)
    {
        update(p, buf, g);
    }
    for ((p, buf), &g) in head
        .bias
        .iter_mut()
        .zip(head.momentum_bias.iter_mut())
        .zip(&grads.bias)
    {
        update(p, buf, g);
    }
    Ok(())
}

/// Compare an analytic gradient against central differences.
///
/// `f` returns `(loss, gradient)`; the gradient is taken at `point` only.
/// The per-coordinate error is `|a - n| / max(|a|, |n|, 1e-8)` and the maximum
/// over coordinates is returned.
pub fn finite_diff_check<F>(f: F, point: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x).0;
        x[i] = orig - epsilon;
        let minus = f(&x).0;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

const HEAD_MAGIC: &[u8; 4] = b"LHD1";

/// Write a head's parameters: magic, `u32` in/out dims, then row-major
/// weights and the bias, all little-endian `f64`.
pub fn write_head<W: Write>(w: &mut W, head: &LinearHead) -> Result<()> {
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&(head.in_dim() as u32).to_le_bytes())?;
    w.write_all(&(head.out_dim() as u32).to_le_bytes())?;
    for v in head.weights.data().iter().chain(&head.bias) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_head<R: Read>(r: &mut R) -> Result<LinearHead> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != HEAD_MAGIC {
        return Err(Error::Checkpoint("bad head magic".into()));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let in_dim = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let out_dim = u32::from_le_bytes(u) as usize;
    let mut read_f64 = || -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let weights = (0..in_dim * out_dim)
        .map(|_| read_f64())
        .collect::<Result<Vec<_>>>()?;
    let bias = (0..out_dim)
        .map(|_| read_f64())
        .collect::<Result<Vec<_>>>()?;
    LinearHead::from_params(Matrix::from_vec(in_dim, out_dim, weights)?, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_forward_examples() {
        let feats = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let zero = LinearHead::zeros(2, 3);
        assert_eq!(linear_forward(&zero, &feats).unwrap(), Matrix::zeros(2, 3));

        let ident = LinearHead::from_params(Matrix::identity(2), vec![0.0; 2]).unwrap();
        assert_eq!(linear_forward(&ident, &feats).unwrap(), feats);

        assert!(linear_forward(&zero, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn linear_forward_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let feats = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 5);
        let bias: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let head = LinearHead::from_params(w.clone(), bias.clone()).unwrap();
        let out = linear_forward(&head, &feats).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = bias[j];
                for k in 0..4 {
                    acc += feats[(i, k)] * w[(k, j)];
                }
                assert!((out[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let one = softmax_over_classes(&Matrix::from_rows(&[vec![3.0, -1.0, 9.0]]).unwrap());
        assert_eq!(one.data(), &[1.0, 1.0, 1.0]);

        let half = softmax_over_classes(&Matrix::zeros(2, 1));
        assert_eq!(half.data(), &[0.5, 0.5]);

        let p = softmax_over_classes(&Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8);
        }

        let single = softmax_over_proposals(&Matrix::from_vec(3, 1, vec![5.0, -2.0, 0.1]).unwrap());
        assert_eq!(single.data(), &[1.0, 1.0, 1.0]);
        let quarter = softmax_over_proposals(&Matrix::zeros(1, 4));
        assert_eq!(quarter.data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_transpose_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 6);
        let a = softmax_over_proposals(&x);
        let b = softmax_over_classes(&x.transpose()).transpose();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let x = Matrix::from_vec(2, 1, vec![1000.0, 999.0]).unwrap();
        let p = softmax_over_classes(&x);
        assert!(p.is_finite());
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(40.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid_scalar(-40.0) < 1e-12);
        assert!((sigmoid_scalar(1.0) - 0.7310585786).abs() < 1e-10);
        assert!(sigmoid_scalar(-800.0) >= 0.0);
    }

    #[test]
    fn sgd_examples() {
        let mut head = LinearHead::from_params(Matrix::filled(2, 2, 1.0), vec![0.5, -0.5]).unwrap();
        let start = head.clone();
        let zero = HeadGrads::zeros_like(&head);
        sgd_step(&mut head, &zero, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(head.weights, start.weights);
        assert_eq!(head.bias, start.bias);

        let g = HeadGrads {
            weights: Matrix::filled(2, 2, 0.25),
            bias: vec![1.0, -2.0],
        };
        let mut plain = start.clone();
        sgd_step(&mut plain, &g, 0.1, 0.0, 0.0).unwrap();
        assert!((plain.weights[(0, 0)] - (1.0 - 0.1 * 0.25)).abs() < 1e-15);
        assert_eq!(plain.bias, vec![0.5 - 0.1, -0.5 + 0.2]);

        let mut mom = start.clone();
        sgd_step(&mut mom, &g, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut mom, &g, 0.1, 0.9, 0.0).unwrap();
        let expected = 1.0 - 0.1 * (0.25 + 1.9 * 0.25);
        assert!((mom.weights[(1, 1)] - expected).abs() < 1e-15);

        let mut frozen = start.clone();
        sgd_step(&mut frozen, &g, 0.0, 0.9, 5e-4).unwrap();
        assert_eq!(frozen.weights, start.weights);

        let bad = HeadGrads {
            weights: Matrix::zeros(3, 2),
            bias: vec![0.0; 2],
        };
        assert!(sgd_step(&mut head, &bad, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let err = finite_diff_check(
            |p| (0.5 * p.iter().map(|v| v * v).sum::<f64>(), p.to_vec()),
            &x,
            1e-5,
        );
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = random_matrix(&mut rng, 5, 3);
        let target = random_matrix(&mut rng, 5, 2);
        let w0 = random_matrix(&mut rng, 3, 2);
        let mut point = w0.data().to_vec();
        point.extend([0.1, -0.2]);
        let err = finite_diff_check(
            |p| {
                let head = LinearHead::from_params(
                    Matrix::from_vec(3, 2, p[..6].to_vec()).unwrap(),
                    p[6..].to_vec(),
                )
                .unwrap();
                let out = linear_forward(&head, &feats).unwrap();
                let mut diff = out.clone();
                let mut loss = 0.0;
                for (d, t) in diff.data_mut().iter_mut().zip(target.data()) {
                    *d -= t;
                    loss += 0.5 * *d * *d;
                }
                let g = head.backward(&feats, &diff).unwrap();
                let mut grad = g.weights.into_data();
                grad.extend(g.bias);
                (loss, grad)
            },
            &point,
            1e-5,
        );
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn head_checkpoint_layout() {
        let head = LinearHead::from_params(
            Matrix::from_vec(1, 2, vec![1.5, -2.0]).unwrap(),
            vec![0.25, 0.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_head(&mut buf, &head).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 4 * 8);
        assert_eq!(&buf[..4], b"LHD1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1.5f64.to_le_bytes());
        let back = read_head(&mut buf.as_slice()).unwrap();
        assert_eq!(back, head);
        assert!(read_head(&mut &b"XXXX"[..]).is_err());
    }
}
