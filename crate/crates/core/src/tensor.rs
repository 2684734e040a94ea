//! Dense row-major `f64` tensors and the raw kernels the tape is built on.
//!
//! Kernels here never allocate tape nodes. Both the recorded ([`crate::autodiff`])
//! and the tape-free forward paths call into this module, so the two produce
//! bit-identical values.

use crate::error::{Error, Result};

/// Largest `f64` strictly below one. Saturating activations clamp to it so
/// their outputs stay inside the open interval.
pub(crate) const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(Error::Contract(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds an `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Contract(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn add_assign(acc: &mut Tensor, other: &Tensor) {
    debug_assert_eq!(acc.shape, other.shape);
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a.data[p * m..(p + 1) * m];
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Adds `bias` (length `d`) to every row of an `n × d` matrix.
pub fn add_row_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, d) = a.dims2()?;
    if bias.shape != [d] {
        return Err(Error::dim("add_row_bias", &a.shape, &bias.shape));
    }
    let mut out = a.clone();
    for row in out.data.chunks_mut(d) {
        for (o, b) in row.iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

/// Column sums of an `n × d` matrix, as a length-`d` vector.
pub fn column_sums(a: &Tensor) -> Result<Tensor> {
    let (_, d) = a.dims2()?;
    let mut out = vec![0.0; d];
    for row in a.data.chunks(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::vector(out))
}

fn concat_layout(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis..].iter().product();
    (outer, inner)
}

/// Concatenates along `axis`. An operand with zero elements is treated as
/// the empty tensor and returns the other operand unchanged.
pub fn concat(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    let compatible = a.shape.len() == b.shape.len()
        && axis < a.shape.len()
        && a.shape
            .iter()
            .zip(&b.shape)
            .enumerate()
            .all(|(i, (x, y))| i == axis || x == y);
    if !compatible {
        return Err(Error::dim("concat", &a.shape, &b.shape));
    }
    let (outer, a_inner) = concat_layout(&a.shape, axis);
    let (_, b_inner) = concat_layout(&b.shape, axis);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        data.extend_from_slice(&a.data[o * a_inner..(o + 1) * a_inner]);
        data.extend_from_slice(&b.data[o * b_inner..(o + 1) * b_inner]);
    }
    let mut shape = a.shape.clone();
    shape[axis] += b.shape[axis];
    Tensor::new(shape, data)
}

/// Inverse of [`concat`]: splits `t` along `axis` into parts shaped like
/// `a_shape` and `b_shape`.
pub(crate) fn split(t: &Tensor, a_shape: &[usize], b_shape: &[usize], axis: usize) -> (Tensor, Tensor) {
    let (outer, a_inner) = concat_layout(a_shape, axis);
    let (_, b_inner) = concat_layout(b_shape, axis);
    let mut a = Vec::with_capacity(outer * a_inner);
    let mut b = Vec::with_capacity(outer * b_inner);
    let stride = a_inner + b_inner;
    for o in 0..outer {
        let chunk = &t.data[o * stride..(o + 1) * stride];
        a.extend_from_slice(&chunk[..a_inner]);
        b.extend_from_slice(&chunk[a_inner..]);
    }
    (
        Tensor {
            shape: a_shape.to_vec(),
            data: a,
        },
        Tensor {
            shape: b_shape.to_vec(),
            data: b,
        },
    )
}

pub(crate) fn tanh(x: f64) -> f64 {
    x.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_product() {
        let id = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&id, &x).unwrap(), x);
    }

    #[test]
    fn annihilating_product() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = m(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&a, &b).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn transposed_products_agree() {
        let a = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let b = m(4, 3, &[0.1, 0.2, 0.3, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.5, -0.5, 2.0]);
        let direct = matmul(&a, &transpose(&b).unwrap()).unwrap();
        assert_eq!(matmul_nt(&a, &b).unwrap(), direct);
        let at = transpose(&a).unwrap();
        let c = m(2, 2, &[1.0, 2.0, -3.0, 0.25]);
        assert_eq!(matmul_tn(&a, &c).unwrap(), matmul(&at, &c).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0]);
        assert_eq!(concat(&a, &b, 0).unwrap().data(), &[1.0, 2.0, 3.0]);
        let empty = Tensor::new(vec![0], vec![]).unwrap();
        assert_eq!(concat(&a, &empty, 0).unwrap(), a);

        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = m(2, 1, &[9.0, 8.0]);
        let xy = concat(&x, &y, 1).unwrap();
        assert_eq!(xy.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let (sx, sy) = split(&xy, x.shape(), y.shape(), 1);
        assert_eq!((sx, sy), (x.clone(), y));
        assert!(concat(&x, &Tensor::zeros(&[3, 1]), 1).is_err());
    }

    #[test]
    fn saturating_activations_stay_open() {
        for x in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let t = tanh(x);
            assert!(t > -1.0 && t < 1.0);
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0);
            assert!(softplus(x).is_finite());
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
