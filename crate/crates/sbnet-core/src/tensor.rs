//! Dense row-major tensor.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat row-major tensor. `grad`, when present, parallels `data` and is only
/// populated on parameter tensors after a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

pub fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("({})", dims.join(", "))
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> TensorBase<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "tensor shape {} wants {} elements, got {}",
                shape_str(shape),
                numel(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel(shape)],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Uniform values in `[lo, hi)`, consumed from `rng` in index order.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| S::from_f64(rng.gen_range(lo..hi)))
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn to_scalar(&self) -> Result<S> {
        if !self.is_scalar() {
            return Err(Error::shape(format!(
                "expected scalar tensor, got shape {}",
                shape_str(&self.shape)
            )));
        }
        Ok(self.data[0])
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} to {}",
                shape_str(&self.shape),
                shape_str(shape)
            )));
        }
        let mut t = self.clone();
        t.shape = shape.to_vec();
        Ok(t)
    }

    pub fn at2(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> S {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: S) {
        debug_assert_eq!(self.shape.len(), 3);
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn convert<T: Scalar>(&self) -> TensorBase<T> {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(Scalar::to_f64(v))).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Adds `g` into the grad buffer, allocating zeros first if absent.
    pub fn accumulate_grad(&mut self, g: &[S], scale: S) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(format!(
                "grad length {} does not match tensor {}",
                g.len(),
                shape_str(&self.shape)
            )));
        }
        let buf = self.grad.get_or_insert_with(|| vec![S::zero(); self.data.len()]);
        for (dst, &src) in buf.iter_mut().zip(g) {
            *dst += src * scale;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(TensorBase::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(TensorBase::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = TensorBase::<f32>::from_fn(&[2, 3], |i| i as f32);
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = TensorBase::<f32>::zeros(&[3]).requires_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0], 1.0).unwrap();
        t.accumulate_grad(&[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(t.grad.as_deref().unwrap(), &[1.5, 3.0, 4.5]);
    }

    #[test]
    fn convert_roundtrip_is_exact_for_f32() {
        let t = TensorBase::<f32>::from_fn(&[4], |i| (i as f32) * 0.37 - 1.0);
        let back: TensorBase<f32> = t.convert::<f64>().convert::<f32>();
        assert_eq!(back.data(), t.data());
    }
}
