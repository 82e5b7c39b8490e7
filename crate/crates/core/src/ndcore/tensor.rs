use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
///
/// Shapes are lists of positive extents; a scalar is stored with shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` matches `data` and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds without the finiteness scan; callers check the result themselves.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_raw(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw(vec![1], vec![value])
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape("item", format!("expected one element, shape is {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Sum in index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    /// Dot product in index order.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|v| v * c).collect())
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "axpy")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect();
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Slices out index `i` of the leading axis.
    pub fn index_outer(&self, i: usize) -> Result<Tensor> {
        let outer = self.shape[0];
        if i >= outer {
            return Err(Error::shape("index_outer", format!("index {i} out of range for {outer}")));
        }
        let inner_shape: Vec<usize> = if self.shape.len() == 1 { vec![1] } else { self.shape[1..].to_vec() };
        let inner: usize = inner_shape.iter().product();
        Ok(Tensor::from_raw(inner_shape, self.data[i * inner..(i + 1) * inner].to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.check_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw(shape, data))
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar elements.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Params {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Builds from parallel name/tensor lists.
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Params> {
        if names.len() != tensors.len() {
            return Err(Error::contract("names and tensors differ in length"));
        }
        let mut p = Params::new();
        for (n, t) in names.into_iter().zip(tensors) {
            p.push(n, t)?;
        }
        Ok(p)
    }

    /// Errors unless `other` has the same names and shapes.
    pub fn check_congruent(&self, other: &Params, op: &'static str) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape(op, format!("parameter names differ: {:?} vs {:?}", self.names, other.names)));
        }
        for ((name, a), b) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape(op, format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    /// `self + c * other`, elementwise over every tensor.
    pub fn axpy(&self, c: f64, other: &Params) -> Result<Params> {
        self.check_congruent(other, "axpy")?;
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.axpy(c, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Params { names: self.names.clone(), tensors })
    }

    pub fn scale(&self, c: f64) -> Params {
        Params { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.scale(c)).collect() }
    }

    /// Sum of elementwise products over all tensors, in parameter order.
    pub fn dot(&self, other: &Params) -> Result<f64> {
        self.check_congruent(other, "dot")?;
        let mut acc = 0.0;
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            acc += a.dot(b)?;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.tensors.iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum())
    }

    /// All values, flattened in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`Params::flatten`] using `self` as the layout template.
    pub fn unflatten(&self, values: &[f64]) -> Result<Params> {
        if values.len() != self.numel() {
            return Err(Error::shape("unflatten", format!("{} values for {} elements", values.len(), self.numel())));
        }
        let mut off = 0;
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n = t.len();
            tensors.push(Tensor::new(t.shape().to_vec(), values[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Params { names: self.names.clone(), tensors })
    }
}
