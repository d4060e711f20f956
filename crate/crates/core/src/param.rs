//! Trainable parameters and parameter groups.
//!
//! A `Param` owns its values behind an `Rc` so that a forward pass can alias
//! them into a tape without copying; the optimizer mutates through
//! `Rc::make_mut`, which copy-on-writes only if a tape still holds the values.
//! The gradient cell is shared with every tape leaf created from the param, so
//! `backward` deposits gradients directly where the optimizer reads them.

use std::cell::RefCell;
use std::rc::Rc;

use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::rng::RngStream;
use crate::Real;

pub type GradCell = Rc<RefCell<Option<Vec<Real>>>>;

#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    value: Rc<Vec<Real>>,
    grad: GradCell,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<Real>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(values.len(), numel, "value count must match shape");
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: Rc::new(values),
            grad: Rc::new(RefCell::new(None)),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Param::new(name, shape, vec![0.0; numel])
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Param::new(name, shape, vec![1.0; numel])
    }

    /// Scaled-normal init, std = `std`, drawn from the given stream.
    pub fn init_normal(
        name: impl Into<String>,
        shape: &[usize],
        std: Real,
        stream: &mut RngStream,
    ) -> Self {
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| stream.normal() * std).collect();
        Param::new(name, shape, values)
    }

    /// Normal init with std = 1/sqrt(fan_in).
    pub fn init_fan_in(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        stream: &mut RngStream,
    ) -> Self {
        let std = 1.0 / (fan_in as Real).sqrt();
        Param::init_normal(name, shape, std, stream)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn value(&self) -> &[Real] {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Vec<Real>> {
        Rc::clone(&self.value)
    }

    pub(crate) fn grad_cell(&self) -> GradCell {
        Rc::clone(&self.grad)
    }

    pub fn grad(&self) -> Option<Vec<Real>> {
        self.grad.borrow().clone()
    }

    /// Remove and return the accumulated gradient, if any.
    pub fn take_grad(&mut self) -> Option<Vec<Real>> {
        self.grad.borrow_mut().take()
    }

    pub fn zero_grad(&mut self) {
        *self.grad.borrow_mut() = None;
    }

    /// Overwrite the values in place (shape must be unchanged).
    pub fn set_value(&mut self, values: Vec<Real>) {
        assert_eq!(values.len(), self.numel());
        *Rc::make_mut(&mut self.value) = values;
    }

    /// Mutate values elementwise; used by optimizers.
    pub(crate) fn values_mut(&mut self) -> &mut [Real] {
        let v: &mut Vec<Real> = Rc::make_mut(&mut self.value);
        v.as_mut_slice()
    }
}

/// Anything whose parameters can be enumerated in a stable order.
pub trait ParamGroup {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

impl ParamGroup for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}

/// SHA-256 over names, shapes, and little-endian f64 bytes, in group order.
/// Bit-exact: two groups fingerprint equal iff every value is identical.
pub fn fingerprint<G: ParamGroup + ?Sized>(group: &G) -> String {
    let mut hasher = Sha256::new();
    for p in group.params() {
        hasher.update((p.name().len() as u64).to_le_bytes());
        hasher.update(p.name().as_bytes());
        hasher.update((p.shape().len() as u64).to_le_bytes());
        for &d in p.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for &v in p.value() {
            hasher.update((v as f64).to_le_bytes());
        }
    }
    hex_encode(&hasher.finalize())
}

pub fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Check that every value in the group is finite.
pub fn check_finite<G: ParamGroup + ?Sized>(group: &G, op: &'static str) -> Result<()> {
    for p in group.params() {
        if p.value().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { op });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_value_sensitive() {
        let a = vec![Param::new("w", &[2], vec![1.0, 2.0])];
        let b = vec![Param::new("w", &[2], vec![1.0, 2.0])];
        let c = vec![Param::new("w", &[2], vec![1.0, 2.0 + 1e-15])];
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
    }

    #[test]
    fn init_is_deterministic() {
        let mut s1 = RngStream::new(5, "init/w");
        let mut s2 = RngStream::new(5, "init/w");
        let a = Param::init_fan_in("w", &[8, 8], 8, &mut s1);
        let b = Param::init_fan_in("w", &[8, 8], 8, &mut s2);
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn set_value_does_not_disturb_aliases() {
        let mut p = Param::new("w", &[2], vec![1.0, 2.0]);
        let alias = p.value_rc();
        p.set_value(vec![9.0, 9.0]);
        assert_eq!(*alias, vec![1.0, 2.0]);
        assert_eq!(p.value(), &[9.0, 9.0]);
    }
}
