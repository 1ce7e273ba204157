use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Trainable tensor with a unique dotted path name.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Owns every parameter and buffer of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(TensorError::InvalidArgument {
                op: "param store",
                msg: format!("duplicate name {name}"),
            });
        }
        self.names.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name, Slot::Param(self.params.len()))?;
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name, Slot::Buffer(self.buffers.len()))?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    /// Disjoint mutable access to two buffers.
    pub fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut [T], &mut [T]) {
        assert_ne!(a.0, b.0, "buffer_pair_mut needs distinct buffers");
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (lo[a.0].value.data_mut(), hi[0].value.data_mut())
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (hi[0].value.data_mut(), lo[b.0].value.data_mut())
        }
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        match self.names.get(name) {
            Some(Slot::Buffer(i)) => Some(BufferId(*i)),
            _ => None,
        }
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalars under a name prefix.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
            names: self.names.clone(),
        }
    }
}

/// Binds store parameters to tape leaves, once per tape.
#[derive(Debug, Default)]
pub struct Binder {
    bound: HashMap<ParamId, Var>,
    trainable: bool,
}

impl Binder {
    /// Parameters become differentiable leaves.
    pub fn trainable() -> Self {
        Self {
            bound: HashMap::new(),
            trainable: true,
        }
    }

    /// Parameters become constants; nothing is recorded for backward.
    pub fn frozen() -> Self {
        Self {
            bound: HashMap::new(),
            trainable: false,
        }
    }

    pub fn var<T: Real>(&mut self, tape: &Tape<T>, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let value = store.param(id).value.clone();
        let v = if self.trainable {
            tape.leaf(value)
        } else {
            tape.constant(value)
        };
        self.bound.insert(id, v);
        v
    }

    /// Copies tape gradients into the store; parameters that were not used
    /// in the forward pass get a zero gradient.
    pub fn collect_grads<T: Real>(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (i, p) in store.params.iter_mut().enumerate() {
            let g = self.bound.get(&ParamId(i)).and_then(|v| tape.grad(*v));
            p.grad = Some(g.unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_across_params_and_buffers() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.w", Tensor::zeros(vec![2])).unwrap();
        assert!(s.add("a.w", Tensor::zeros(vec![2])).is_err());
        assert!(s.add_buffer("a.w", Tensor::zeros(vec![2])).is_err());
        s.add_buffer("a.mean", Tensor::zeros(vec![3])).unwrap();
        assert_eq!(s.num_scalars(), 2);
        assert!(s.param_id("a.mean").is_none());
        assert!(s.buffer_id("a.mean").is_some());
    }

    #[test]
    fn buffer_pair_is_disjoint_in_either_order() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add_buffer("a", Tensor::zeros(vec![1])).unwrap();
        let b = s.add_buffer("b", Tensor::zeros(vec![2])).unwrap();
        let (x, y) = s.buffer_pair_mut(b, a);
        assert_eq!((x.len(), y.len()), (2, 1));
    }
}
