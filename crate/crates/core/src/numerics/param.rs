use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::dafe::{DomainId, TaskId};
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Gradient-gating unit. Every trainable array belongs to exactly one group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Base,
    Domain(DomainId),
    Task(TaskId),
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroup::Base => f.write_str("base"),
            ParamGroup::Domain(d) => write!(f, "domain_{d}"),
            ParamGroup::Task(t) => write!(f, "task_{t}"),
        }
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "base" {
            return Ok(ParamGroup::Base);
        }
        if let Some(d) = s.strip_prefix("domain_") {
            return Ok(ParamGroup::Domain(d.parse()?));
        }
        if let Some(t) = s.strip_prefix("task_") {
            return Ok(ParamGroup::Task(t.parse()?));
        }
        Err(Error::Format(format!("unknown parameter group `{s}`")))
    }
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    id: String,
    group: ParamGroup,
    tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn group(&self) -> &ParamGroup {
        &self.group
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn values(&self) -> &[T] {
        self.tensor.values()
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        self.tensor.values_mut()
    }

    pub fn grad(&self) -> &[T] {
        self.tensor.grad().expect("parameters always carry a gradient")
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        self.tensor
            .grad_mut()
            .expect("parameters always carry a gradient")
    }

    pub(crate) fn values_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        let (values, grad) = self.tensor.split_mut();
        (values, grad.expect("parameters always carry a gradient"))
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        id: impl Into<String>,
        group: ParamGroup,
        tensor: Tensor<T>,
    ) -> Result<ParamId> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateParameter(id));
        }
        let pid = ParamId(self.params.len());
        self.index.insert(id.clone(), pid);
        self.params.push(Parameter {
            id,
            group,
            tensor: tensor.with_grad(),
        });
        Ok(pid)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, pid: ParamId) -> &Parameter<T> {
        &self.params[pid.0]
    }

    pub fn get_mut(&mut self, pid: ParamId) -> &mut Parameter<T> {
        &mut self.params[pid.0]
    }

    pub fn lookup(&self, id: &str) -> Option<ParamId> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in_group<'a>(&'a self, group: &'a ParamGroup) -> impl Iterator<Item = ParamId> + 'a {
        self.iter()
            .filter(move |(_, p)| &p.group == group)
            .map(|(pid, _)| pid)
    }

    /// Total number of scalar values across all parameters in `group`.
    pub fn group_size(&self, group: &ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| &p.group == group)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out: Vec<ParamGroup> = self.params.iter().map(|p| p.group.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Adds `grad` into the stored gradient of `pid`.
    pub fn accumulate(&mut self, pid: ParamId, grad: &[T]) {
        let dst = self.params[pid.0].grad_mut();
        debug_assert_eq!(dst.len(), grad.len());
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += *g;
        }
    }

    /// Order-sensitive digest of the raw bit patterns of a group's values.
    pub fn checksum(&self, group: &ParamGroup) -> u64 {
        let mut h = Fnv::default();
        for p in self.params.iter().filter(|p| &p.group == group) {
            h.write(p.id.as_bytes());
            for v in p.tensor.values() {
                h.write(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.0
    }

    /// Bitwise snapshot of all values in a group, for exact comparisons.
    pub fn snapshot(&self, group: &ParamGroup) -> Vec<u64> {
        self.params
            .iter()
            .filter(|p| &p.group == group)
            .flat_map(|p| p.tensor.values().iter().map(|v| v.as_f64().to_bits()))
            .collect()
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
