use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Stable handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    group: String,
    tensor: Tensor<T>,
}

/// Named parameter storage. Iteration follows insertion order.
///
/// Parameters belong to a group (e.g. `encoder`); freezing a group makes the
/// tape treat its members as constants and makes [`crate::Adam`] skip them.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T = f32> {
    entries: Vec<Entry<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), frozen: BTreeSet::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.id_of(&name).is_some() {
            return Err(Error::Usage(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push(Entry { name, group: group.into(), tensor });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn group_ids<'a>(&'a self, group: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries.iter().enumerate().filter(move |(_, e)| e.group == group).map(|(i, _)| ParamId(i))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.entries[id.0].group
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn freeze(&mut self, group: &str) {
        self.frozen.insert(group.to_string());
    }

    pub fn unfreeze(&mut self, group: &str) {
        self.frozen.remove(group);
    }

    pub fn is_group_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen.contains(&self.entries[id.0].group)
    }

    /// Adds tape gradients into the grad slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            self.entries[id.0].tensor.accumulate_grad(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    /// Copies values for every parameter of `src` named `src_prefix*` into the
    /// parameter named with `dst_prefix` substituted.
    pub fn copy_prefixed(&mut self, src: &ParamSet<T>, src_prefix: &str, dst_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for e in &src.entries {
            let Some(rest) = e.name.strip_prefix(src_prefix) else {
                continue;
            };
            let dst_name = format!("{dst_prefix}{rest}");
            let id = self.id_of(&dst_name).ok_or_else(|| Error::Usage(format!("no parameter named {dst_name:?}")))?;
            let dst = &mut self.entries[id.0].tensor;
            if dst.shape() != e.tensor.shape() {
                return Err(Error::shape(
                    "copy_prefixed",
                    format!("{dst_name}: {:?} vs {:?}", dst.shape(), e.tensor.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(e.tensor.data());
            copied += 1;
        }
        Ok(copied)
    }

    /// Little-endian bytes of every value in `group`, in insertion order.
    pub fn group_bytes(&self, group: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.group == group) {
            for &v in e.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e.name.as_str(), &e.tensor))
    }
}
