use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::archive::TensorMap;
use crate::autodiff::{Gradients, Tape, Tensor, TensorError, Var};

use super::NetworkError;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: TensorMap,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(tensors: TensorMap) -> Self {
        Self { tensors }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), NetworkError> {
        let name = name.into();
        if !t.is_finite() {
            return Err(NetworkError::NonFinite(name));
        }
        if self.tensors.insert(name.clone(), t).is_some() {
            return Err(NetworkError::DuplicateParam(name));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NetworkError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NetworkError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NetworkError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NetworkError::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn as_map(&self) -> &TensorMap {
        &self.tensors
    }

    pub fn into_map(self) -> TensorMap {
        self.tensors
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Records every parameter on `tape`, as trainable leaves when `trainable`
    /// and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Binds only names starting with one of `trainable_prefixes` as leaves.
    pub fn bind_partial(&self, tape: &mut Tape, trainable_prefixes: &[&str]) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable_prefixes.iter().any(|p| k.starts_with(p)) {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape variables for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, NetworkError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::MissingParam(name.to_string()))
    }

    /// Rebinds `name` to `var`, e.g. to differentiate with respect to one
    /// tensor while the rest stay constant.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<(), NetworkError> {
        match self.vars.get_mut(name) {
            Some(v) => {
                *v = var;
                Ok(())
            }
            None => Err(NetworkError::MissingParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients for every bound name, zero-filled where the tape has none.
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients) -> Result<TensorMap, TensorError> {
        let mut out = TensorMap::new();
        for (name, &var) in &self.vars {
            let g = match grads.get(var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(tape.value(var)?.shape().to_vec()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Deterministic parameter initialisation. Each tensor draws from its own
/// stream derived from the seed and the parameter name, so adding a tensor
/// never perturbs the others.
pub struct Init {
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        // FNV-1a over the name, mixed with the seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(h ^ self.seed.rotate_left(17))
    }

    /// He-uniform with the given fan-in.
    pub fn he(&self, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        self.uniform(name, shape, bound)
    }

    /// Glorot-uniform for layers without a rectifier.
    pub fn glorot(&self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        self.uniform(name, shape, bound)
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f32) -> Tensor {
        let mut rng = self.rng_for(name);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_and_missing_names() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        assert_eq!(
            p.insert("a", Tensor::scalar(2.0)),
            Err(NetworkError::DuplicateParam("a".into()))
        );
        assert!(matches!(p.get("b"), Err(NetworkError::MissingParam(_))));
        assert!(p.insert("n", Tensor::scalar(f32::NAN)).is_err());
    }

    #[test]
    fn init_is_per_name_deterministic() {
        let i = Init::new(7);
        assert_eq!(i.he("x", &[4, 4], 4), Init::new(7).he("x", &[4, 4], 4));
        assert_ne!(i.he("x", &[4, 4], 4), i.he("y", &[4, 4], 4));
        assert_ne!(i.he("x", &[4, 4], 4), Init::new(8).he("x", &[4, 4], 4));
        let t = i.he("z", &[1000], 6);
        assert!(t.max_abs() <= 1.0);
    }

    #[test]
    fn bind_partial_marks_leaves() {
        let mut p = ParamStore::new();
        p.insert("enc.w", Tensor::ones([2])).unwrap();
        p.insert("sd.w", Tensor::ones([2])).unwrap();
        let mut tape = Tape::new();
        let b = p.bind_partial(&mut tape, &["enc."]);
        let e = b.get("enc.w").unwrap();
        let s = b.get("sd.w").unwrap();
        let m = tape.mul(e, s).unwrap();
        let root = tape.sum_all(m).unwrap();
        let g = tape.backward(root).unwrap();
        let grads = b.collect_grads(&tape, &g).unwrap();
        assert_eq!(grads["enc.w"].data(), &[1.0, 1.0]);
        assert_eq!(grads["sd.w"].data(), &[0.0, 0.0]);
    }
}
