//! Named parameter storage shared by the network builders, the optimizer,
//! and the checkpoint format.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::TensorError;

/// Handle to one parameter tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Trainable parameters receive gradients and Adam updates; running
    /// batch-norm statistics are stored but not trained.
    pub trainable: bool,
}

/// An ordered, named collection of parameter tensors.
///
/// Registration order is the canonical order used by gradients, Adam moments,
/// and the checkpoint layout, so it must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: Vec<f64>,
        trainable: bool,
    ) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate parameter name {name}"
        );
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.entries.push(ParamEntry {
            name,
            shape,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// SHA-256 over the little-endian bytes of one parameter tensor.
    pub fn value_hash(&self, id: ParamId) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in &self.entries[id.0].value {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Hex SHA-256 over names and values of the parameters `keep` selects,
    /// in registration order. With `keep = |_| true` this fingerprints the
    /// whole set; a filter isolates e.g. all layers shared between two
    /// networks.
    pub fn subset_hash(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        for entry in &self.entries {
            if !keep(&entry.name) {
                continue;
            }
            hasher.update(entry.name.as_bytes());
            hasher.update([0u8]);
            for v in &entry.value {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Copies every parameter whose name exists in both sets from `source`,
    /// except names for which `skip` returns true. Shapes must match.
    pub fn copy_matching_from(
        &mut self,
        source: &ParamSet,
        skip: impl Fn(&str) -> bool,
    ) -> Result<usize, TensorError> {
        let mut copied = 0;
        for i in 0..self.entries.len() {
            if skip(&self.entries[i].name) {
                continue;
            }
            let Some(src) = source.find(&self.entries[i].name) else {
                continue;
            };
            if source.shape(src) != self.entries[i].shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    context: "ParamSet::copy_matching_from".into(),
                    expected: self.entries[i].shape.clone(),
                    got: source.shape(src).to_vec(),
                });
            }
            self.entries[i].value.copy_from_slice(source.value(src));
            copied += 1;
        }
        Ok(copied)
    }

    pub(crate) fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn push_entry(&mut self, entry: ParamEntry) {
        self.entries.push(entry);
    }
}

/// Per-parameter gradient accumulator, aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params
                .entries
                .iter()
                .map(|e| vec![0.0; e.value.len()])
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    /// Mutable access to two distinct gradient slices at once (e.g. a
    /// layer's weight and bias during one backward dispatch).
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a.0, b.0, "pair_mut requires distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.grads.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.grads.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn add_scaled(&mut self, id: ParamId, values: &[f64], scale: f64) {
        let g = &mut self.grads[id.0];
        debug_assert_eq!(g.len(), values.len());
        for (gi, vi) in g.iter_mut().zip(values) {
            *gi += scale * vi;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Handles for one convolution layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Handles for one batch-normalization layer's parameters and running stats.
#[derive(Debug, Clone, Copy)]
pub struct BnLayer {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Registers a convolution layer: He fan-in initialized kernels
/// `[c_out, c_in, k, k, k]` and zero biases.
pub fn register_conv(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> ConvLayer {
    let fan_in = c_in * k * k * k;
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    let weight: Vec<f64> = (0..c_out * fan_in).map(|_| normal.sample(rng)).collect();
    ConvLayer {
        weight: params.register(
            format!("{name}.weight"),
            vec![c_out, c_in, k, k, k],
            weight,
            true,
        ),
        bias: params.register(format!("{name}.bias"), vec![c_out], vec![0.0; c_out], true),
    }
}

/// Registers a 2x2x2 stride-2 transposed-convolution layer with kernels
/// `[c_in, c_out, 2, 2, 2]`.
pub fn register_tconv(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> ConvLayer {
    let fan_in = c_in * 8;
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    let weight: Vec<f64> = (0..c_in * c_out * 8).map(|_| normal.sample(rng)).collect();
    ConvLayer {
        weight: params.register(
            format!("{name}.weight"),
            vec![c_in, c_out, 2, 2, 2],
            weight,
            true,
        ),
        bias: params.register(format!("{name}.bias"), vec![c_out], vec![0.0; c_out], true),
    }
}

/// Registers a batch-norm layer: scale 1, shift 0, running mean 0, running
/// variance 1.
pub fn register_bn(params: &mut ParamSet, name: &str, channels: usize) -> BnLayer {
    BnLayer {
        scale: params.register(
            format!("{name}.scale"),
            vec![channels],
            vec![1.0; channels],
            true,
        ),
        shift: params.register(
            format!("{name}.shift"),
            vec![channels],
            vec![0.0; channels],
            true,
        ),
        running_mean: params.register(
            format!("{name}.running_mean"),
            vec![channels],
            vec![0.0; channels],
            false,
        ),
        running_var: params.register(
            format!("{name}.running_var"),
            vec![channels],
            vec![1.0; channels],
            false,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registration_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = ParamSet::new();
        let conv = register_conv(&mut p, &mut rng, "c1", 2, 3, 3);
        let bn = register_bn(&mut p, "b1", 3);
        assert_eq!(p.name(conv.weight), "c1.weight");
        assert_eq!(p.shape(conv.weight), &[3, 2, 3, 3, 3]);
        assert_eq!(p.name(bn.running_var), "b1.running_var");
        assert!(!p.trainable(bn.running_var));
        assert!(p.trainable(conv.bias));
    }

    #[test]
    fn copy_matching_skips_and_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = ParamSet::new();
        register_conv(&mut a, &mut rng, "shared", 1, 2, 3);
        register_conv(&mut a, &mut rng, "head", 2, 2, 1);
        let mut b = ParamSet::new();
        register_conv(&mut b, &mut rng, "shared", 1, 2, 3);
        register_conv(&mut b, &mut rng, "head", 2, 6, 1);

        let copied = b
            .copy_matching_from(&a, |name| name.starts_with("head"))
            .unwrap();
        assert_eq!(copied, 2); // shared.weight + shared.bias
        let id_a = a.find("shared.weight").unwrap();
        let id_b = b.find("shared.weight").unwrap();
        assert_eq!(a.value_hash(id_a), b.value_hash(id_b));

        // Head shapes differ; copying without the skip must fail.
        let err = b.copy_matching_from(&a, |_| false);
        assert!(err.is_err());
    }
}
