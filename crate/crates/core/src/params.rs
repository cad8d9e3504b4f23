//! Uniform access to the flat tensors of a parameter collection.

pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    /// Flattened copy in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, v| out.extend_from_slice(v));
        out
    }

    /// SHA-256 over the little-endian bytes of every value, in visit order.
    fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        self.visit(&mut |name, v| {
            h.update(name.as_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }
}
