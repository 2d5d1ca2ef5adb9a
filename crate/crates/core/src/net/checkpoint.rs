//! Line-oriented text checkpoints. Every value is written with 17
//! significant digits, which round-trips any finite `f64` bit-exactly.
//!
//! ```text
//! oodrecover-checkpoint
//! schema_version 1
//! meta env cartpole
//! tensor policy.0.weight 4 256
//! <values, whitespace separated>
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::mlp::Mlp;
use super::NetError;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "oodrecover-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(rows * cols, data.len());
        self.tensors.insert(name.to_string(), Tensor { rows, cols, data });
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, NetError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NetError::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Stores an MLP under `prefix` as `prefix.dims` plus one weight and
    /// bias tensor per layer.
    pub fn put_mlp(&mut self, prefix: &str, net: &Mlp) {
        let dims: Vec<f64> = net.dims().iter().map(|&d| d as f64).collect();
        self.insert(&format!("{prefix}.dims"), 1, dims.len(), dims);
        for l in 0..net.num_layers() {
            let (din, dout) = (net.dims()[l], net.dims()[l + 1]);
            self.insert(&format!("{prefix}.{l}.weight"), din, dout, net.weights(l).to_vec());
            self.insert(&format!("{prefix}.{l}.bias"), 1, dout, net.biases(l).to_vec());
        }
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<Mlp, NetError> {
        let dims: Vec<usize> = self
            .tensor(&format!("{prefix}.dims"))?
            .data
            .iter()
            .map(|&d| d as usize)
            .collect();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len().saturating_sub(1) {
            weights.push(self.tensor(&format!("{prefix}.{l}.weight"))?.data.clone());
            biases.push(self.tensor(&format!("{prefix}.{l}.bias"))?.data.clone());
        }
        Mlp::from_parts(dims, weights, biases)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "schema_version {SCHEMA_VERSION}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows, t.cols);
            for chunk in t.data.chunks(8) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NetError> {
        let bad = |line: usize, msg: &str| NetError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad(1, "not a checkpoint file")),
        }
        match lines.next() {
            Some((n, l)) => {
                let v: u32 = l
                    .strip_prefix("schema_version ")
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| bad(n, "expected schema_version"))?;
                if v != SCHEMA_VERSION {
                    return Err(bad(n, &format!("unsupported schema_version {v}")));
                }
            }
            None => return Err(bad(2, "truncated")),
        }
        let mut ck = Checkpoint::new();
        let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
        let mut finished = false;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            if finished {
                return Err(bad(n, "content after end"));
            }
            let is_header = line.starts_with("tensor ") || line.starts_with("meta ") || line == "end";
            if is_header {
                if let Some((name, r, c, data)) = pending.take() {
                    if data.len() != r * c {
                        return Err(bad(n, &format!("tensor `{name}` has {} of {} values", data.len(), r * c)));
                    }
                    ck.insert(&name, r, c, data);
                }
            }
            if line == "end" {
                finished = true;
            } else if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(n, "tensor header needs name, rows, cols"));
                }
                let r = parts[1].parse().map_err(|_| bad(n, "bad row count"))?;
                let c = parts[2].parse().map_err(|_| bad(n, "bad column count"))?;
                pending = Some((parts[0].to_string(), r, c, Vec::with_capacity(r * c)));
            } else if let Some((_, _, _, data)) = pending.as_mut() {
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| bad(n, &format!("bad number `{tok}`")))?;
                    if !v.is_finite() {
                        return Err(bad(n, "non-finite value"));
                    }
                    data.push(v);
                }
            } else {
                return Err(bad(n, "values outside a tensor block"));
            }
        }
        if !finished {
            return Err(NetError::Checkpoint("missing `end` marker".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_text()).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Mlp::new(&[4, 16, 16, 2], &mut rng);
        let mut ck = Checkpoint::new();
        ck.set_meta("env", "cartpole");
        ck.put_mlp("policy", &net);
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get_mlp("policy").unwrap(), net);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        assert!(Checkpoint::from_text("oodrecover-checkpoint\nschema_version 9\nend\n").is_err());
        assert!(Checkpoint::from_text("oodrecover-checkpoint\nschema_version 1\ntensor a 1 2\n1.0\nend\n").is_err());
        assert!(Checkpoint::from_text("oodrecover-checkpoint\nschema_version 1\n").is_err());
        assert!(Checkpoint::from_text("garbage").is_err());
    }

    proptest! {
        #[test]
        fn finite_values_round_trip(values in prop::collection::vec(
            any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut ck = Checkpoint::new();
            ck.insert("t", 1, values.len(), values.clone());
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            let got = &back.tensor("t").unwrap().data;
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
