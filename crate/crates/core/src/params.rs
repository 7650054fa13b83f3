//! Named parameter storage, tape binding and the checkpoint format.
//!
//! Checkpoint layout: a plain-text header
//!
//! ```text
//! tamperloc-checkpoint 1
//! params <count>
//! <name> <d0>x<d1>x<d2>x<d3>
//! ...
//! end
//! ```
//!
//! followed by every parameter's values as little-endian `f64`, in header order.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

const MAGIC: &str = "tamperloc-checkpoint 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether decoupled weight decay applies (false for norms, biases, layer scales).
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Truncated normal (resampled beyond two standard deviations).
pub fn trunc_normal(shape: Shape, std: f64, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = loop {
            let z = rng.normal();
            if z.abs() <= 2.0 {
                break z * std;
            }
        };
    }
    t
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// All parameter values flattened in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = format!("{MAGIC}\nparams {}\n", self.params.len());
        for p in &self.params {
            let [a, b, c, d] = p.value.shape().dims();
            header.push_str(&format!("{} {a}x{b}x{c}x{d}\n", p.name));
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.num_scalars() * 8);
        for p in &self.params {
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    /// Loads values into this store; names and shapes must match exactly.
    pub fn read_checkpoint<R: BufRead>(&mut self, mut r: R) -> Result<()> {
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("truncated header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != MAGIC {
            return Err(Error::Checkpoint("missing checkpoint magic line".into()));
        }
        let count_line = next_line(&mut r)?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad count line {count_line:?}")))?;
        if count != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {count}",
                self.params.len()
            )));
        }
        for p in &self.params {
            let entry = next_line(&mut r)?;
            let expected_shape = p.value.shape().dims().map(|d| d.to_string()).join("x");
            let expected = format!("{} {expected_shape}", p.name);
            if entry != expected {
                return Err(Error::Checkpoint(format!(
                    "expected `{expected}`, found `{entry}`"
                )));
            }
        }
        if next_line(&mut r)? != "end" {
            return Err(Error::Checkpoint("missing header terminator".into()));
        }
        let mut bytes = [0u8; 8];
        for p in &mut self.params {
            for v in p.value.data_mut() {
                r.read_exact(&mut bytes)
                    .map_err(|_| Error::Checkpoint(format!("truncated data for {}", p.name)))?;
                *v = f64::from_le_bytes(bytes);
            }
        }
        if r.read(&mut bytes)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        self.read_checkpoint(std::io::BufReader::new(file))
    }
}

/// Lazily places parameters on a tape so that gradients can be read back
/// per parameter after a backward pass.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    /// Binds every parameter to an existing graph leaf, in store order.
    pub fn from_vars(store: &'a ParamStore, vars: &[Var]) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::Dimension {
                op: "binder",
                axis: "params",
                expected: store.len(),
                found: vars.len(),
            });
        }
        Ok(Self {
            store,
            vars: vars.iter().copied().map(Some).collect(),
        })
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| g.input(self.store.get(id).value.clone()))
    }

    /// Per-parameter gradients (zeros for parameters the pass never touched).
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .zip(self.store.iter())
            .map(|(v, p)| {
                v.and_then(|v| grads.take(v))
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect()
    }
}
