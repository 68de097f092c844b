//! Parameter storage and the dense building blocks shared by every network
//! module: linear layers, the three-layer MLP template and the GRU cell.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::array::{Array, Real};
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: Real = 0.01;
pub const LAYER_NORM_EPS: Real = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// One trainable array plus its Adam moment slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub value: Array,
    pub m: Array,
    pub v: Array,
}

/// Named parameters in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    /// Initialize every spec from one seeded stream, visiting names in
    /// lexicographic order.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        if sorted.windows(2).any(|w| w[0].name == w[1].name) {
            return Err(Error::Config("duplicate parameter name".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = BTreeMap::new();
        for spec in sorted {
            let n = spec.rows * spec.cols;
            let data: Vec<Real> = match spec.init {
                Init::Glorot { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n)
                        .map(|_| rng.random_range(-bound..bound) as Real)
                        .collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            entries.insert(
                spec.name.clone(),
                ParamEntry {
                    value: Array::from_parts(spec.rows, spec.cols, data),
                    m: Array::zeros(spec.rows, spec.cols),
                    v: Array::zeros(spec.rows, spec.cols),
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: BTreeMap<String, ParamEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entries(&self) -> &BTreeMap<String, ParamEntry> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Record every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), tape.param(e.value.clone())))
            .collect();
        Bound { vars }
    }

    /// Record every parameter as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), tape.constant(e.value.clone())))
            .collect();
        Bound { vars }
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Gradients for every bound parameter (zeros when unused).
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Array> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, specs: &mut Vec<ParamSpec>) -> Self {
        let weight = format!("{prefix}.w");
        let bias = format!("{prefix}.b");
        specs.push(ParamSpec {
            name: weight.clone(),
            rows: fan_in,
            cols: fan_out,
            init: Init::Glorot { fan_in, fan_out },
        });
        specs.push(ParamSpec {
            name: bias.clone(),
            rows: 1,
            cols: fan_out,
            init: Init::Zeros,
        });
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.get(&self.weight)?, p.get(&self.bias)?)
    }
}

/// Three linear layers; LeakyReLU(0.01) after the first two and an optional
/// layer normalization after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
    pub norm: Option<(String, String)>,
}

impl Mlp3 {
    pub fn new(
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        layer_norm: bool,
        specs: &mut Vec<ParamSpec>,
    ) -> Self {
        let layers = [
            Linear::new(&format!("{prefix}.l1"), input, hidden, specs),
            Linear::new(&format!("{prefix}.l2"), hidden, hidden, specs),
            Linear::new(&format!("{prefix}.l3"), hidden, output, specs),
        ];
        let norm = layer_norm.then(|| {
            let g = format!("{prefix}.ln.gain");
            let b = format!("{prefix}.ln.bias");
            specs.push(ParamSpec {
                name: g.clone(),
                rows: 1,
                cols: output,
                init: Init::Ones,
            });
            specs.push(ParamSpec {
                name: b.clone(),
                rows: 1,
                cols: output,
                init: Init::Zeros,
            });
            (g, b)
        });
        Self { layers, norm }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[2].fan_out
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        mlp3(tape, p, self, x)
    }
}

/// `LayerNorm(L3(LReLU(L2(LReLU(L1(x))))))`.
pub fn mlp3(tape: &mut Tape, p: &Bound, mlp: &Mlp3, x: Var) -> Result<Var> {
    let width = tape.value(x).cols();
    if width != mlp.input_width() {
        return Err(Error::shape(
            "mlp3",
            format!("input width {width}, expected {}", mlp.input_width()),
        ));
    }
    let h = mlp.layers[0].forward(tape, p, x)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let h = mlp.layers[1].forward(tape, p, h)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let out = mlp.layers[2].forward(tape, p, h)?;
    match &mlp.norm {
        Some((g, b)) => tape.layer_norm(out, p.get(g)?, p.get(b)?, LAYER_NORM_EPS),
        None => Ok(out),
    }
}

/// Gated recurrent unit with fused parameter blocks.
///
/// `w_x` is `d_in x 3d` with column blocks (update z, reset r, candidate),
/// `u_zr` is `d x 2d`, `u_c` is `d x d` and `b` holds the three biases:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_x: String,
    pub u_zr: String,
    pub u_c: String,
    pub b: String,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(prefix: &str, d_in: usize, d_h: usize, specs: &mut Vec<ParamSpec>) -> Self {
        let cell = Self {
            w_x: format!("{prefix}.w_x"),
            u_zr: format!("{prefix}.u_zr"),
            u_c: format!("{prefix}.u_c"),
            b: format!("{prefix}.b"),
            d_in,
            d_h,
        };
        // Gate blocks are initialized as if they were separate d_in x d_h
        // (or d_h x d_h) matrices.
        specs.push(ParamSpec {
            name: cell.w_x.clone(),
            rows: d_in,
            cols: 3 * d_h,
            init: Init::Glorot {
                fan_in: d_in,
                fan_out: d_h,
            },
        });
        specs.push(ParamSpec {
            name: cell.u_zr.clone(),
            rows: d_h,
            cols: 2 * d_h,
            init: Init::Glorot {
                fan_in: d_h,
                fan_out: d_h,
            },
        });
        specs.push(ParamSpec {
            name: cell.u_c.clone(),
            rows: d_h,
            cols: d_h,
            init: Init::Glorot {
                fan_in: d_h,
                fan_out: d_h,
            },
        });
        specs.push(ParamSpec {
            name: cell.b.clone(),
            rows: 1,
            cols: 3 * d_h,
            init: Init::Zeros,
        });
        cell
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var> {
        gru_cell(tape, p, self, x, h)
    }
}

/// One GRU update applied row-wise; see [`GruCell`].
pub fn gru_cell(tape: &mut Tape, p: &Bound, cell: &GruCell, x: Var, h: Var) -> Result<Var> {
    let d = cell.d_h;
    let (xv, hv) = (tape.value(x), tape.value(h));
    if xv.cols() != cell.d_in || hv.cols() != d || xv.rows() != hv.rows() {
        return Err(Error::shape(
            "gru_cell",
            format!(
                "x {}x{}, h {}x{}, expected widths {} and {d}",
                xv.rows(),
                xv.cols(),
                hv.rows(),
                hv.cols(),
                cell.d_in
            ),
        ));
    }
    let xw = tape.linear(x, p.get(&cell.w_x)?, p.get(&cell.b)?)?;
    let hu = tape.matmul(h, p.get(&cell.u_zr)?)?;
    let xw_zr = tape.slice_cols(xw, 0, 2 * d)?;
    let zr_pre = tape.add(xw_zr, hu)?;
    let zr = tape.sigmoid(zr_pre)?;
    let z = tape.slice_cols(zr, 0, d)?;
    let r = tape.slice_cols(zr, d, 2 * d)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.get(&cell.u_c)?)?;
    let xw_c = tape.slice_cols(xw, 2 * d, 3 * d)?;
    let c_pre = tape.add(xw_c, rhu)?;
    let cand = tape.tanh(c_pre)?;
    // h + z * (h~ - h)
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}
