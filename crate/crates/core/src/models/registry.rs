use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spectral::spectral_block_shape;
use crate::tensor::{Graph, Real, Tensor, Var};

/// How a parameter tensor is filled at build time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`.
    KaimingUniform { fan_in: usize },
    /// `scale · U[0, 1)`, used for complex spectral weights.
    Uniform01 { scale: f64 },
    Constant(f64),
    /// AdaGN head bias `[2c]`: unit scales followed by zero shifts.
    ScaleShift,
}

/// One entry of a parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDef {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of parameters an architecture declares. Counting parameters
/// only needs the layout, so even the largest configurations are sized
/// without allocating them.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    defs: Vec<ParamDef>,
}

impl Layout {
    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn count(&self) -> usize {
        self.defs.iter().map(ParamDef::numel).sum()
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        debug_assert!(!self.defs.iter().any(|d| d.name == name), "duplicate parameter {name}");
        self.defs.push(ParamDef { name, shape, init });
    }

    /// `k × k` convolution with bias; `zero` starts both at zero.
    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let init = if zero { Init::Constant(0.0) } else { Init::KaimingUniform { fan_in: cin * k * k } };
        self.push(format!("{name}.w"), vec![cout, cin, k, k], init);
        self.push(format!("{name}.b"), vec![cout], Init::Constant(0.0));
    }

    /// Stride-2 transposed convolution with a 2 × 2 kernel.
    pub(crate) fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize) {
        self.push(format!("{name}.w"), vec![cin, cout, 2, 2], Init::KaimingUniform { fan_in: cout * 4 });
        self.push(format!("{name}.b"), vec![cout], Init::Constant(0.0));
    }

    pub(crate) fn norm(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), vec![c], Init::Constant(1.0));
        self.push(format!("{name}.beta"), vec![c], Init::Constant(0.0));
    }

    /// Dense layer `x @ w + b` with `w: [input, output]`.
    pub(crate) fn linear(&mut self, name: &str, input: usize, output: usize) {
        self.push(format!("{name}.w"), vec![input, output], Init::KaimingUniform { fan_in: input });
        self.push(format!("{name}.b"), vec![output], Init::Constant(0.0));
    }

    pub(crate) fn spectral(&mut self, name: &str, cin: usize, cout: usize, modes: [usize; 2]) {
        let shape = spectral_block_shape(cin, cout, modes[0], modes[1]).to_vec();
        let init = Init::Uniform01 { scale: 1.0 / (cin * cout) as f64 };
        self.push(format!("{name}.pos"), shape.clone(), init);
        self.push(format!("{name}.neg"), shape, init);
    }

    /// Draws every tensor in layout order from one seeded stream.
    pub(crate) fn materialize<T: Real>(&self, seed: u64) -> Vec<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.defs
            .iter()
            .map(|d| match d.init {
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&d.shape, |_| T::of(rng.random_range(-bound..bound)))
                }
                Init::Uniform01 { scale } => Tensor::from_fn(&d.shape, |_| T::of(scale * rng.random::<f64>())),
                Init::Constant(v) => Tensor::full(&d.shape, T::of(v)),
                Init::ScaleShift => {
                    let half = d.numel() / 2;
                    Tensor::from_fn(&d.shape, |i| if i < half { T::one() } else { T::zero() })
                }
            })
            .collect()
    }
}

/// Name → position lookup shared by a model and the graphs it is attached to.
pub(crate) type Index = Arc<HashMap<String, usize>>;

pub(crate) fn index_of(layout: &Layout) -> Index {
    Arc::new(layout.defs.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect())
}

/// A model's parameters as leaves of one graph.
pub struct Params<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
    index: Index,
}

impl<'g, T: Real> Params<'g, T> {
    pub(crate) fn new(graph: &'g Graph<T>, tensors: &[Tensor<T>], index: Index, trainable: bool) -> Self {
        let vars = tensors.iter().map(|t| graph.leaf(t.clone(), trainable)).collect();
        Params { vars, index }
    }

    #[cfg(test)]
    pub(crate) fn from_vars(vars: Vec<Var<'g, T>>, index: Index) -> Self {
        Params { vars, index }
    }

    /// Parameter by registry name. Architectures only ask for names their own
    /// layout declared, so a miss is a wiring bug.
    pub fn get(&self, name: &str) -> Var<'g, T> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not part of the layout"),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Leaves in registry order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}
