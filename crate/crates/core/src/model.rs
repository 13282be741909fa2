//! The two-branch factorization model.
//!
//! Each branch is a stack of fully connected layers mapping an observation
//! vector (a row over the seen columns, or a column over the seen rows) to a
//! latent factor of dimension `d`. The prediction for a pair is the cosine
//! similarity of the two factors, a value in `[-1, 1]` in the scaled rating
//! domain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::data::{Area, Features, Scaling};
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Elementwise, Tape, Var, NORM_EPS};
use crate::tensor::{SparseRows, Tensor};

/// Nonlinearity applied after every hidden layer. The latent layer is
/// always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn elementwise(self) -> Option<Elementwise> {
        match self {
            Activation::Selu => Some(Elementwise::Selu),
            Activation::Tanh => Some(Elementwise::Tanh),
            Activation::Relu => Some(Elementwise::Relu),
            Activation::Linear => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Selu => "selu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "selu" => Ok(Activation::Selu),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl BranchConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, latent_dim: usize, activation: Activation) -> Self {
        BranchConfig { input_dim, hidden_dims, latent_dim, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("all layer widths must be at least 1: {:?}", self)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, input first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.latent_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One fully connected layer, `x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, out) = weight.dims2().ok_or_else(|| Error::dim("dense", "weight must be rank 2"))?;
        if bias.shape() != [out] {
            return Err(Error::dim("dense", format!("bias {:?} for {} outputs", bias.shape(), out)));
        }
        Ok(Dense { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    config: BranchConfig,
    layers: Vec<Dense>,
}

impl Branch {
    pub fn from_parts(config: BranchConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::dim("branch", format!("{} layers for config with {}", layers.len(), dims.len())));
        }
        for (k, ((fan_in, fan_out), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != [*fan_in, *fan_out] {
                return Err(Error::dim(
                    "branch",
                    format!("layer {} weight {:?}, expected [{}, {}]", k, layer.weight.shape(), fan_in, fan_out),
                ));
            }
        }
        Ok(Branch { config, layers })
    }

    /// LeCun-uniform weights `U(-sqrt(3 / fan_in), sqrt(3 / fan_in))`, zero
    /// biases.
    fn init(config: BranchConfig, rng: &mut rng::Rng) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = libm::sqrt(3.0 / fan_in as f64);
                let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Dense { weight: Tensor::from_parts(vec![fan_in, fan_out], w), bias: Tensor::zeros(vec![fan_out]) }
            })
            .collect();
        Ok(Branch { config, layers })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundBranch {
        let mut leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let layers = self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        BoundBranch { layers, activation: self.config.activation, input_dim: self.config.input_dim }
    }
}

/// A branch whose parameters have been placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundBranch {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    input_dim: usize,
}

impl BoundBranch {
    /// Latent factors for a batch of observation vectors, one row each.
    pub fn embed(&self, tape: &mut Tape, input: SparseRows) -> Result<Var> {
        if input.cols() != self.input_dim {
            return Err(Error::dim("embed", format!("input length {} vs branch input {}", input.cols(), self.input_dim)));
        }
        let last = self.layers.len() - 1;
        let mut h = None;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = match h {
                None => tape.sparse_matmul(input.clone(), w)?,
                Some(prev) => tape.matmul(prev, w)?,
            };
            let mut out = tape.add_bias(z, b)?;
            if k < last {
                if let Some(f) = self.activation.elementwise() {
                    out = tape.map(out, f)?;
                }
            }
            h = Some(out);
        }
        Ok(h.expect("a branch has at least one layer"))
    }
}

/// Model parameters bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub row: BoundBranch,
    pub col: BoundBranch,
}

impl BoundModel {
    /// All parameter variables, in [`DmfModel::parameters`] order.
    pub fn params(&self) -> Vec<Var> {
        self.row.layers.iter().chain(&self.col.layers).flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Weight matrices only; biases are not regularized.
    pub fn weights(&self) -> Vec<Var> {
        self.row.layers.iter().chain(&self.col.layers).map(|&(w, _)| w).collect()
    }

    /// Predictions for matched batches of row and column inputs.
    pub fn predict(&self, tape: &mut Tape, rows: SparseRows, cols: SparseRows) -> Result<Var> {
        if rows.rows() != cols.rows() {
            return Err(Error::dim("predict", format!("{} row inputs vs {} column inputs", rows.rows(), cols.rows())));
        }
        let u = self.row.embed(tape, rows)?;
        let v = self.col.embed(tape, cols)?;
        cosine_head(tape, u, v)
    }
}

/// Row-wise cosine similarity with norms floored at [`NORM_EPS`].
pub fn cosine_head(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    let dot = tape.row_dot(u, v)?;
    let nu = tape.row_norm(u)?;
    let nu = tape.clamp_min(nu, NORM_EPS)?;
    let nv = tape.row_norm(v)?;
    let nv = tape.clamp_min(nv, NORM_EPS)?;
    let den = tape.mul(nu, nv)?;
    tape.div(dot, den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmfModel {
    row: Branch,
    col: Branch,
    scaling: Scaling,
}

impl DmfModel {
    pub fn init(row: BranchConfig, col: BranchConfig, scaling: Scaling, seed: u64) -> Result<Self> {
        if row.latent_dim != col.latent_dim {
            return Err(Error::Config(format!(
                "latent dimensions differ: row branch {} vs column branch {}",
                row.latent_dim, col.latent_dim
            )));
        }
        let mut rng = rng::rng(seed);
        let row = Branch::init(row, &mut rng)?;
        let col = Branch::init(col, &mut rng)?;
        Ok(DmfModel { row, col, scaling })
    }

    pub fn from_parts(row: Branch, col: Branch, scaling: Scaling) -> Result<Self> {
        if row.config.latent_dim != col.config.latent_dim {
            return Err(Error::Config("latent dimensions differ".into()));
        }
        Ok(DmfModel { row, col, scaling })
    }

    pub fn row_branch(&self) -> &Branch {
        &self.row
    }

    pub fn col_branch(&self) -> &Branch {
        &self.col
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn latent_dim(&self) -> usize {
        self.row.config.latent_dim
    }

    /// Row-branch input length (number of seen columns).
    pub fn row_input_dim(&self) -> usize {
        self.row.config.input_dim
    }

    /// Column-branch input length (number of seen rows).
    pub fn col_input_dim(&self) -> usize {
        self.col.config.input_dim
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel { row: self.row.bind(tape, trainable), col: self.col.bind(tape, trainable) }
    }

    /// Weight then bias of every layer, row branch first.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.row.layers.iter().chain(&self.col.layers).flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.row
            .layers
            .iter_mut()
            .chain(self.col.layers.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_kinds(&self) -> Vec<ParamKind> {
        let n = self.row.layers.len() + self.col.layers.len();
        (0..n).flat_map(|_| [ParamKind::Weight, ParamKind::Bias]).collect()
    }

    /// Sum of squared entries of all weight matrices.
    pub fn weight_norm_sq(&self) -> f64 {
        self.row.layers.iter().chain(&self.col.layers).map(|l| l.weight.sum_squares()).sum()
    }

    /// Checks that the model fits inputs built by `features`.
    pub fn check_features(&self, features: &Features) -> Result<()> {
        if self.row_input_dim() != features.row_dim() || self.col_input_dim() != features.col_dim() {
            return Err(Error::dim(
                "model",
                format!(
                    "model expects {} seen columns and {} seen rows, data has {} and {}",
                    self.row_input_dim(),
                    self.col_input_dim(),
                    features.row_dim(),
                    features.col_dim()
                ),
            ));
        }
        Ok(())
    }

    fn embed_with(&self, branch: &Branch, x: &Tensor, what: &'static str) -> Result<Tensor> {
        if x.rank() != 1 || x.len() != branch.config.input_dim {
            return Err(Error::dim(what, format!("input {:?} vs branch input {}", x.shape(), branch.config.input_dim)));
        }
        let mut tape = Tape::new();
        let bound = branch.bind(&mut tape, false);
        let u = bound.embed(&mut tape, SparseRows::from_dense(x))?;
        Ok(tape.value(u).clone().into_vector())
    }

    /// Latent factor `U_i` of a row vector.
    pub fn embed_row(&self, x: &Tensor) -> Result<Tensor> {
        self.embed_with(&self.row, x, "embed_row")
    }

    /// Latent factor `V_j` of a column vector.
    pub fn embed_col(&self, y: &Tensor) -> Result<Tensor> {
        self.embed_with(&self.col, y, "embed_col")
    }

    /// Scaled-domain prediction for one row vector and one column vector.
    pub fn predict(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        for (t, dim, what) in [(x, self.row_input_dim(), "row"), (y, self.col_input_dim(), "column")] {
            if t.rank() != 1 || t.len() != dim {
                return Err(Error::dim("predict", format!("{} input {:?} vs expected {}", what, t.shape(), dim)));
            }
        }
        let out = self.predict_batch(SparseRows::from_dense(x), SparseRows::from_dense(y))?;
        Ok(out[0])
    }

    /// Scaled-domain predictions for matched batches of sparse inputs.
    pub fn predict_batch(&self, rows: SparseRows, cols: SparseRows) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = bound.predict(&mut tape, rows, cols)?;
        Ok(tape.value(out).values().to_vec())
    }

    /// Predictions for `(row, col)` pairs whose inputs come from `features`.
    pub fn predict_pairs(&self, features: &Features, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(512) {
            let rows: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            let cols: Vec<usize> = chunk.iter().map(|p| p.1).collect();
            out.extend(self.predict_batch(features.row_batch(&rows)?, features.col_batch(&cols)?)?);
        }
        Ok(out)
    }

    /// Prediction for a pair known to lie in `area`.
    ///
    /// Inputs for unseen rows are taken over the seen columns and inputs for
    /// unseen columns over the seen rows, so the trained model is used as is.
    pub fn predict_area(&self, features: &Features, area: Area, row: usize, col: usize) -> Result<f64> {
        let actual = Area::classify(features.is_row_seen(row), features.is_col_seen(col));
        if actual != area {
            return Err(Error::Contract(format!(
                "pair ({}, {}) lies in area {}, not {}",
                row,
                col,
                actual.label(),
                area.label()
            )));
        }
        self.check_features(features)?;
        self.predict(&features.row_vector(row)?, &features.col_vector(col)?)
    }

    pub fn describe(&self) -> String {
        format!(
            "rows {} -> {:?} -> {}, cols {} -> {:?} -> {}, {}",
            self.row.config.input_dim,
            self.row.config.hidden_dims,
            self.row.config.latent_dim,
            self.col.config.input_dim,
            self.col.config.hidden_dims,
            self.col.config.latent_dim,
            self.row.config.activation.name()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AreaSplit, Rating, RatingMatrix};

    fn scaling() -> Scaling {
        Scaling::new(1.0, 5.0).unwrap()
    }

    fn cfg(input: usize, hidden: &[usize], d: usize) -> BranchConfig {
        BranchConfig::new(input, hidden.to_vec(), d, Activation::Selu)
    }

    fn identity_model(n: usize) -> DmfModel {
        let mut eye = vec![0.0; n * n];
        for k in 0..n {
            eye[k * n + k] = 1.0;
        }
        let layer = || Dense::new(Tensor::matrix(n, n, eye.clone()).unwrap(), Tensor::zeros(vec![n])).unwrap();
        let row = Branch::from_parts(cfg(n, &[], n), vec![layer()]).unwrap();
        let col = Branch::from_parts(cfg(n, &[], n), vec![layer()]).unwrap();
        DmfModel::from_parts(row, col, scaling()).unwrap()
    }

    #[test]
    fn init_checks_latent_dims() {
        assert!(DmfModel::init(cfg(5, &[4], 8), cfg(6, &[4], 8), scaling(), 1).is_ok());
        assert!(matches!(DmfModel::init(cfg(5, &[4], 8), cfg(6, &[4], 16), scaling(), 1), Err(Error::Config(_))));
        assert!(DmfModel::init(cfg(5, &[0], 8), cfg(6, &[4], 8), scaling(), 1).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = DmfModel::init(cfg(5, &[4, 3], 2), cfg(6, &[4], 2), scaling(), 9).unwrap();
        let b = DmfModel::init(cfg(5, &[4, 3], 2), cfg(6, &[4], 2), scaling(), 9).unwrap();
        let c = DmfModel::init(cfg(5, &[4, 3], 2), cfg(6, &[4], 2), scaling(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_network() {
        let m = identity_model(2);
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert_eq!(m.embed_row(&x).unwrap().values(), &[1.0, 2.0]);
        assert!(libm::fabs(m.predict(&x, &x).unwrap() - 1.0) < 1e-12);
        let y = Tensor::vector(vec![-2.0, 1.0]).unwrap();
        assert_eq!(m.predict(&x, &y).unwrap(), 0.0);
        let z = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert_eq!(m.embed_row(&z).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(m.predict(&z, &x).unwrap(), 0.0);
    }

    #[test]
    fn input_length_is_checked() {
        let m = DmfModel::init(cfg(5, &[4], 3), cfg(6, &[4], 3), scaling(), 1).unwrap();
        let bad = Tensor::vector(vec![0.5; 4]).unwrap();
        assert!(matches!(m.embed_row(&bad), Err(Error::Dimension { .. })));
        assert!(matches!(
            m.predict(&Tensor::vector(vec![0.5; 5]).unwrap(), &bad),
            Err(Error::Dimension { .. })
        ));
    }

    /// Plain re-computation of a branch, layer by layer.
    fn forward_oracle(branch: &Branch, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = branch.layers().len() - 1;
        for (k, l) in branch.layers().iter().enumerate() {
            let (fan_in, fan_out) = l.weight().dims2().unwrap();
            let mut out = l.bias().values().to_vec();
            for o in 0..fan_out {
                for i in 0..fan_in {
                    out[o] += h[i] * l.weight().values()[i * fan_out + o];
                }
            }
            if k < last {
                for v in out.iter_mut() {
                    *v = Elementwise::Selu.apply(*v);
                }
            }
            h = out;
        }
        h
    }

    #[test]
    fn forward_matches_oracle() {
        let m = DmfModel::init(cfg(7, &[5, 4], 3), cfg(6, &[4], 3), scaling(), 3).unwrap();
        let x: Vec<f64> = (0..7).map(|k| if k % 3 == 0 { 0.0 } else { libm::sin(k as f64) }).collect();
        let y: Vec<f64> = (0..6).map(|k| libm::cos(k as f64 * 0.9)).collect();
        let u = forward_oracle(m.row_branch(), &x);
        let v = forward_oracle(m.col_branch(), &y);
        let got = m.embed_row(&Tensor::vector(x.clone()).unwrap()).unwrap();
        for (a, b) in got.values().iter().zip(&u) {
            assert!(libm::fabs(a - b) < 1e-12);
        }
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu = libm::sqrt(u.iter().map(|a| a * a).sum());
        let nv = libm::sqrt(v.iter().map(|a| a * a).sum());
        let p = m.predict(&Tensor::vector(x).unwrap(), &Tensor::vector(y).unwrap()).unwrap();
        assert!(libm::fabs(p - dot / (nu * nv)) < 1e-12);
    }

    #[test]
    fn head_is_scale_invariant() {
        let u = [0.3, -1.2, 0.7];
        let v = [2.0, 0.1, -0.4];
        let head = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let uu = tape.constant(Tensor::matrix(1, 3, u.iter().map(|x| x * a).collect()).unwrap());
            let vv = tape.constant(Tensor::matrix(1, 3, v.iter().map(|x| x * b).collect()).unwrap());
            let out = cosine_head(&mut tape, uu, vv).unwrap();
            tape.value(out).values()[0]
        };
        let base = head(1.0, 1.0);
        for (a, b) in [(2.0, 3.0), (0.01, 50.0), (1e3, 1e-3)] {
            assert!(libm::fabs(head(a, b) - base) < 1e-12);
        }
    }

    #[test]
    fn area_path_matches_direct_prediction() {
        let entries: Vec<Rating> = (0..4)
            .flat_map(|i| (0..3).map(move |j| Rating { row: i, col: j, value: 1.0 + ((i * j) % 5) as f64 }))
            .collect();
        let m = RatingMatrix::new(4, 3, entries, scaling()).unwrap().scale().unwrap();
        let areas = AreaSplit::from_seen(&m, vec![true, true, false, true], vec![true, false, true]);
        let visible: Vec<usize> = (0..m.len()).collect();
        let f = Features::new(&m, &visible, &areas).unwrap();
        let model = DmfModel::init(cfg(2, &[3], 2), cfg(3, &[3], 2), scaling(), 5).unwrap();
        let direct = model.predict(&f.row_vector(0).unwrap(), &f.col_vector(0).unwrap()).unwrap();
        assert_eq!(model.predict_area(&f, Area::I, 0, 0).unwrap(), direct);
        assert!(model.predict_area(&f, Area::II, 0, 0).is_err());
        let iv = model.predict_area(&f, Area::IV, 2, 1).unwrap();
        assert!(iv.is_finite() && (-1.0..=1.0).contains(&iv));
        let batch = model.predict_pairs(&f, &[(0, 0), (2, 1)]).unwrap();
        assert_eq!(batch, vec![direct, iv]);
    }
}
