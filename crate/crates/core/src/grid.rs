//! Weighted discrete `L^p` spaces over finite grids.
//!
//! [`MeasureGrid`] holds the measure (one positive quadrature weight per
//! point) together with the space exponent `p`; [`GridFunction`] is a
//! complex-valued element of that space; [`FunctionStack`] is a finite
//! family of such functions, one layer per dyadic index `j` or per
//! quadrature node `t`, optionally carrying `dt/t` layer weights.
//!
//! Mixed norms follow the `X(l^s)` convention: the inner `l^s` (or `L^s`
//! with layer weights) reduction is taken pointwise across layers, the
//! outer norm is the `L^p` norm of the grid.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An exponent in `[1, inf]`, used both for the space exponent `p` and the
/// inner mixed-norm exponent `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_infinite() && value > 0.0 {
            return Ok(Exponent::Infinite);
        }
        if !value.is_finite() || value < 1.0 {
            return Err(Error::InvalidExponent(value));
        }
        Ok(Exponent::Finite(value))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Exponent::Finite(_))
    }

    /// Numeric value; `inf` maps to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.eq_ignore_ascii_case("inf") || text == "∞" {
            return Ok(Exponent::Infinite);
        }
        let v: f64 = text
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse exponent `{text}`")))?;
        Exponent::new(v)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => serializer.serialize_f64(*p),
            Exponent::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let raw = Raw::deserialize(deserializer)?;
        let parsed = match raw {
            Raw::Num(v) => Exponent::new(v),
            Raw::Text(t) => Exponent::parse(&t),
        };
        parsed.map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Finite discretized measure space with an `L^p` norm on top.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureGrid {
    weights: Vec<f64>,
    p: Exponent,
}

impl MeasureGrid {
    pub fn new(weights: Vec<f64>, p: Exponent) -> Result<Arc<Self>> {
        if weights.is_empty() {
            return Err(Error::InvalidGrid("grid must contain at least one point".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidGrid(format!("weight {w} is not strictly positive and finite")));
        }
        Ok(Arc::new(MeasureGrid { weights, p }))
    }

    /// Uniform grid of `n` points carrying total mass `total`.
    pub fn uniform(n: usize, total: f64, p: Exponent) -> Result<Arc<Self>> {
        MeasureGrid::new(vec![total / n as f64; n], p)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    /// Same measure, different space exponent.
    pub fn with_p(&self, p: Exponent) -> Arc<Self> {
        Arc::new(MeasureGrid { weights: self.weights.clone(), p })
    }

    fn compatible(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || **self == **other
    }
}

/// Deterministic pairwise summation; keeps reductions reproducible no matter
/// how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Complex-valued function on a [`MeasureGrid`].
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<MeasureGrid>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Arc<MeasureGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LayerMismatch(format!(
                "function has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!("grid function value {v}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zero(grid: Arc<MeasureGrid>) -> Self {
        let n = grid.len();
        GridFunction { grid, values: vec![Complex64::ZERO; n] }
    }

    pub fn constant(grid: Arc<MeasureGrid>, c: Complex64) -> Self {
        let n = grid.len();
        GridFunction { grid, values: vec![c; n] }
    }

    pub fn coordinate(grid: Arc<MeasureGrid>, i: usize) -> Self {
        let mut values = vec![Complex64::ZERO; grid.len()];
        values[i] = Complex64::ONE;
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.grid.compatible(&other.grid)
    }

    pub fn scale(&self, c: Complex64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch { expected: self.len(), got: other.len() });
        }
        Ok(GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add(&other.scale(-Complex64::ONE))
    }

    /// Weighted `l^2` inner product `sum_i w_i conj(g_i) f_i`.
    pub fn inner(&self, other: &GridFunction) -> Result<Complex64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch { expected: self.len(), got: other.len() });
        }
        let re: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((a, b), w)| w * (a * b.conj()).re)
            .collect();
        let im: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((a, b), w)| w * (a * b.conj()).im)
            .collect();
        Ok(Complex64::new(pairwise_sum(&re), pairwise_sum(&im)))
    }
}

/// `X`-norm of `f`: `(sum_i w_i |f_i|^p)^{1/p}`, exact max for `p = inf`.
pub fn x_norm(f: &GridFunction) -> f64 {
    abs_x_norm(&f.values.iter().map(|v| v.norm()).collect::<Vec<_>>(), f.grid())
}

fn abs_x_norm(abs: &[f64], grid: &MeasureGrid) -> f64 {
    match grid.p() {
        Exponent::Infinite => abs.iter().fold(0.0_f64, |acc, v| acc.max(*v)),
        Exponent::Finite(p) => {
            let terms: Vec<f64> =
                abs.iter().zip(grid.weights()).map(|(v, w)| w * v.powf(p)).collect();
            pairwise_sum(&terms).powf(1.0 / p)
        }
    }
}

/// Finite stack of layers over one grid; an element of `X(l^s_n)` or, with
/// layer weights, of `X(L^s)` over a quadrature grid in `t`.
#[derive(Clone, Debug)]
pub struct FunctionStack {
    grid: Arc<MeasureGrid>,
    layers: Vec<Vec<Complex64>>,
    layer_weights: Option<Vec<f64>>,
}

impl FunctionStack {
    pub fn new(
        grid: Arc<MeasureGrid>,
        layers: Vec<Vec<Complex64>>,
        layer_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        for (j, layer) in layers.iter().enumerate() {
            if layer.len() != grid.len() {
                return Err(Error::LayerMismatch(format!(
                    "layer {j} has {} values on a grid of {} points",
                    layer.len(),
                    grid.len()
                )));
            }
            if let Some(v) = layer.iter().find(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::NonFinite(format!("layer {j} value {v}")));
            }
        }
        if let Some(ws) = &layer_weights {
            if ws.len() != layers.len() {
                return Err(Error::LayerMismatch(format!(
                    "{} layer weights for {} layers",
                    ws.len(),
                    layers.len()
                )));
            }
            if let Some(w) = ws.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
                return Err(Error::InvalidGrid(format!("layer weight {w} is not strictly positive")));
            }
        }
        Ok(FunctionStack { grid, layers, layer_weights })
    }

    pub fn from_functions(functions: &[GridFunction], layer_weights: Option<Vec<f64>>) -> Result<Self> {
        let grid = functions
            .first()
            .ok_or_else(|| Error::LayerMismatch("stack needs at least one layer".into()))?
            .grid()
            .clone();
        let layers = functions.iter().map(|f| f.values().to_vec()).collect();
        FunctionStack::new(grid, layers, layer_weights)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn layers(&self) -> &[Vec<Complex64>] {
        &self.layers
    }

    pub fn layer_weights(&self) -> Option<&[f64]> {
        self.layer_weights.as_deref()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_fn(&self, j: usize) -> GridFunction {
        GridFunction { grid: self.grid.clone(), values: self.layers[j].clone() }
    }
}

/// Mixed norm `|| (sum_j w_j |layer_j|^s)^{1/s} ||_X`; for `s = inf` the
/// pointwise supremum over layers (layer weights ignored).
pub fn mixed_norm(stack: &FunctionStack, s: Exponent) -> Result<f64> {
    if s.value() < 1.0 {
        return Err(Error::InvalidExponent(s.value()));
    }
    let n = stack.grid.len();
    let reduced: Vec<f64> = match s {
        Exponent::Infinite => (0..n)
            .map(|i| stack.layers.iter().fold(0.0_f64, |acc, layer| acc.max(layer[i].norm())))
            .collect(),
        Exponent::Finite(s) => {
            let mut acc = vec![0.0_f64; n];
            let unit = vec![1.0; stack.layers.len()];
            let weights = stack.layer_weights.as_deref().unwrap_or(&unit);
            for (layer, w) in stack.layers.iter().zip(weights) {
                for (a, v) in acc.iter_mut().zip(layer) {
                    *a += w * v.norm().powf(s);
                }
            }
            acc.iter().map(|a| a.powf(1.0 / s)).collect()
        }
    };
    Ok(abs_x_norm(&reduced, &stack.grid))
}

/// JSON document shared by [`GridFunction`] (one layer) and [`FunctionStack`].
#[derive(Serialize, Deserialize)]
pub struct GridDocument {
    pub n: usize,
    pub p: Exponent,
    pub weights: Vec<f64>,
    pub layers: Vec<Vec<(f64, f64)>>,
    pub layer_weights: Option<Vec<f64>>,
}

impl GridDocument {
    pub fn from_function(f: &GridFunction) -> Self {
        GridDocument {
            n: f.len(),
            p: f.grid().p(),
            weights: f.grid().weights().to_vec(),
            layers: vec![f.values().iter().map(|v| (v.re, v.im)).collect()],
            layer_weights: None,
        }
    }

    pub fn from_stack(stack: &FunctionStack) -> Self {
        GridDocument {
            n: stack.grid().len(),
            p: stack.grid().p(),
            weights: stack.grid().weights().to_vec(),
            layers: stack
                .layers()
                .iter()
                .map(|layer| layer.iter().map(|v| (v.re, v.im)).collect())
                .collect(),
            layer_weights: stack.layer_weights().map(|w| w.to_vec()),
        }
    }

    pub fn grid(&self) -> Result<Arc<MeasureGrid>> {
        if self.weights.len() != self.n {
            return Err(Error::InvalidGrid(format!(
                "{} weights for n = {}",
                self.weights.len(),
                self.n
            )));
        }
        MeasureGrid::new(self.weights.clone(), self.p)
    }

    pub fn to_function(&self) -> Result<GridFunction> {
        if self.layers.len() != 1 {
            return Err(Error::LayerMismatch(format!(
                "expected a single layer, document has {}",
                self.layers.len()
            )));
        }
        GridFunction::new(
            self.grid()?,
            self.layers[0].iter().map(|(re, im)| Complex64::new(*re, *im)).collect(),
        )
    }

    pub fn to_stack(&self) -> Result<FunctionStack> {
        FunctionStack::new(
            self.grid()?,
            self.layers
                .iter()
                .map(|layer| layer.iter().map(|(re, im)| Complex64::new(*re, *im)).collect())
                .collect(),
            self.layer_weights.clone(),
        )
    }
}
