//! Dense softmax classifiers: multinomial logistic regression and a small
//! MLP family, with mean cross-entropy loss and hand-written backprop.
//!
//! Parameters are stored flat, layer by layer. Each layer contributes its
//! weight matrix (row-major, `out × in`) followed by its `out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::params::ParameterVector;
use crate::seed;

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_len("matrix row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no rows worth visiting
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// New matrix made of the given rows, in order.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Borrowed view of labelled samples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a Matrix,
    labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a Matrix, labels: &'a [usize]) -> Result<Self> {
        ensure_len("batch labels", features.rows(), labels.len())?;
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &'a Matrix {
        self.features
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of a dense softmax classifier.
///
/// `layer_widths` runs from the input dimension to the class count. Hidden
/// layers use `activation`; the last layer produces logits fed to softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    kind: ModelKind,
    layer_widths: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    offset: usize,
    inputs: usize,
    outputs: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(invalid(
                "layer_widths needs at least an input and an output width",
            ));
        }
        if layer_widths.contains(&0) {
            return Err(invalid("layer widths must all be >= 1"));
        }
        if kind == ModelKind::LogisticRegression && layer_widths.len() != 2 {
            return Err(invalid("logistic regression has no hidden layers"));
        }
        Ok(Self {
            kind,
            layer_widths,
            activation,
        })
    }

    pub fn logistic(inputs: usize, classes: usize) -> Result<Self> {
        Self::new(
            ModelKind::LogisticRegression,
            vec![inputs, classes],
            Activation::default(),
        )
    }

    pub fn mlp(
        inputs: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(inputs);
        widths.extend_from_slice(hidden);
        widths.push(classes);
        Self::new(ModelKind::Mlp, widths, activation)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    offset,
                    inputs: w[0],
                    outputs: w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParameterVector {
        let mut rng = seed::rng(seed);
        let mut values = Vec::with_capacity(self.param_count());
        for layer in self.layers() {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for _ in 0..layer.inputs * layer.outputs {
                values.push(rng.random_range(-limit..=limit));
            }
            values.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        ParameterVector::new(values).expect("uniform draws are finite")
    }

    fn check(&self, params: &ParameterVector, features: &Matrix) -> Result<()> {
        ensure_len("parameter count", self.param_count(), params.len())?;
        ensure_len("feature columns", self.input_width(), features.cols())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let classes = self.class_count();
        match labels.iter().position(|&y| y >= classes) {
            Some(i) => Err(invalid(format!(
                "label {} at sample {i} is outside [0, {classes})",
                labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// Runs one sample through the network. `acts[0]` is the input,
    /// `acts[l]` the output of layer `l` (post-activation for hidden layers),
    /// and the last entry holds the logits.
    fn forward_sample(
        &self,
        layers: &[LayerShape],
        w: &[f64],
        x: &[f64],
        acts: &mut Vec<Vec<f64>>,
    ) {
        acts.clear();
        acts.push(x.to_vec());
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let input = &acts[l];
            let weights = &w[layer.offset..layer.bias_offset()];
            let biases = &w[layer.bias_offset()..layer.bias_offset() + layer.outputs];
            let mut out: Vec<f64> = weights
                .chunks_exact(layer.inputs)
                .zip(biases)
                .map(|(row, b)| b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            if l != last {
                for z in &mut out {
                    *z = self.activation.apply(*z);
                }
            }
            acts.push(out);
        }
    }

    pub fn logits(&self, params: &ParameterVector, features: &Matrix) -> Result<Matrix> {
        self.check(params, features)?;
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut data = Vec::with_capacity(features.rows() * self.class_count());
        for x in features.row_iter() {
            self.forward_sample(&layers, params.as_slice(), x, &mut acts);
            data.extend_from_slice(acts.last().expect("at least one layer"));
        }
        Matrix::new(features.rows(), self.class_count(), data)
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, params: &ParameterVector, features: &Matrix) -> Result<Matrix> {
        let logits = self.logits(params, features)?;
        let classes = logits.cols();
        let mut data = Vec::with_capacity(logits.as_slice().len());
        for z in logits.row_iter() {
            data.extend(softmax(z));
        }
        Matrix::new(logits.rows(), classes, data)
    }

    /// Mean cross-entropy over the batch.
    pub fn empirical_loss(&self, params: &ParameterVector, batch: &Batch<'_>) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("empirical loss of an empty batch"));
        }
        self.check_labels(batch.labels())?;
        let logits = self.logits(params, batch.features())?;
        let total: f64 = logits
            .row_iter()
            .zip(batch.labels())
            .map(|(z, &y)| cross_entropy(z, y))
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`ModelSpec::empirical_loss`] with respect to the parameters.
    pub fn gradient(&self, params: &ParameterVector, batch: &Batch<'_>) -> Result<ParameterVector> {
        self.loss_and_gradient(params, batch).map(|(_, g)| g)
    }

    pub fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        batch: &Batch<'_>,
    ) -> Result<(f64, ParameterVector)> {
        if batch.is_empty() {
            return Err(invalid("gradient of an empty batch"));
        }
        self.check(params, batch.features())?;
        self.check_labels(batch.labels())?;

        let layers = self.layers();
        let w = params.as_slice();
        let mut grad = vec![0.0; w.len()];
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut loss = 0.0;

        for (x, &y) in batch.features().row_iter().zip(batch.labels()) {
            self.forward_sample(&layers, w, x, &mut acts);
            let logits = acts.last().expect("at least one layer");
            loss += cross_entropy(logits, y);

            let mut delta = softmax(logits);
            delta[y] -= 1.0;

            for (l, layer) in layers.iter().enumerate().rev() {
                let input = &acts[l];
                let (gw, gb) = grad[layer.offset..layer.bias_offset() + layer.outputs]
                    .split_at_mut(layer.inputs * layer.outputs);
                for ((row, gbias), d) in gw
                    .chunks_exact_mut(layer.inputs)
                    .zip(gb.iter_mut())
                    .zip(&delta)
                {
                    *gbias += d;
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let weights = &w[layer.offset..layer.bias_offset()];
                let mut prev = vec![0.0; layer.inputs];
                for (row, d) in weights.chunks_exact(layer.inputs).zip(&delta) {
                    for (p, wij) in prev.iter_mut().zip(row) {
                        *p += wij * d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.derivative_from_output(*a);
                }
                delta = prev;
            }
        }

        let n = batch.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((loss / n, ParameterVector::new(grad)?))
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−ln softmax(z)[y]`, computed as `logsumexp(z) − z[y]`.
pub fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[y]
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(ModelKind::Mlp, vec![3], Activation::Relu).is_err());
        assert!(ModelSpec::new(ModelKind::Mlp, vec![3, 0, 2], Activation::Relu).is_err());
        assert!(ModelSpec::new(
            ModelKind::LogisticRegression,
            vec![3, 4, 2],
            Activation::Relu
        )
        .is_err());
        assert!(ModelSpec::mlp(2, &[16, 16], 2, Activation::Tanh).is_ok());
    }

    #[test]
    fn param_count_is_weights_plus_biases() {
        assert_eq!(ModelSpec::logistic(20, 5).unwrap().param_count(), 105);
        let mlp = ModelSpec::mlp(2, &[16, 16], 2, Activation::Relu).unwrap();
        assert_eq!(
            mlp.param_count(),
            (2 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2)
        );
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let spec = ModelSpec::mlp(3, &[4], 5, Activation::Relu).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![9.0, 9.0, 9.0]]).unwrap();
        let p = spec
            .forward(&ParameterVector::zeros(spec.param_count()), &x)
            .unwrap();
        for v in p.as_slice() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logistic_margins() {
        // logits = (+50, -50) from biases alone
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let params = ParameterVector::new(vec![0.0, 0.0, 50.0, -50.0]).unwrap();
        let x = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let p = spec.forward(&params, &x).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(p.get(0, 1).abs() < 1e-9);
    }

    #[test]
    fn forward_dimension_errors() {
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            spec.forward(&ParameterVector::zeros(6), &x),
            Err(Error::DimensionMismatch { .. })
        ));
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(spec.forward(&ParameterVector::zeros(5), &x).is_err());
    }

    #[test]
    fn uniform_loss_is_ln_classes() {
        let spec = ModelSpec::logistic(4, 10).unwrap();
        let x = Matrix::from_rows(&[vec![1.0; 4], vec![-2.0; 4]]).unwrap();
        let labels = [3, 7];
        let loss = spec
            .empirical_loss(
                &ParameterVector::zeros(spec.param_count()),
                &Batch::new(&x, &labels).unwrap(),
            )
            .unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_model_has_zero_loss() {
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let params = ParameterVector::new(vec![0.0, 0.0, 1000.0, -1000.0]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let labels = [0, 0];
        let loss = spec
            .empirical_loss(&params, &Batch::new(&x, &labels).unwrap())
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn empty_batch_and_bad_labels_rejected() {
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let params = ParameterVector::zeros(4);
        let empty = Matrix::zeros(0, 1);
        assert!(spec
            .empirical_loss(&params, &Batch::new(&empty, &[]).unwrap())
            .is_err());
        assert!(spec
            .gradient(&params, &Batch::new(&empty, &[]).unwrap())
            .is_err());
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(spec
            .empirical_loss(&params, &Batch::new(&x, &[2]).unwrap())
            .is_err());
        assert!(Batch::new(&x, &[0, 1]).is_err());
    }

    #[test]
    fn logistic_single_sample_closed_form() {
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let params = spec.init_params(11);
        let x = [0.5, -1.5, 2.0];
        let y = 1;
        let feats = Matrix::from_rows(&[x.to_vec()]).unwrap();
        let g = spec
            .gradient(&params, &Batch::new(&feats, &[y]).unwrap())
            .unwrap();
        let p = spec.forward(&params, &feats).unwrap();
        let g = g.as_slice();
        for c in 0..3 {
            let err = p.get(0, c) - if c == y { 1.0 } else { 0.0 };
            for (i, xi) in x.iter().enumerate() {
                assert!((g[c * 3 + i] - err * xi).abs() < 1e-15);
            }
            assert!((g[9 + c] - err).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::mlp(4, &[8], 3, Activation::Relu).unwrap();
        let a = spec.init_params(5);
        assert_eq!(a, spec.init_params(5));
        assert_ne!(a, spec.init_params(6));
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.as_slice()[..32].iter().all(|v| v.abs() <= limit));
        assert!(a.as_slice()[32..40].iter().all(|v| *v == 0.0));
    }
}
