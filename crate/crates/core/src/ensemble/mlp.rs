//! Feed-forward scorer: tanh hidden layers, logistic output, inverted
//! dropout after the first two hidden layers during training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AlignError, Result};

pub const HIDDEN_WIDTHS: [usize; 4] = [32, 16, 16, 8];
pub const DROPOUT_RATE: f64 = 0.2;
/// Hidden layers whose outputs pass through dropout.
const DROPOUT_LAYERS: [usize; 2] = [0, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-sample multipliers for the dropout layers: 0 for dropped units,
/// `1/(1-rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut ChaCha8Rng, batch: usize) -> Self {
        let keep = 1.0 / (1.0 - DROPOUT_RATE);
        let masks = DROPOUT_LAYERS
            .iter()
            .map(|&l| {
                (0..batch * HIDDEN_WIDTHS[l])
                    .map(|_| if rng.random_bool(DROPOUT_RATE) { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        DropoutMasks { masks }
    }

    fn for_sample(&self, slot: usize, sample: usize) -> &[f64] {
        let w = HIDDEN_WIDTHS[DROPOUT_LAYERS[slot]];
        &self.masks[slot][sample * w..(sample + 1) * w]
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Trace {
    /// Input followed by each hidden layer's output after dropout.
    acts: Vec<Vec<f64>>,
    /// Each hidden layer's tanh output before dropout.
    pre_mask: Vec<Vec<f64>>,
    logit: f64,
}

impl Mlp {
    /// Widths `[input, 32, 16, 16, 8, 1]` with all parameters zero.
    pub fn zeros(input: usize) -> Self {
        let widths = Mlp::standard_widths(input);
        Mlp { layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    pub fn standard_widths(input: usize) -> Vec<usize> {
        std::iter::once(input).chain(HIDDEN_WIDTHS).chain([1]).collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Mlp::zeros(input);
        for layer in &mut mlp.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        }
        mlp
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let widths: Vec<usize> = layers.first().map(|l| l.inputs).into_iter().chain(layers.iter().map(|l| l.outputs)).collect();
        if widths.is_empty() || widths != Mlp::standard_widths(widths[0]) {
            return Err(AlignError::malformed(format!(
                "layer widths {widths:?} do not match [input, {}, 1]",
                HIDDEN_WIDTHS.map(|w| w.to_string()).join(", ")
            )));
        }
        for (k, l) in layers.iter().enumerate() {
            if k > 0 && l.inputs != layers[k - 1].outputs {
                return Err(AlignError::malformed(format!("layer {k} input width does not chain")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(AlignError::malformed(format!("layer {k} has wrongly sized parameters")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(AlignError::malformed(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn widths(&self) -> Vec<usize> {
        Mlp::standard_widths(self.input_width())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(AlignError::malformed(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], masks: Option<(&DropoutMasks, usize)>) -> Trace {
        let hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(hidden + 1);
        let mut pre_mask = Vec::with_capacity(hidden);
        acts.push(x.to_vec());
        let mut buf = Vec::new();
        for l in 0..hidden {
            self.layers[l].apply(&acts[l], &mut buf);
            let h: Vec<f64> = buf.iter().map(|z| z.tanh()).collect();
            let mut a = h.clone();
            if let (Some((m, sample)), Some(slot)) = (masks, DROPOUT_LAYERS.iter().position(|&d| d == l)) {
                a.iter_mut().zip(m.for_sample(slot, sample)).for_each(|(v, k)| *v *= k);
            }
            pre_mask.push(h);
            acts.push(a);
        }
        self.layers[hidden].apply(&acts[hidden], &mut buf);
        Trace { acts, pre_mask, logit: buf[0] }
    }

    /// Output logit in evaluation mode.
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.trace(x, None).logit
    }
}

/// Evaluation-mode output, strictly inside (0, 1).
pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> Result<f64> {
    if x.len() != mlp.input_width() {
        return Err(AlignError::malformed(format!(
            "feature vector has {} entries, the model expects {}",
            x.len(),
            mlp.input_width()
        )));
    }
    Ok(logistic(mlp.logit(x)).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// One minibatch: rows of `inputs` (row-major, model input width), 0/1
/// labels and per-sample loss weights.
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [f64],
    pub weights: &'a [f64],
}

/// Weighted mean binary cross-entropy of the batch and its gradient in
/// [`Mlp::parameters`] order. With `masks`, dropout is applied exactly as
/// given; without, the network runs in evaluation mode.
pub fn loss_and_grad(mlp: &Mlp, batch: &Batch<'_>, masks: Option<&DropoutMasks>) -> Result<(f64, Vec<f64>)> {
    let width = mlp.input_width();
    let n = batch.labels.len();
    if n == 0 || batch.inputs.len() != n * width || batch.weights.len() != n {
        return Err(AlignError::malformed("batch inputs, labels and weights disagree in size"));
    }
    let offsets: Vec<usize> = mlp
        .layers
        .iter()
        .scan(0, |acc, l| {
            let start = *acc;
            *acc += l.weights.len() + l.bias.len();
            Some(start)
        })
        .collect();
    let mut grad = vec![0.0; mlp.parameter_count()];
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    let last = mlp.layers.len() - 1;
    for s in 0..n {
        let x = &batch.inputs[s * width..(s + 1) * width];
        let (y, w) = (batch.labels[s], batch.weights[s]);
        let t = mlp.trace(x, masks.map(|m| (m, s)));
        loss += w * (softplus(t.logit) - y * t.logit) * scale;
        let mut delta = vec![w * (logistic(t.logit) - y) * scale];
        for l in (0..=last).rev() {
            let layer = &mlp.layers[l];
            let input = &t.acts[l];
            let g = &mut grad[offsets[l]..];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut g[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
                g[layer.weights.len() + o] += d;
            }
            if l == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                back.iter_mut().zip(row).for_each(|(b, wv)| *b += d * wv);
            }
            // back is d(loss)/d(acts[l]); undo dropout, then tanh.
            let h = &t.pre_mask[l - 1];
            if let (Some(m), Some(slot)) = (masks, DROPOUT_LAYERS.iter().position(|&d| d == l - 1)) {
                back.iter_mut().zip(m.for_sample(slot, s)).for_each(|(b, k)| *b *= k);
            }
            back.iter_mut().zip(h).for_each(|(b, hv)| *b *= 1.0 - hv * hv);
            delta = back;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_model(seed: u64, input: usize) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::init(input, &mut rng);
        for l in m.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        m
    }

    /// Straight-line forward pass written independently of `Layer::apply`.
    fn oracle_forward(m: &Mlp, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let n = m.layers().len();
        for (k, l) in m.layers().iter().enumerate() {
            let mut z = l.bias.clone();
            for o in 0..l.outputs {
                for i in 0..l.inputs {
                    z[o] += l.weights[o * l.inputs + i] * a[i];
                }
            }
            a = if k + 1 < n { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
        1.0 / (1.0 + (-a[0]).exp())
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = Mlp::zeros(5);
        assert_eq!(mlp_forward(&m, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 0.5);
        assert_eq!(m.widths(), vec![5, 32, 16, 16, 8, 1]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        assert!(mlp_forward(&Mlp::zeros(3), &[1.0]).is_err());
    }

    #[test]
    fn zero_first_layer_makes_output_constant() {
        let mut m = random_model(3, 4);
        m.layers_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let a = mlp_forward(&m, &[1.0, -2.0, 0.5, 9.0]).unwrap();
        let b = mlp_forward(&m, &[-3.0, 0.0, 7.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let m = random_model(seed, 21);
            let x: Vec<f64> = (0..21).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = mlp_forward(&m, &x).unwrap();
            assert!((got - oracle_forward(&m, &x)).abs() < 1e-10);
            assert!(got > 0.0 && got < 1.0);
        }
    }

    #[test]
    fn saturated_output_stays_inside_unit_interval() {
        let mut m = Mlp::zeros(1);
        m.layers_mut()[4].bias[0] = 1e3;
        let p = mlp_forward(&m, &[0.0]).unwrap();
        assert!(p < 1.0);
        m.layers_mut()[4].bias[0] = -1e3;
        assert!(mlp_forward(&m, &[0.0]).unwrap() > 0.0);
    }

    #[test]
    fn parameters_round_trip() {
        let m = random_model(5, 6);
        let mut z = Mlp::zeros(6);
        z.set_parameters(&m.parameters()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_parameters(&[1.0]).is_err());
    }

    #[test]
    fn from_layers_checks_shape() {
        let m = random_model(1, 3);
        assert_eq!(Mlp::from_layers(m.layers().to_vec()).unwrap(), m);
        assert!(Mlp::from_layers(m.layers()[..4].to_vec()).is_err());
        let mut bad = m.layers().to_vec();
        bad[2].bias.pop();
        assert!(Mlp::from_layers(bad).is_err());
    }

    fn finite_difference(m: &Mlp, batch: &Batch<'_>, masks: Option<&DropoutMasks>) -> Vec<f64> {
        let h = 1e-5;
        let base = m.parameters();
        let mut probe = m.clone();
        (0..base.len())
            .map(|k| {
                let mut p = base.clone();
                p[k] = base[k] + h;
                probe.set_parameters(&p).unwrap();
                let up = loss_and_grad(&probe, batch, masks).unwrap().0;
                p[k] = base[k] - h;
                probe.set_parameters(&p).unwrap();
                let down = loss_and_grad(&probe, batch, masks).unwrap().0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for round in 0..3 {
            let m = random_model(round, 5);
            let n = 4;
            let inputs: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<f64> = (0..n).map(|k| (k % 2) as f64).collect();
            let weights: Vec<f64> = (0..n).map(|k| if k % 2 == 1 { 3.0 } else { 1.0 }).collect();
            let batch = Batch { inputs: &inputs, labels: &labels, weights: &weights };
            let masks = DropoutMasks::sample(&mut rng, n);
            for mk in [None, Some(&masks)] {
                let (_, g) = loss_and_grad(&m, &batch, mk).unwrap();
                let fd = finite_difference(&m, &batch, mk);
                let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt() + fd.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(diff / norm < 1e-6, "{}", diff / norm);
            }
        }
    }

    #[test]
    fn loss_of_zero_model_is_ln2() {
        let m = Mlp::zeros(2);
        let batch = Batch { inputs: &[1.0, 2.0, 3.0, 4.0], labels: &[1.0, 0.0], weights: &[1.0, 1.0] };
        let (loss, _) = loss_and_grad(&m, &batch, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
