//! Encoder/decoder/classifier assemblies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{eval_stack, Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mirrored dense auto-encoder. The encoder ends in a bottleneck of width
/// `b`; the decoder mirrors the encoder widths and finishes with a sigmoid
/// reconstruction layer, so outputs live in (0,1).
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

impl AutoEncoder {
    /// Build an encoder [in -> hidden... -> b] with relu activations and the
    /// mirrored decoder [b -> hidden reversed... -> in] with relu then a
    /// final sigmoid.
    pub fn new(in_dim: usize, hidden: &[usize], bottleneck: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || bottleneck == 0 {
            return Err(Error::config("auto-encoder dims must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc_widths = vec![in_dim];
        enc_widths.extend_from_slice(hidden);
        enc_widths.push(bottleneck);

        let mut encoder = Vec::new();
        for w in enc_widths.windows(2) {
            encoder.push(DenseLayer::init(w[0], w[1], Activation::Relu, &mut rng));
        }
        let mut dec_widths: Vec<usize> = enc_widths.iter().rev().cloned().collect();
        let last = dec_widths.len() - 1;
        let mut decoder = Vec::new();
        for (i, w) in dec_widths.windows(2).enumerate() {
            let act = if i + 1 == last {
                Activation::Sigmoid
            } else {
                Activation::Relu
            };
            decoder.push(DenseLayer::init(w[0], w[1], act, &mut rng));
        }
        let _ = &mut dec_widths;
        let ae = AutoEncoder { encoder, decoder };
        ae.validate()?;
        Ok(ae)
    }

    pub fn from_layers(encoder: Vec<DenseLayer>, decoder: Vec<DenseLayer>) -> Result<Self> {
        let ae = AutoEncoder { encoder, decoder };
        ae.validate()?;
        Ok(ae)
    }

    fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::config("auto-encoder requires encoder and decoder layers"));
        }
        let b = self.bottleneck();
        if self.decoder[0].in_dim() != b {
            return Err(Error::shape(
                "auto_encoder",
                format!(
                    "bottleneck {b} != decoder input {}",
                    self.decoder[0].in_dim()
                ),
            ));
        }
        if self.decoder.last().unwrap().out_dim() != self.in_dim() {
            return Err(Error::shape(
                "auto_encoder",
                format!(
                    "decoder output {} != encoder input {}",
                    self.decoder.last().unwrap().out_dim(),
                    self.in_dim()
                ),
            ));
        }
        if self.decoder.last().unwrap().activation != Activation::Sigmoid {
            return Err(Error::config("final decoder activation must be sigmoid"));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.last().unwrap().out_dim()
    }

    /// Map a batch to bottleneck features without recording gradients.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.in_dim() {
            return Err(Error::shape(
                "encode",
                format!("input width {d} != encoder width {}", self.in_dim()),
            ));
        }
        eval_stack(&self.encoder, x)
    }

    /// Encode then decode without recording gradients; output in (0,1).
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let features = self.encode(x)?;
        eval_stack(&self.decoder, &features)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn n_layers(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }
}

/// Softmax classifier over bottleneck features.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub layers: Vec<DenseLayer>,
}

impl Classifier {
    /// Single dense layer b -> n_classes with softmax, optionally preceded by
    /// hidden relu layers.
    pub fn new(bottleneck: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![bottleneck];
        widths.extend_from_slice(hidden);
        widths.push(n_classes);
        let last = widths.len() - 2;
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let act = if i == last {
                Activation::Softmax
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer::init(w[0], w[1], act, &mut rng));
        }
        Ok(Classifier { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("classifier requires layers"));
        }
        if layers.last().unwrap().activation != Activation::Softmax {
            return Err(Error::config("classifier must end in softmax"));
        }
        Ok(Classifier { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Class probabilities for a feature batch; rows sum to 1.
    pub fn classify(&self, features: &Tensor) -> Result<Tensor> {
        let (_, d) = features.dims2()?;
        if d != self.in_dim() {
            return Err(Error::shape(
                "classify",
                format!("feature width {d} != classifier width {}", self.in_dim()),
            ));
        }
        eval_stack(&self.layers, features)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }
}

/// The deployable result of the pipeline: target encoder plus the shared
/// classifier.
#[derive(Debug, Clone)]
pub struct TargetModel {
    pub encoder: Vec<DenseLayer>,
    pub classifier: Classifier,
}

impl TargetModel {
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let features = eval_stack(&self.encoder, x)?;
        self.classifier.classify(&features)
    }

    /// Argmax labels with ties broken toward the lower class index, plus the
    /// per-sample max probability.
    pub fn predict(&self, x: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
        let proba = self.predict_proba(x)?;
        Ok(argmax_rows(&proba))
    }
}

/// Row-wise argmax (first maximum wins) and the winning probability.
pub fn argmax_rows(proba: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let (n, c) = proba.dims2().expect("rank-2 probabilities");
    let mut labels = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for i in 0..n {
        let row = &proba.data()[i * c..(i + 1) * c];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        labels.push(best);
        confidence.push(row[best]);
    }
    (labels, confidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autoencoder_shapes_and_range() {
        let ae = AutoEncoder::new(8, &[6], 3, 1).unwrap();
        assert_eq!(ae.in_dim(), 8);
        assert_eq!(ae.bottleneck(), 3);
        let x = Tensor::filled(vec![5, 8], 0.5);
        let z = ae.encode(&x).unwrap();
        assert_eq!(z.shape(), &[5, 3]);
        let p = ae.reconstruct(&x).unwrap();
        assert_eq!(p.shape(), &[5, 8]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let ae = AutoEncoder::new(8, &[6], 3, 1).unwrap();
        let x = Tensor::filled(vec![5, 7], 0.5);
        assert!(ae.encode(&x).is_err());
    }

    #[test]
    fn zero_weight_classifier_is_uniform() {
        let mut c = Classifier::new(4, &[], 10, 2).unwrap();
        for p in c.params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::filled(vec![3, 4], 0.7);
        let proba = c.classify(&x).unwrap();
        for &v in proba.data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let (labels, conf) = argmax_rows(&proba);
        // uniform rows tie-break to class 0
        assert_eq!(labels, vec![0, 0, 0]);
        assert!(conf.iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn classifier_rows_are_distributions() {
        let c = Classifier::new(6, &[], 4, 3).unwrap();
        let x = Tensor::filled(vec![7, 6], 0.25);
        let proba = c.classify(&x).unwrap();
        for i in 0..7 {
            let s: f64 = proba.data()[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_autoencoder() {
        let a = AutoEncoder::new(10, &[8], 4, 77).unwrap();
        let b = AutoEncoder::new(10, &[8], 4, 77).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert!(x.bitwise_eq(y));
        }
    }
}
