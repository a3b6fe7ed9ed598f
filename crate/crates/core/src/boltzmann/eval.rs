use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::train::estimate_hidden;
use super::{add_row_bias, sigmoid_inplace, BoltzmannError, BoltzmannModel, LbmModel, RbmModel};
use crate::data::{Dataset, ImageSample, CLASSES};
use crate::rng::derive_seed;
use crate::sampling::{sigmoid, ClampSet, EnergyModel, GibbsConfig, SamplerConfig};

/// How a coupled model estimates label and hidden probabilities. Restricted
/// models ignore it and use exact conditionals.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyOptions {
    pub sampler: SamplerConfig,
    /// Kept samples per image.
    pub reads: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::Cd { k: 1 },
            reads: 256,
        }
    }
}

impl ClassifyOptions {
    /// The configured sampler resized to yield `reads` states.
    fn sized_sampler(&self) -> SamplerConfig {
        let reads = self.reads.max(1);
        match &self.sampler {
            SamplerConfig::Cd { k } => SamplerConfig::Gibbs(GibbsConfig {
                sweeps: reads,
                chains: 1,
                burn_in: *k,
            }),
            SamplerConfig::Gibbs(cfg) => SamplerConfig::Gibbs(GibbsConfig {
                sweeps: reads.div_ceil(cfg.chains.max(1)),
                ..*cfg
            }),
            SamplerConfig::Anneal(cfg) => {
                let mut cfg = cfg.clone();
                cfg.reads = reads;
                SamplerConfig::Anneal(cfg)
            }
        }
    }
}

fn pixel_count(model: &RbmModel) -> Result<usize, BoltzmannError> {
    model
        .visible()
        .checked_sub(CLASSES)
        .filter(|&p| p > 0)
        .ok_or_else(|| BoltzmannError::Dimension(format!("{} visible units leave no pixels", model.visible())))
}

fn argmax_low(values: &[f64]) -> u8 {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best as u8
}

/// Hidden units plus label units, with every pixel folded into the hidden
/// biases. Node `H + k` is label `k`.
struct LabelTemplate {
    model: EnergyModel,
    hidden: usize,
}

impl LabelTemplate {
    fn new(m: &LbmModel) -> Result<Self, BoltzmannError> {
        let hidden = m.base.hidden();
        let pixels = pixel_count(&m.base)?;
        let mut edges: Vec<(u32, u32)> = m.graph().edges().to_vec();
        let mut weights = m.couplings.clone();
        for k in 0..CLASSES {
            for j in 0..hidden {
                edges.push((j as u32, (hidden + k) as u32));
                weights.push(m.base.weights[[pixels + k, j]]);
            }
        }
        let mut biases = vec![0.0; hidden];
        biases.extend(m.base.visible_bias.slice(s![pixels..]).iter());
        let model = EnergyModel::new(biases, edges, weights)
            .map_err(|source| BoltzmannError::Sampler { phase: "classify setup", source })?;
        Ok(Self { model, hidden })
    }

    fn label_probs(&self, m: &LbmModel, pixels: &[f64], opts: &ClassifyOptions, seed: u64) -> Result<Vec<f64>, BoltzmannError> {
        let phase = "classify";
        let n = pixels.len();
        let mut biases = self.model.biases().to_vec();
        for j in 0..self.hidden {
            biases[j] = m.base.hidden_bias[j] + m.base.weights.slice(s![..n, j]).dot(&ndarray::ArrayView1::from(pixels));
        }
        let model = self.model.with_biases(biases).map_err(|source| BoltzmannError::Sampler { phase, source })?;
        let batch = opts
            .sized_sampler()
            .sample(&model, &ClampSet::new(), seed)
            .map_err(|source| BoltzmannError::Sampler { phase, source })?;
        let est = estimate_hidden(&model, &batch, &[]);
        Ok(est.marginals[self.hidden..].to_vec())
    }
}

fn rbm_label_probs(model: &RbmModel, pixels: ArrayView2<f64>) -> Array2<f64> {
    let n = pixels.ncols();
    let mut h = pixels.dot(&model.weights.slice(s![..n, ..]));
    add_row_bias(&mut h, &model.hidden_bias);
    sigmoid_inplace(&mut h);
    let mut labels = h.dot(&model.weights.slice(s![n.., ..]).t());
    add_row_bias(&mut labels, &model.visible_bias.slice(s![n..]).to_owned());
    sigmoid_inplace(&mut labels);
    labels
}

/// Label-unit on-probabilities with the pixels clamped.
///
/// RBM: one mean-field pass up to the hidden layer (labels off) and back
/// down to the labels. LBM: hidden and label units sampled jointly, label
/// probabilities averaged from their conditionals.
pub fn label_probabilities(
    model: &BoltzmannModel,
    pixels: &[f64],
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<Vec<f64>, BoltzmannError> {
    let expected = pixel_count(model.base())?;
    if pixels.len() != expected {
        return Err(BoltzmannError::Dimension(format!(
            "{} pixels for a model expecting {expected}",
            pixels.len()
        )));
    }
    match model {
        BoltzmannModel::Rbm(m) => {
            let view = ArrayView2::from_shape((1, pixels.len()), pixels).expect("single row");
            Ok(rbm_label_probs(m, view).row(0).to_vec())
        }
        BoltzmannModel::Lbm(m) => LabelTemplate::new(m)?.label_probs(m, pixels, opts, seed),
    }
}

/// Most probable label; ties resolve to the lowest digit.
pub fn classify_pixels(
    model: &BoltzmannModel,
    pixels: &[f64],
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<u8, BoltzmannError> {
    Ok(argmax_low(&label_probabilities(model, pixels, opts, seed)?))
}

pub fn classify(
    model: &BoltzmannModel,
    image: &ImageSample,
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<u8, BoltzmannError> {
    classify_pixels(model, image.pixels(), opts, seed)
}

/// Fraction of `ds` classified correctly. Image `i` uses seed
/// `derive_seed(seed, [i])`.
pub fn evaluate_accuracy(
    model: &BoltzmannModel,
    ds: &Dataset,
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<f64, BoltzmannError> {
    let predictions: Vec<u8> = match model {
        BoltzmannModel::Rbm(m) => {
            let n = pixel_count(m)?;
            let pixels = Array2::from_shape_vec(
                (ds.len(), n),
                ds.samples().iter().flat_map(|s| s.pixels().iter().copied()).collect(),
            )
            .map_err(|_| BoltzmannError::Dimension(format!("dataset images do not have {n} pixels")))?;
            rbm_label_probs(m, pixels.view())
                .axis_iter(Axis(0))
                .map(|row| argmax_low(row.as_slice().expect("standard layout")))
                .collect()
        }
        BoltzmannModel::Lbm(m) => {
            let template = LabelTemplate::new(m)?;
            ds.samples()
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    template
                        .label_probs(m, s.pixels(), opts, derive_seed(seed, &[i as u64]))
                        .map(|p| argmax_low(&p))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let correct = predictions
        .iter()
        .zip(ds.samples())
        .filter(|(p, s)| **p == s.label())
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// `sum_rows sum_i (x_i - r_i)^2` where `r = sigmoid(a + W p)` and `p` is the
/// hidden on-probability given the row (exact for an RBM, sampled for an
/// LBM).
pub fn reconstruction_error_rows(
    model: &BoltzmannModel,
    rows: ArrayView2<f64>,
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<f64, BoltzmannError> {
    let base = model.base();
    if rows.ncols() != base.visible() {
        return Err(BoltzmannError::Dimension(format!(
            "rows have {} units, model has {} visible units",
            rows.ncols(),
            base.visible()
        )));
    }
    let mut fields = rows.dot(&base.weights);
    add_row_bias(&mut fields, &base.hidden_bias);
    let hidden = match model {
        BoltzmannModel::Rbm(_) => {
            sigmoid_inplace(&mut fields);
            fields
        }
        BoltzmannModel::Lbm(m) => {
            let phase = "reconstruction";
            let template = m
                .hidden_model(vec![0.0; base.hidden()])
                .map_err(|source| BoltzmannError::Sampler { phase, source })?;
            let sampler = opts.sized_sampler();
            let probs: Vec<Vec<f64>> = (0..fields.nrows())
                .into_par_iter()
                .map(|r| {
                    let hm = template
                        .with_biases(fields.row(r).to_vec())
                        .map_err(|source| BoltzmannError::Sampler { phase, source })?;
                    let batch = sampler
                        .sample(&hm, &ClampSet::new(), derive_seed(seed, &[r as u64]))
                        .map_err(|source| BoltzmannError::Sampler { phase, source })?;
                    Ok(estimate_hidden(&hm, &batch, &[]).marginals)
                })
                .collect::<Result<_, BoltzmannError>>()?;
            Array2::from_shape_vec((rows.nrows(), base.hidden()), probs.concat()).expect("rows share a length")
        }
    };
    let mut recon = hidden.dot(&base.weights.t());
    add_row_bias(&mut recon, &base.visible_bias);
    Ok(rows
        .iter()
        .zip(recon.iter())
        .map(|(&x, &f)| {
            let d = x - sigmoid(f);
            d * d
        })
        .sum())
}

/// Reconstruction error of `ds` with labels visible.
pub fn reconstruction_error(
    model: &BoltzmannModel,
    ds: &Dataset,
    opts: &ClassifyOptions,
    seed: u64,
) -> Result<f64, BoltzmannError> {
    reconstruction_error_rows(model, super::augmented_matrix(ds, false).view(), opts, seed)
}
