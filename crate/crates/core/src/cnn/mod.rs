//! LeNet-shaped convolutional network: conv, ReLU, 2x2 max-pool, conv,
//! ReLU, 2x2 max-pool, fully connected ReLU layer, linear output, softmax.
//!
//! Activations are stored channel-last: a feature map batch is a matrix
//! whose rows are `(image, y, x)` positions and whose columns are channels,
//! so every convolution is an im2col copy followed by one matrix product.

mod gradcheck;
mod train;

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ImageSample, CLASSES, IMAGE_SIDE};
use crate::evolution::GeneSpec;
use crate::rng::rng_from;

pub use gradcheck::{gradient_check, Differentiable, GradCheckReport, SoftmaxRegression, KINK_THRESHOLD};
pub use train::{fit, train_and_score, EpochRecord, FitConfig, FitOutcome, TRAINING_HEADER};

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("hyperparameter {0} must be positive")]
    ZeroHyper(&'static str),
    #[error("spatial size underflows at {stage}: {detail}")]
    Underflow { stage: &'static str, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid fit config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {0}")]
    Diverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeNetHyper {
    pub c1_kernel: usize,
    pub c1_maps: usize,
    pub c2_kernel: usize,
    pub c2_maps: usize,
    pub fc_units: usize,
}

/// Spatial sizes after each stage, for a square input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    /// Flattened input length of the fully connected layer.
    pub flat: usize,
}

impl LeNetHyper {
    /// The conventional hand-designed configuration.
    pub const BASELINE: LeNetHyper = LeNetHyper {
        c1_kernel: 5,
        c1_maps: 20,
        c2_kernel: 5,
        c2_maps: 50,
        fc_units: 500,
    };

    pub fn new(c1_kernel: usize, c1_maps: usize, c2_kernel: usize, c2_maps: usize, fc_units: usize) -> Self {
        Self {
            c1_kernel,
            c1_maps,
            c2_kernel,
            c2_maps,
            fc_units,
        }
    }

    /// Gene order matches the field order.
    pub fn gene_specs() -> Vec<GeneSpec> {
        vec![
            GeneSpec::new("c1_kernel", 1, 14),
            GeneSpec::new("c1_maps", 2, 64),
            GeneSpec::new("c2_kernel", 1, 14),
            GeneSpec::new("c2_maps", 2, 64),
            GeneSpec::new("fc_units", 16, 512),
        ]
    }

    pub fn from_genes(genes: &[i64]) -> Result<Self, CnnError> {
        let [a, b, c, d, e] = genes else {
            return Err(CnnError::Shape(format!("expected 5 genes, got {}", genes.len())));
        };
        let pos = |v: i64, name| usize::try_from(v).ok().filter(|&x| x > 0).ok_or(CnnError::ZeroHyper(name));
        Ok(Self::new(
            pos(*a, "c1_kernel")?,
            pos(*b, "c1_maps")?,
            pos(*c, "c2_kernel")?,
            pos(*d, "c2_maps")?,
            pos(*e, "fc_units")?,
        ))
    }

    pub fn to_genes(&self) -> Vec<i64> {
        [self.c1_kernel, self.c1_maps, self.c2_kernel, self.c2_maps, self.fc_units]
            .iter()
            .map(|&v| v as i64)
            .collect()
    }

    pub fn shapes(&self) -> Result<Shapes, CnnError> {
        self.shapes_for(IMAGE_SIDE)
    }

    /// Valid convolutions shrink by `kernel - 1`; pooling floors odd sizes.
    pub fn shapes_for(&self, side: usize) -> Result<Shapes, CnnError> {
        for (v, name) in [
            (self.c1_kernel, "c1_kernel"),
            (self.c1_maps, "c1_maps"),
            (self.c2_kernel, "c2_kernel"),
            (self.c2_maps, "c2_maps"),
            (self.fc_units, "fc_units"),
        ] {
            if v == 0 {
                return Err(CnnError::ZeroHyper(name));
            }
        }
        let under = |stage, detail: String| Err(CnnError::Underflow { stage, detail });
        if self.c1_kernel > side {
            return under("conv1", format!("kernel {} exceeds input {side}", self.c1_kernel));
        }
        let conv1 = side - self.c1_kernel + 1;
        let pool1 = conv1 / 2;
        if pool1 == 0 {
            return under("pool1", format!("conv1 output {conv1}x{conv1} cannot be pooled 2x2"));
        }
        if self.c2_kernel > pool1 {
            return under("conv2", format!("kernel {} exceeds pool1 output {pool1}", self.c2_kernel));
        }
        let conv2 = pool1 - self.c2_kernel + 1;
        let pool2 = conv2 / 2;
        if pool2 == 0 {
            return under("pool2", format!("conv2 output {conv2}x{conv2} cannot be pooled 2x2"));
        }
        Ok(Shapes {
            conv1,
            pool1,
            conv2,
            pool2,
            flat: pool2 * pool2 * self.c2_maps,
        })
    }
}

/// Parameter blocks in storage order, each a row-major `rows x cols` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// `k1^2 x m1`.
    Conv1Weight,
    Conv1Bias,
    /// `(k2^2 * m1) x m2`, rows ordered `(dy, dx, input channel)`.
    Conv2Weight,
    Conv2Bias,
    /// `flat x fc`, rows ordered `(y, x, channel)`.
    FcWeight,
    FcBias,
    /// `fc x 10`.
    OutWeight,
    OutBias,
}

pub const BLOCKS: [Block; 8] = [
    Block::Conv1Weight,
    Block::Conv1Bias,
    Block::Conv2Weight,
    Block::Conv2Bias,
    Block::FcWeight,
    Block::FcBias,
    Block::OutWeight,
    Block::OutBias,
];

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    hyper: LeNetHyper,
    side: usize,
    shapes: Shapes,
    /// All parameters, blocks concatenated in [`BLOCKS`] order.
    params: Vec<f64>,
}

impl CnnModel {
    /// He-normal weights (`N(0, 2 / fan_in)`), zero biases.
    pub fn build(hyper: LeNetHyper, seed: u64) -> Result<Self, CnnError> {
        Self::build_for(hyper, IMAGE_SIDE, seed)
    }

    pub fn build_for(hyper: LeNetHyper, side: usize, seed: u64) -> Result<Self, CnnError> {
        let shapes = hyper.shapes_for(side)?;
        let mut model = Self {
            hyper,
            side,
            shapes,
            params: Vec::new(),
        };
        let total: usize = BLOCKS.iter().map(|&b| model.block_len(b)).sum();
        model.params = vec![0.0; total];
        let mut rng = rng_from(seed);
        for b in BLOCKS {
            let (rows, _) = model.block_dims(b);
            if matches!(b, Block::Conv1Bias | Block::Conv2Bias | Block::FcBias | Block::OutBias) {
                continue;
            }
            let sd = (2.0 / rows as f64).sqrt();
            for w in model.block_mut(b) {
                *w = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(model)
    }

    pub fn hyper(&self) -> LeNetHyper {
        self.hyper
    }

    pub fn shapes(&self) -> Shapes {
        self.shapes
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block_dims(&self, b: Block) -> (usize, usize) {
        let h = &self.hyper;
        match b {
            Block::Conv1Weight => (h.c1_kernel * h.c1_kernel, h.c1_maps),
            Block::Conv1Bias => (1, h.c1_maps),
            Block::Conv2Weight => (h.c2_kernel * h.c2_kernel * h.c1_maps, h.c2_maps),
            Block::Conv2Bias => (1, h.c2_maps),
            Block::FcWeight => (self.shapes.flat, h.fc_units),
            Block::FcBias => (1, h.fc_units),
            Block::OutWeight => (h.fc_units, CLASSES),
            Block::OutBias => (1, CLASSES),
        }
    }

    fn block_len(&self, b: Block) -> usize {
        let (r, c) = self.block_dims(b);
        r * c
    }

    /// Offset of a block within the flat parameter vector.
    pub fn block_offset(&self, b: Block) -> usize {
        BLOCKS.iter().take_while(|&&x| x != b).map(|&x| self.block_len(x)).sum()
    }

    pub fn block(&self, b: Block) -> ArrayView2<'_, f64> {
        let off = self.block_offset(b);
        ArrayView2::from_shape(self.block_dims(b), &self.params[off..off + self.block_len(b)]).expect("block shape")
    }

    fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let off = self.block_offset(b);
        let len = self.block_len(b);
        &mut self.params[off..off + len]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Images as rows of `side * side` pixels.
    pub fn image_matrix(&self, images: &[ImageSample]) -> Result<Array2<f64>, CnnError> {
        let n = self.side * self.side;
        let data: Vec<f64> = images.iter().flat_map(|s| s.pixels().iter().copied()).collect();
        Array2::from_shape_vec((images.len(), n), data).map_err(|_| CnnError::Shape(format!("images are not {n} pixels")))
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<(), CnnError> {
        if x.ncols() != self.side * self.side {
            return Err(CnnError::Shape(format!(
                "inputs have {} pixels, model expects {}",
                x.ncols(),
                self.side * self.side
            )));
        }
        if x.nrows() == 0 {
            return Err(CnnError::Shape("empty input batch".into()));
        }
        Ok(())
    }

    /// Class probabilities, one row per input.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, CnnError> {
        self.check_input(x)?;
        Ok(self.run(x).probs)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, CnnError> {
        Ok(self
            .forward(x)?
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect())
    }

    /// Mean cross-entropy of `x` against `labels` and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[u8]) -> Result<(f64, Vec<f64>), CnnError> {
        self.check_input(x)?;
        check_labels(x.nrows(), labels)?;
        let cache = self.run(x);
        let loss = cross_entropy(&cache.probs, labels);
        Ok((loss, self.backward(&cache, labels)))
    }

    pub fn loss(&self, x: ArrayView2<f64>, labels: &[u8]) -> Result<f64, CnnError> {
        self.check_input(x)?;
        check_labels(x.nrows(), labels)?;
        Ok(cross_entropy(&self.run(x).probs, labels))
    }

    /// Pre-activation signs and pooling winners; constant over any
    /// parameter interval on which the loss is smooth.
    pub fn activation_pattern(&self, x: ArrayView2<f64>) -> Vec<u32> {
        let c = self.run(x);
        let signs = c.z1.iter().chain(&c.z2).chain(&c.z3).map(|&z| u32::from(z > 0.0));
        signs.chain(c.arg1.iter().chain(&c.arg2).map(|&a| a as u32)).collect()
    }

    /// Smallest `|pre-activation|` over all ReLU inputs.
    pub fn min_abs_preactivation(&self, x: ArrayView2<f64>) -> f64 {
        let c = self.run(x);
        c.z1.iter().chain(&c.z2).chain(&c.z3).fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    fn run(&self, x: ArrayView2<f64>) -> Cache {
        let h = &self.hyper;
        let sh = &self.shapes;
        let n = x.nrows();
        let cols1 = im2col(x, n, self.side, 1, h.c1_kernel, sh.conv1);
        let mut z1 = cols1.dot(&self.block(Block::Conv1Weight));
        add_bias(&mut z1, self.block(Block::Conv1Bias));
        let (pool1, arg1) = relu_pool(&z1, n, sh.conv1, sh.pool1);
        let cols2 = im2col(pool1.view(), n, sh.pool1, h.c1_maps, h.c2_kernel, sh.conv2);
        let mut z2 = cols2.dot(&self.block(Block::Conv2Weight));
        add_bias(&mut z2, self.block(Block::Conv2Bias));
        let (pool2, arg2) = relu_pool(&z2, n, sh.conv2, sh.pool2);
        let flat = pool2.into_shape_with_order((n, sh.flat)).expect("pooled rows are contiguous per image");
        let mut z3 = flat.dot(&self.block(Block::FcWeight));
        add_bias(&mut z3, self.block(Block::FcBias));
        let a3 = z3.mapv(|v| v.max(0.0));
        let mut logits = a3.dot(&self.block(Block::OutWeight));
        add_bias(&mut logits, self.block(Block::OutBias));
        let probs = softmax(&logits);
        Cache {
            n,
            cols1,
            z1,
            arg1,
            cols2,
            z2,
            arg2,
            flat,
            z3,
            a3,
            probs,
        }
    }

    fn backward(&self, c: &Cache, labels: &[u8]) -> Vec<f64> {
        let h = &self.hyper;
        let sh = &self.shapes;
        let n = c.n;
        let mut grad = vec![0.0; self.params.len()];
        let mut put = |b: Block, g: &Array2<f64>| {
            let off = self.block_offset(b);
            for (dst, src) in grad[off..off + g.len()].iter_mut().zip(g.iter()) {
                *dst = *src;
            }
        };

        let mut d_logits = c.probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            d_logits[[r, y as usize]] -= 1.0;
        }
        d_logits /= n as f64;
        put(Block::OutWeight, &c.a3.t().dot(&d_logits));
        put(Block::OutBias, &col_sum(&d_logits));

        let mut d_z3 = d_logits.dot(&self.block(Block::OutWeight).t());
        d_z3.zip_mut_with(&c.z3, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        put(Block::FcWeight, &c.flat.t().dot(&d_z3));
        put(Block::FcBias, &col_sum(&d_z3));

        let d_flat = d_z3.dot(&self.block(Block::FcWeight).t());
        let d_pool2 = d_flat.into_shape_with_order((n * sh.pool2 * sh.pool2, h.c2_maps)).expect("contiguous");
        let d_z2 = unpool(&d_pool2, &c.arg2, &c.z2);
        put(Block::Conv2Weight, &c.cols2.t().dot(&d_z2));
        put(Block::Conv2Bias, &col_sum(&d_z2));

        let d_cols2 = d_z2.dot(&self.block(Block::Conv2Weight).t());
        let mut d_pool1 = Array2::zeros((n * sh.pool1 * sh.pool1, h.c1_maps));
        col2im(d_cols2.view(), d_pool1.view_mut(), n, sh.pool1, h.c1_maps, h.c2_kernel, sh.conv2);
        let d_z1 = unpool(&d_pool1, &c.arg1, &c.z1);
        put(Block::Conv1Weight, &c.cols1.t().dot(&d_z1));
        put(Block::Conv1Bias, &col_sum(&d_z1));
        grad
    }

    /// Applies `params -= lr * grad`.
    pub fn sgd_update(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

struct Cache {
    n: usize,
    cols1: Array2<f64>,
    z1: Array2<f64>,
    /// For each pooled element, the `z1` row that won the max.
    arg1: Vec<usize>,
    cols2: Array2<f64>,
    z2: Array2<f64>,
    arg2: Vec<usize>,
    flat: Array2<f64>,
    z3: Array2<f64>,
    a3: Array2<f64>,
    probs: Array2<f64>,
}

fn check_labels(n: usize, labels: &[u8]) -> Result<(), CnnError> {
    if labels.len() != n {
        return Err(CnnError::Shape(format!("{} labels for {n} inputs", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(CnnError::Shape(format!("label {l} out of range")));
    }
    Ok(())
}

fn add_bias(a: &mut Array2<f64>, bias: ArrayView2<f64>) {
    let b = bias.row(0);
    for mut row in a.axis_iter_mut(Axis(0)) {
        row += &b;
    }
}

fn col_sum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Rows `(image, y, x)` over output positions; columns `(dy, dx, channel)`.
/// `input` rows are `(image, y, x)` over a `side x side` map with
/// `channels` columns.
fn im2col(input: ArrayView2<f64>, n: usize, side: usize, channels: usize, k: usize, out: usize) -> Array2<f64> {
    let flat = input.as_standard_layout();
    let data = flat.as_slice().expect("standard layout");
    let width = k * k * channels;
    let mut cols = Array2::zeros((n * out * out, width));
    let dst = cols.as_slice_mut().expect("fresh array");
    for img in 0..n {
        let base = img * side * side;
        for y in 0..out {
            for x in 0..out {
                let row = ((img * out + y) * out + x) * width;
                for dy in 0..k {
                    let src = (base + (y + dy) * side + x) * channels;
                    let d = row + dy * k * channels;
                    dst[d..d + k * channels].copy_from_slice(&data[src..src + k * channels]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients into the map.
fn col2im(cols: ArrayView2<f64>, mut map: ArrayViewMut2<f64>, n: usize, side: usize, channels: usize, k: usize, out: usize) {
    let src = cols.as_slice().expect("standard layout");
    let dst = map.as_slice_mut().expect("standard layout");
    let width = k * k * channels;
    for img in 0..n {
        let base = img * side * side;
        for y in 0..out {
            for x in 0..out {
                let row = ((img * out + y) * out + x) * width;
                for dy in 0..k {
                    let d = (base + (y + dy) * side + x) * channels;
                    let s0 = row + dy * k * channels;
                    for (a, b) in dst[d..d + k * channels].iter_mut().zip(&src[s0..s0 + k * channels]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// ReLU then 2x2 stride-2 max pooling (trailing odd row/column dropped).
/// Ties go to the first position in row-major window order.
fn relu_pool(z: &Array2<f64>, n: usize, side: usize, out: usize) -> (Array2<f64>, Vec<usize>) {
    let ch = z.ncols();
    let mut pooled = Array2::zeros((n * out * out, ch));
    let mut arg = vec![0usize; n * out * out * ch];
    for img in 0..n {
        for py in 0..out {
            for px in 0..out {
                let prow = (img * out + py) * out + px;
                for c in 0..ch {
                    let mut best_row = (img * side + 2 * py) * side + 2 * px;
                    let mut best = z[[best_row, c]].max(0.0);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let r = (img * side + 2 * py + dy) * side + 2 * px + dx;
                        let v = z[[r, c]].max(0.0);
                        if v > best {
                            best = v;
                            best_row = r;
                        }
                    }
                    pooled[[prow, c]] = best;
                    arg[prow * ch + c] = best_row;
                }
            }
        }
    }
    (pooled, arg)
}

/// Routes pooled gradients to their winners, masked by the ReLU.
fn unpool(d_pooled: &Array2<f64>, arg: &[usize], z: &Array2<f64>) -> Array2<f64> {
    let ch = z.ncols();
    let mut d = Array2::zeros(z.raw_dim());
    for ((prow, c), &g) in d_pooled.indexed_iter() {
        let r = arg[prow * ch + c];
        if z[[r, c]] > 0.0 {
            d[[r, c]] += g;
        }
    }
    d
}

pub(crate) fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

pub(crate) fn cross_entropy(probs: &Array2<f64>, labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    -labels
        .iter()
        .enumerate()
        .map(|(r, &y)| probs[[r, y as usize]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

/// Serialized trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnCheckpoint {
    pub format: String,
    pub version: u32,
    pub hyper: LeNetHyper,
    pub side: usize,
    pub params: Vec<f64>,
}

pub const CNN_CHECKPOINT_FORMAT: &str = "tribench-cnn";

impl CnnCheckpoint {
    pub fn from_model(m: &CnnModel) -> Self {
        Self {
            format: CNN_CHECKPOINT_FORMAT.into(),
            version: 1,
            hyper: m.hyper,
            side: m.side,
            params: m.params.clone(),
        }
    }

    pub fn to_model(&self) -> Result<CnnModel, CnnError> {
        if self.format != CNN_CHECKPOINT_FORMAT || self.version != 1 {
            return Err(CnnError::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let mut m = CnnModel::build_for(self.hyper, self.side, 0)?;
        if m.params.len() != self.params.len() || self.params.iter().any(|p| !p.is_finite()) {
            return Err(CnnError::Checkpoint("parameter vector does not fit the architecture".into()));
        }
        m.params.copy_from_slice(&self.params);
        Ok(m)
    }
}
