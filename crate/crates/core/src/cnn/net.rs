//! The multi-tower network: one conv-pool-conv-pool tower per input plane,
//! the tower outputs concatenated into a hidden fully connected layer and a
//! softmax output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{
    col2im_add, conv_cols, conv_valid, im2col, lrelu, maxpool_2x2, maxpool_into, nll_loss, pooled, softmax_in_place,
    ConvLayer, FcLayer, Loss, KERNEL,
};
use super::gemm::{gemm, Op};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Hyper-shape of a network. Kernels are always 5x5 and pools 2x2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    /// Side of each square input plane.
    pub input: usize,
    /// Number of input planes, one tower each.
    pub towers: usize,
    pub maps1: usize,
    pub maps2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Geometry {
    /// 3x33x33 input, 10 and 15 maps per tower, 100 hidden units, 4 classes.
    pub const CANONICAL: Geometry = Geometry {
        input: 33,
        towers: 3,
        maps1: 10,
        maps2: 15,
        hidden: 100,
        classes: 4,
    };

    pub fn conv1_side(&self) -> usize {
        self.input + 1 - KERNEL
    }

    pub fn pool1_side(&self) -> usize {
        pooled(self.conv1_side())
    }

    pub fn conv2_side(&self) -> usize {
        self.pool1_side() + 1 - KERNEL
    }

    pub fn pool2_side(&self) -> usize {
        pooled(self.conv2_side())
    }

    /// Neurons entering the hidden layer.
    pub fn flat_len(&self) -> usize {
        self.towers * self.maps2 * self.pool2_side().pow(2)
    }

    pub fn input_len(&self) -> usize {
        self.towers * self.input * self.input
    }

    pub fn validate(&self) -> Result<()> {
        if self.towers == 0 || self.maps1 == 0 || self.maps2 == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(invalid(format!("degenerate network geometry {self:?}")));
        }
        // conv -> pool -> conv -> pool must leave at least one neuron
        if self.input < KERNEL || self.pool1_side() < KERNEL || self.conv2_side() < 2 {
            return Err(invalid(format!("input side {} too small for two conv/pool stages", self.input)));
        }
        Ok(())
    }

    /// Output extent (height, width, maps over all towers) after each stage,
    /// followed by the two fully connected widths.
    pub fn extents(&self) -> LayerExtents {
        let t = self.towers;
        LayerExtents {
            conv1: [self.conv1_side(), self.conv1_side(), t * self.maps1],
            pool1: [self.pool1_side(), self.pool1_side(), t * self.maps1],
            conv2: [self.conv2_side(), self.conv2_side(), t * self.maps2],
            pool2: [self.pool2_side(), self.pool2_side(), t * self.maps2],
            hidden: self.hidden,
            output: self.classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerExtents {
    pub conv1: [usize; 3],
    pub pool1: [usize; 3],
    pub conv2: [usize; 3],
    pub pool2: [usize; 3],
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

/// Every trainable parameter. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub towers: Vec<Tower>,
    pub hidden: FcLayer,
    pub output: FcLayer,
}

/// Trainable parameter counts, grouped by network stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.conv1 + self.conv2 + self.hidden + self.output
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

/// Borrowed view of one layer's parameters, in file order.
#[derive(Debug)]
pub struct LayerView<'a> {
    pub name: String,
    pub kind: LayerKind,
    /// Weight dims: `[out, in, 5, 5]` or `[out, in]`.
    pub dims: Vec<usize>,
    pub weights: &'a [f64],
    pub biases: &'a [f64],
}

#[derive(Debug)]
pub struct LayerViewMut<'a> {
    pub name: String,
    pub kind: LayerKind,
    pub weights: &'a mut [f64],
    pub biases: &'a mut [f64],
}

impl Params {
    pub fn zeros(g: &Geometry) -> Self {
        Params {
            towers: (0..g.towers)
                .map(|_| Tower {
                    conv1: ConvLayer::zeros(g.maps1, 1),
                    conv2: ConvLayer::zeros(g.maps2, g.maps1),
                })
                .collect(),
            hidden: FcLayer::zeros(g.hidden, g.flat_len()),
            output: FcLayer::zeros(g.classes, g.hidden),
        }
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        let mut v = Vec::with_capacity(2 * self.towers.len() + 2);
        for (t, tower) in self.towers.iter().enumerate() {
            for (name, c) in [("conv1", &tower.conv1), ("conv2", &tower.conv2)] {
                v.push(LayerView {
                    name: format!("tower{t}.{name}"),
                    kind: LayerKind::Conv,
                    dims: vec![c.out_maps, c.in_depth, KERNEL, KERNEL],
                    weights: &c.kernels,
                    biases: &c.biases,
                });
            }
        }
        for (name, f) in [("hidden", &self.hidden), ("output", &self.output)] {
            v.push(LayerView {
                name: name.to_string(),
                kind: LayerKind::FullyConnected,
                dims: vec![f.outputs, f.inputs],
                weights: &f.weights,
                biases: &f.biases,
            });
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<LayerViewMut<'_>> {
        let mut v = Vec::with_capacity(2 * self.towers.len() + 2);
        for (t, tower) in self.towers.iter_mut().enumerate() {
            for (name, c) in [("conv1", &mut tower.conv1), ("conv2", &mut tower.conv2)] {
                v.push(LayerViewMut {
                    name: format!("tower{t}.{name}"),
                    kind: LayerKind::Conv,
                    weights: &mut c.kernels,
                    biases: &mut c.biases,
                });
            }
        }
        for (name, f) in [("hidden", &mut self.hidden), ("output", &mut self.output)] {
            v.push(LayerViewMut {
                name: name.to_string(),
                kind: LayerKind::FullyConnected,
                weights: &mut f.weights,
                biases: &mut f.biases,
            });
        }
        v
    }

    pub fn breakdown(&self) -> ParamBreakdown {
        ParamBreakdown {
            conv1: self.towers.iter().map(|t| t.conv1.param_count()).sum(),
            conv2: self.towers.iter().map(|t| t.conv2.param_count()).sum(),
            hidden: self.hidden.param_count(),
            output: self.output.param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for l in self.layers_mut() {
            l.weights.fill(value);
            l.biases.fill(value);
        }
    }

    /// `self += other`, element by element.
    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            for (x, y) in a.weights.iter_mut().zip(b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(b.biases) {
                *x += y;
            }
        }
    }

    /// Flat copy of every parameter in file order (weights then biases per layer).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            v.extend_from_slice(l.weights);
            v.extend_from_slice(l.biases);
        }
        v
    }

    /// Mutable reference to the `index`-th parameter in [`Params::to_flat`] order.
    pub fn flat_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in self.layers_mut() {
            let n = l.weights.len();
            if index < n {
                return Some(&mut l.weights[index]);
            }
            index -= n;
            let n = l.biases.len();
            if index < n {
                return Some(&mut l.biases[index]);
            }
            index -= n;
        }
        None
    }
}

/// A network: geometry, rectifier slope, the seed it was initialized from,
/// and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    geometry: Geometry,
    slope: f64,
    seed: u64,
    pub params: Params,
}

fn xavier_fill(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w {
        *v = rng.random_range(-bound..bound);
    }
}

impl Cnn {
    /// All-zero network; see [`Cnn::init`] for the trainable starting point.
    pub fn zeros(geometry: Geometry, slope: f64) -> Result<Self> {
        geometry.validate()?;
        if !(slope > 0.0 && slope < 1.0) {
            return Err(invalid(format!("rectifier slope must be in (0,1), got {slope}")));
        }
        Ok(Cnn {
            geometry,
            slope,
            seed: 0,
            params: Params::zeros(&geometry),
        })
    }

    /// Xavier-uniform weights everywhere; biases of the convolutional and
    /// hidden layers set to 1, output biases drawn from N(0, 1).
    pub fn init(geometry: Geometry, slope: f64, seed: u64) -> Result<Self> {
        let mut net = Cnn::zeros(geometry, slope)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &mut net.params;
        for tower in &mut p.towers {
            for conv in [&mut tower.conv1, &mut tower.conv2] {
                let (fi, fo) = (conv.fan_in(), conv.fan_out());
                xavier_fill(&mut conv.kernels, fi, fo, &mut rng);
                conv.biases.fill(1.0);
            }
        }
        xavier_fill(&mut p.hidden.weights, p.hidden.inputs, p.hidden.outputs, &mut rng);
        p.hidden.biases.fill(1.0);
        xavier_fill(&mut p.output.weights, p.output.inputs, p.output.outputs, &mut rng);
        for b in &mut p.output.biases {
            *b = rng.sample(StandardNormal);
        }
        Ok(net)
    }

    pub(crate) fn from_parts(geometry: Geometry, slope: f64, seed: u64, params: Params) -> Self {
        Cnn {
            geometry,
            slope,
            seed,
            params,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Forward pass built from the public tensor primitives, returning every
    /// intermediate tensor (towers concatenated along depth) and the output
    /// probabilities. Slow; used for inspection and as a cross-check of the
    /// fused path.
    pub fn forward_layers(&self, input: &[f64]) -> Result<(Vec<Tensor>, Vec<f64>)> {
        let g = self.geometry;
        if input.len() != g.input_len() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", g.input_len(), input.len())));
        }
        let act = |t: Tensor| {
            let dims = t.dims().to_vec();
            let s = t.into_samples().into_iter().map(|v| lrelu(v, self.slope)).collect();
            Tensor::new(dims, s)
        };
        let plane = g.input * g.input;
        let mut stages: [Vec<Tensor>; 4] = Default::default();
        for (t, tower) in self.params.towers.iter().enumerate() {
            let x = Tensor::new(vec![1, g.input, g.input], input[t * plane..(t + 1) * plane].to_vec())?;
            let c1 = act(conv_valid(&x, &tower.conv1)?)?;
            let (p1, _) = maxpool_2x2(&c1)?;
            let c2 = act(conv_valid(&p1, &tower.conv2)?)?;
            let (p2, _) = maxpool_2x2(&c2)?;
            for (s, t) in stages.iter_mut().zip([c1, p1, c2, p2]) {
                s.push(t);
            }
        }
        let mut out: Vec<Tensor> = stages
            .into_iter()
            .map(|ts| {
                let (_, h, w) = ts[0].dhw().expect("rank 3");
                let depth = ts.iter().map(|t| t.dims()[0]).sum();
                let samples = ts.into_iter().flat_map(|t| t.into_samples()).collect();
                Tensor::new(vec![depth, h, w], samples)
            })
            .collect::<Result<_>>()?;
        let flat = out[3].samples().to_vec();
        let fc = |layer: &FcLayer, x: &[f64]| -> Vec<f64> {
            (0..layer.outputs)
                .map(|o| layer.biases[o] + layer.weights[o * layer.inputs..][..layer.inputs].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
                .collect()
        };
        let hidden: Vec<f64> = fc(&self.params.hidden, &flat).into_iter().map(|v| lrelu(v, self.slope)).collect();
        let mut probs = fc(&self.params.output, &hidden);
        out.push(Tensor::new(vec![hidden.len()], hidden)?);
        softmax_in_place(&mut probs);
        out.push(Tensor::new(vec![probs.len()], probs.clone())?);
        Ok((out, probs))
    }

    /// Class probabilities for one input (planes concatenated, plane-major).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::new(&self.geometry);
        Ok(self.forward_with(input, &mut trace)?.to_vec())
    }

    /// Forward pass reusing `trace` buffers; the trace then holds everything
    /// [`Cnn::backward`] needs.
    pub fn forward_with<'t>(&self, input: &[f64], trace: &'t mut Trace) -> Result<&'t [f64]> {
        let g = self.geometry;
        if trace.geometry != g {
            return Err(Error::Shape("trace was allocated for a different geometry".into()));
        }
        if input.len() != g.input_len() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", g.input_len(), input.len())));
        }
        let (s0, s1, s2, s3, s4) = (g.input, g.conv1_side(), g.pool1_side(), g.conv2_side(), g.pool2_side());
        let slope = self.slope;
        let seg = g.maps2 * s4 * s4;
        for (t, (tower, tt)) in self.params.towers.iter().zip(trace.towers.iter_mut()).enumerate() {
            im2col(&input[t * s0 * s0..(t + 1) * s0 * s0], 1, s0, s0, &mut tt.cols1);
            conv_cols(&tower.conv1, &tt.cols1, s1 * s1, &mut tt.a1);
            tt.a1.iter_mut().for_each(|v| *v = lrelu(*v, slope));
            maxpool_into(&tt.a1, g.maps1, s1, s1, &mut tt.p1, &mut tt.arg1);
            im2col(&tt.p1, g.maps1, s2, s2, &mut tt.cols2);
            conv_cols(&tower.conv2, &tt.cols2, s3 * s3, &mut tt.a2);
            tt.a2.iter_mut().for_each(|v| *v = lrelu(*v, slope));
            maxpool_into(&tt.a2, g.maps2, s3, s3, &mut trace.flat[t * seg..(t + 1) * seg], &mut tt.arg2);
        }
        fc_forward(&self.params.hidden, &trace.flat, &mut trace.hidden);
        trace.hidden.iter_mut().for_each(|v| *v = lrelu(*v, slope));
        fc_forward(&self.params.output, &trace.hidden, &mut trace.probs);
        softmax_in_place(&mut trace.probs);
        trace.ready = true;
        Ok(&trace.probs)
    }

    /// Accumulate into `grads` the gradient of the log-likelihood loss of
    /// `label` for the input last passed through `trace`. Returns the loss.
    pub fn backward(&self, trace: &mut Trace, label: usize, grads: &mut Params) -> Result<Loss> {
        let g = self.geometry;
        if !trace.ready {
            return Err(Error::Usage("backward called before a forward pass filled the trace".into()));
        }
        if trace.geometry != g {
            return Err(Error::Shape("trace was allocated for a different geometry".into()));
        }
        if label >= g.classes {
            return Err(invalid(format!("label {label} out of range for {} classes", g.classes)));
        }
        let (s1, s2, s3, s4) = (g.conv1_side(), g.pool1_side(), g.conv2_side(), g.pool2_side());
        let slope = self.slope;
        let loss = nll_loss(&trace.probs, label);
        let p = &self.params;
        let Trace {
            towers,
            flat,
            hidden,
            probs,
            scratch: sc,
            ..
        } = trace;

        // d loss / d logits = p - onehot
        let dlogits = &mut sc.dlogits;
        dlogits.copy_from_slice(probs);
        dlogits[label] -= 1.0;

        // output layer
        outer_add(&mut grads.output.weights, dlogits, hidden);
        add_to(&mut grads.output.biases, dlogits);
        let dh = &mut sc.dhidden;
        dh.fill(0.0);
        for (o, &d) in dlogits.iter().enumerate() {
            axpy(d, &p.output.weights[o * g.hidden..(o + 1) * g.hidden], dh);
        }
        for (d, &a) in dh.iter_mut().zip(hidden.iter()) {
            if a <= 0.0 {
                *d *= slope;
            }
        }

        // hidden layer
        outer_add(&mut grads.hidden.weights, dh, flat);
        add_to(&mut grads.hidden.biases, dh);
        let dflat = &mut sc.dflat;
        dflat.fill(0.0);
        for (o, &d) in dh.iter().enumerate() {
            axpy(d, &p.hidden.weights[o * p.hidden.inputs..(o + 1) * p.hidden.inputs], dflat);
        }

        // towers
        let seg = g.maps2 * s4 * s4;
        for (t, ((tower, tt), gt)) in p.towers.iter().zip(towers.iter()).zip(grads.towers.iter_mut()).enumerate() {
            let dz2 = &mut sc.dz2;
            dz2.fill(0.0);
            for (&a, &d) in tt.arg2.iter().zip(&dflat[t * seg..(t + 1) * seg]) {
                dz2[a as usize] += d;
            }
            for (d, &a) in dz2.iter_mut().zip(&tt.a2) {
                if a <= 0.0 {
                    *d *= slope;
                }
            }
            row_sums_add(&mut gt.conv2.biases, dz2, s3 * s3);
            let k2 = g.maps1 * KERNEL * KERNEL;
            gemm(g.maps2, s3 * s3, k2, dz2, Op::N, &tt.cols2, Op::T, 1.0, &mut gt.conv2.kernels);
            gemm(k2, g.maps2, s3 * s3, &tower.conv2.kernels, Op::T, dz2, Op::N, 0.0, &mut sc.dcols2);
            let dp1 = &mut sc.dp1;
            dp1.fill(0.0);
            col2im_add(&sc.dcols2, g.maps1, s2, s2, dp1);

            let dz1 = &mut sc.dz1;
            dz1.fill(0.0);
            for (&a, &d) in tt.arg1.iter().zip(dp1.iter()) {
                dz1[a as usize] += d;
            }
            for (d, &a) in dz1.iter_mut().zip(&tt.a1) {
                if a <= 0.0 {
                    *d *= slope;
                }
            }
            row_sums_add(&mut gt.conv1.biases, dz1, s1 * s1);
            gemm(g.maps1, s1 * s1, KERNEL * KERNEL, dz1, Op::N, &tt.cols1, Op::T, 1.0, &mut gt.conv1.kernels);
        }
        Ok(loss)
    }
}

fn fc_forward(layer: &FcLayer, x: &[f64], out: &mut [f64]) {
    for (o, y) in out.iter_mut().enumerate() {
        *y = layer.biases[o] + dot(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs], x);
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `m += u v^T`
fn outer_add(m: &mut [f64], u: &[f64], v: &[f64]) {
    for (row, &ui) in m.chunks_exact_mut(v.len()).zip(u) {
        axpy(ui, v, row);
    }
}

fn row_sums_add(dst: &mut [f64], m: &[f64], cols: usize) {
    for (d, row) in dst.iter_mut().zip(m.chunks_exact(cols)) {
        *d += row.iter().sum::<f64>();
    }
}

#[derive(Debug, Clone)]
struct TowerTrace {
    cols1: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<u32>,
    cols2: Vec<f64>,
    a2: Vec<f64>,
    arg2: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Scratch {
    dlogits: Vec<f64>,
    dhidden: Vec<f64>,
    dflat: Vec<f64>,
    dz2: Vec<f64>,
    dcols2: Vec<f64>,
    dp1: Vec<f64>,
    dz1: Vec<f64>,
}

/// Activations cached by a forward pass plus scratch for the backward pass.
/// Allocate once per worker and reuse.
#[derive(Debug, Clone)]
pub struct Trace {
    geometry: Geometry,
    ready: bool,
    towers: Vec<TowerTrace>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    scratch: Scratch,
}

impl Trace {
    pub fn new(g: &Geometry) -> Self {
        let (s1, s2, s3) = (g.conv1_side(), g.pool1_side(), g.conv2_side());
        let kk = KERNEL * KERNEL;
        let tower = TowerTrace {
            cols1: vec![0.0; kk * s1 * s1],
            a1: vec![0.0; g.maps1 * s1 * s1],
            p1: vec![0.0; g.maps1 * s2 * s2],
            arg1: vec![0; g.maps1 * s2 * s2],
            cols2: vec![0.0; g.maps1 * kk * s3 * s3],
            a2: vec![0.0; g.maps2 * s3 * s3],
            arg2: vec![0; g.maps2 * g.pool2_side().pow(2)],
        };
        Trace {
            geometry: *g,
            ready: false,
            towers: vec![tower; g.towers],
            flat: vec![0.0; g.flat_len()],
            hidden: vec![0.0; g.hidden],
            probs: vec![0.0; g.classes],
            scratch: Scratch {
                dlogits: vec![0.0; g.classes],
                dhidden: vec![0.0; g.hidden],
                dflat: vec![0.0; g.flat_len()],
                dz2: vec![0.0; g.maps2 * s3 * s3],
                dcols2: vec![0.0; g.maps1 * kk * s3 * s3],
                dp1: vec![0.0; g.maps1 * s2 * s2],
                dz1: vec![0.0; g.maps1 * s1 * s1],
            },
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Concatenated tower outputs (hidden-layer input) of the last forward pass.
    pub fn features(&self) -> &[f64] {
        &self.flat
    }
}

/// Index of the largest probability (first on ties).
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
