//! Wide-and-deep network with a flat parameter vector and hand-written
//! backprop.
//!
//! Parameter layout, in order:
//!
//! - wide weights, one per categorical value (all features concatenated)
//! - wide weights for the transformed counts `[ln(1+h_i), ln(1+h_e), h_p]`
//! - wide bias
//! - embeddings, `embed_dim` reals per categorical value (deep part only)
//! - per hidden layer: weights `[out][in]`, then biases
//! - output weights and bias
//!
//! The deep input is the concatenated embeddings followed by the z-scored
//! transformed counts. Hidden layers use ReLU. An empty `widths` list drops
//! the deep part entirely, leaving logistic regression on the wide features.
//!
//! Checkpoint format, one field per line:
//!
//! ```text
//! widedeep
//! cards<TAB>24,5,...
//! n_counts<TAB>15
//! embed_dim<TAB>8
//! widths<TAB>64,32
//! norm_mean<TAB>r,r,...
//! norm_std<TAB>r,r,...
//! params<TAB>N
//! <N lines, one real each>
//! ```

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::exec::{map_range, Execution};
use crate::math::{logistic_loss, logit, sigmoid};

use super::PredictError;

/// One model input: categorical values plus raw joined counts.
#[derive(Debug, Clone, PartialEq)]
pub struct WdInput {
    pub cats: Vec<u32>,
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideDeepParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for WideDeepParams {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            step_size: 0.01,
            embed_dim: 8,
            widths: vec![64, 32],
            seed: 0,
        }
    }
}

impl WideDeepParams {
    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |m: &str| Err(PredictError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return bad("step_size must be finite and non-negative");
        }
        if !self.widths.is_empty() && self.embed_dim == 0 {
            return bad("embed_dim must be at least 1 when the deep part is on");
        }
        if self.widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    wide_cnt: usize,
    bias: usize,
    emb: usize,
    layers: Vec<Layer>,
    out_w: usize,
    out_b: usize,
    deep_in: usize,
    len: usize,
}

impl Layout {
    fn new(n_cat: usize, n_features: usize, n_counts: usize, embed_dim: usize, widths: &[usize]) -> Self {
        let wide_cnt = n_cat;
        let bias = wide_cnt + n_counts;
        let emb = bias + 1;
        let mut at = emb;
        let mut layers = Vec::new();
        let mut deep_in = 0;
        let (mut out_w, mut out_b) = (at, at);
        if !widths.is_empty() {
            at += n_cat * embed_dim;
            deep_in = n_features * embed_dim + n_counts;
            let mut fan_in = deep_in;
            for &fan_out in widths {
                layers.push(Layer {
                    w: at,
                    b: at + fan_in * fan_out,
                    fan_in,
                    fan_out,
                });
                at += fan_in * fan_out + fan_out;
                fan_in = fan_out;
            }
            out_w = at;
            out_b = at + fan_in;
            at += fan_in + 1;
        }
        Self {
            wide_cnt,
            bias,
            emb,
            layers,
            out_w,
            out_b,
            deep_in,
            len: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideDeep {
    cards: Vec<u32>,
    cat_offsets: Vec<usize>,
    n_counts: usize,
    embed_dim: usize,
    widths: Vec<usize>,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    layout: Layout,
    pub params: Vec<f64>,
}

fn transform_counts(raw: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for t in raw.chunks(3) {
        out.extend([
            t[0].ln_1p(),
            t.get(1).map_or(0.0, |v| v.ln_1p()),
            t.get(2).copied().unwrap_or(0.0),
        ]);
    }
    out.truncate(raw.len());
}

impl WideDeep {
    /// Zero-initialized model. `norm_*` standardize the transformed counts
    /// for the deep part.
    pub fn new(
        cards: &[u32],
        n_counts: usize,
        embed_dim: usize,
        widths: &[usize],
        norm_mean: Vec<f64>,
        norm_std: Vec<f64>,
    ) -> Result<Self, PredictError> {
        if norm_mean.len() != n_counts || norm_std.len() != n_counts {
            return Err(PredictError::DimensionMismatch {
                expected: n_counts,
                actual: norm_mean.len(),
            });
        }
        if norm_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(PredictError::InvalidConfig(
                "normalization scales must be positive".into(),
            ));
        }
        let mut cat_offsets = Vec::with_capacity(cards.len());
        let mut n_cat = 0;
        for &c in cards {
            cat_offsets.push(n_cat);
            n_cat += c as usize;
        }
        let embed_dim = if widths.is_empty() { 0 } else { embed_dim };
        let layout = Layout::new(n_cat, cards.len(), n_counts, embed_dim, widths);
        Ok(Self {
            cards: cards.to_vec(),
            cat_offsets,
            n_counts,
            embed_dim,
            widths: widths.to_vec(),
            norm_mean,
            norm_std,
            params: vec![0.0; layout.len],
            layout,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    pub fn has_deep(&self) -> bool {
        !self.widths.is_empty()
    }

    /// Gaussian initialization: embeddings at scale 0.05, hidden layers He
    /// scaled, output layer at `1/sqrt(fan_in)`. Wide weights stay zero.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = &self.layout;
        let mut fill = |range: std::ops::Range<usize>, sd: f64, params: &mut [f64]| {
            let n = Normal::new(0.0, sd).expect("positive sd");
            for p in &mut params[range] {
                *p = n.sample(&mut rng);
            }
        };
        if !self.widths.is_empty() {
            let emb_end = l.layers[0].w;
            fill(l.emb..emb_end, 0.05, &mut self.params);
            for layer in &l.layers {
                fill(layer.w..layer.b, (2.0 / layer.fan_in as f64).sqrt(), &mut self.params);
            }
            let last = l.layers.last().expect("deep part has layers").fan_out;
            fill(l.out_w..l.out_b, (1.0 / last as f64).sqrt(), &mut self.params);
        }
    }

    pub fn set_bias(&mut self, b: f64) {
        self.params[self.layout.bias] = b;
    }

    fn check(&self, x: &WdInput) -> Result<(), PredictError> {
        if x.cats.len() != self.cards.len() {
            return Err(PredictError::DimensionMismatch {
                expected: self.cards.len(),
                actual: x.cats.len(),
            });
        }
        if x.counts.len() != self.n_counts {
            return Err(PredictError::DimensionMismatch {
                expected: self.n_counts,
                actual: x.counts.len(),
            });
        }
        if let Some((&c, &card)) = x.cats.iter().zip(&self.cards).find(|(&c, &card)| c >= card) {
            return Err(PredictError::DimensionMismatch {
                expected: card as usize,
                actual: c as usize + 1,
            });
        }
        Ok(())
    }

    /// Margin for `x`; fills `acts` with the deep activations (input first).
    fn forward(&self, x: &WdInput, t: &mut Vec<f64>, acts: &mut Vec<Vec<f64>>) -> f64 {
        let p = &self.params;
        let l = &self.layout;
        transform_counts(&x.counts, t);
        let mut z = p[l.bias];
        for (&c, &off) in x.cats.iter().zip(&self.cat_offsets) {
            z += p[off + c as usize];
        }
        for (m, &v) in t.iter().enumerate() {
            z += p[l.wide_cnt + m] * v;
        }
        if self.widths.is_empty() {
            return z;
        }
        acts.resize(l.layers.len() + 1, Vec::new());
        let a0 = &mut acts[0];
        a0.clear();
        let d = self.embed_dim;
        for (&c, &off) in x.cats.iter().zip(&self.cat_offsets) {
            let row = l.emb + (off + c as usize) * d;
            a0.extend_from_slice(&p[row..row + d]);
        }
        for (m, &v) in t.iter().enumerate() {
            a0.push((v - self.norm_mean[m]) / self.norm_std[m]);
        }
        for (i, layer) in l.layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(i + 1);
            let input = &prev[i];
            let out = &mut rest[0];
            out.clear();
            for o in 0..layer.fan_out {
                let w = &p[layer.w + o * layer.fan_in..layer.w + (o + 1) * layer.fan_in];
                let s: f64 = w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + p[layer.b + o];
                out.push(s.max(0.0));
            }
        }
        let last = &acts[l.layers.len()];
        z + p[l.out_w..l.out_b].iter().zip(last).map(|(a, b)| a * b).sum::<f64>() + p[l.out_b]
    }

    /// Adds `dz * d(margin)/d(params)` into `grad`.
    fn backward(&self, x: &WdInput, t: &[f64], acts: &[Vec<f64>], dz: f64, grad: &mut [f64], scratch: &mut Vec<f64>) {
        let p = &self.params;
        let l = &self.layout;
        grad[l.bias] += dz;
        for (&c, &off) in x.cats.iter().zip(&self.cat_offsets) {
            grad[off + c as usize] += dz;
        }
        for (m, &v) in t.iter().enumerate() {
            grad[l.wide_cnt + m] += dz * v;
        }
        if self.widths.is_empty() {
            return;
        }
        let n_layers = l.layers.len();
        let last = &acts[n_layers];
        grad[l.out_b] += dz;
        let mut delta: Vec<f64> = Vec::with_capacity(last.len());
        for (i, &a) in last.iter().enumerate() {
            grad[l.out_w + i] += dz * a;
            delta.push(dz * p[l.out_w + i]);
        }
        for (li, layer) in l.layers.iter().enumerate().rev() {
            let out = &acts[li + 1];
            let input = &acts[li];
            scratch.clear();
            scratch.resize(layer.fan_in, 0.0);
            for o in 0..layer.fan_out {
                if out[o] <= 0.0 {
                    continue;
                }
                let d = delta[o];
                grad[layer.b + o] += d;
                let row = layer.w + o * layer.fan_in;
                for k in 0..layer.fan_in {
                    grad[row + k] += d * input[k];
                    scratch[k] += d * p[row + k];
                }
            }
            std::mem::swap(&mut delta, scratch);
        }
        let d = self.embed_dim;
        for (j, (&c, &off)) in x.cats.iter().zip(&self.cat_offsets).enumerate() {
            let row = l.emb + (off + c as usize) * d;
            for k in 0..d {
                grad[row + k] += delta[j * d + k];
            }
        }
    }

    pub fn margin(&self, x: &WdInput) -> Result<f64, PredictError> {
        self.check(x)?;
        Ok(self.forward(x, &mut Vec::new(), &mut Vec::new()))
    }

    pub fn predict(&self, x: &WdInput) -> Result<f64, PredictError> {
        self.margin(x).map(sigmoid)
    }

    pub fn predict_batch(&self, xs: &[WdInput], exec: Execution) -> Result<Vec<f64>, PredictError> {
        map_range(xs.len(), exec, |i| self.predict(&xs[i]))
            .into_iter()
            .collect()
    }

    /// Summed logistic loss and its gradient over `idx`.
    fn loss_grad(&self, xs: &[WdInput], ys: &[u8], idx: &[usize], grad: &mut [f64]) -> f64 {
        let (mut t, mut acts, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
        let mut loss = 0.0;
        for &i in idx {
            let z = self.forward(&xs[i], &mut t, &mut acts);
            loss += logistic_loss(z, ys[i]);
            let dz = sigmoid(z) - f64::from(ys[i]);
            self.backward(&xs[i], &t, &acts, dz, grad, &mut scratch);
        }
        loss
    }

    /// Mean logistic loss and its gradient. Samples are processed in fixed
    /// chunks and the partial sums are added in chunk order, so the result
    /// does not depend on the execution mode.
    pub fn mean_loss_grad(&self, xs: &[WdInput], ys: &[u8], idx: &[usize], exec: Execution) -> (f64, Vec<f64>) {
        const CHUNK: usize = 32;
        let n_chunks = idx.len().div_ceil(CHUNK);
        let parts = map_range(n_chunks, exec, |c| {
            let mut g = vec![0.0; self.layout.len];
            let lo = c * CHUNK;
            let loss = self.loss_grad(xs, ys, &idx[lo..(lo + CHUNK).min(idx.len())], &mut g);
            (loss, g)
        });
        let mut grad = vec![0.0; self.layout.len];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let n = idx.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub fn mean_loss(&self, xs: &[WdInput], ys: &[u8], exec: Execution) -> f64 {
        let losses = map_range(xs.len(), exec, |i| {
            logistic_loss(self.forward(&xs[i], &mut Vec::new(), &mut Vec::new()), ys[i])
        });
        losses.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::from("widedeep\n");
        let _ = writeln!(
            s,
            "cards\t{}",
            join(&self.cards.iter().map(u32::to_string).collect::<Vec<_>>())
        );
        let _ = writeln!(s, "n_counts\t{}", self.n_counts);
        let _ = writeln!(s, "embed_dim\t{}", self.embed_dim);
        let _ = writeln!(
            s,
            "widths\t{}",
            join(&self.widths.iter().map(usize::to_string).collect::<Vec<_>>())
        );
        let _ = writeln!(
            s,
            "norm_mean\t{}",
            join(&self.norm_mean.iter().map(f64::to_string).collect::<Vec<_>>())
        );
        let _ = writeln!(
            s,
            "norm_std\t{}",
            join(&self.norm_std.iter().map(f64::to_string).collect::<Vec<_>>())
        );
        let _ = writeln!(s, "params\t{}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, PredictError> {
        let bad = |line: usize, reason: &str| PredictError::Malformed {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|l| l.1) != Some("widedeep") {
            return Err(bad(1, "expected `widedeep` header"));
        }
        let mut field = |name: &str| -> Result<(usize, String), PredictError> {
            let (i, l) = lines.next().ok_or_else(|| bad(0, &format!("missing `{name}`")))?;
            let rest = l.strip_prefix(name).and_then(|r| r.strip_prefix('\t'));
            rest.map(|r| (i + 1, r.to_string()))
                .ok_or_else(|| bad(i + 1, &format!("expected `{name}`")))
        };
        fn list<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>, PredictError> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|v| {
                    v.parse().map_err(|_| PredictError::Malformed {
                        line,
                        reason: format!("bad value `{v}`"),
                    })
                })
                .collect()
        }
        let (l, v) = field("cards")?;
        let cards: Vec<u32> = list(&v, l)?;
        let (l, v) = field("n_counts")?;
        let n_counts: usize = v.parse().map_err(|_| bad(l, "bad n_counts"))?;
        let (l, v) = field("embed_dim")?;
        let embed_dim: usize = v.parse().map_err(|_| bad(l, "bad embed_dim"))?;
        let (l, v) = field("widths")?;
        let widths: Vec<usize> = list(&v, l)?;
        let (l, v) = field("norm_mean")?;
        let norm_mean: Vec<f64> = list(&v, l)?;
        let (l, v) = field("norm_std")?;
        let norm_std: Vec<f64> = list(&v, l)?;
        let (l, v) = field("params")?;
        let n: usize = v.parse().map_err(|_| bad(l, "bad params count"))?;
        let mut model = WideDeep::new(&cards, n_counts, embed_dim, &widths, norm_mean, norm_std)?;
        if n != model.n_params() {
            return Err(bad(
                l,
                &format!("expected {} params, header says {n}", model.n_params()),
            ));
        }
        let body: Vec<(usize, &str)> = lines.collect();
        if body.len() != n {
            return Err(bad(l, &format!("expected {n} param lines, found {}", body.len())));
        }
        for (p, (i, s)) in model.params.iter_mut().zip(body) {
            *p = s.parse().map_err(|_| bad(i + 1, &format!("bad param `{s}`")))?;
        }
        Ok(model)
    }
}

/// Per-dimension mean and standard deviation of the transformed counts.
fn count_stats(xs: &[WdInput], n_counts: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; n_counts];
    let mut sq = vec![0.0; n_counts];
    let mut t = Vec::new();
    for x in xs {
        transform_counts(&x.counts, &mut t);
        for (m, &v) in t.iter().enumerate() {
            mean[m] += v;
            sq[m] += v * v;
        }
    }
    let n = xs.len().max(1) as f64;
    let std = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, s)| {
            *m /= n;
            let var = (s / n - *m * *m).max(0.0);
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Minibatch gradient descent on mean cross entropy. Returns the model and
/// the full training loss after each epoch.
pub fn train_wide_deep(
    xs: &[WdInput],
    ys: &[u8],
    cards: &[u32],
    params: &WideDeepParams,
    exec: Execution,
) -> Result<(WideDeep, Vec<f64>), PredictError> {
    params.validate()?;
    if xs.is_empty() {
        return Err(PredictError::EmptyTrain);
    }
    if xs.len() != ys.len() {
        return Err(PredictError::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let n_counts = xs[0].counts.len();
    let (mean, std) = count_stats(xs, n_counts);
    let mut model = WideDeep::new(cards, n_counts, params.embed_dim, &params.widths, mean, std)?;
    for x in xs {
        model.check(x)?;
    }
    model.init_random(params.seed);
    let clicks = ys.iter().filter(|&&y| y == 1).count() as f64;
    model.set_bias(logit((clicks + 0.5) / (xs.len() as f64 + 1.0)));

    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
    let mut history = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let (_, grad) = model.mean_loss_grad(xs, ys, batch, exec);
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= params.step_size * g;
            }
        }
        let loss = model.mean_loss(xs, ys, exec);
        if !loss.is_finite() {
            return Err(PredictError::DivergedTraining { epoch, loss });
        }
        history.push(loss);
    }
    Ok((model, history))
}

/// Largest relative error between the analytic gradient of the mean loss and
/// central finite differences with step `h`. The denominator is floored at
/// `1e-8` so parameters with vanishing gradients do not blow up the ratio.
pub fn gradient_check(model: &WideDeep, xs: &[WdInput], ys: &[u8], h: f64) -> f64 {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let (_, analytic) = model.mean_loss_grad(xs, ys, &idx, Execution::Sequential);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.mean_loss(xs, ys, Execution::Sequential);
        probe.params[i] = orig - h;
        let down = probe.mean_loss(xs, ys, Execution::Sequential);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
