//! The prediction network over one flat parameter vector.
//!
//! Per time step: five tanh embeddings (result encoding, statement, binary
//! delta, count one-hot, min-table one-hot) are concatenated and projected
//! by a tanh merge layer, then fed to a stacked LSTM. The final hidden state
//! (with dropout during training) drives three heads, each of which also
//! sees one input from the last query.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{Extras, QueryContext, Targets};
use super::loss::{cross_entropy, cross_entropy_grad, focal_grad, focal_loss};
use crate::encoding::StatementRepr;
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, affine_backward_sparse, affine_sparse, glorot, nonzero, sigmoid, softmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub hidden: usize,
    pub merge: usize,
    pub layers: usize,
    pub dropout: f64,
    pub emb_result: usize,
    pub emb_stmt: usize,
    pub emb_delta: usize,
    pub emb_count: usize,
    pub emb_table: usize,
    pub count_buckets: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 2,
            hidden: 64,
            merge: 128,
            layers: 1,
            dropout: 0.2,
            emb_result: 64,
            emb_stmt: 32,
            emb_delta: 64,
            emb_count: 8,
            emb_table: 8,
            count_buckets: super::context::DEFAULT_COUNT_BUCKETS,
            seed: 0,
        }
    }
}

/// Data-dependent widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub tables: usize,
    pub enc_dim: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn stmt_dim(&self) -> usize {
        StatementRepr::len_for(self.tables)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub wh: Range<usize>,
    pub we: Range<usize>,
    pub b: Range<usize>,
    pub rows: usize,
    pub extra: usize,
}

/// Offsets of every weight block inside the flat parameter vector. The three
/// heads sit last, starting at `head_start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub emb: [Dense; 5],
    pub merge: Dense,
    pub lstm: Vec<Dense>,
    pub tables: Head,
    pub count: Head,
    pub deltas: Head,
    pub head_start: usize,
    pub total: usize,
}

const EMB_NAMES: [&str; 5] = ["emb_result", "emb_stmt", "emb_delta", "emb_count", "emb_table"];

impl Layout {
    pub fn new(cfg: &ModelConfig, shape: &ModelShape) -> Self {
        let mut at = 0;
        let mut dense = |rows: usize, cols: usize| {
            let w = at..at + rows * cols;
            let b = w.end..w.end + rows;
            at = b.end;
            Dense { w, b, rows, cols }
        };
        let emb = [
            dense(cfg.emb_result, shape.tables * shape.enc_dim),
            dense(cfg.emb_stmt, shape.stmt_dim()),
            dense(cfg.emb_delta, shape.classes),
            dense(cfg.emb_count, cfg.count_buckets),
            dense(cfg.emb_table, shape.tables),
        ];
        let emb_width: usize = emb.iter().map(|d| d.rows).sum();
        let merge = dense(cfg.merge, emb_width);
        let lstm = (0..cfg.layers)
            .map(|l| dense(4 * cfg.hidden, if l == 0 { cfg.merge } else { cfg.hidden } + cfg.hidden))
            .collect();
        let head_start = at;
        let mut head = |rows: usize, extra: usize| {
            let wh = at..at + rows * cfg.hidden;
            let we = wh.end..wh.end + rows * extra;
            let b = we.end..we.end + rows;
            at = b.end;
            Head { wh, we, b, rows, extra }
        };
        let tables = head(shape.tables, shape.tables);
        let count = head(cfg.count_buckets, cfg.count_buckets);
        let deltas = head(shape.classes, shape.classes);
        Layout { emb, merge, lstm, tables, count, deltas, head_start, total: at }
    }

    /// Named weight blocks in declaration order.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (name, d) in EMB_NAMES.iter().zip(&self.emb) {
            out.push((format!("{name}.w"), d.w.clone()));
            out.push((format!("{name}.b"), d.b.clone()));
        }
        out.push(("merge.w".into(), self.merge.w.clone()));
        out.push(("merge.b".into(), self.merge.b.clone()));
        for (l, d) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{l}.w"), d.w.clone()));
            out.push((format!("lstm{l}.b"), d.b.clone()));
        }
        for (name, h) in [("head_tables", &self.tables), ("head_count", &self.count), ("head_deltas", &self.deltas)] {
            out.push((format!("{name}.wh"), h.wh.clone()));
            out.push((format!("{name}.we"), h.we.clone()));
            out.push((format!("{name}.b"), h.b.clone()));
        }
        out
    }

    pub fn head_range(&self) -> Range<usize> {
        self.head_start..self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tables: Vec<f64>,
    pub count: Vec<f64>,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub deltas: f64,
    pub tables: f64,
    pub count: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.deltas + self.tables + self.count
    }

    pub fn add(&mut self, o: &LossParts) {
        self.deltas += o.deltas;
        self.tables += o.tables;
        self.count += o.count;
    }

    pub fn scale(&mut self, f: f64) {
        self.deltas *= f;
        self.tables *= f;
        self.count *= f;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

struct LstmStep {
    /// `[x; h_prev]`
    input: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tc: Vec<f64>,
}

struct Cache {
    /// Per step: concatenated embeddings (post-tanh).
    emb: Vec<Vec<f64>>,
    /// Per step: merged vector (post-tanh).
    merged: Vec<Vec<f64>>,
    lstm: Vec<Vec<LstmStep>>,
    /// Dropped-out final hidden state and the mask that produced it.
    h: Vec<f64>,
    mask: Option<Vec<f64>>,
    pred: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub cfg: ModelConfig,
    pub shape: ModelShape,
    pub params: Vec<f64>,
    #[serde(skip)]
    layout: Option<Layout>,
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

impl Network {
    pub fn new(cfg: ModelConfig, shape: ModelShape) -> Self {
        let layout = Layout::new(&cfg, &shape);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6574);
        for d in layout.emb.iter().chain(std::iter::once(&layout.merge)).chain(&layout.lstm) {
            glorot(&mut rng, d.rows, d.cols, &mut params[d.w.clone()]);
        }
        for d in &layout.lstm {
            // forget gate bias
            let h = d.rows / 4;
            params[d.b.start + h..d.b.start + 2 * h].iter_mut().for_each(|b| *b = 1.0);
        }
        for head in [&layout.tables, &layout.count, &layout.deltas] {
            glorot(&mut rng, head.rows, cfg.hidden, &mut params[head.wh.clone()]);
            glorot(&mut rng, head.rows, head.extra.max(1), &mut params[head.we.clone()]);
        }
        // rare-positive prior for the multi-label delta head
        let prior = -(99.0f64).ln();
        params[layout.deltas.b.clone()].iter_mut().for_each(|b| *b = prior);
        Self { cfg, shape, params, layout: Some(layout) }
    }

    /// Rebuilds a network around loaded weights.
    pub fn from_params(cfg: ModelConfig, shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&cfg, &shape);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch {
                component: "parameter vector",
                expected: layout.total,
                actual: params.len(),
            });
        }
        Ok(Self { cfg, shape, params, layout: Some(layout) })
    }

    pub fn layout(&self) -> Layout {
        self.layout.clone().unwrap_or_else(|| Layout::new(&self.cfg, &self.shape))
    }

    fn layout_ref(&self) -> std::borrow::Cow<'_, Layout> {
        match &self.layout {
            Some(l) => std::borrow::Cow::Borrowed(l),
            None => std::borrow::Cow::Owned(Layout::new(&self.cfg, &self.shape)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_context(&self, ctx: &QueryContext) -> Result<()> {
        let s = &self.shape;
        let checks = [
            ("result_enc", ctx.result_enc.len(), s.tables * s.enc_dim),
            ("stmt", ctx.stmt.len(), s.stmt_dim()),
            ("bi_delta", ctx.bi_delta.len(), s.classes),
            ("count_onehot", ctx.count_onehot.len(), self.cfg.count_buckets),
            ("min_table_onehot", ctx.min_table_onehot.len(), s.tables),
        ];
        for (component, actual, expected) in checks {
            if actual != expected {
                return Err(Error::ShapeMismatch { component, expected, actual });
            }
        }
        Ok(())
    }

    fn check_extras(&self, e: &Extras) -> Result<()> {
        let checks = [
            ("extra count_onehot", e.count_onehot.len(), self.cfg.count_buckets),
            ("extra tables", e.tables.len(), self.shape.tables),
            ("extra bi_delta", e.bi_delta.len(), self.shape.classes),
        ];
        for (component, actual, expected) in checks {
            if actual != expected {
                return Err(Error::ShapeMismatch { component, expected, actual });
            }
        }
        Ok(())
    }

    fn forward_cached<R: Rng>(
        &self,
        window: &[Option<&QueryContext>],
        extras: &Extras,
        dropout: Option<&mut R>,
    ) -> Result<Cache> {
        if window.len() != self.cfg.lookback {
            return Err(Error::ShapeMismatch {
                component: "context window",
                expected: self.cfg.lookback,
                actual: window.len(),
            });
        }
        for ctx in window.iter().flatten() {
            self.check_context(ctx)?;
        }
        self.check_extras(extras)?;
        let lay = self.layout_ref();
        let p = &self.params;
        let hidden = self.cfg.hidden;
        let mut cache = Cache {
            emb: Vec::with_capacity(window.len()),
            merged: Vec::with_capacity(window.len()),
            lstm: (0..self.cfg.layers).map(|_| Vec::with_capacity(window.len())).collect(),
            h: Vec::new(),
            mask: None,
            pred: Prediction { tables: vec![], count: vec![], deltas: vec![] },
        };
        for ctx in window {
            let mut emb = Vec::with_capacity(lay.merge.cols);
            for (k, d) in lay.emb.iter().enumerate() {
                let mut out = vec![0.0; d.rows];
                match ctx {
                    Some(c) => {
                        let x = component(c, k);
                        affine_sparse(&p[d.w.clone()], &p[d.b.clone()], x, &nonzero(x), &mut out);
                    }
                    None => out.copy_from_slice(&p[d.b.clone()]),
                }
                tanh_in_place(&mut out);
                emb.extend(out);
            }
            let mut merged = vec![0.0; lay.merge.rows];
            affine(&p[lay.merge.w.clone()], &p[lay.merge.b.clone()], &emb, &mut merged);
            tanh_in_place(&mut merged);
            cache.emb.push(emb);
            cache.merged.push(merged);
        }
        for (l, d) in lay.lstm.iter().enumerate() {
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            for t in 0..window.len() {
                let mut input = if l == 0 { cache.merged[t].clone() } else { cache.lstm[l - 1][t].output_h() };
                input.extend_from_slice(&h);
                let mut z = vec![0.0; 4 * hidden];
                affine(&p[d.w.clone()], &p[d.b.clone()], &input, &mut z);
                let i: Vec<f64> = z[..hidden].iter().map(|v| sigmoid(*v)).collect();
                let f: Vec<f64> = z[hidden..2 * hidden].iter().map(|v| sigmoid(*v)).collect();
                let g: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|v| v.tanh()).collect();
                let o: Vec<f64> = z[3 * hidden..].iter().map(|v| sigmoid(*v)).collect();
                let c_prev = c.clone();
                for j in 0..hidden {
                    c[j] = f[j] * c_prev[j] + i[j] * g[j];
                }
                let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                for j in 0..hidden {
                    h[j] = o[j] * tc[j];
                }
                cache.lstm[l].push(LstmStep { input, i, f, g, o, c_prev, tc });
            }
        }
        let mut h = cache.lstm[self.cfg.layers - 1].last().expect("lookback >= 1").output_h();
        if let Some(rng) = dropout {
            if self.cfg.dropout > 0.0 {
                let keep = 1.0 - self.cfg.dropout;
                let mask: Vec<f64> =
                    (0..hidden).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                cache.mask = Some(mask);
            }
        }
        let head = |hd: &Head, extra: &[f64]| {
            let mut z = vec![0.0; hd.rows];
            affine(&p[hd.wh.clone()], &p[hd.b.clone()], &h, &mut z);
            let mut ze = vec![0.0; hd.rows];
            affine_sparse(&p[hd.we.clone()], &vec![0.0; hd.rows], extra, &nonzero(extra), &mut ze);
            z.iter_mut().zip(&ze).for_each(|(a, b)| *a += b);
            z
        };
        let tables: Vec<f64> = head(&lay.tables, extras.tables).into_iter().map(sigmoid).collect();
        let count = softmax(&head(&lay.count, extras.count_onehot));
        let deltas: Vec<f64> = head(&lay.deltas, extras.bi_delta).into_iter().map(sigmoid).collect();
        cache.h = h;
        cache.pred = Prediction { tables, count, deltas };
        Ok(cache)
    }

    /// Inference pass; dropout is off, so repeated calls agree exactly.
    pub fn forward(&self, window: &[Option<&QueryContext>], extras: &Extras) -> Result<Prediction> {
        Ok(self.forward_cached::<ChaCha8Rng>(window, extras, None)?.pred)
    }

    /// Loss of one sample. When `grad` is given, the gradient of that loss is
    /// added into it. `dropout` enables training-mode dropout.
    pub fn loss_and_grad<R: Rng>(
        &self,
        window: &[Option<&QueryContext>],
        extras: &Extras,
        targets: &Targets,
        focal: FocalParams,
        dropout: Option<&mut R>,
        grad: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        let cache = self.forward_cached(window, extras, dropout)?;
        let pred = &cache.pred;
        if targets.tables.len() != pred.tables.len() {
            return Err(Error::ShapeMismatch {
                component: "table targets",
                expected: pred.tables.len(),
                actual: targets.tables.len(),
            });
        }
        if targets.deltas.len() != pred.deltas.len() {
            return Err(Error::ShapeMismatch {
                component: "delta targets",
                expected: pred.deltas.len(),
                actual: targets.deltas.len(),
            });
        }
        if targets.count_bucket >= pred.count.len() {
            return Err(Error::ShapeMismatch {
                component: "count target",
                expected: pred.count.len(),
                actual: targets.count_bucket,
            });
        }
        let parts = LossParts {
            deltas: focal_loss(&targets.deltas, &pred.deltas, focal.alpha, focal.gamma)?,
            tables: focal_loss(&targets.tables, &pred.tables, focal.alpha, focal.gamma)?,
            count: cross_entropy(targets.count_bucket, &pred.count),
        };
        if let Some(grad) = grad {
            self.backward(window, extras, targets, focal, &cache, grad);
        }
        Ok(parts)
    }

    fn backward(
        &self,
        window: &[Option<&QueryContext>],
        extras: &Extras,
        targets: &Targets,
        focal: FocalParams,
        cache: &Cache,
        grad: &mut [f64],
    ) {
        let lay = self.layout_ref();
        let p = &self.params;
        let hidden = self.cfg.hidden;
        let pred = &cache.pred;
        let mut dh = vec![0.0; hidden];

        let mut head_back = |hd: &Head, dz: &[f64], extra: &[f64], grad: &mut [f64]| {
            let (dwh, rest) = grad[hd.wh.start..hd.b.end].split_at_mut(hd.wh.len());
            let (dwe, db) = rest.split_at_mut(hd.we.len());
            affine_backward(&p[hd.wh.clone()], &cache.h, dz, dwh, db, Some(&mut dh));
            let mut scratch = vec![0.0; hd.rows];
            affine_backward_sparse(extra, &nonzero(extra), dz, dwe, &mut scratch);
        };
        let mut dz = vec![0.0; pred.tables.len()];
        focal_grad(&targets.tables, &pred.tables, focal.alpha, focal.gamma, &mut dz);
        head_back(&lay.tables, &dz, extras.tables, grad);
        let mut dz = vec![0.0; pred.count.len()];
        cross_entropy_grad(targets.count_bucket, &pred.count, &mut dz);
        head_back(&lay.count, &dz, extras.count_onehot, grad);
        let mut dz = vec![0.0; pred.deltas.len()];
        focal_grad(&targets.deltas, &pred.deltas, focal.alpha, focal.gamma, &mut dz);
        head_back(&lay.deltas, &dz, extras.bi_delta, grad);

        if let Some(mask) = &cache.mask {
            dh.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }

        let steps = window.len();
        // gradient arriving at each step's output of the current layer
        let mut from_above: Vec<Vec<f64>> = vec![vec![0.0; hidden]; steps];
        from_above[steps - 1] = dh;
        for (l, d) in lay.lstm.iter().enumerate().rev() {
            let in_dim = d.cols - hidden;
            let mut below: Vec<Vec<f64>> = vec![vec![0.0; in_dim]; steps];
            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            for t in (0..steps).rev() {
                let s = &cache.lstm[l][t];
                let mut dz = vec![0.0; 4 * hidden];
                for j in 0..hidden {
                    let dh_j = from_above[t][j] + dh_next[j];
                    let dc = dc_next[j] + dh_j * s.o[j] * (1.0 - s.tc[j] * s.tc[j]);
                    let d_o = dh_j * s.tc[j];
                    let d_i = dc * s.g[j];
                    let d_g = dc * s.i[j];
                    let d_f = dc * s.c_prev[j];
                    dz[j] = d_i * s.i[j] * (1.0 - s.i[j]);
                    dz[hidden + j] = d_f * s.f[j] * (1.0 - s.f[j]);
                    dz[2 * hidden + j] = d_g * (1.0 - s.g[j] * s.g[j]);
                    dz[3 * hidden + j] = d_o * s.o[j] * (1.0 - s.o[j]);
                    dc_next[j] = dc * s.f[j];
                }
                let mut dinput = vec![0.0; d.cols];
                let (dw, db) = grad[d.w.start..d.b.end].split_at_mut(d.w.len());
                affine_backward(&p[d.w.clone()], &s.input, &dz, dw, db, Some(&mut dinput));
                below[t].copy_from_slice(&dinput[..in_dim]);
                dh_next.copy_from_slice(&dinput[in_dim..]);
            }
            from_above = below;
        }

        for t in 0..steps {
            let dm: Vec<f64> = from_above[t].iter().zip(&cache.merged[t]).map(|(g, m)| g * (1.0 - m * m)).collect();
            let mut demb = vec![0.0; lay.merge.cols];
            let (dw, db) = grad[lay.merge.w.start..lay.merge.b.end].split_at_mut(lay.merge.w.len());
            affine_backward(&p[lay.merge.w.clone()], &cache.emb[t], &dm, dw, db, Some(&mut demb));
            let mut off = 0;
            for (k, d) in lay.emb.iter().enumerate() {
                let e = &cache.emb[t][off..off + d.rows];
                let dz: Vec<f64> = demb[off..off + d.rows].iter().zip(e).map(|(g, v)| g * (1.0 - v * v)).collect();
                off += d.rows;
                let (dw, db) = grad[d.w.start..d.b.end].split_at_mut(d.w.len());
                match window[t] {
                    Some(c) => {
                        let x = component(c, k);
                        affine_backward_sparse(x, &nonzero(x), &dz, dw, db);
                    }
                    None => db.iter_mut().zip(&dz).for_each(|(b, g)| *b += g),
                }
            }
        }
    }

    /// Reinitializes the incoming weights of the given delta-head classes.
    pub fn reinit_delta_rows(&mut self, classes: &[usize], seed: u64) {
        let lay = self.layout();
        let hd = &lay.deltas;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_696e);
        let limit_h = (6.0 / (hd.rows + self.cfg.hidden) as f64).sqrt();
        let limit_e = (6.0 / (hd.rows + hd.extra.max(1)) as f64).sqrt();
        let prior = -(99.0f64).ln();
        for &c in classes.iter().filter(|c| **c < hd.rows) {
            for v in &mut self.params[hd.wh.start + c * self.cfg.hidden..hd.wh.start + (c + 1) * self.cfg.hidden] {
                *v = rng.random_range(-limit_h..limit_h);
            }
            for v in &mut self.params[hd.we.start + c * hd.extra..hd.we.start + (c + 1) * hd.extra] {
                *v = rng.random_range(-limit_e..limit_e);
            }
            self.params[hd.b.start + c] = prior;
        }
    }
}

impl LstmStep {
    fn output_h(&self) -> Vec<f64> {
        self.o.iter().zip(&self.tc).map(|(o, t)| o * t).collect()
    }
}

fn component(c: &QueryContext, k: usize) -> &[f64] {
    match k {
        0 => &c.result_enc,
        1 => &c.stmt,
        2 => &c.bi_delta,
        3 => &c.count_onehot,
        _ => &c.min_table_onehot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::context::one_hot;

    pub(crate) fn toy() -> Network {
        let cfg = ModelConfig {
            lookback: 2,
            hidden: 3,
            merge: 4,
            layers: 1,
            dropout: 0.0,
            emb_result: 2,
            emb_stmt: 2,
            emb_delta: 2,
            emb_count: 2,
            emb_table: 2,
            count_buckets: 3,
            seed: 5,
        };
        Network::new(cfg, ModelShape { tables: 1, enc_dim: 2, classes: 3 })
    }

    fn ctx(seed: f64, net: &Network) -> QueryContext {
        let s = &net.shape;
        QueryContext {
            result_enc: (0..s.tables * s.enc_dim).map(|i| (seed + i as f64).sin()).collect(),
            stmt: (0..s.stmt_dim()).map(|i| if i % 3 == 0 { (seed * i as f64).cos() } else { 0.0 }).collect(),
            bi_delta: (0..s.classes).map(|i| ((i + seed as usize) % 2) as f64).collect(),
            count_onehot: one_hot(1, net.cfg.count_buckets),
            min_table_onehot: one_hot(0, s.tables),
            tables: one_hot(0, s.tables),
        }
    }

    #[test]
    fn layout_is_contiguous_with_heads_last() {
        let net = Network::new(ModelConfig::default(), ModelShape { tables: 4, enc_dim: 16, classes: 65 });
        let blocks = net.layout().blocks();
        let mut at = 0;
        for (_, r) in &blocks {
            assert_eq!(r.start, at);
            at = r.end;
        }
        assert_eq!(at, net.param_count());
        let lay = net.layout();
        assert_eq!(lay.merge.cols, 176);
        assert_eq!(lay.merge.rows, 128);
        assert_eq!(lay.head_start, lay.tables.wh.start);
    }

    #[test]
    fn output_contract() {
        let net = toy();
        let (a, b) = (ctx(1.0, &net), ctx(2.0, &net));
        let extras = Extras { count_onehot: &b.count_onehot, tables: &b.tables, bi_delta: &b.bi_delta };
        let p = net.forward(&[Some(&a), Some(&b)], &extras).unwrap();
        assert_eq!((p.tables.len(), p.count.len(), p.deltas.len()), (1, 3, 3));
        assert!((p.count.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.tables.iter().chain(&p.deltas).all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(p, net.forward(&[Some(&a), Some(&b)], &extras).unwrap());
        let cold = net.forward(&[None, None], &Extras { count_onehot: &[0.0; 3], tables: &[0.0], bi_delta: &[0.0; 3] });
        assert!(cold.is_ok());
    }

    #[test]
    fn shape_errors_name_component() {
        let net = toy();
        let mut a = ctx(1.0, &net);
        a.bi_delta.push(0.0);
        let extras = Extras { count_onehot: &[0.0; 3], tables: &[0.0], bi_delta: &[0.0; 3] };
        match net.forward(&[None, Some(&a)], &extras) {
            Err(Error::ShapeMismatch { component, .. }) => assert_eq!(component, "bi_delta"),
            other => panic!("{other:?}"),
        }
        assert!(net.forward(&[None], &extras).is_err());
    }
}
