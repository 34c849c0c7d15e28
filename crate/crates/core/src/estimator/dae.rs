//! Masked denoising autoencoder over dictionary-encoded join rows.
//!
//! Each attribute enters either as a one-hot block (with one extra slot for
//! the mask token) or as a learned embedding whose last row is the mask
//! token. A ReLU trunk feeds one softmax head per attribute. Training masks a
//! random number of attributes per row and scores only the masked ones.

use std::fmt::Debug;
use std::time::Instant;

use ndarray::{s, Array2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_inputs, check_target, DensityEstimator, MASK};
use crate::error::{Error, Result};
use crate::ingest::Code;
use crate::joiner::{JoinLayout, JoinSample};

pub trait Real:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

const PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Domains up to this size are one-hot encoded, larger ones embedded.
    pub one_hot_max_domain: usize,
    pub max_embedding_dim: usize,
    /// Rescale the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            hidden: vec![256, 256],
            steps: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            one_hot_max_domain: 64,
            max_embedding_dim: 64,
            clip_norm: None,
        }
    }
}

impl DaeConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    /// Embedding width for an attribute with `domain` codes; `None` means one-hot.
    pub fn embedding_dim(&self, domain: usize) -> Option<usize> {
        if domain <= self.one_hot_max_domain {
            None
        } else {
            let d = (1.6 * (domain as f64).powf(0.56)).ceil() as usize;
            Some(d.min(self.max_embedding_dim).max(1))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) enum Encoding {
    OneHot,
    Embedding { table: usize, dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaeModel<F: Real> {
    pub(crate) config: DaeConfig,
    pub(crate) layout: JoinLayout,
    pub(crate) relation_size: u128,
    pub(crate) encodings: Vec<Encoding>,
    /// Embedding tables, `(domain + 1) x dim`; the last row is the mask token.
    pub(crate) embeddings: Vec<Array2<F>>,
    /// Trunk weights `in x out` and biases `1 x out`.
    pub(crate) weights: Vec<Array2<F>>,
    pub(crate) biases: Vec<Array2<F>>,
    pub(crate) head_weights: Vec<Array2<F>>,
    pub(crate) head_biases: Vec<Array2<F>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub seconds: f64,
}

fn he_init<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        F::from_f64(z * std).expect("finite")
    })
}

impl<F: Real> DaeModel<F> {
    pub fn new<R: Rng>(layout: &JoinLayout, relation_size: u128, config: &DaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if layout.is_empty() {
            return Err(Error::InvalidArgument("layout has no attributes".into()));
        }
        let mut encodings = Vec::with_capacity(layout.len());
        let mut embeddings = Vec::new();
        for a in &layout.attrs {
            match config.embedding_dim(a.domain) {
                None => encodings.push(Encoding::OneHot),
                Some(dim) => {
                    encodings.push(Encoding::Embedding { table: embeddings.len(), dim });
                    embeddings.push(he_init(rng, a.domain + 1, dim, dim));
                }
            }
        }
        let in_width: usize = layout
            .attrs
            .iter()
            .zip(&encodings)
            .map(|(a, e)| match e {
                Encoding::OneHot => a.domain + 1,
                Encoding::Embedding { dim, .. } => *dim,
            })
            .sum();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = in_width;
        for &h in &config.hidden {
            weights.push(he_init(rng, prev, h, prev));
            biases.push(Array2::zeros((1, h)));
            prev = h;
        }
        let mut head_weights = Vec::new();
        let mut head_biases = Vec::new();
        for a in &layout.attrs {
            head_weights.push(he_init(rng, prev, a.domain, prev));
            head_biases.push(Array2::zeros((1, a.domain)));
        }
        Ok(DaeModel {
            config: config.clone(),
            layout: layout.clone(),
            relation_size,
            encodings,
            embeddings,
            weights,
            biases,
            head_weights,
            head_biases,
        })
    }

    pub fn config(&self) -> &DaeConfig {
        &self.config
    }

    fn input_width(&self) -> usize {
        self.weights
            .first()
            .map_or_else(|| self.head_weights[0].nrows(), |w| w.nrows())
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Array2<F>> {
        let mut v: Vec<&Array2<F>> = self.embeddings.iter().collect();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.push(w);
            v.push(b);
        }
        for (w, b) in self.head_weights.iter().zip(&self.head_biases) {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut v: Vec<&mut Array2<F>> = self.embeddings.iter_mut().collect();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        for (w, b) in self.head_weights.iter_mut().zip(self.head_biases.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v
    }

    /// Builds the dense input matrix; `MASK` selects the mask token.
    fn encode(&self, inputs: &[Code], rows: usize) -> Array2<F> {
        let width = self.layout.len();
        let mut x = Array2::zeros((rows, self.input_width()));
        for r in 0..rows {
            let mut off = 0;
            for (a, enc) in self.encodings.iter().enumerate() {
                let dom = self.layout.attrs[a].domain;
                let code = inputs[r * width + a];
                let idx = if code == MASK { dom } else { (code as usize).min(dom) };
                match *enc {
                    Encoding::OneHot => {
                        x[[r, off + idx]] = F::one();
                        off += dom + 1;
                    }
                    Encoding::Embedding { table, dim } => {
                        x.slice_mut(s![r, off..off + dim])
                            .assign(&self.embeddings[table].row(idx));
                        off += dim;
                    }
                }
            }
        }
        x
    }

    /// Activations of every trunk layer, input first.
    fn trunk(&self, x: Array2<F>) -> Vec<Array2<F>> {
        let mut acts = vec![x];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut h = acts.last().expect("input present").dot(w) + b;
            h.mapv_inplace(|v| v.max(F::zero()));
            acts.push(h);
        }
        acts
    }

    /// Raw logits of `target` for every input row.
    pub fn logits(&self, inputs: &[Code], target: usize) -> Result<Array2<F>> {
        check_target(&self.layout, target)?;
        let rows = check_inputs(&self.layout, inputs)?;
        let acts = self.trunk(self.encode(inputs, rows));
        Ok(acts.last().expect("non-empty").dot(&self.head_weights[target]) + &self.head_biases[target])
    }

    /// Masked cross-entropy and its gradient, in [`Self::tensors`] order.
    ///
    /// `codes` holds the true rows (row-major); `mask[r * width + a]` marks
    /// entries hidden from the input and scored in the loss.
    pub fn loss_and_grad(&self, codes: &[Code], mask: &[bool]) -> (f64, Vec<Array2<F>>) {
        let width = self.layout.len();
        let rows = codes.len() / width;
        let inputs: Vec<Code> = codes
            .iter()
            .zip(mask)
            .map(|(c, m)| if *m { MASK } else { *c })
            .collect();
        let acts = self.trunk(self.encode(&inputs, rows));
        let top = acts.last().expect("non-empty");
        let total = mask.iter().filter(|m| **m).count().max(1);
        let scale = F::from_usize(total).expect("count fits").recip();

        let mut loss = 0.0;
        let mut d_top = Array2::<F>::zeros(top.raw_dim());
        let mut head_w_grads = Vec::with_capacity(width);
        let mut head_b_grads = Vec::with_capacity(width);
        for a in 0..width {
            let picked: Vec<usize> = (0..rows).filter(|r| mask[r * width + a]).collect();
            let dom = self.layout.attrs[a].domain;
            if picked.is_empty() {
                head_w_grads.push(Array2::zeros(self.head_weights[a].raw_dim()));
                head_b_grads.push(Array2::zeros((1, dom)));
                continue;
            }
            let h = top.select(Axis(0), &picked);
            let mut probs = h.dot(&self.head_weights[a]) + &self.head_biases[a];
            for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
                let max = row.fold(F::neg_infinity(), |m, v| m.max(*v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
                let y = codes[picked[i] * width + a] as usize;
                loss -= row[y].to_f64().expect("finite").max(f64::MIN_POSITIVE).ln();
                row[y] = row[y] - F::one();
                row.mapv_inplace(|v| v * scale);
            }
            let dlogits = probs;
            head_w_grads.push(h.t().dot(&dlogits));
            head_b_grads.push(dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)));
            let dh = dlogits.dot(&self.head_weights[a].t());
            for (i, &r) in picked.iter().enumerate() {
                d_top.row_mut(r).zip_mut_with(&dh.row(i), |a, b| *a = *a + *b);
            }
        }

        let layers = self.weights.len();
        let mut w_grads = vec![Array2::zeros((0, 0)); layers];
        let mut b_grads = vec![Array2::zeros((0, 0)); layers];
        let mut d = d_top;
        for l in (0..layers).rev() {
            let out = &acts[l + 1];
            ndarray::Zip::from(&mut d).and(out).for_each(|g, &o| {
                if o <= F::zero() {
                    *g = F::zero();
                }
            });
            w_grads[l] = acts[l].t().dot(&d);
            b_grads[l] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            d = d.dot(&self.weights[l].t());
        }

        let mut emb_grads: Vec<Array2<F>> = self.embeddings.iter().map(|e| Array2::zeros(e.raw_dim())).collect();
        if !self.embeddings.is_empty() {
            for r in 0..rows {
                let mut off = 0;
                for (a, enc) in self.encodings.iter().enumerate() {
                    let dom = self.layout.attrs[a].domain;
                    match *enc {
                        Encoding::OneHot => off += dom + 1,
                        Encoding::Embedding { table, dim } => {
                            let code = inputs[r * width + a];
                            let idx = if code == MASK { dom } else { (code as usize).min(dom) };
                            emb_grads[table]
                                .row_mut(idx)
                                .zip_mut_with(&d.slice(s![r, off..off + dim]), |a, b| *a = *a + *b);
                            off += dim;
                        }
                    }
                }
            }
        }

        let mut grads = emb_grads;
        for (w, b) in w_grads.into_iter().zip(b_grads) {
            grads.push(w);
            grads.push(b);
        }
        for (w, b) in head_w_grads.into_iter().zip(head_b_grads) {
            grads.push(w);
            grads.push(b);
        }
        (loss / total as f64, grads)
    }
}

/// Picks `k ~ Uniform{1..n}` attributes per row to hide; depends only on the RNG.
pub fn draw_mask<R: Rng>(rng: &mut R, rows: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; rows * width];
    for r in 0..rows {
        let k = rng.random_range(1..=width);
        for a in index::sample(rng, width, k) {
            mask[r * width + a] = true;
        }
    }
    mask
}

/// Trains a model on a join sample with momentum SGD.
pub fn train_dae(sample: &JoinSample, relation_size: u128, config: &DaeConfig) -> Result<(DaeModel<f32>, TrainReport)> {
    if sample.is_empty() {
        return Err(Error::EmptyRelation(sample.layout.name.clone()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DaeModel::<f32>::new(&sample.layout, relation_size, config, &mut rng)?;
    let mut velocity: Vec<Array2<f32>> = model.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
    let width = sample.layout.len();
    let n = sample.len();
    let lr = config.learning_rate as f32;
    let mu = config.momentum as f32;
    let mut losses = Vec::with_capacity(config.steps);
    let mut batch = vec![0; config.batch_size * width];
    for step in 0..config.steps {
        for r in 0..config.batch_size {
            let row = rng.random_range(0..n);
            for a in 0..width {
                batch[r * width + a] = sample.columns[a][row];
            }
        }
        let mask = draw_mask(&mut rng, config.batch_size, width);
        let (loss, mut grads) = model.loss_and_grad(&batch, &mask);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                lr: config.learning_rate,
                loss,
            });
        }
        if let Some(limit) = config.clip_norm {
            let norm = grads
                .iter()
                .map(|g| g.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                let f = (limit / norm) as f32;
                for g in &mut grads {
                    g.mapv_inplace(|v| v * f);
                }
            }
        }
        for ((param, v), g) in model.tensors_mut().into_iter().zip(&mut velocity).zip(&grads) {
            v.zip_mut_with(g, |vv, gg| *vv = mu * *vv + *gg);
            param.scaled_add(-lr, v);
        }
        losses.push(loss);
    }
    if model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::TrainingDiverged {
            step: config.steps,
            lr: config.learning_rate,
            loss: f64::NAN,
        });
    }
    Ok((
        model,
        TrainReport {
            losses,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

const INFERENCE_CHUNK: usize = 4096;

impl<F: Real> DensityEstimator for DaeModel<F> {
    fn layout(&self) -> &JoinLayout {
        &self.layout
    }

    fn relation_size(&self) -> u128 {
        self.relation_size
    }

    fn conditionals(&self, inputs: &[Code], target: usize) -> Result<Vec<f64>> {
        check_target(&self.layout, target)?;
        let rows = check_inputs(&self.layout, inputs)?;
        let width = self.layout.len();
        let dom = self.layout.attrs[target].domain;
        let mut masked = inputs.to_vec();
        for r in 0..rows {
            masked[r * width + target] = MASK;
        }
        let mut out = Vec::with_capacity(rows * dom);
        for chunk in masked.chunks(INFERENCE_CHUNK * width) {
            let logits = self.logits(chunk, target)?;
            for row in logits.axis_iter(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().expect("finite")));
                let exp: Vec<f64> = row.iter().map(|v| (v.to_f64().expect("finite") - max).exp()).collect();
                let sum: f64 = exp.iter().sum();
                let clamped: Vec<f64> = exp.iter().map(|e| (e / sum).max(PROB_FLOOR)).collect();
                let total: f64 = clamped.iter().sum();
                out.extend(clamped.iter().map(|p| p / total));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joiner::{AttrKind, Attribute};
    use crate::schema::TableId;

    pub(crate) fn layout(domains: &[usize]) -> JoinLayout {
        JoinLayout {
            name: "tiny".into(),
            tables: vec![TableId(0)],
            attrs: domains
                .iter()
                .enumerate()
                .map(|(i, d)| Attribute {
                    name: format!("X.a{i}"),
                    kind: AttrKind::Base { table: TableId(0), column: i },
                    domain: *d,
                })
                .collect(),
        }
    }

    fn sample_from(layout: &JoinLayout, rows: &[Vec<Code>]) -> JoinSample {
        JoinSample {
            layout: layout.clone(),
            seed: 0,
            columns: (0..layout.len()).map(|a| rows.iter().map(|r| r[a]).collect()).collect(),
        }
    }

    fn finite_difference_check(domains: &[usize], config: &DaeConfig, seed: u64) {
        let l = layout(domains);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DaeModel::<f64>::new(&l, 10, config, &mut rng).unwrap();
        let rows = 6;
        let codes: Vec<Code> = (0..rows * l.len())
            .map(|i| rng.random_range(0..domains[i % l.len()]) as Code)
            .collect();
        let mask = draw_mask(&mut rng, rows, l.len());
        let (_, grads) = model.loss_and_grad(&codes, &mask);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (t, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let (r, c) = (idx / g.ncols(), idx % g.ncols());
                let mut plus = model.clone();
                plus.tensors_mut()[t][[r, c]] += eps;
                let mut minus = model.clone();
                minus.tensors_mut()[t][[r, c]] -= eps;
                let numeric = (plus.loss_and_grad(&codes, &mask).0 - minus.loss_and_grad(&codes, &mask).0) / (2.0 * eps);
                let analytic = g[[r, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = DaeConfig { hidden: vec![8], ..DaeConfig::default() };
        finite_difference_check(&[3, 4], &config, 1);
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let config = DaeConfig { hidden: vec![5], one_hot_max_domain: 3, max_embedding_dim: 3, ..DaeConfig::default() };
        finite_difference_check(&[2, 6], &config, 2);
    }

    #[test]
    fn untrained_model_outputs_distributions() {
        let l = layout(&[3, 5, 100]);
        let sample = sample_from(&l, &[vec![1, 2, 3]]);
        let config = DaeConfig { steps: 0, hidden: vec![16], ..DaeConfig::default() };
        let (model, _) = train_dae(&sample, 1, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let row: Vec<Code> = (0..3)
                .map(|a| if rng.random_bool(0.5) { MASK } else { rng.random_range(0..l.attrs[a].domain) as Code })
                .collect();
            let target = rng.random_range(0..3);
            let d = model.conditionals(&row, target).unwrap();
            assert_eq!(d.len(), l.attrs[target].domain);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(d.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn learns_copy_relation() {
        let l = layout(&[3, 3]);
        let rows: Vec<Vec<Code>> = (0..400).map(|i| {
            let v = 1 + (i % 2) as Code;
            vec![v, v]
        }).collect();
        let sample = sample_from(&l, &rows);
        let config = DaeConfig { hidden: vec![32, 32], steps: 600, batch_size: 32, learning_rate: 0.05, ..DaeConfig::default() };
        let (model, report) = train_dae(&sample, 400, &config).unwrap();
        let d = model.conditionals(&[1, MASK], 1).unwrap();
        assert!(d[1] >= 0.95, "P(y=1|x=1) = {}", d[1]);
        let tenth = report.losses.len() / 10;
        let median = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&report.losses[report.losses.len() - tenth..]) < median(&report.losses[..tenth]));
    }

    #[test]
    fn independent_attribute_stays_uniform() {
        let l = layout(&[5, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<Code>> = (0..2000)
            .map(|_| vec![rng.random_range(1..5), rng.random_range(1..3)])
            .collect();
        let sample = sample_from(&l, &rows);
        let config = DaeConfig { hidden: vec![32, 32], steps: 1500, batch_size: 256, learning_rate: 0.003, ..DaeConfig::default() };
        let (model, _) = train_dae(&sample, 2000, &config).unwrap();
        let mut marginal = [0.0f64; 5];
        for r in &rows {
            marginal[r[0] as usize] += 1.0 / rows.len() as f64;
        }
        for x in 1..3 {
            let d = model.conditionals(&[MASK, x], 0).unwrap();
            let tv: f64 = 0.5 * (0..5).map(|c| (d[c] - marginal[c]).abs()).sum::<f64>();
            assert!(tv <= 0.05, "total variation {tv}: {d:?} vs {marginal:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_diverges_loudly() {
        let l = layout(&[4, 4]);
        let rows: Vec<Vec<Code>> = (0..50).map(|i| vec![1 + (i % 3) as Code, 1 + (i % 2) as Code]).collect();
        let sample = sample_from(&l, &rows);
        let config = DaeConfig { hidden: vec![8], steps: 20, batch_size: 8, ..DaeConfig::default() };
        let (a, _) = train_dae(&sample, 50, &config).unwrap();
        let (b, _) = train_dae(&sample, 50, &config).unwrap();
        assert_eq!(a, b);
        let wild = DaeConfig { learning_rate: 1e30, momentum: 0.0, ..config };
        match train_dae(&sample, 50, &wild) {
            Err(Error::TrainingDiverged { lr, .. }) => assert_eq!(lr, 1e30),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn mask_ignores_values() {
        let a = draw_mask(&mut ChaCha8Rng::seed_from_u64(5), 10, 4);
        let b = draw_mask(&mut ChaCha8Rng::seed_from_u64(5), 10, 4);
        assert_eq!(a, b);
        for r in 0..10 {
            assert!(a[r * 4..r * 4 + 4].iter().any(|m| *m));
        }
    }
}
