use serde::{Deserialize, Serialize};

use super::loss::{distill_loss, mnrl_loss};
use super::model::{AdapterMeta, AdapterModel, ApplyTo, Objective, Strategy};
use super::plan::{plan_batches, SourceTag};
use super::AdaptError;
use crate::embedstore::{EmbeddingMatrix, StoreError};
use crate::Execution;

/// Row-aligned training pairs. `src` is the adapter input, `tgt` the
/// counterpart (contrastive) or teacher output (distillation). `tgt_input`
/// is the base embedding of the target side, used as a second adapter
/// input by bidirectional distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    dim: usize,
    src: Vec<f32>,
    tgt: Vec<f32>,
    tgt_input: Option<Vec<f32>>,
}

impl PairSet {
    pub fn from_rows(src: &[Vec<f32>], tgt: &[Vec<f32>]) -> Result<Self, AdaptError> {
        if src.len() != tgt.len() {
            return Err(AdaptError::BatchMismatch {
                a: src.len(),
                b: tgt.len(),
            });
        }
        let dim = src.first().map_or(0, Vec::len);
        let flat = |rows: &[Vec<f32>]| -> Result<Vec<f32>, AdaptError> {
            let mut out = Vec::with_capacity(rows.len() * dim);
            for r in rows {
                if r.len() != dim {
                    return Err(AdaptError::DimensionMismatch {
                        expected: dim,
                        found: r.len(),
                    });
                }
                out.extend_from_slice(r);
            }
            Ok(out)
        };
        Ok(Self {
            dim,
            src: flat(src)?,
            tgt: flat(tgt)?,
            tgt_input: None,
        })
    }

    /// Gathers the rows of `ids` from both matrices.
    pub fn aligned(
        src: &EmbeddingMatrix,
        tgt: &EmbeddingMatrix,
        ids: &[String],
    ) -> Result<Self, AdaptError> {
        if src.dim() != tgt.dim() {
            return Err(AdaptError::DimensionMismatch {
                expected: src.dim(),
                found: tgt.dim(),
            });
        }
        Ok(Self {
            dim: src.dim(),
            src: gather(src, ids)?,
            tgt: gather(tgt, ids)?,
            tgt_input: None,
        })
    }

    /// Aligned triples for bidirectional distillation.
    pub fn aligned_triples(
        base_src: &EmbeddingMatrix,
        base_tgt: &EmbeddingMatrix,
        teacher_tgt: &EmbeddingMatrix,
        ids: &[String],
    ) -> Result<Self, AdaptError> {
        let mut set = Self::aligned(base_src, teacher_tgt, ids)?;
        if base_tgt.dim() != set.dim {
            return Err(AdaptError::DimensionMismatch {
                expected: set.dim,
                found: base_tgt.dim(),
            });
        }
        set.tgt_input = Some(gather(base_tgt, ids)?);
        Ok(set)
    }

    pub fn with_tgt_input(mut self, rows: &[Vec<f32>]) -> Result<Self, AdaptError> {
        let tmp = Self::from_rows(rows, rows)?;
        if tmp.len() != self.len() || (tmp.dim != self.dim && !rows.is_empty()) {
            return Err(AdaptError::BatchMismatch {
                a: self.len(),
                b: tmp.len(),
            });
        }
        self.tgt_input = Some(tmp.src);
        Ok(self)
    }

    /// Concatenation; passing the same set twice duplicates it.
    pub fn concat(sets: &[&PairSet]) -> Result<Self, AdaptError> {
        let dim = sets.iter().find(|s| !s.is_empty()).map_or(0, |s| s.dim);
        let mut out = Self {
            dim,
            src: Vec::new(),
            tgt: Vec::new(),
            tgt_input: Some(Vec::new()),
        };
        for s in sets.iter().filter(|s| !s.is_empty()) {
            if s.dim != dim {
                return Err(AdaptError::DimensionMismatch {
                    expected: dim,
                    found: s.dim,
                });
            }
            out.src.extend_from_slice(&s.src);
            out.tgt.extend_from_slice(&s.tgt);
            match (&mut out.tgt_input, &s.tgt_input) {
                (Some(acc), Some(t)) => acc.extend_from_slice(t),
                (acc, _) => *acc = None,
            }
        }
        if out.src.is_empty() {
            out.tgt_input = None;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.src.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn src_row(&self, i: usize) -> &[f32] {
        &self.src[i * self.dim..(i + 1) * self.dim]
    }

    fn tgt_row(&self, i: usize) -> &[f32] {
        &self.tgt[i * self.dim..(i + 1) * self.dim]
    }

    fn tgt_input_row(&self, i: usize) -> Option<&[f32]> {
        self.tgt_input.as_ref().map(|t| &t[i * self.dim..(i + 1) * self.dim])
    }
}

fn gather(m: &EmbeddingMatrix, ids: &[String]) -> Result<Vec<f32>, AdaptError> {
    let mut out = Vec::with_capacity(ids.len() * m.dim());
    for id in ids {
        out.extend_from_slice(m.get(id).ok_or_else(|| StoreError::MissingId(id.clone()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Inverse temperature of the contrastive softmax.
    pub scale: f64,
    pub seed: u64,
    /// Contrastive only: also pass the target side through the adapter.
    pub symmetric: bool,
    /// Bidirectional distillation only: include the target-side term.
    pub second_term: bool,
    /// Sequential by default. The parallel path splits the weight gradient
    /// by output row, so every sum keeps its order and results match.
    pub execution: Execution,
}

impl TrainConfig {
    pub fn contrastive(strategy: Strategy) -> Self {
        Self {
            objective: Objective::Contrastive,
            strategy,
            batch_size: 8,
            epochs: 1,
            learning_rate: 2e-5,
            scale: 20.0,
            seed: 0,
            symmetric: false,
            second_term: true,
            execution: Execution::Sequential,
        }
    }

    pub fn distill(strategy: Strategy) -> Self {
        Self {
            objective: Objective::Distill,
            epochs: 5,
            ..Self::contrastive(strategy)
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.execution = exec;
        self
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::InvalidConfig(m.into()));
        if self.objective == Objective::Contrastive && self.batch_size < 2 {
            return bad("contrastive training needs batch_size >= 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad("scale must be finite and positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grad[k];
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * g;
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * g * g;
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            **p -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Standard,
    Bidirectional,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains an adapter from identity with Adam over per-epoch batch plans.
pub fn train(
    hist: &PairSet,
    modern: &PairSet,
    cfg: &TrainConfig,
) -> Result<(AdapterModel, TrainHistory), AdaptError> {
    run(hist, modern, cfg, Mode::Standard)
}

/// Distillation where the adapter maps both the source and the target-side
/// base embeddings onto the teacher's target embedding. With
/// `second_term = false` this is exactly [`train`] with the distill
/// objective.
pub fn distill_bidirectional(
    hist: &PairSet,
    modern: &PairSet,
    cfg: &TrainConfig,
) -> Result<(AdapterModel, TrainHistory), AdaptError> {
    let cfg = TrainConfig {
        objective: Objective::Distill,
        ..cfg.clone()
    };
    let mode = if cfg.second_term {
        Mode::Bidirectional
    } else {
        Mode::Standard
    };
    run(hist, modern, &cfg, mode)
}

fn run(
    hist: &PairSet,
    modern: &PairSet,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<(AdapterModel, TrainHistory), AdaptError> {
    cfg.validate()?;
    let used: Vec<&PairSet> = match cfg.strategy {
        Strategy::Hist => vec![hist],
        Strategy::Modern => vec![modern],
        Strategy::Mixed => vec![hist, modern],
    };
    let dim = used.iter().find(|s| !s.is_empty()).map_or(0, |s| s.dim);
    for s in &used {
        if !s.is_empty() && s.dim != dim {
            return Err(AdaptError::DimensionMismatch {
                expected: dim,
                found: s.dim,
            });
        }
        if mode == Mode::Bidirectional && !s.is_empty() && s.tgt_input.is_none() {
            return Err(AdaptError::InvalidConfig(
                "bidirectional distillation needs target-side base embeddings".into(),
            ));
        }
    }
    // validates the strategy's dataset requirements before any work
    plan_batches(hist.len(), modern.len(), cfg.strategy, cfg.batch_size, cfg.seed)?;

    let symmetric = cfg.objective == Objective::Contrastive && cfg.symmetric;
    let meta = AdapterMeta {
        dim,
        objective: cfg.objective,
        strategy: cfg.strategy,
        apply_to: if symmetric || mode == Mode::Bidirectional {
            ApplyTo::Both
        } else {
            ApplyTo::Source
        },
        seed: cfg.seed,
        scale: cfg.scale,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        hist_pairs: if cfg.strategy == Strategy::Modern { 0 } else { hist.len() },
        modern_pairs: if cfg.strategy == Strategy::Hist { 0 } else { modern.len() },
        steps: 0,
    };
    let mut model = AdapterModel::identity(meta);
    let mut adam = Adam::new(dim * dim + dim);
    let mut history = TrainHistory::default();
    let exec = cfg.execution;

    for epoch in 0..cfg.epochs {
        let plan = plan_batches(
            hist.len(),
            modern.len(),
            cfg.strategy,
            cfg.batch_size,
            epoch_seed(cfg.seed, epoch),
        )?;
        let mut epoch_losses = Vec::new();
        for batch in &plan.batches {
            if cfg.objective == Objective::Contrastive && batch.len() < 2 {
                continue;
            }
            let rows: Vec<(&PairSet, usize)> = batch
                .iter()
                .map(|&(i, tag)| {
                    let set = if tag == SourceTag::Hist { hist } else { modern };
                    (set, i)
                })
                .collect();
            let (loss, terms) = step_gradients(&model, &rows, cfg, mode, symmetric, exec)?;
            let step = history.step_losses.len();
            if !loss.is_finite() {
                return Err(AdaptError::NonFinite { step, loss });
            }
            let grad = assemble_gradient(dim, &terms, exec);
            let mut params: Vec<&mut f64> =
                model.weight.iter_mut().chain(model.bias.iter_mut()).collect();
            adam.step(&mut params, &grad, cfg.learning_rate);
            history.step_losses.push(loss);
            epoch_losses.push(loss);
        }
        let mean = if epoch_losses.is_empty() {
            0.0
        } else {
            epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
        };
        history.epoch_means.push(mean);
    }
    model.meta.steps = history.step_losses.len();
    Ok((model, history))
}

fn forward(model: &AdapterModel, x: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; model.dim()];
    model.apply_f64(x, &mut out);
    out
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

/// Returns the batch loss and the list of (dL/d output, adapter input)
/// terms whose outer products make up the weight gradient.
fn step_gradients<'a>(
    model: &AdapterModel,
    rows: &[(&'a PairSet, usize)],
    cfg: &TrainConfig,
    mode: Mode,
    symmetric: bool,
    exec: Execution,
) -> Result<(f64, Vec<(Vec<f64>, &'a [f32])>), AdaptError> {
    let xs: Vec<&[f32]> = rows.iter().map(|(s, i)| s.src_row(*i)).collect();
    let adapted = exec.map(&xs, |x| forward(model, x));
    let mut terms = Vec::new();
    let loss = match cfg.objective {
        Objective::Contrastive => {
            let ys: Vec<&[f32]> = rows.iter().map(|(s, i)| s.tgt_row(*i)).collect();
            let targets = if symmetric {
                exec.map(&ys, |y| forward(model, y))
            } else {
                ys.iter().map(|y| widen(y)).collect()
            };
            let out = mnrl_loss(&adapted, &targets, cfg.scale)?;
            terms.extend(out.grad_a.into_iter().zip(xs));
            if symmetric {
                terms.extend(out.grad_b.into_iter().zip(ys));
            }
            out.loss
        }
        Objective::Distill => {
            let teacher: Vec<Vec<f64>> = rows.iter().map(|(s, i)| widen(s.tgt_row(*i))).collect();
            let (mut loss, grads) = distill_loss(&adapted, &teacher)?;
            terms.extend(grads.into_iter().zip(xs));
            if mode == Mode::Bidirectional {
                let ys: Vec<&[f32]> = rows
                    .iter()
                    .map(|(s, i)| s.tgt_input_row(*i).expect("checked before training"))
                    .collect();
                let second = exec.map(&ys, |y| forward(model, y));
                let (l2, g2) = distill_loss(&second, &teacher)?;
                loss += l2;
                terms.extend(g2.into_iter().zip(ys));
            }
            loss
        }
    };
    Ok((loss, terms))
}

/// Flattened `[dW (row-major), db]`. Each output row is summed over the
/// terms in a fixed order, so the parallel split is bit-identical.
fn assemble_gradient(dim: usize, terms: &[(Vec<f64>, &[f32])], exec: Execution) -> Vec<f64> {
    let rows = exec.map_range(dim, |r| {
        let mut row = vec![0.0; dim];
        for (g, x) in terms {
            let gr = g[r];
            if gr != 0.0 {
                for (acc, &xv) in row.iter_mut().zip(*x) {
                    *acc += gr * f64::from(xv);
                }
            }
        }
        row
    });
    let mut flat: Vec<f64> = rows.into_iter().flatten().collect();
    flat.extend((0..dim).map(|r| terms.iter().map(|(g, _)| g[r]).sum::<f64>()));
    flat
}
