//! Sequential training over a task list.
//!
//! Task 1 trains every body weight, bias and its head. Later tasks depend on
//! the method: naive keeps training everything, GPM trains everything with
//! layer gradients projected away from the protected input directions, and
//! NESS trains only the `V` factor of one adapter per layer (plus the head),
//! merging `U·V` into the weights when the task ends. Body biases are frozen
//! under NESS after task 1.

use serde::Serialize;

use super::metrics::AccuracyMatrix;
use super::{Method, TrainSettings};
use crate::adapter::{self, AdapterPair, StabilityBudget, StabilityReport};
use crate::baselines::{project_gradient, ProjectionMemory};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{self, Head, HeadBank, Network, NetworkSpec};
use crate::optim::{self, Objective, OptimState, OptimizerKind};
use crate::rng::{SeededRng, StreamTag};
use crate::spectral::{self, CovarianceAccumulator};
use crate::tasks::{Part, TaskDataset};

/// How the body is trained on the current task.
#[derive(Debug, Clone)]
enum Mode {
    Full,
    Projected(Vec<Matrix>),
    Adapted(Vec<AdapterPair>),
}

impl Mode {
    fn name(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Projected(_) => "projected",
            Mode::Adapted(_) => "adapted",
        }
    }

    fn adapters(&self) -> Option<&[AdapterPair]> {
        match self {
            Mode::Adapted(pairs) => Some(pairs),
            _ => None,
        }
    }
}

/// What happened while training one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskDiagnostics {
    pub task: usize,
    pub mode: String,
    /// Null-space rank per layer (NESS tasks after the first).
    pub adapter_ranks: Vec<usize>,
    /// Protected dimension per layer (GPM tasks after the first).
    pub memory_ranks: Vec<usize>,
    pub adapter_parameters: usize,
    pub trainable_parameters: usize,
    /// Per-layer reports from the last epoch.
    pub stability: Vec<StabilityReport>,
    pub stability_checks: usize,
    pub stability_all_pass: bool,
    pub epochs: usize,
    pub final_lr: f64,
    pub final_loss: f64,
    pub val_accuracy: Option<f64>,
}

struct ActiveTask {
    task: usize,
    head: Head,
    mode: Mode,
    state: OptimState,
    budgets: Vec<StabilityBudget>,
    memory_ranks: Vec<usize>,
    stability: Vec<StabilityReport>,
    stability_checks: usize,
    stability_all_pass: bool,
    epochs: usize,
    loss_sum: f64,
    loss_rows: usize,
    last_loss: f64,
    val_accuracy: Option<f64>,
}

struct Step<'a> {
    net: &'a mut Network,
    head: &'a mut Head,
    mode: &'a mut Mode,
    x: &'a Matrix,
    y: &'a [usize],
    loss: Option<f64>,
}

impl Objective for Step<'_> {
    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        match &mut *self.mode {
            Mode::Adapted(pairs) => out.extend(pairs.iter_mut().map(AdapterPair::v_mut)),
            Mode::Full | Mode::Projected(_) => {
                for layer in self.net.layers.iter_mut() {
                    out.push(&mut layer.weight);
                    if let Some(b) = layer.bias.as_mut() {
                        out.push(b);
                    }
                }
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn gradients(&mut self) -> Result<Vec<Matrix>> {
        let (loss, g) = network::loss_and_gradients(self.net, self.mode.adapters(), self.head, self.x, self.y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        self.loss.get_or_insert(loss);
        let mut out = Vec::new();
        match &*self.mode {
            Mode::Adapted(_) => out.extend(g.adapters.expect("adapters were active")),
            Mode::Full => {
                for lg in g.layers {
                    out.push(lg.weight);
                    out.extend(lg.bias);
                }
            }
            Mode::Projected(bases) => {
                for (lg, b) in g.layers.into_iter().zip(bases) {
                    match lg.bias {
                        // The bias acts on a constant input of one: project
                        // the stacked [dW; db] against the augmented basis.
                        Some(db) => {
                            let d = lg.weight.rows();
                            let p = project_gradient(&lg.weight.vstack(&db)?, b)?;
                            let rows: Vec<usize> = (0..d).collect();
                            out.push(p.select_rows(&rows));
                            out.push(p.select_rows(&[d]));
                        }
                        None => out.push(project_gradient(&lg.weight, b)?),
                    }
                }
            }
        }
        out.push(g.head.weight);
        out.push(g.head.bias);
        Ok(out)
    }
}

fn with_ones_column(x: &Matrix) -> Matrix {
    Matrix::from_fn(
        x.rows(),
        x.cols() + 1,
        |r, c| if c < x.cols() { x[(r, c)] } else { 1.0 },
    )
}

/// Rows `0, s, 2s, …` so that at most `limit` remain.
fn strided_rows(x: &Matrix, limit: usize) -> Matrix {
    if x.rows() <= limit {
        return x.clone();
    }
    let stride = x.rows().div_ceil(limit.max(1));
    let idx: Vec<usize> = (0..x.rows()).step_by(stride).collect();
    x.select_rows(&idx)
}

/// The network, its heads, and everything remembered about earlier tasks.
pub struct Learner {
    settings: TrainSettings,
    net: Network,
    heads: HeadBank,
    memory: Vec<CovarianceAccumulator>,
    /// Previous layer inputs kept for stability checks.
    history: Vec<Option<Matrix>>,
    augmented: bool,
    finished: usize,
    active: Option<ActiveTask>,
}

impl Learner {
    pub fn new(net: Network, settings: TrainSettings) -> Result<Self> {
        settings.validate()?;
        let augmented = settings.method == Method::Gpm && net.spec().bias;
        let memory = net
            .layers
            .iter()
            .map(|l| CovarianceAccumulator::new(l.weight.rows() + augmented as usize))
            .collect::<Result<Vec<_>>>()?;
        let history = vec![None; net.layers.len()];
        Ok(Self {
            settings,
            net,
            heads: HeadBank::new(),
            memory,
            history,
            augmented,
            finished: 0,
            active: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn heads(&self) -> &HeadBank {
        &self.heads
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    /// Per-layer accumulators of every finished task's layer inputs.
    pub fn memory(&self) -> &[CovarianceAccumulator] {
        &self.memory
    }

    pub fn tasks_finished(&self) -> usize {
        self.finished
    }

    /// Adapters of the task in progress, if it trains through them.
    pub fn adapters(&self) -> Option<&[AdapterPair]> {
        self.active.as_ref().and_then(|a| a.mode.adapters())
    }

    /// Head of the task in progress.
    pub fn active_head(&self) -> Option<&Head> {
        self.active.as_ref().map(|a| &a.head)
    }

    pub fn lr(&self) -> Option<f64> {
        self.active.as_ref().map(|a| a.state.lr())
    }

    fn active_mut(&mut self) -> Result<&mut ActiveTask> {
        self.active
            .as_mut()
            .ok_or_else(|| Error::State("no task in progress".into()))
    }

    /// Starts the next task with `head`, building adapters or projection
    /// bases from the memory of earlier tasks.
    pub fn begin_task(&mut self, head: Head) -> Result<usize> {
        if self.active.is_some() {
            return Err(Error::State("previous task was not finished".into()));
        }
        if head.weight.rows() != self.net.spec().feature_len() {
            return Err(Error::Shape(format!(
                "head expects {} features, body produces {}",
                head.weight.rows(),
                self.net.spec().feature_len()
            )));
        }
        let task = self.finished + 1;
        let s = &self.settings;
        let mut budgets = Vec::new();
        let mut memory_ranks = Vec::new();
        let mode = if task == 1 || s.method == Method::Naive {
            Mode::Full
        } else if s.method == Method::Gpm {
            let threshold = s.energy_threshold.expect("validated");
            let mem = ProjectionMemory::from_accumulators(&self.memory, threshold)?;
            memory_ranks = mem.ranks();
            Mode::Projected(mem.bases)
        } else {
            let eps1 = s.eps1.expect("validated");
            let mut pairs = Vec::with_capacity(self.memory.len());
            for (l, (acc, layer)) in self.memory.iter().zip(&self.net.layers).enumerate() {
                let pair = adapter::get_uv(acc, eps1, layer.weight.cols())
                    .map_err(|e| e.in_layer(l))?
                    .at_layer(l);
                budgets.push(StabilityBudget::new(
                    s.output_budget,
                    eps1,
                    spectral::frobenius_from_accumulator(acc),
                )?);
                pairs.push(pair);
            }
            Mode::Adapted(pairs)
        };

        let mut shapes = Vec::new();
        let mut decay = Vec::new();
        match &mode {
            Mode::Adapted(pairs) => {
                for p in pairs {
                    shapes.push(p.v().shape());
                    decay.push(true);
                }
            }
            Mode::Full | Mode::Projected(_) => {
                for layer in &self.net.layers {
                    shapes.push(layer.weight.shape());
                    decay.push(false);
                    if let Some(b) = &layer.bias {
                        shapes.push(b.shape());
                        decay.push(false);
                    }
                }
            }
        }
        shapes.push(head.weight.shape());
        shapes.push(head.bias.shape());
        decay.push(s.optim.decay_heads);
        decay.push(s.optim.decay_heads);
        let state = OptimState::new(&shapes, decay, &s.optim)?;

        self.active = Some(ActiveTask {
            task,
            head,
            mode,
            state,
            budgets,
            memory_ranks,
            stability: Vec::new(),
            stability_checks: 0,
            stability_all_pass: true,
            epochs: 0,
            loss_sum: 0.0,
            loss_rows: 0,
            last_loss: f64::NAN,
            val_accuracy: None,
        });
        Ok(task)
    }

    /// Accuracy of the task in progress on `(x, y)`, adapters included.
    pub fn current_accuracy(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let a = self
            .active
            .as_ref()
            .ok_or_else(|| Error::State("no task in progress".into()))?;
        network::accuracy(&self.net, a.mode.adapters(), &a.head, x, y)
    }

    /// Reference value for the plateau schedule.
    pub fn set_baseline(&mut self, metric: f64) -> Result<()> {
        self.active_mut()?.state.set_baseline(metric);
        Ok(())
    }

    /// One optimizer step on a batch; returns the loss before the step.
    pub fn train_step(&mut self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let kind = self.settings.optim.kind;
        let cfg = self.settings.optim.clone();
        let active = self
            .active
            .as_mut()
            .ok_or_else(|| Error::State("no task in progress".into()))?;
        let mut step = Step {
            net: &mut self.net,
            head: &mut active.head,
            mode: &mut active.mode,
            x,
            y,
            loss: None,
        };
        if kind == OptimizerKind::Sam {
            optim::step_sam(&mut active.state, &mut step, &cfg)?;
        } else {
            let grads = step.gradients()?;
            let mut params = step.params_mut();
            optim::step_sgdm(&mut active.state, &mut params, &grads, &cfg)?;
        }
        let loss = step.loss.expect("gradient evaluated");
        active.loss_sum += loss * y.len() as f64;
        active.loss_rows += y.len();
        Ok(loss)
    }

    /// One pass over `(x, y)` in an order drawn from `rng`.
    pub fn train_epoch(&mut self, x: &Matrix, y: &[usize], rng: &mut SeededRng) -> Result<f64> {
        let order = rng.permutation(y.len());
        for chunk in order.chunks(self.settings.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            self.train_step(&xb, &yb)?;
        }
        let a = self.active_mut()?;
        let mean = if a.loss_rows > 0 {
            a.loss_sum / a.loss_rows as f64
        } else {
            f64::NAN
        };
        a.last_loss = mean;
        a.loss_sum = 0.0;
        a.loss_rows = 0;
        Ok(mean)
    }

    /// Learning-rate schedule on validation accuracy, the strict-mode clip,
    /// and the stability checks on previous inputs.
    pub fn end_epoch(&mut self, val_x: &Matrix, val_y: &[usize]) -> Result<()> {
        let val = if val_y.is_empty() {
            None
        } else {
            Some(self.current_accuracy(val_x, val_y)?)
        };
        let strict = self.settings.strict_bound;
        let checks = self.settings.stability_checks;
        let cfg = self.settings.optim.clone();
        let history = &self.history;
        let a = self
            .active
            .as_mut()
            .ok_or_else(|| Error::State("no task in progress".into()))?;
        a.epochs += 1;
        if let Some(v) = val {
            a.state.lr_schedule(v, &cfg);
            a.val_accuracy = Some(v);
        }
        if let Mode::Adapted(pairs) = &mut a.mode {
            if strict {
                for (pair, budget) in pairs.iter_mut().zip(&a.budgets) {
                    adapter::clip_spectral_norm(pair.v_mut(), budget.v_norm_cap())?;
                }
            }
            if checks {
                a.stability.clear();
                for (l, (pair, budget)) in pairs.iter().zip(&a.budgets).enumerate() {
                    let empty = Matrix::zeros(0, pair.basis().rows());
                    let inputs = history[l].as_ref().unwrap_or(&empty);
                    let report = adapter::stability_check(pair, inputs, budget);
                    a.stability_all_pass &= report.pass;
                    a.stability_checks += 1;
                    a.stability.push(report);
                }
            }
        }
        Ok(())
    }

    /// Merges adapters, freezes the head, and records this task's layer
    /// inputs (one forward pass over `train_x` under the final weights).
    pub fn finish_task(&mut self, train_x: &Matrix) -> Result<TaskDiagnostics> {
        let a = self
            .active
            .take()
            .ok_or_else(|| Error::State("no task in progress".into()))?;
        let trainable_parameters = a.state.velocity().iter().map(|v| v.rows() * v.cols()).sum();
        let mut adapter_ranks = Vec::new();
        let mut adapter_parameters = 0;
        if let Mode::Adapted(pairs) = &a.mode {
            for (layer, pair) in self.net.layers.iter_mut().zip(pairs) {
                layer.weight = adapter::merge(&layer.weight, pair)?;
                adapter_ranks.push(pair.rank());
                adapter_parameters += pair.trainable_parameters();
            }
        }
        let diagnostics = TaskDiagnostics {
            task: a.task,
            mode: a.mode.name().to_string(),
            adapter_ranks,
            memory_ranks: a.memory_ranks,
            adapter_parameters,
            trainable_parameters,
            stability: a.stability,
            stability_checks: a.stability_checks,
            stability_all_pass: a.stability_all_pass,
            epochs: a.epochs,
            final_lr: a.state.lr(),
            final_loss: a.last_loss,
            val_accuracy: a.val_accuracy,
        };
        self.heads.insert(a.task, a.head)?;

        if self.settings.method != Method::Naive {
            let rows = match self.settings.collect_limit {
                Some(k) if k < train_x.rows() => train_x.select_rows(&(0..k).collect::<Vec<_>>()),
                _ => train_x.clone(),
            };
            let (inputs, _, _) = network::forward_body(&self.net, None, &rows)?;
            for (l, x) in inputs.into_iter().enumerate() {
                if self.augmented {
                    self.memory[l].accumulate_rows(&with_ones_column(&x))?;
                } else {
                    self.memory[l].accumulate_rows(&x)?;
                }
                if self.settings.method == Method::Ness && self.settings.stability_checks {
                    let kept = strided_rows(&x, self.settings.stability_rows);
                    self.history[l] = Some(match self.history[l].take() {
                        Some(prev) => prev.vstack(&kept)?,
                        None => kept,
                    });
                }
            }
        }
        self.finished += 1;
        Ok(diagnostics)
    }

    /// Test accuracy on a finished task with its frozen head.
    pub fn evaluate(&self, task: usize, x: &Matrix, y: &[usize]) -> Result<f64> {
        network::accuracy(&self.net, None, self.heads.get(task)?, x, y)
    }

    pub fn into_parts(self) -> (Network, HeadBank) {
        (self.net, self.heads)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub network: Network,
    pub heads: HeadBank,
    pub accuracy: AccuracyMatrix,
    pub diagnostics: Vec<TaskDiagnostics>,
}

/// Initial body for `seed`.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let mut rng = SeededRng::derived(seed, StreamTag::Init, 0);
    Network::init(spec.clone(), &mut rng)
}

/// Initial head of task `task` (1-based) for `seed`.
pub fn init_head(spec: &NetworkSpec, classes: usize, seed: u64, task: usize) -> Head {
    let mut rng = SeededRng::derived(seed, StreamTag::Init, task as u64);
    Head::init(spec.feature_len(), classes, &mut rng)
}

/// Trains on `tasks` in order, filling row `t` of the accuracy matrix with
/// test accuracies on tasks `1..=t` right after task `t`.
pub fn train_sequence(
    spec: &NetworkSpec,
    tasks: &[TaskDataset],
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainingOutcome> {
    settings.validate()?;
    spec.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config("task list is empty".into()));
    }
    for t in tasks {
        if t.dim() != spec.input_len() {
            return Err(Error::Shape(format!(
                "task {} has {} features, network expects {}",
                t.task_id,
                t.dim(),
                spec.input_len()
            )));
        }
    }
    let mut learner = Learner::new(init_network(spec, seed)?, settings.clone())?;
    let mut accuracy = AccuracyMatrix::new(tasks.len());
    let mut diagnostics = Vec::with_capacity(tasks.len());
    for (ti, task) in tasks.iter().enumerate() {
        let t = ti + 1;
        learner
            .begin_task(init_head(spec, task.n_classes, seed, t))
            .map_err(|e| e.in_task(t, "building subspaces"))?;
        let (tx, ty) = task.part(Part::Train);
        let (vx, vy) = task.part(Part::Val);
        if !vy.is_empty() {
            let baseline = learner
                .current_accuracy(&vx, &vy)
                .map_err(|e| e.in_task(t, "validation"))?;
            learner.set_baseline(baseline)?;
        }
        let mut shuffle = SeededRng::derived(seed, StreamTag::Shuffle, t as u64);
        for epoch in 1..=settings.epochs {
            learner
                .train_epoch(&tx, &ty, &mut shuffle)
                .and_then(|_| learner.end_epoch(&vx, &vy))
                .map_err(|e| e.in_task(t, format!("epoch {epoch}")))?;
        }
        diagnostics.push(
            learner
                .finish_task(&tx)
                .map_err(|e| e.in_task(t, "collecting inputs"))?,
        );
        for (i, prev) in tasks[..t].iter().enumerate() {
            let (ex, ey) = prev.part(Part::Test);
            let value = learner
                .evaluate(i + 1, &ex, &ey)
                .map_err(|e| e.in_task(t, format!("evaluating task {}", i + 1)))?;
            accuracy.set(ti, i, value)?;
        }
    }
    let (network, heads) = learner.into_parts();
    Ok(TrainingOutcome {
        network,
        heads,
        accuracy,
        diagnostics,
    })
}
