use tracing::debug;

use super::config::{SmoothTarget, TrainConfig, TrajectoryStrategy};
use super::loss::total_loss;
use super::metrics::{accuracy, analyze_insertions, argmax_rows, dirichlet_energy, mad, MadMode};
use super::report::{EpochRecord, ExperimentReport};
use crate::diffcore::{Adam, AdamConfig, CsrMatrix, GumbelNoise, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::{mean_propagation, normalize_adjacency, normalized_laplacian, row_normalize_features, GraphBundle, Split};
use crate::models::{gnn_forward, BoundGnn, FeatureInput, GnnConfig, GnnParams, Mode, ModelKind, Operator};
use crate::trajectory::{
    collect_from_model, mvc_forward, precompute_mp, precompute_zero, pretrain_encoder, MvcParams, PretextConfig,
    Trajectory,
};
use crate::upsampler::{
    adaedge_budget, adaedge_logits, adaedge_targets, build_augmented, configure_variant, edge_logits, halfhop_mask,
    rewire, sample_mask, AugmentOptions, InitMode, InsertionDecision, Pipeline, Sampler, UpsamplerParams, Variant,
};

/// Independent random streams, so that e.g. drawing halfhop coins never
/// shifts the dropout masks.
#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Dropout = 1,
    Gumbel,
    Halfhop,
    Rewire,
    MvcInit,
    HeadInit,
    Projection,
    Pretext,
}

pub(crate) fn stream_seed(seed: u64, tag: u64, epoch: u64) -> u64 {
    // splitmix64 finalizer over the mixed triple.
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seed_for(cfg: &TrainConfig, s: Stream, epoch: usize) -> u64 {
    stream_seed(cfg.seed, s as u64, epoch as u64)
}

pub(crate) fn dropout_seed(seed: u64, epoch: usize) -> u64 {
    stream_seed(seed, Stream::Dropout as u64, epoch as u64)
}

/// Operator of `kind` over a plain directed edge list.
pub fn plain_operator(kind: ModelKind, n: usize, edges: &[(usize, usize)]) -> Operator {
    match kind {
        ModelKind::Gcn => Operator::constant(crate::graphdata::gcn_propagation(n, edges).matrix),
        ModelKind::Sage => Operator::constant(mean_propagation(n, edges).matrix),
    }
}

/// Accuracy of `params` on the unmodified graph, dropout off.
pub fn evaluate(params: &GnnParams, g: &GraphBundle, mask: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let op = match params.config.kind {
        ModelKind::Gcn => Operator::constant(normalize_adjacency(g.adjacency())),
        ModelKind::Sage => plain_operator(ModelKind::Sage, g.n_nodes(), &g.directed_edges()),
    };
    let input = FeatureInput::sparse_from(g.features());
    let out = gnn_forward(&mut tape, params, &bound, &op, &input, None, Mode::Eval)?;
    accuracy(tape.value(out.logits), g.labels(), mask)
}

struct Bound {
    gnn: BoundGnn,
    mvc: Vec<Var>,
    head: Option<Var>,
}

struct Session<'a> {
    cfg: &'a TrainConfig,
    pipeline: Pipeline,
    n: usize,
    input: FeatureInput,
    labels: Vec<i64>,
    train_mask: Vec<bool>,
    val_mask: Vec<bool>,
    test_mask: Vec<bool>,
    edges: Vec<(usize, usize)>,
    laplacian: CsrMatrix,
    opts: AugmentOptions,
    gnn: GnnParams,
    mvc: Option<MvcParams>,
    head: Option<UpsamplerParams>,
    trajectory: Option<Trajectory>,
    /// Current undirected pairs of the rewiring variant.
    pairs: Vec<(usize, usize)>,
    /// Predictions of the latest evaluation pass.
    pred: Vec<usize>,
    adam: Adam,
}

struct EvalPass {
    record: EpochRecord,
    decision: InsertionDecision,
}

impl<'a> Session<'a> {
    fn new(g: &GraphBundle, cfg: &'a TrainConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidArgument(problems.join("; ")));
        }
        g.masks().require_nonempty()?;
        let pipeline = configure_variant(cfg.variant.name())?;
        let x = if cfg.row_normalize {
            row_normalize_features(g.features())
        } else {
            g.features().clone()
        };
        let gw = g.with_features(x)?;
        let gcfg = GnnConfig {
            kind: cfg.model,
            in_dim: gw.n_features(),
            hidden: cfg.hidden,
            layers: cfg.layers,
            classes: gw.n_classes(),
            activation: cfg.activation,
            dropout: cfg.dropout,
        };
        let mut gnn = GnnParams::init(&gcfg, cfg.seed)?;

        let trajectory = if !pipeline.trajectory {
            None
        } else if pipeline.last_layer_only {
            Some(precompute_zero(&gw, 1, cfg.hidden)?)
        } else {
            Some(match cfg.trajectory {
                TrajectoryStrategy::Zero => precompute_zero(&gw, cfg.layers, cfg.hidden)?,
                TrajectoryStrategy::Mp => precompute_mp(&gw, cfg.layers, cfg.mp_operator, cfg.norm_period)?
                    .projected(cfg.hidden, seed_for(cfg, Stream::Projection, 0))?,
                TrajectoryStrategy::Pretrained => {
                    let pcfg = PretextConfig {
                        layers: cfg.layers,
                        hidden: cfg.hidden,
                        seed: seed_for(cfg, Stream::Pretext, 0),
                        ..cfg.pretext.clone()
                    };
                    let encoder = pretrain_encoder(&gw, &pcfg)?;
                    encoder.warm_start(&mut gnn);
                    encoder.trajectory(&gw, cfg.norm_period)?
                }
            })
        };
        let mvc = if pipeline.mvc {
            Some(MvcParams::init(cfg.mvc, cfg.layers, cfg.hidden, seed_for(cfg, Stream::MvcInit, 0))?)
        } else {
            None
        };
        let head = matches!(pipeline.sampler, Sampler::Learned | Sampler::Rewire)
            .then(|| UpsamplerParams::init(cfg.hidden, seed_for(cfg, Stream::HeadInit, 0)));
        let opts = match pipeline.variant {
            Variant::Halfhop => AugmentOptions {
                kind: cfg.model,
                init: InitMode::Mean,
                alpha: cfg.halfhop_alpha,
            },
            Variant::Unigap => AugmentOptions::new(cfg.model, cfg.init_mode),
            _ => AugmentOptions::new(cfg.model, InitMode::Mean),
        };
        let adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            l2: cfg.weight_decay,
            ..AdamConfig::default()
        })?;
        Ok(Self {
            cfg,
            pipeline,
            n: gw.n_nodes(),
            input: FeatureInput::sparse_from(gw.features()),
            labels: gw.labels().to_vec(),
            train_mask: gw.masks().get(Split::Train).to_vec(),
            val_mask: gw.masks().get(Split::Val).to_vec(),
            test_mask: gw.masks().get(Split::Test).to_vec(),
            edges: gw.directed_edges(),
            laplacian: normalized_laplacian(gw.adjacency()),
            opts,
            gnn,
            mvc,
            head,
            trajectory,
            pairs: gw.undirected_edges(),
            pred: Vec::new(),
            adam,
        })
    }

    fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        Ok(Bound {
            gnn: self.gnn.bind(tape)?,
            mvc: match &self.mvc {
                Some(m) => m.bind(tape)?,
                None => Vec::new(),
            },
            head: self.head.as_ref().map(|h| h.bind(tape)).transpose()?,
        })
    }

    /// Whether learned decisions are skipped this epoch.
    fn bypass(&self, epoch: usize) -> bool {
        epoch < self.cfg.warmup_epochs || self.trajectory.as_ref().map_or(true, Trajectory::is_zero)
    }

    fn current_edges(&self) -> Vec<(usize, usize)> {
        match self.pipeline.sampler {
            Sampler::Rewire => {
                let mut e: Vec<_> = self.pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
                e.sort_unstable();
                e
            }
            _ => self.edges.clone(),
        }
    }

    fn decide(&self, tape: &mut Tape, bound: &Bound, epoch: usize, train: bool) -> Result<InsertionDecision> {
        let cfg = self.cfg;
        match self.pipeline.sampler {
            Sampler::None | Sampler::Rewire => Ok(InsertionDecision::none(self.current_edges())),
            Sampler::Random => halfhop_mask(
                self.edges.clone(),
                cfg.halfhop_p,
                seed_for(cfg, Stream::Halfhop, epoch),
                cfg.tie_reverse,
            ),
            Sampler::Learned => {
                if self.bypass(epoch) {
                    return Ok(InsertionDecision::none(self.edges.clone()));
                }
                let (Some(traj), Some(mvc), Some(head)) = (&self.trajectory, &self.mvc, bound.head) else {
                    return Err(Error::InvalidArgument("learned sampler without encoder state".into()));
                };
                let condensed = mvc_forward(tape, traj, mvc, &bound.mvc)?;
                let logits = edge_logits(tape, condensed, &self.edges, head)?;
                let seed = seed_for(cfg, Stream::Gumbel, epoch);
                let noise = if train { GumbelNoise::Seeded(seed) } else { GumbelNoise::Off };
                sample_mask(tape, logits, self.edges.clone(), cfg.temperature.at(epoch), noise, cfg.tie_reverse)
            }
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.gnn.tensors();
        if let Some(m) = &self.mvc {
            out.extend(m.tensors());
        }
        if let Some(h) = &self.head {
            out.push(&h.w_up);
        }
        out
    }

    /// One optimizer step; returns the training objective.
    fn step(&mut self, epoch: usize) -> Result<f64> {
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let decision = self.decide(&mut tape, &bound, epoch, true)?;
        let aug = build_augmented(&mut tape, self.n, &decision, &self.opts)?;
        let mode = Mode::Train {
            seed: dropout_seed(cfg.seed, epoch),
        };
        let out = gnn_forward(&mut tape, &self.gnn, &bound.gnn, &aug.operator, &self.input, aug.inserted.as_ref(), mode)?;
        let labels = aug.labels(&self.labels);
        let mask = aug.mask(&self.train_mask);
        let last = *out.hidden.last().expect("at least one layer");
        let smoothed = match cfg.smooth_target {
            SmoothTarget::Logits => out.logits,
            SmoothTarget::Hidden => last,
        };
        let mut loss = total_loss(&mut tape, out.logits, &labels, &mask, smoothed, &aug.edges, cfg.beta)?;

        let has_state = self.trajectory.as_ref().is_some_and(|t| !t.is_zero());
        if self.pipeline.sampler == Sampler::Rewire && has_state && !self.pred.is_empty() {
            // Edge head learns to flag pairs whose current predictions
            // disagree, warmup included, so it is fitted before it first acts.
            let traj = self.trajectory.as_ref().expect("rewiring keeps a trajectory");
            let h = tape.constant(traj.slice(traj.layers() - 1))?;
            let head = bound.head.expect("rewiring has a head");
            let logits = adaedge_logits(&mut tape, h, &self.pairs, head)?;
            let targets = adaedge_targets(&self.pred, &self.pairs);
            let aux = tape.masked_cross_entropy(logits, &targets, &vec![true; targets.len()])?;
            loss = tape.add(loss, aux)?;
        }

        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let vars = self.param_vars(&bound);
        let gs: Vec<Tensor> = vars
            .iter()
            .zip(self.params())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();
        let mut params = self.gnn.tensors_mut();
        if let Some(m) = &mut self.mvc {
            params.extend(m.tensors_mut());
        }
        if let Some(h) = &mut self.head {
            params.push(&mut h.w_up);
        }
        self.adam.step(&mut params, &gs)?;
        Ok(value)
    }

    fn param_vars(&self, bound: &Bound) -> Vec<Var> {
        let mut out = bound.gnn.vars();
        out.extend(&bound.mvc);
        out.extend(bound.head);
        out
    }

    /// Deterministic pass after the update: metrics, trajectory refresh and
    /// the rewiring step.
    fn evaluate(&mut self, epoch: usize, loss: f64) -> Result<EvalPass> {
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let mut decision = self.decide(&mut tape, &bound, epoch, false)?;
        let aug = build_augmented(&mut tape, self.n, &decision, &self.opts)?;
        let out = gnn_forward(&mut tape, &self.gnn, &bound.gnn, &aug.operator, &self.input, aug.inserted.as_ref(), Mode::Eval)?;
        let original: Vec<usize> = (0..self.n).collect();
        let logits = tape.value(out.logits).gather_rows(&original);
        let last = *out.hidden.last().expect("at least one layer");
        let h = tape.value(last).gather_rows(&original);
        let ratio = analyze_insertions(&aug, &self.labels);
        let record = EpochRecord {
            epoch,
            train_acc: accuracy(&logits, &self.labels, &self.train_mask)?,
            val_acc: accuracy(&logits, &self.labels, &self.val_mask)?,
            test_acc: accuracy(&logits, &self.labels, &self.test_mask)?,
            loss,
            mad: mad(&h, &self.edges, MadMode::Literal),
            mad_per_edge: mad(&h, &self.edges, MadMode::PerEdge),
            dirichlet: dirichlet_energy(&h, &self.laplacian)?,
            insertions: aug.n_inserted(),
            intra_ratio: ratio.intra_ratio(),
            inter_ratio: ratio.inter_ratio(),
        };

        if self.pipeline.trajectory && (self.pipeline.last_layer_only || epoch + 1 >= cfg.warmup_epochs) {
            self.trajectory = Some(if self.pipeline.last_layer_only {
                Trajectory::from_slices(vec![h.clone()], None)?
            } else {
                collect_from_model(&tape, &out.hidden, self.n, cfg.layers, cfg.norm_period)?
            });
        }
        self.pred = argmax_rows(&logits);
        if self.pipeline.sampler == Sampler::Rewire && epoch >= cfg.warmup_epochs {
            let head = self.head.as_ref().expect("rewiring has a head");
            let budget = adaedge_budget(self.edges.len());
            let seed = seed_for(cfg, Stream::Rewire, epoch);
            let r = rewire(&self.pairs, &h, &head.w_up, &self.pred, budget, seed)?;
            debug!(epoch, removed = r.removed.len(), added = r.added.len(), "rewired");
            self.pairs = r.pairs;
        }
        decision.vars = None;
        Ok(EvalPass { record, decision })
    }
}

/// Maps a tape overflow into a divergence diagnostic.
fn diverged(e: Error, cfg: &TrainConfig, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            lr: cfg.lr,
            beta: cfg.beta,
            temperature: cfg.temperature.at(epoch),
        },
        other => other,
    }
}

/// Co-trains the downstream model, condensation encoder and edge head, with
/// early stopping on validation accuracy.
pub fn train_unigap(g: &GraphBundle, cfg: &TrainConfig) -> Result<ExperimentReport> {
    let mut s = Session::new(g, cfg)?;
    let mut report = ExperimentReport {
        variant: cfg.variant,
        seed: cfg.seed,
        epochs: Vec::new(),
        best_decision: None,
        final_edges: Vec::new(),
    };
    let mut best_val = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let loss = s.step(epoch).map_err(|e| diverged(e, cfg, epoch))?;
        if !loss.is_finite() {
            return Err(diverged(Error::NonFinite { op: "loss" }, cfg, epoch));
        }
        let pass = s.evaluate(epoch, loss).map_err(|e| diverged(e, cfg, epoch))?;
        debug!(
            epoch,
            loss,
            val = pass.record.val_acc,
            insertions = pass.record.insertions,
            "epoch"
        );
        if pass.record.val_acc > best_val {
            best_val = pass.record.val_acc;
            stale = 0;
            report.best_decision = (pass.decision.count() > 0).then_some(pass.decision);
        } else {
            stale += 1;
        }
        report.epochs.push(pass.record);
        if stale >= cfg.patience {
            break;
        }
    }
    report.final_edges = s.current_edges();
    Ok(report)
}
