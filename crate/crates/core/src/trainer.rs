//! Dual-branch training schedule, run logs and ablation runs.
//!
//! A cycle is `kappa` bag epochs (one bag per step) followed by one instance
//! epoch (cross-bag batches of cached pseudo-labels). `max_epochs` counts bag
//! epochs; a trailing partial cycle still ends with its instance epoch.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::config::{KvFile, KvWriter};
use crate::data::{bag_sampler, instance_sampler, BagDataset};
use crate::error::{Error, Result};
use crate::losses::{bag_loss, instance_batch_loss, LossWeights};
use crate::metrics::{evaluate_model, EvalOptions, MetricsReport};
use crate::model::{bag_forward, instance_forward, ForwardMode, SoftLabelCache};
use crate::nn::{Aggregator, ModelDims, ModelSpec, ModelState};
use crate::tensor::optim::Adam;
use crate::tensor::{AdamHyper, Tape};

pub const BAG_GROUP: usize = 0;
pub const INSTANCE_GROUP: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub aggregator: Aggregator,
    pub hidden: usize,
    pub d: usize,
    pub l: usize,
    pub weights: LossWeights,
    /// Mining threshold; 1 disables the mask.
    pub tau: f64,
    /// Also mine negative bags. Off, the mask only runs in positive bags,
    /// where confident instances are the likely witnesses.
    pub mask_negative_bags: bool,
    /// Temperature of the soft pseudo-labels.
    pub temperature: f64,
    /// Bag epochs per cycle.
    pub kappa: usize,
    /// Total bag epochs.
    pub max_epochs: usize,
    /// Bag epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub instance_batch: usize,
    pub seed: u64,
    /// Validation cadence in cycles.
    pub eval_every: usize,
    pub freeze_instance_head: bool,
    /// Run instance epochs. Off gives a plain attention model whose instance
    /// scores come from attention.
    pub instance_phase: bool,
    pub tie_dsmil_scorer: bool,
    pub instance_threshold_half: bool,
    /// Ablation variants run by the `ablate` command.
    pub ablations: Vec<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        TrainConfig {
            aggregator: Aggregator::Abmil,
            hidden: dims.hidden,
            d: dims.d,
            l: dims.l,
            weights: LossWeights::default(),
            tau: 0.75,
            mask_negative_bags: false,
            temperature: 1.0,
            kappa: 10,
            max_epochs: 300,
            patience: 0,
            lr: 2e-4,
            weight_decay: 1e-5,
            instance_batch: 1024,
            seed: 0,
            eval_every: 1,
            freeze_instance_head: false,
            instance_phase: true,
            tie_dsmil_scorer: true,
            instance_threshold_half: false,
            ablations: vec![Ablation::NoSelf, Ablation::NoAttn],
        }
    }
}

fn range_err(line: usize, key: &str, what: &str) -> Error {
    Error::config_at(line, format!("`{key}` {what}"))
}

fn parse_bool(e: &crate::config::KvEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        v => Err(Error::config_at(e.line, format!("bad boolean `{v}` for `{}`", e.key))),
    }
}

impl TrainConfig {
    pub fn dims(&self, d_in: usize) -> ModelDims {
        ModelDims {
            d_in,
            hidden: self.hidden,
            d: self.d,
            l: self.l,
        }
    }

    pub fn model_spec(&self, d_in: usize) -> ModelSpec {
        ModelSpec {
            aggregator: self.aggregator,
            dims: self.dims(d_in),
            tie_dsmil_scorer: self.tie_dsmil_scorer,
            instance_branch: self.instance_phase,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamHyper::default()
        }
    }

    /// Mining threshold applied to a bag with label `y`.
    pub fn bag_tau(&self, y: u8) -> f64 {
        if y == 0 && !self.mask_negative_bags {
            1.0
        } else {
            self.tau
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            instance_threshold_half: self.instance_threshold_half,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvFile::parse(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut c = TrainConfig::default();
        for e in kv.entries() {
            let (key, line) = (e.key.as_str(), e.line);
            let nonneg = |v: f64| -> Result<f64> {
                if v.is_finite() && v >= 0.0 {
                    Ok(v)
                } else {
                    Err(range_err(line, key, "must be a nonnegative number"))
                }
            };
            let unit_open = |v: f64| -> Result<f64> {
                if v > 0.0 && v < 1.0 {
                    Ok(v)
                } else {
                    Err(range_err(line, key, "must lie in (0, 1)"))
                }
            };
            let positive = |v: usize| -> Result<usize> {
                if v >= 1 {
                    Ok(v)
                } else {
                    Err(range_err(line, key, "must be at least 1"))
                }
            };
            let w = &mut c.weights;
            match key {
                "aggregator" => {
                    let a: Aggregator = e.parse()?;
                    if a.is_pooling() {
                        return Err(range_err(line, key, "must be an attention aggregator (abmil, dsmil, clam_sb, clam_mb)"));
                    }
                    c.aggregator = a;
                }
                "hidden" => c.hidden = positive(e.parse()?)?,
                "d" => c.d = positive(e.parse()?)?,
                "l" => c.l = positive(e.parse()?)?,
                "beta" => w.beta = nonneg(e.parse()?)?,
                "gamma" => w.gamma = nonneg(e.parse()?)?,
                "delta" => w.delta = nonneg(e.parse()?)?,
                "theta" => w.theta = nonneg(e.parse()?)?,
                "c1" => w.c1 = nonneg(e.parse()?)?,
                "c2" => w.c2 = nonneg(e.parse()?)?,
                "t" => w.t = unit_open(e.parse()?)?,
                "use_inst" => w.use_inst = parse_bool(e)?,
                "use_self" => w.use_self = parse_bool(e)?,
                "use_attn" => w.use_attn = parse_bool(e)?,
                "use_inst_self" => w.use_inst_self = parse_bool(e)?,
                "inst_target_grad" => w.inst_target_grad = parse_bool(e)?,
                "mask_negative_bags" => c.mask_negative_bags = parse_bool(e)?,
                "tau" => {
                    let v: f64 = e.parse()?;
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(range_err(line, key, "must lie in (0, 1]"));
                    }
                    c.tau = v;
                }
                "temperature" => {
                    let v: f64 = e.parse()?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(range_err(line, key, "must be positive"));
                    }
                    c.temperature = v;
                }
                "kappa" => c.kappa = positive(e.parse()?)?,
                "max_epochs" => c.max_epochs = positive(e.parse()?)?,
                "patience" => c.patience = e.parse()?,
                "lr" => c.lr = nonneg(e.parse()?)?,
                "weight_decay" => c.weight_decay = nonneg(e.parse()?)?,
                "bag_batch" => {
                    if e.parse::<usize>()? != 1 {
                        return Err(range_err(line, key, "must be 1 (one bag per step)"));
                    }
                }
                "instance_batch" => c.instance_batch = positive(e.parse()?)?,
                "seed" => c.seed = e.parse()?,
                "eval_every" => c.eval_every = positive(e.parse()?)?,
                "freeze_instance_head" => c.freeze_instance_head = parse_bool(e)?,
                "instance_phase" => c.instance_phase = parse_bool(e)?,
                "tie_dsmil_scorer" => c.tie_dsmil_scorer = parse_bool(e)?,
                "instance_threshold_half" => c.instance_threshold_half = parse_bool(e)?,
                "ablations" => {
                    c.ablations = e
                        .value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|m: String| Error::config_at(line, m)))
                        .collect::<Result<_>>()?;
                }
                other => return Err(Error::config_at(line, format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.kappa == 0 || self.max_epochs == 0 || self.instance_batch == 0 || self.eval_every == 0 {
            return Err(Error::config("kappa, max_epochs, instance_batch and eval_every must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau = {} outside (0, 1]", self.tau)));
        }
        if self.aggregator.is_pooling() {
            return Err(Error::config("the dual-branch trainer needs an attention aggregator"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let w = &self.weights;
        let ablations: Vec<&str> = self.ablations.iter().map(|a| a.name()).collect();
        let mut kv = KvWriter::default();
        kv.put("aggregator", self.aggregator)
            .put("hidden", self.hidden)
            .put("d", self.d)
            .put("l", self.l)
            .put("beta", w.beta)
            .put("gamma", w.gamma)
            .put("delta", w.delta)
            .put("theta", w.theta)
            .put("c1", w.c1)
            .put("c2", w.c2)
            .put("t", w.t)
            .put("use_inst", w.use_inst)
            .put("use_self", w.use_self)
            .put("use_attn", w.use_attn)
            .put("use_inst_self", w.use_inst_self)
            .put("inst_target_grad", w.inst_target_grad)
            .put("tau", self.tau)
            .put("mask_negative_bags", self.mask_negative_bags)
            .put("temperature", self.temperature)
            .put("kappa", self.kappa)
            .put("max_epochs", self.max_epochs)
            .put("patience", self.patience)
            .put("lr", self.lr)
            .put("weight_decay", self.weight_decay)
            .put("bag_batch", 1)
            .put("instance_batch", self.instance_batch)
            .put("seed", self.seed)
            .put("eval_every", self.eval_every)
            .put("freeze_instance_head", self.freeze_instance_head)
            .put("instance_phase", self.instance_phase)
            .put("tie_dsmil_scorer", self.tie_dsmil_scorer)
            .put("instance_threshold_half", self.instance_threshold_half)
            .put("ablations", ablations.join(","));
        kv.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bag,
    Instance,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Bag => "bag",
            Phase::Instance => "instance",
        })
    }
}

/// One optimizer step, as seen by a [`train_observed`] callback after the
/// parameters were updated.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<'a> {
    pub phase: Phase,
    pub cycle: usize,
    /// Bag epoch (bag phase) or instance epoch (instance phase).
    pub epoch: usize,
    pub step: usize,
    pub group: usize,
    pub members: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub cycle: usize,
    pub epoch: usize,
    pub steps: usize,
    /// Mean total loss over steps.
    pub loss: f64,
    pub loss_label: f64,
    pub loss_inst: f64,
    pub loss_self: f64,
    pub loss_attn: f64,
    pub loss_pseudo: f64,
    /// Mean of `|M_i| / n_i` over bags (bag phase).
    pub mask_keep: f64,
    pub empty_masks: usize,
    /// Oldest and newest cache stamps at the start of an instance epoch.
    pub cache_stamps: Option<(usize, usize)>,
    pub val_bag_auc: Option<f64>,
    pub val_inst_auc: Option<f64>,
    pub wall_ms: f64,
}

impl EpochRecord {
    fn new(phase: Phase, cycle: usize, epoch: usize) -> Self {
        EpochRecord {
            phase,
            cycle,
            epoch,
            steps: 0,
            loss: 0.0,
            loss_label: 0.0,
            loss_inst: 0.0,
            loss_self: 0.0,
            loss_attn: 0.0,
            loss_pseudo: 0.0,
            mask_keep: 0.0,
            empty_masks: 0,
            cache_stamps: None,
            val_bag_auc: None,
            val_inst_auc: None,
            wall_ms: 0.0,
        }
    }

    fn finish_means(&mut self) {
        let n = self.steps.max(1) as f64;
        for x in [
            &mut self.loss,
            &mut self.loss_label,
            &mut self.loss_inst,
            &mut self.loss_self,
            &mut self.loss_attn,
            &mut self.loss_pseudo,
            &mut self.mask_keep,
        ] {
            *x /= n;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    /// Bag epoch whose state was returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn opt<T: fmt::Display>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunLog {
    pub const HEADER: &'static str = "phase,cycle,epoch,steps,loss,loss_label,loss_inst,loss_self,loss_attn,loss_pseudo,mask_keep,empty_masks,cache_stamp_min,cache_stamp_max,val_bag_auc,val_inst_auc,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{},{},{:.3}",
                r.phase,
                r.cycle,
                r.epoch,
                r.steps,
                r.loss,
                r.loss_label,
                r.loss_inst,
                r.loss_self,
                r.loss_attn,
                r.loss_pseudo,
                r.mask_keep,
                r.empty_masks,
                opt(r.cache_stamps.map(|s| s.0)),
                opt(r.cache_stamps.map(|s| s.1)),
                opt(r.val_bag_auc),
                opt(r.val_inst_auc),
                r.wall_ms
            );
        }
        s
    }

    /// Every logged number except wall time, for determinism checks.
    pub fn metric_values(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for r in &self.records {
            v.extend([
                r.loss,
                r.loss_label,
                r.loss_inst,
                r.loss_self,
                r.loss_attn,
                r.loss_pseudo,
                r.mask_keep,
                r.empty_masks as f64,
                r.val_bag_auc.unwrap_or(f64::NAN),
                r.val_inst_auc.unwrap_or(f64::NAN),
            ]);
        }
        v
    }
}

fn check_dataset(ds: &BagDataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Validation(format!("{what} dataset is empty")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bag_epoch(
    state: &mut ModelState,
    opt: &mut Adam,
    cache: &mut SoftLabelCache,
    ds: &BagDataset,
    cfg: &TrainConfig,
    cycle: usize,
    epoch: usize,
    members: &[usize],
    observe: &mut dyn FnMut(&StepEvent<'_>, &ModelState),
) -> Result<EpochRecord> {
    let mut rec = EpochRecord::new(Phase::Bag, cycle, epoch);
    for (step, bi) in bag_sampler(ds.len(), cfg.seed, epoch as u64).into_iter().enumerate() {
        let bag = &ds.bags[bi];
        let mut tape = Tape::new();
        let p = state.bind(&mut tape);
        let fwd = bag_forward(
            &mut tape,
            state,
            &p,
            bag,
            cfg.bag_tau(bag.label),
            ForwardMode::Train { cache, epoch },
        )?;
        let (loss, parts) = bag_loss(&mut tape, &fwd, bag.label, &cfg.weights)?;
        tape.backward(loss)?;
        state.accumulate_grads(&tape, &p)?;
        opt.step(&mut state.params, BAG_GROUP, members);
        state.zero_grads();

        rec.steps += 1;
        rec.loss += parts.total;
        rec.loss_label += parts.label;
        rec.loss_inst += parts.inst;
        rec.loss_self += parts.self_;
        rec.loss_attn += parts.attn;
        rec.mask_keep += fwd.record.survivors.len() as f64 / bag.n as f64;
        rec.empty_masks += usize::from(fwd.empty_mask);
        observe(
            &StepEvent {
                phase: Phase::Bag,
                cycle,
                epoch,
                step,
                group: BAG_GROUP,
                members,
            },
            state,
        );
    }
    rec.finish_means();
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn instance_epoch(
    state: &mut ModelState,
    opt: &mut Adam,
    cache: &SoftLabelCache,
    ds: &BagDataset,
    cfg: &TrainConfig,
    cycle: usize,
    last_bag_epoch: usize,
    members: &[usize],
    observe: &mut dyn FnMut(&StepEvent<'_>, &ModelState),
) -> Result<EpochRecord> {
    let mut rec = EpochRecord::new(Phase::Instance, cycle, cycle);
    let stamps = cache.stamp_range();
    if stamps != Some((last_bag_epoch, last_bag_epoch)) || cache.len() != ds.len() {
        return Err(Error::Contract(format!(
            "stale pseudo-label cache at instance epoch {cycle}: stamps {stamps:?}, expected {last_bag_epoch}"
        )));
    }
    rec.cache_stamps = stamps;
    let batches = instance_sampler(ds, cache, cfg.instance_batch, cfg.seed, cycle as u64)?;
    for (step, batch) in batches.iter().enumerate() {
        let mut feats = Vec::with_capacity(batch.len() * ds.d_in);
        for item in batch {
            feats.extend_from_slice(ds.bags[item.bag].instance(item.instance));
        }
        let attention: Vec<f64> = batch.iter().map(|i| i.attention).collect();
        let labels: Vec<u8> = batch.iter().map(|i| i.bag_label).collect();
        let mut tape = Tape::new();
        let p = state.bind(&mut tape);
        let logits = instance_forward(&mut tape, &p, feats, ds.d_in)?;
        let (loss, parts) = instance_batch_loss(&mut tape, logits, &attention, &labels, &cfg.weights, cfg.temperature)?;
        tape.backward(loss)?;
        state.accumulate_grads(&tape, &p)?;
        opt.step(&mut state.params, INSTANCE_GROUP, members);
        state.zero_grads();

        rec.steps += 1;
        rec.loss += parts.total;
        rec.loss_pseudo += parts.pseudo;
        rec.loss_self += parts.self_;
        observe(
            &StepEvent {
                phase: Phase::Instance,
                cycle,
                epoch: cycle,
                step,
                group: INSTANCE_GROUP,
                members,
            },
            state,
        );
    }
    rec.finish_means();
    Ok(rec)
}

/// Trains a dual-branch model; see [`train_observed`].
pub fn train(ds: &BagDataset, val: Option<&BagDataset>, cfg: &TrainConfig) -> Result<(ModelState, RunLog)> {
    train_observed(ds, val, cfg, &mut |_, _| {})
}

/// Runs the cycle schedule, calling `observe` after every optimizer step.
///
/// With a validation set, bag AUC is measured every `eval_every` cycles; the
/// best state is returned and `patience` (in bag epochs) enables early
/// stopping. Without one, the final state is returned.
pub fn train_observed(
    ds: &BagDataset,
    val: Option<&BagDataset>,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&StepEvent<'_>, &ModelState),
) -> Result<(ModelState, RunLog)> {
    cfg.validate()?;
    check_dataset(ds, "training")?;
    if let Some(v) = val {
        check_dataset(v, "validation")?;
        if v.d_in != ds.d_in {
            return Err(Error::Validation(format!(
                "validation width {} differs from training width {}",
                v.d_in, ds.d_in
            )));
        }
    }
    if let Err(v) = cfg.weights.check_tripartite() {
        for msg in v.0 {
            log::warn!("loss weights break the balance rule: {msg}");
        }
    }

    let mut state = ModelState::init(cfg.model_spec(ds.d_in), cfg.seed)?;
    let mut opt = Adam::new(cfg.adam(), &state.params, 2);
    let bag_members = state.bag_group(!cfg.freeze_instance_head);
    let inst_members = state.instance_group();
    let mut cache = SoftLabelCache::default();
    let mut log = RunLog::default();
    let mut best: Option<(f64, usize, ModelState)> = None;

    let n_cycles = cfg.max_epochs.div_ceil(cfg.kappa);
    let mut epoch = 0;
    'cycles: for cycle in 0..n_cycles {
        let end = ((cycle + 1) * cfg.kappa).min(cfg.max_epochs);
        while epoch < end {
            let t0 = Instant::now();
            let mut rec = bag_epoch(&mut state, &mut opt, &mut cache, ds, cfg, cycle, epoch, &bag_members, observe)?;
            rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            log::debug!("cycle {cycle} bag epoch {epoch}: loss {:.5}", rec.loss);
            log.records.push(rec);
            epoch += 1;
        }
        if cfg.instance_phase {
            let t0 = Instant::now();
            let mut rec = instance_epoch(&mut state, &mut opt, &cache, ds, cfg, cycle, epoch - 1, &inst_members, observe)?;
            rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            log::debug!("cycle {cycle} instance epoch: loss {:.5}", rec.loss);
            log.records.push(rec);
        }
        let Some(v) = val else { continue };
        if (cycle + 1) % cfg.eval_every != 0 && cycle + 1 != n_cycles {
            continue;
        }
        let report = evaluate_model(&state, v, &cfg.eval_options())?;
        let last = log.records.last_mut().expect("cycle produced a record");
        last.val_bag_auc = Some(report.bag_auc);
        last.val_inst_auc = report.inst_auc;
        log::info!("cycle {cycle}: validation bag AUC {:.4}", report.bag_auc);
        let improved = best.as_ref().is_none_or(|(b, _, _)| report.bag_auc > *b);
        if improved {
            best = Some((report.bag_auc, epoch - 1, state.clone()));
        } else if cfg.patience > 0 {
            let since = epoch - 1 - best.as_ref().map_or(0, |b| b.1);
            if since >= cfg.patience {
                log.stopped_early = true;
                break 'cycles;
            }
        }
    }
    match best {
        Some((_, e, s)) => {
            log.best_epoch = Some(e);
            Ok((s, log))
        }
        None => {
            log.best_epoch = Some(epoch - 1);
            Ok((state, log))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Drop `L_inst`.
    NoInst,
    /// Drop both self-confidence terms, `L_self` and `ℓ_self`.
    NoSelf,
    /// Drop `L_attn`.
    NoAttn,
    /// Disable hard-positive mining.
    NoMask,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::NoInst, Ablation::NoSelf, Ablation::NoAttn, Ablation::NoMask];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoInst => "no_inst",
            Ablation::NoSelf => "no_self",
            Ablation::NoAttn => "no_attn",
            Ablation::NoMask => "no_mask",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::NoInst => c.weights.use_inst = false,
            Ablation::NoSelf => {
                c.weights.use_self = false;
                c.weights.use_inst_self = false;
            }
            Ablation::NoAttn => c.weights.use_attn = false,
            Ablation::NoMask => c.tau = 1.0,
        }
        c
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected no_inst, no_self, no_attn or no_mask)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// Full model first, then one row per variant.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_tsv(&self) -> String {
        let base = &self.rows[0].report;
        let mut s = String::from("variant\tbag_auc\tbag_acc\tinst_auc\tinst_acc\td_bag_auc\td_bag_acc\td_inst_auc\td_inst_acc\n");
        let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| format!("{:+.4}", a - b)).unwrap_or_else(|| "NA".into());
        let val = |a: Option<f64>| a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "NA".into());
        for row in &self.rows {
            let r = &row.report;
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}",
                row.variant,
                r.bag_auc,
                r.bag_acc,
                val(r.inst_auc),
                val(r.inst_acc),
                diff(Some(r.bag_auc), Some(base.bag_auc)),
                diff(Some(r.bag_acc), Some(base.bag_acc)),
                diff(r.inst_auc, base.inst_auc),
                diff(r.inst_acc, base.inst_acc),
            );
        }
        s
    }
}

/// Trains the full configuration and each variant with the same seed and
/// evaluates all of them on `test`.
pub fn run_ablation(train_ds: &BagDataset, test: &BagDataset, cfg: &TrainConfig, variants: &[Ablation]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len() + 1);
    let arms = std::iter::once(("full".to_string(), cfg.clone()))
        .chain(variants.iter().map(|v| (v.name().to_string(), v.apply(cfg))));
    for (name, c) in arms {
        log::info!("ablation arm {name}");
        let (state, _) = train(train_ds, None, &c)?;
        let report = evaluate_model(&state, test, &c.eval_options())?;
        rows.push(AblationRow { variant: name, report });
    }
    Ok(AblationReport { rows })
}
