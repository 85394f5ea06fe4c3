"""Training drivers for the joint f/h objective and the three baselines.

Gradient normalization: every batch loss is the mean over its groups (the
per-group softmax weights already sum to one), so the step size does not
depend on ``t``. One optimizer step is taken per batch.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .checkpoint import Checkpoint, warn_on_config_mismatch
from .config import TrainConfig
from .data import Dataset
from .errors import ConfigError, DataError, NumericError
from .losses import em_assign, group_loss_backward, group_loss_forward, hinge_rank
from .models import ClassifierModel, ScorerModel, ValidityModel
from .sampler import DropReport, SamplerConfig, build_pairs, make_batches, partition_groups
from .tensor import MlpParams, OptState, mlp_backward, mlp_forward, sgd_momentum_step, softmax_stable

log = logging.getLogger(__name__)

SCORER_STREAM = 1
VALIDITY_STREAM = 2
CLASSIFIER_STREAM = 3


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    kept: int
    dropped: int
    selected: Optional[int] = None
    metric: Optional[float] = None
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self):
        # wall time is left out so that history files are reproducible byte for byte
        return {"epoch": self.epoch, "loss": self.loss, "kept": self.kept,
                "dropped": self.dropped, "selected": self.selected, "metric": self.metric}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: obj.get(k) for k in ("epoch", "loss", "kept", "dropped", "selected", "metric")})


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return [r.loss for r in self.records]

    def to_json(self):
        return [r.to_json() for r in self.records]

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "metric"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), "" if r.metric is None else repr(r.metric)])


@dataclass
class TrainResult:
    config: TrainConfig
    scorer: Optional[ScorerModel]
    validity: Optional[ValidityModel]
    history: TrainHistory
    opt_state: OptState
    epoch: int
    classifier: Optional[ClassifierModel] = None
    pairs: object = None
    effective_t: Optional[int] = None

    def checkpoint(self):
        return Checkpoint(self.config.to_json(), self.config.hash(), self.epoch,
                          self.history.to_json(), self.scorer, self.validity, self.classifier,
                          self.opt_state, extra={"effective_t": self.effective_t})


def scope_dataset(dataset: Dataset, cfg: TrainConfig):
    if cfg.domain is None:
        return dataset
    sub = dataset.subset(lambda r: r.domain == cfg.domain)
    if len(sub) == 0:
        raise DataError(f"no videos in domain {cfg.domain!r}")
    return sub


def _seed_rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def _sampler_config(cfg):
    return SamplerConfig(target_pairs=cfg.target_pairs, n=cfg.n, seed=cfg.seed,
                         domain_scope=cfg.domain_scope, short_range=cfg.short_range,
                         long_range=cfg.long_range)


def _effective_t(num_items, n, t):
    """Shrink ``t`` when the data cannot fill one batch of ``n * t`` pairs."""
    groups = num_items // n
    if groups < 1:
        raise DataError(f"{num_items} pairs cannot fill a group of {n}")
    if groups < t:
        log.info("shrinking groups per batch from %d to %d", t, groups)
        return groups
    return t


def _check_finite(loss, epoch, batch):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch}")


def _resume(config, resume, models):
    """Copy state out of a checkpoint; returns (start_epoch, history, opt_state)."""
    warn_on_config_mismatch(resume, config.hash())
    for target, source in models:
        if source is None or target is None:
            raise ConfigError("checkpoint does not hold the models this method trains")
        if target.sizes != source.sizes:
            raise ConfigError("checkpoint architecture differs from the configured one")
        for dst, src in zip(target.tensors(), source.tensors()):
            dst[...] = src
    history = TrainHistory([EpochRecord.from_json(r) for r in resume.history])
    return resume.epoch, history, resume.opt_state


def pair_scores(scorer, features, pairs, chunk=8192):
    """``(s_hi, s_lo)`` for every pair, computed once per distinct segment."""
    rows = np.unique(np.concatenate([pairs.hi, pairs.lo]))
    scores = np.empty(features.shape[0], dtype=np.float32)
    for i in range(0, len(rows), chunk):
        r = rows[i:i + chunk]
        scores[r] = scorer.scores(features[r])
    return scores[pairs.hi], scores[pairs.lo]


def ranking_objective(f_params, h_params, x_hi, x_lo, t, n, margin=1.0):
    """Loss and gradients for one batch of ``t`` groups of ``n`` pairs.

    Rows of ``x_hi``/``x_lo`` are ordered group by group. Without
    ``h_params`` every logit is zero, which for ``n = 1`` is the plain hinge
    loss. The loss is the mean of the group losses. Returns
    ``(loss, grad_f, grad_h)`` with ``grad_h`` None when ``h_params`` is.
    """
    b = t * n
    dtype = f_params.dtype
    f_out, f_cache = mlp_forward(f_params, np.concatenate([x_hi, x_lo]))
    s_hi = f_out[:b, 0].reshape(t, n)
    s_lo = f_out[b:, 0].reshape(t, n)
    if h_params is not None:
        h_out, h_cache = mlp_forward(h_params, np.concatenate([x_hi, x_lo], axis=1))
        logits = h_out[:, 0].reshape(t, n)
    else:
        logits = np.zeros((t, n), dtype=dtype)
    out = group_loss_forward(s_hi, s_lo, logits, margin)
    grads = group_loss_backward(out)
    scale = dtype.type(1.0 / t)
    up_f = np.concatenate([grads.d_hi.reshape(-1), grads.d_lo.reshape(-1)])[:, None] * scale
    g_f, _ = mlp_backward(f_params, f_cache, up_f.astype(dtype))
    g_h = None
    if h_params is not None:
        g_h, _ = mlp_backward(h_params, h_cache, (grads.d_logits.reshape(-1, 1) * scale).astype(dtype))
    return float(out.loss.mean()), g_f, g_h


def train(config: TrainConfig, dataset: Dataset, *, resume: Checkpoint = None,
          stop_after: int = None, on_epoch_end: Callable = None,
          validate: Callable = None) -> TrainResult:
    """Train according to ``config.method``.

    ``resume`` continues from a checkpoint, ``stop_after`` halts after that
    many completed epochs (the result can be resumed later), ``on_epoch_end``
    receives the partial ``TrainResult`` after each epoch and ``validate``
    maps a scorer to a metric stored in the history.
    """
    cfg = config.resolve()
    if cfg.method == "ranking_em":
        return train_em(config, dataset, resume=resume, stop_after=stop_after,
                        on_epoch_end=on_epoch_end, validate=validate)
    if cfg.method == "cla":
        return train_cla(config, dataset, resume=resume, stop_after=stop_after,
                         on_epoch_end=on_epoch_end, validate=validate)
    dataset = scope_dataset(dataset, cfg)
    use_h = cfg.method == "ours"
    scorer = ScorerModel.create(_seed_rng(cfg.seed, SCORER_STREAM))
    validity = ValidityModel.create(_seed_rng(cfg.seed, VALIDITY_STREAM)) if use_h else None
    params = [scorer.params] + ([validity.params] if use_h else [])
    state = OptState.zeros_for(*params)
    history = TrainHistory()
    start = 0
    if resume is not None:
        start, history, state = _resume(config, resume, [(scorer.params, resume.scorer and resume.scorer.params)]
                                        + ([(validity.params, resume.validity and resume.validity.params)]
                                           if use_h else []))
    pairs = build_pairs(dataset, _sampler_config(cfg))
    n = cfg.n
    t = _effective_t(len(pairs), n, cfg.t)
    X = dataset.features
    result = TrainResult(config, scorer, validity, history, state, start, pairs=pairs, effective_t=t)
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, last):
        tic = time.perf_counter()
        report = DropReport()
        groups = partition_groups(pairs, n, cfg.seed + epoch, report)
        batches = make_batches(groups, t, report)
        batch_losses = []
        for bi, batch in enumerate(batches):
            idx = batch.reshape(-1)
            loss, g_f, g_h = ranking_objective(scorer.params, validity.params if use_h else None,
                                               X[pairs.hi[idx]], X[pairs.lo[idx]], t, n, cfg.margin)
            _check_finite(loss, epoch, bi)
            step_params, step_grads = [scorer.params], [g_f]
            if use_h:
                step_params.append(validity.params)
                step_grads.append(g_h)
            sgd_momentum_step(step_params, step_grads, state, cfg.lr, cfg.momentum, cfg.weight_decay)
            batch_losses.append(loss)
        rec = EpochRecord(epoch, float(np.mean(batch_losses)), report.kept, report.dropped,
                          wall_time=time.perf_counter() - tic)
        if validate is not None:
            rec.metric = float(validate(scorer))
        history.records.append(rec)
        result.epoch = epoch + 1
        log.info("epoch %d loss %.5f kept %d dropped %d", epoch, rec.loss, rec.kept, rec.dropped)
        if on_epoch_end is not None:
            on_epoch_end(result)
    return result


def train_em(config: TrainConfig, dataset: Dataset, *, resume=None, stop_after=None,
             on_epoch_end=None, validate=None) -> TrainResult:
    """Alternate a binary E-step over all pairs with a hinge-loss M-step.

    E-step: keep the ``floor(p |P|)`` pairs with the smallest current hinge
    loss. M-step: one pass of SGD over the kept pairs, batched exactly as the
    ``n = 1`` case of :func:`train`.
    """
    cfg = config.resolve()
    if cfg.method != "ranking_em":
        raise ConfigError("train_em needs method 'ranking_em'")
    dataset = scope_dataset(dataset, cfg)
    scorer = ScorerModel.create(_seed_rng(cfg.seed, SCORER_STREAM))
    state = OptState.zeros_for(scorer.params)
    history = TrainHistory()
    start = 0
    if resume is not None:
        start, history, state = _resume(config, resume, [(scorer.params, resume.scorer and resume.scorer.params)])
    pairs = build_pairs(dataset, _sampler_config(cfg))
    X = dataset.features
    result = TrainResult(config, scorer, None, history, state, start, pairs=pairs)
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, last):
        tic = time.perf_counter()
        s_hi, s_lo = pair_scores(scorer, X, pairs)
        selected = np.flatnonzero(em_assign(hinge_rank(s_hi, s_lo, cfg.margin), cfg.p))
        sub = pairs.take(selected)
        t = _effective_t(len(sub), 1, cfg.t)
        result.effective_t = t
        report = DropReport()
        groups = partition_groups(sub, 1, cfg.seed + epoch, report)
        batches = make_batches(groups, t, report)
        batch_losses = []
        for bi, batch in enumerate(batches):
            idx = batch.reshape(-1)
            loss, g_f, _ = ranking_objective(scorer.params, None, X[sub.hi[idx]], X[sub.lo[idx]],
                                             t, 1, cfg.margin)
            _check_finite(loss, epoch, bi)
            sgd_momentum_step(scorer.params, g_f, state, cfg.lr, cfg.momentum, cfg.weight_decay)
            batch_losses.append(loss)
        rec = EpochRecord(epoch, float(np.mean(batch_losses)), report.kept, report.dropped,
                          selected=int(len(selected)), wall_time=time.perf_counter() - tic)
        if validate is not None:
            rec.metric = float(validate(scorer))
        history.records.append(rec)
        result.epoch = epoch + 1
        log.info("epoch %d loss %.5f selected %d", epoch, rec.loss, rec.selected)
        if on_epoch_end is not None:
            on_epoch_end(result)
    return result


def train_cla(config: TrainConfig, dataset: Dataset, *, resume=None, stop_after=None,
              on_epoch_end=None, validate=None) -> TrainResult:
    """Cross-entropy classifier over the domain tags of the training videos."""
    cfg = config.resolve()
    if cfg.method != "cla":
        raise ConfigError("train_cla needs method 'cla'")
    dataset = scope_dataset(dataset, cfg)
    domains = dataset.domains
    if len(domains) < 2:
        raise DataError(f"the classifier baseline needs at least 2 domains, found {len(domains)}")
    clf = ClassifierModel.create(domains, _seed_rng(cfg.seed, CLASSIFIER_STREAM))
    state = OptState.zeros_for(clf.params)
    history = TrainHistory()
    start = 0
    if resume is not None:
        start, history, state = _resume(config, resume, [(clf.params, resume.classifier and resume.classifier.params)])
    dom_of_video = np.array([clf.domain_index[r.domain] for r in dataset.records])
    y = dom_of_video[dataset.row_video_index()]
    X = dataset.features
    b = min(cfg.batch_size, len(y))
    result = TrainResult(config, None, None, history, state, start, classifier=clf, effective_t=b)
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, last):
        tic = time.perf_counter()
        order = np.random.default_rng([cfg.seed + epoch, 1]).permutation(len(y))
        k = len(y) // b
        batch_losses = []
        for bi in range(k):
            idx = order[bi * b:(bi + 1) * b]
            logits, cache = mlp_forward(clf.params, X[idx])
            prob = softmax_stable(logits, axis=1)
            loss = float(-np.mean(np.log(np.maximum(prob[np.arange(b), y[idx]], 1e-30))))
            _check_finite(loss, epoch, bi)
            up = prob.copy()
            up[np.arange(b), y[idx]] -= 1
            g, _ = mlp_backward(clf.params, cache, (up / b).astype(np.float32))
            sgd_momentum_step(clf.params, g, state, cfg.lr, cfg.momentum, cfg.weight_decay)
            batch_losses.append(loss)
        rec = EpochRecord(epoch, float(np.mean(batch_losses)), k * b, len(y) - k * b,
                          wall_time=time.perf_counter() - tic)
        if validate is not None:
            rec.metric = float(validate(clf))
        history.records.append(rec)
        result.epoch = epoch + 1
        if on_epoch_end is not None:
            on_epoch_end(result)
    return result


def result_from_checkpoint(ckpt: Checkpoint) -> TrainResult:
    cfg = TrainConfig.from_json(ckpt.config)
    history = TrainHistory([EpochRecord.from_json(r) for r in ckpt.history])
    return TrainResult(cfg, ckpt.scorer, ckpt.validity, history, ckpt.opt_state, ckpt.epoch,
                       classifier=ckpt.classifier, effective_t=ckpt.extra.get("effective_t"))
