"""Pre-training and fine-tuning loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, TextIO

import torch

from timbre.corpus.manifest import Corpus, LabelSpace, read_manifest, subsample_groups
from timbre.errors import IngestError, TrainingFault
from timbre.model.checkpoint import Checkpoint, load_into, snapshot, swap_head
from timbre.model.network import HeadConfig, InstrumentModel, build_model
from timbre.traincore.autodiff import backward
from timbre.traincore.config import RunConfig
from timbre.traincore.data import AudioCache, FinetuneData, PretrainAugment, PretrainData, steps_per_epoch
from timbre.traincore.losses import bce_loss, ce_loss_soft
from timbre.traincore.optim import AdamState, Schedule, adam_step, lr_at

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def load_corpus(cfg: RunConfig) -> Corpus:
    """Read the manifest and label space named in ``cfg``."""
    try:
        entries = read_manifest(cfg.manifest)
        labels = LabelSpace.load(cfg.labels)
    except OSError as exc:
        raise IngestError(f"cannot read training data: {exc}") from exc
    root = Path(cfg.root) if cfg.root else Path(cfg.manifest).parent
    return Corpus(labels, entries, root)


def _deterministic() -> None:
    torch.use_deterministic_algorithms(True)


def _train_loop(model: InstrumentModel, data, cfg: RunConfig,
                loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
                log: TextIO | None) -> list[float]:
    n_steps = steps_per_epoch(len(data), cfg.batch_size)
    sched = Schedule(cfg.resolved_lr(), cfg.warmup_epochs, cfg.epochs, n_steps)
    state = AdamState()
    params = dict(model.named_parameters())
    epoch_losses = []
    step = 0
    start = time.perf_counter()
    model.train()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for batch in data.batches(epoch, cfg.batch_size):
            loss = loss_fn(model(batch.x), batch.y)
            if not torch.isfinite(loss):
                raise TrainingFault(f"non-finite loss at step {step} (epoch {epoch})")
            grads = backward(loss, params)
            lr = lr_at(step + 1, sched)
            adam_step(params, grads, state, lr, cfg.weight_decay)
            step += 1
            value = float(loss.detach())
            total += value * batch.x.shape[0]
            count += batch.x.shape[0]
            if log is not None:
                log.write(json.dumps({"step": step, "epoch": epoch, "lr": lr, "loss": value,
                                      "wall_time": round(time.perf_counter() - start, 3)}) + "\n")
        epoch_losses.append(total / count)
        logger.info("%s epoch %d/%d loss %.4f", cfg.phase, epoch + 1, cfg.epochs, epoch_losses[-1])
    return epoch_losses


def _open_log(path: str | Path | None):
    if path is None:
        return None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8")


def pretrain(cfg: RunConfig, corpus: Corpus | None = None, *,
             log_path: str | Path | None = None) -> TrainResult:
    """Train a softmax head over fine classes on the train split of ``corpus``.

    Returns the last-epoch checkpoint.

    Raises:
        IngestError: no usable training entries.
        TrainingFault: non-finite loss or gradient.
    """
    cfg.validate()
    _deterministic()
    corpus = corpus if corpus is not None else load_corpus(cfg)
    train = corpus.split("train")
    if not train:
        raise IngestError("pre-training manifest has no train entries")
    model_cfg = cfg.model.with_head("softmax_ce", corpus.labels.n_fine)
    model = build_model(model_cfg, cfg.seed)
    aug = PretrainAugment(cfg.concat_prob, cfg.effect_config(), cfg.mixup_prob, cfg.mixup_alpha)
    data = PretrainData(train, corpus.labels.n_fine, AudioCache(corpus.root), aug, cfg.seed)
    logger.info("pretrain: %d notes, %d classes", len(data), corpus.labels.n_fine)

    def loss_fn(logits, y):
        return ce_loss_soft(logits, y, cfg.label_smoothing)

    log = _open_log(log_path)
    try:
        losses = _train_loop(model, data, cfg, loss_fn, log)
    finally:
        if log is not None:
            log.close()
    n_steps = cfg.epochs * steps_per_epoch(len(data), cfg.batch_size)
    meta = {"phase": "pretrain", "run": cfg.hyperparameters(), "labels": corpus.labels.fine_names,
            "final_loss": losses[-1]}
    return TrainResult(snapshot(model, n_steps, None, meta), losses)


def init_finetune_model(cfg: RunConfig, n_out: int, init: Checkpoint | None) -> InstrumentModel:
    """Random model, or the checkpoint body with a fresh sigmoid head.

    Raises:
        CheckpointError: the checkpoint body does not match ``cfg.model``.
    """
    head = HeadConfig("sigmoid_bce", n_out)
    if init is None:
        return build_model(cfg.model.with_head(head.kind, n_out), cfg.seed)
    swapped = swap_head(init, head, seed=cfg.seed, body_config=cfg.model)
    model = InstrumentModel(swapped.config)
    load_into(model, swapped)
    return model


def finetune(cfg: RunConfig, init: Checkpoint | None = None, corpus: Corpus | None = None, *,
             log_path: str | Path | None = None) -> TrainResult:
    """Train a sigmoid multi-label head over coarse classes without augmentation.

    ``init=None`` loads ``cfg.init`` unless it is ``"random"``. ``cfg.data_fraction`` keeps a seeded
    subset of training groups.

    Raises:
        CheckpointError: ``init`` body mismatches ``cfg.model``.
        IngestError: no usable training entries.
        TrainingFault: non-finite loss or gradient.
    """
    cfg.validate()
    if init is None and cfg.pretrained_init:
        init = Checkpoint.load(cfg.init)
    if init is not None and not cfg.pretrained_init:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "init": "checkpoint"}, cfg.phase)
    _deterministic()
    corpus = corpus if corpus is not None else load_corpus(cfg)
    train = corpus.split("train")
    if cfg.data_fraction < 1.0:
        train = subsample_groups(train, cfg.data_fraction, seed=cfg.seed)
    if not train:
        raise IngestError("fine-tuning manifest has no train entries")
    n_out = corpus.labels.n_coarse
    model = init_finetune_model(cfg, n_out, init)
    data = FinetuneData(train, n_out, AudioCache(corpus.root), cfg.seed)
    logger.info("finetune: %d clips -> %d crops, %d labels, lr %.5g", len(train), len(data), n_out,
                cfg.resolved_lr())
    log = _open_log(log_path)
    try:
        losses = _train_loop(model, data, cfg, bce_loss, log)
    finally:
        if log is not None:
            log.close()
    n_steps = cfg.epochs * steps_per_epoch(len(data), cfg.batch_size)
    meta = {"phase": "finetune", "run": cfg.hyperparameters(), "labels": corpus.labels.coarse_names,
            "final_loss": losses[-1],
            "init_body_fingerprint": None if init is None else init.body_fingerprint}
    return TrainResult(snapshot(model, n_steps, None, meta), losses)

