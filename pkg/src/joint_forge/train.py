"""Training loop for the joint-axis network."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .brep import DEFAULT_FEATURES
from .errors import EmptyDataset, InvalidConfig
from .fileio import atomic_write_text
from .network import (
    GraphInput,
    ModelParams,
    NetworkConfig,
    forward,
    loss_ce,
    loss_sym,
    masked_scores,
    top_k,
    valid_mask,
)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    seed: int = 0
    skip_threshold: int = 950
    features: tuple = tuple(sorted(DEFAULT_FEATURES))
    hidden: int = 384
    use_ce: bool = True
    use_sym: bool = True
    patience: int = 10
    lr_factor: float = 0.5

    def validate(self) -> None:
        if self.epochs < 0 or self.lr <= 0:
            raise InvalidConfig("epochs must be >= 0 and lr > 0")
        if not (self.use_ce or self.use_sym):
            raise InvalidConfig("at least one loss term must be enabled")
        if self.hidden < 1 or self.patience < 1 or not 0 < self.lr_factor < 1:
            raise InvalidConfig("bad hidden width, patience or lr factor")

    def network(self) -> NetworkConfig:
        return NetworkConfig(features=tuple(sorted(self.features)), hidden=self.hidden)


@dataclass
class PreparedSample:
    g1: GraphInput
    g2: GraphInput
    labels: np.ndarray
    mask: np.ndarray
    targets: set
    size: int


def prepare(samples: Sequence, features) -> list[PreparedSample]:
    out = []
    for s in samples:
        g1 = GraphInput.from_part(s.part1, features)
        g2 = GraphInput.from_part(s.part2, features)
        out.append(
            PreparedSample(
                g1, g2, s.joint_set.label_matrix(g1.n, g2.n), valid_mask(g1, g2),
                s.joint_set.equivalent_cells(), g1.n + g2.n,
            )
        )
    return out


def sample_loss(params: ModelParams, p: PreparedSample, cfg: TrainConfig):
    logits = forward(params, p.g1, p.g2)
    terms = []
    if cfg.use_ce:
        terms.append(loss_ce(logits, p.labels, p.mask))
    if cfg.use_sym:
        terms.append(loss_sym(logits, p.labels, p.mask))
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total, logits


def evaluate(params: ModelParams, prepared: Sequence[PreparedSample], cfg: TrainConfig) -> tuple[float, float]:
    """Mean loss and top-1 accuracy (equivalents counted) with frozen weights."""
    if not prepared:
        return float("nan"), float("nan")
    losses, hits = [], []
    for p in prepared:
        loss, logits = sample_loss(params, p, cfg)
        losses.append(loss.item())
        (u, v, _), = top_k(logits, 1, p.mask)
        hits.append((u, v) in p.targets)
    return float(np.mean(losses)), float(np.mean(hits))


@dataclass
class TrainResult:
    params: ModelParams
    best: ModelParams
    history: list[dict] = field(default_factory=list)
    skipped: int = 0
    seconds: float = 0.0


def train(
    train_samples: Sequence,
    val_samples: Sequence = (),
    config: Optional[TrainConfig] = None,
    out_dir=None,
    log: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Adam over one joint set per step, with reduce-on-plateau and checkpoints.

    Samples whose combined vertex count exceeds ``skip_threshold`` are skipped.
    Validation loss drives the plateau schedule; the best checkpoint is the
    one with the highest validation top-1 accuracy (lower loss breaks ties).
    Without a validation set the training metrics stand in.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    if not train_samples:
        raise EmptyDataset("training set is empty")
    start = time.perf_counter()
    params = ModelParams.init(cfg.network(), cfg.seed)
    opt = ad.Adam(list(params), lr=cfg.lr)
    train_set = prepare(train_samples, cfg.features)
    val_set = prepare(val_samples, cfg.features)
    usable = [i for i, p in enumerate(train_set) if p.size <= cfg.skip_threshold]
    skipped = len(train_set) - len(usable)
    if not usable:
        raise EmptyDataset("every training sample exceeds skip_threshold")
    rng = np.random.default_rng(cfg.seed)
    best = params.copy()
    best_key = (-np.inf, -np.inf)
    best_loss, stale = np.inf, 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for i in rng.permutation(usable):
            opt.zero_grad()
            with ad.Tape() as tape:
                loss, _ = sample_loss(params, train_set[i], cfg)
            tape.backward(loss)
            opt.step()
            losses.append(loss.item())
        monitor = val_set if val_set else [train_set[i] for i in usable]
        val_loss, val_acc = evaluate(params, monitor, cfg)
        if val_loss < best_loss - 1e-12:
            best_loss, stale = val_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                opt.lr = opt.lr * cfg.lr_factor
                stale = 0
        key = (val_acc, -val_loss)
        if key > best_key:
            best_key, best = key, params.copy()
        entry = {
            "event": "epoch",
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "val_top1": val_acc,
            "lr": opt.lr,
            "skipped": skipped,
        }
        history.append(entry)
        if log:
            log(entry)
    result = TrainResult(params, best, history, skipped, time.perf_counter() - start)
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def save_run(result: TrainResult, cfg: TrainConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"train": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}}
    result.params.save(out_dir / "final", meta)
    result.best.save(out_dir / "best", meta)
    atomic_write_text(out_dir / "history.json", json.dumps(result.history, indent=2, sort_keys=True))


def predict_scores(params: ModelParams, part1, part2) -> np.ndarray:
    """Masked n x m score matrix for a part pair with frozen weights."""
    g1 = GraphInput.from_part(part1, params.config.features)
    g2 = GraphInput.from_part(part2, params.config.features)
    return masked_scores(forward(params, g1, g2), valid_mask(g1, g2))
