"""Link-prediction training: scoring head, negative sampling, loss, loop.

The objective is the summed binary cross-entropy over each positive
interaction and one sampled negative destination per positive. Batches run
in chronological order; validation MRR drives early stopping and the best
checkpoint wins.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .encoder import CoEncoder, EncoderRuntime
from .graph import GraphView
from .seeding import derive_seed


class TrainingError(RuntimeError):
    pass


class PredictionHead(nn.Module):
    """Two-layer MLP scoring an ordered pair [z_u cat z_v] -> probability."""

    def __init__(self, d: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or d
        self.net = nn.Sequential(
            nn.Linear(2 * d, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, z_u: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        x = torch.cat([z_u, z_v], dim=-1)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite representations fed to prediction head")
        return torch.sigmoid(self.net(x).squeeze(-1))


class NegativeSampler:
    """Uniform draws from a destination pool, never the true destination.

    Collisions with the true destination are resampled, so the effective
    distribution is uniform over pool minus {v} for each query.
    """

    def __init__(self, pool: np.ndarray, seed: int):
        pool = np.unique(np.asarray(pool, dtype=np.int64))
        if pool.size == 0:
            raise ValueError("empty negative-sampling pool")
        self.pool = pool
        self.rng = np.random.default_rng(seed)

    def sample_many(self, true_dst: np.ndarray, k: int = 1) -> np.ndarray:
        true_dst = np.asarray(true_dst, dtype=np.int64)
        if self.pool.size == 1 and np.any(true_dst == self.pool[0]):
            raise ValueError("pool has a single node equal to a true destination")
        out = self.pool[self.rng.integers(0, self.pool.size, size=(true_dst.size, k))]
        bad = out == true_dst[:, None]
        while bad.any():
            out[bad] = self.pool[self.rng.integers(0, self.pool.size, size=int(bad.sum()))]
            bad = out == true_dst[:, None]
        return out[:, 0] if k == 1 else out

    def sample(self, true_dst: int) -> int:
        return int(self.sample_many(np.array([true_dst]), k=1)[0])


def bce_loss(p_pos: torch.Tensor, p_neg: torch.Tensor,
             eps: float = 1e-7) -> torch.Tensor:
    """Summed BCE over positives and negatives, probabilities clamped at eps."""
    pp = p_pos.clamp(eps, 1 - eps)
    pn = p_neg.clamp(eps, 1 - eps)
    return -(torch.log(pp).sum() + torch.log(1 - pn).sum())


# ------------------------------------------------------------- checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, encoder: CoEncoder, head: PredictionHead,
                    optimizer=None, config_hash: str = "", extra: dict | None = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "variant": encoder.variant,
        "encoder": encoder.state_dict(),
        "head": head.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, encoder: CoEncoder, head: PredictionHead,
                    optimizer=None, expect_hash: str | None = None,
                    restore_rng: bool = False) -> dict:
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise TrainingError(
            f"checkpoint format {version!r} not supported (want {CHECKPOINT_VERSION})")
    if expect_hash is not None and payload["config_hash"] != expect_hash:
        raise TrainingError(
            f"checkpoint was built under config {payload['config_hash']!r}, "
            f"not {expect_hash!r}")
    encoder.load_state_dict(payload["encoder"])
    encoder.variant = payload["variant"]
    head.load_state_dict(payload["head"])
    if optimizer is not None and payload["optimizer"] is not None:
        optimizer.load_state_dict(payload["optimizer"])
    if restore_rng:
        torch.set_rng_state(payload["torch_rng"])
    return {"config_hash": payload["config_hash"], "variant": payload["variant"],
            **payload["extra"]}


# ---------------------------------------------------------------- training

@dataclass
class TrainSettings:
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-4
    head_lr: float | None = None       # separate rate for the prediction head
    head_warmup_epochs: int = 0        # freeze encoder, fit the head first
    weight_decay: float = 0.0
    grad_clip: float | None = None     # max grad norm; None disables clipping
    patience: int = 5
    eval_interval: int = 5
    seed: int = 0
    val_negatives: int = 100
    val_queries: int | None = None     # cap on validation MRR queries
    deterministic: bool = True
    clamp_eps: float = 1e-7
    log_path: str | None = None


@dataclass
class TrainResult:
    best_val_mrr: float | None
    best_epoch: int | None
    epochs_run: int
    early_stopped: bool
    log: list[dict] = field(default_factory=list)


def _snapshot(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def train(encoder: CoEncoder, head: PredictionHead, runtime: EncoderRuntime,
          train_view: GraphView, val_view: GraphView,
          settings: TrainSettings | None = None,
          val_metric_fn=None) -> TrainResult:
    """Chronological mini-batch training with validation-MRR early stopping.

    val_metric_fn() -> float overrides the MRR probe (tests inject schedules
    through it). Patience counts consecutive evaluations without improvement.
    On return, encoder and head hold the best-validation state.
    """
    from .evaluation import evaluate_mrr  # local import, no cycle at load time

    settings = settings or TrainSettings()
    if len(train_view) == 0:
        raise TrainingError("empty training view")
    if settings.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(derive_seed(settings.seed, "train-loop"))

    sampler = NegativeSampler(np.unique(train_view.dst),
                              derive_seed(settings.seed, "train-negatives"))
    params = list(encoder.parameters()) + list(head.parameters())
    groups = [{"params": list(encoder.parameters())},
              {"params": list(head.parameters()),
               "lr": settings.head_lr if settings.head_lr is not None else settings.lr}]
    optimizer = torch.optim.Adam(groups, lr=settings.lr,
                                 weight_decay=settings.weight_decay)

    if val_metric_fn is None:
        def val_metric_fn():
            return evaluate_mrr(
                encoder, head, runtime, val_view,
                num_negatives=settings.val_negatives,
                seed=derive_seed(settings.seed, "val-negatives"),
                max_queries=settings.val_queries).mrr

    src, dst, times = train_view.src, train_view.dst, train_view.times
    n = len(train_view)
    log: list[dict] = []
    log_fh = open(settings.log_path, "a", encoding="utf-8") if settings.log_path else None

    best = -math.inf
    best_epoch = None
    best_state = None
    strikes = 0
    early_stopped = False
    epochs_run = 0
    try:
        for epoch in range(1, settings.epochs + 1):
            epochs_run = epoch
            encoder.train()
            head.train()
            # a frozen-encoder phase lets the pair head lock onto the
            # informative init features before they start moving
            frozen = epoch <= settings.head_warmup_epochs
            for p in encoder.parameters():
                p.requires_grad_(not frozen)
            total = 0.0
            for lo in range(0, n, settings.batch_size):
                sl = slice(lo, min(lo + settings.batch_size, n))
                bu, bv, bt = src[sl], dst[sl], times[sl]
                bn = sampler.sample_many(bv)
                nodes = np.concatenate([bu, bv, bn])
                z = encoder(runtime, nodes, np.tile(bt, 3))
                b = len(bu)
                p_pos = head(z[:b], z[b:2 * b])
                p_neg = head(z[:b], z[2 * b:])
                loss = bce_loss(p_pos, p_neg, settings.clamp_eps)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"training diverged: non-finite loss at epoch {epoch}, "
                        f"batch starting at edge {lo}")
                optimizer.zero_grad()
                loss.backward()
                if settings.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(params, settings.grad_clip)
                optimizer.step()
                total += float(loss.detach())

            entry = {"epoch": epoch, "loss": total}
            if epoch % settings.eval_interval == 0:
                val = float(val_metric_fn())
                entry["val_mrr"] = val
                if val > best:
                    best, best_epoch, strikes = val, epoch, 0
                    best_state = (_snapshot(encoder), _snapshot(head))
                else:
                    strikes += 1
            log.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if strikes >= settings.patience:
                early_stopped = True
                break
    finally:
        for p in encoder.parameters():
            p.requires_grad_(True)
        if log_fh:
            log_fh.close()

    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        head.load_state_dict(best_state[1])
    return TrainResult(
        best_val_mrr=None if best == -math.inf else best,
        best_epoch=best_epoch, epochs_run=epochs_run,
        early_stopped=early_stopped, log=log)
