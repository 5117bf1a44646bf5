"""Ranking metrics, node-classification AUC, and the perturbation harness.

MRR follows the standard temporal-link-prediction protocol: each positive
link is ranked against num_negatives sampled destinations, ties get the
mean rank of their block. AUC uses the rank-statistic (Mann-Whitney) form
with the same tie convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import stats
from torch import nn

from .encoder import CoEncoder, EncoderRuntime, PerturbSpec
from .graph import GraphView
from .seeding import derive_seed
from .training import NegativeSampler, PredictionHead


# ------------------------------------------------------------------ ranks

def rank_with_ties(pos_scores: np.ndarray, neg_scores: np.ndarray) -> np.ndarray:
    """Rank of each positive among [positive] + its negatives, descending.

    Ties take the mean rank of the tied block, so a positive tied with
    `ties` negatives behind `greater` strictly better ones gets
    greater + ties/2 + 1.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)[:, None]
    neg = np.asarray(neg_scores, dtype=np.float64)
    greater = (neg > pos).sum(axis=1)
    ties = (neg == pos).sum(axis=1)
    return greater + ties / 2.0 + 1.0


def mean_reciprocal_rank(pos_scores, neg_scores):
    ranks = rank_with_ties(pos_scores, neg_scores)
    return float((1.0 / ranks).mean()), ranks


def auc_score(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic, ties averaged."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = stats.rankdata(scores)  # ascending, ties averaged
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------- reports

@dataclass
class MetricRecord:
    task: str
    setting: str
    seed: int
    metric: str
    value: float
    config_hash: str

    def __post_init__(self):
        if not np.isfinite(self.value) or not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value out of [0, 1]: {self.value!r}")

    def as_dict(self) -> dict:
        return {"task": self.task, "setting": self.setting, "seed": self.seed,
                "metric": self.metric, "value": self.value,
                "config_hash": self.config_hash}


@dataclass
class MetricsReport:
    records: list[MetricRecord] = field(default_factory=list)

    def add(self, **kw) -> MetricRecord:
        rec = MetricRecord(**kw)
        self.records.append(rec)
        return rec

    def extend(self, other: "MetricsReport"):
        self.records.extend(other.records)

    def values(self, **match) -> list[float]:
        out = []
        for rec in self.records:
            if all(getattr(rec, k) == v for k, v in match.items()):
                out.append(rec.value)
        return out

    def mean(self, **match) -> float:
        vals = self.values(**match)
        if not vals:
            raise KeyError(f"no records match {match!r}")
        return float(np.mean(vals))

    def std(self, **match) -> float:
        vals = self.values(**match)
        if not vals:
            raise KeyError(f"no records match {match!r}")
        return float(np.std(vals))  # population std over seeds

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.as_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        report = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    report.add(**json.loads(line))
        return report


# ------------------------------------------------------------ link ranking

@dataclass
class AttentionSummary:
    """Final-layer root attention mass, split perturbed vs original."""

    perturbed: np.ndarray
    original: np.ndarray

    @property
    def mean_perturbed(self) -> float:
        return float(self.perturbed.mean()) if self.perturbed.size else float("nan")

    @property
    def mean_original(self) -> float:
        return float(self.original.mean()) if self.original.size else float("nan")

    @property
    def total_neighbors(self) -> int:
        return int(self.perturbed.size + self.original.size)


@dataclass
class MrrResult:
    mrr: float
    ranks: np.ndarray
    n_queries: int
    attention: AttentionSummary | None = None


def _select_queries(view: GraphView, max_queries, seed):
    n = len(view)
    idx = np.arange(n)
    if max_queries is not None and n > max_queries:
        rng = np.random.default_rng(derive_seed(seed, "query-subsample"))
        idx = np.sort(rng.choice(n, size=max_queries, replace=False))
    return idx


def evaluate_mrr(encoder: CoEncoder, head: PredictionHead,
                 runtime: EncoderRuntime, eval_view: GraphView, *,
                 num_negatives: int = 100, seed: int = 0,
                 max_queries: int | None = None, chunk: int = 64,
                 perturb_rate: float = 0.0,
                 collect_attention: bool = False) -> MrrResult:
    """Rank each positive against num_negatives resampled destinations.

    perturb_rate > 0 corrupts that fraction of each source's sampled
    neighbors (replacement drawn uniformly from all nodes) before encoding
    the source; candidates are encoded clean. Deterministic under seed.
    """
    if len(eval_view) == 0:
        raise ValueError("empty evaluation view")
    idx = _select_queries(eval_view, max_queries, seed)
    src = eval_view.src[idx]
    dst = eval_view.dst[idx]
    times = eval_view.times[idx]
    sampler = NegativeSampler(np.unique(eval_view.dst),
                              derive_seed(seed, "eval-negatives"))
    need_capture = collect_attention or perturb_rate > 0
    perturb_rng = np.random.default_rng(derive_seed(seed, "perturbation"))
    pool = np.arange(runtime.view.num_nodes, dtype=np.int64)

    was_training = encoder.training
    encoder.eval()
    head.eval()
    all_ranks = []
    att_perturbed, att_original = [], []
    try:
        with torch.no_grad():
            for lo in range(0, len(src), chunk):
                sl = slice(lo, min(lo + chunk, len(src)))
                bu, bv, bt = src[sl], dst[sl], times[sl]
                b = len(bu)
                neg = sampler.sample_many(bv, k=num_negatives)

                spec = None
                if perturb_rate > 0:
                    spec = PerturbSpec(rate=perturb_rate, rng=perturb_rng, pool=pool)
                out = encoder(runtime, bu, bt, perturb=spec, capture=need_capture)
                if need_capture:
                    z_u, cap = out
                    for row in range(b):
                        valid = cap.valid[row]
                        pert = cap.perturbed[row] & valid
                        att_perturbed.append(cap.weights[row][pert])
                        att_original.append(cap.weights[row][valid & ~pert])
                else:
                    z_u = out

                cand = np.concatenate([bv, neg.ravel()])
                cand_t = np.concatenate([bt, np.repeat(bt, num_negatives)])
                z_c = encoder(runtime, cand, cand_t)
                p_pos = head(z_u, z_c[:b])
                z_neg = z_c[b:].reshape(b, num_negatives, -1)
                p_neg = head(z_u.unsqueeze(1).expand_as(z_neg).reshape(b * num_negatives, -1),
                             z_neg.reshape(b * num_negatives, -1))
                all_ranks.append(rank_with_ties(
                    p_pos.numpy(), p_neg.reshape(b, num_negatives).numpy()))
    finally:
        if was_training:
            encoder.train()
            head.train()

    ranks = np.concatenate(all_ranks)
    attention = None
    if need_capture:
        attention = AttentionSummary(
            perturbed=np.concatenate(att_perturbed) if att_perturbed else np.zeros(0),
            original=np.concatenate(att_original) if att_original else np.zeros(0))
    return MrrResult(mrr=float((1.0 / ranks).mean()), ranks=ranks,
                     n_queries=len(ranks), attention=attention)


# --------------------------------------------------- node classification

def node_eval_times(view: GraphView) -> np.ndarray:
    """Per-node time just past its last interaction (0 for isolated nodes)."""
    out = np.zeros(view.num_nodes, dtype=np.float64)
    for i in range(view.num_nodes):
        if len(view.adj_times[i]):
            out[i] = np.nextafter(view.adj_times[i][-1], np.inf)
    return out


def node_representations(encoder: CoEncoder, runtime: EncoderRuntime,
                         node_ids, chunk: int = 256) -> np.ndarray:
    """Frozen z_u at each node's post-final-interaction time."""
    t_all = node_eval_times(runtime.view)
    idx = np.array([runtime.view.node_index[n] for n in node_ids], dtype=np.int64)
    was_training = encoder.training
    encoder.eval()
    outs = []
    try:
        with torch.no_grad():
            for lo in range(0, len(idx), chunk):
                sl = slice(lo, lo + chunk)
                outs.append(encoder(runtime, idx[sl], t_all[idx[sl]]))
    finally:
        if was_training:
            encoder.train()
    return torch.cat(outs).numpy()


def evaluate_node_classification(encoder: CoEncoder, runtime: EncoderRuntime,
                                 labels: dict[str, int], *, seed: int = 0,
                                 hidden: int | None = None, epochs: int = 200,
                                 lr: float = 1e-2) -> float:
    """AUC of a small MLP probe trained on frozen representations.

    Labeled nodes are split in half per class (seeded), the probe trains on
    one half and the AUC is computed on the other.
    """
    ids = sorted(labels, key=lambda n: runtime.view.node_index[n])
    y = np.array([labels[n] for n in ids], dtype=np.int64)
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("need both a positive and a negative class")
    rng = np.random.default_rng(derive_seed(seed, "classification-split"))
    train_mask = np.zeros(len(ids), dtype=bool)
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if len(members) < 2:
            raise ValueError(f"class {cls} needs at least 2 labeled nodes")
        chosen = rng.choice(members, size=len(members) // 2 + len(members) % 2,
                            replace=False)
        train_mask[chosen] = True

    reps = node_representations(encoder, runtime, ids)
    x = torch.tensor(reps, dtype=torch.float32)
    t = torch.tensor(y, dtype=torch.float32)
    d = x.shape[1]
    torch.manual_seed(derive_seed(seed, "classification-probe"))
    probe = nn.Sequential(nn.Linear(d, hidden or d), nn.ReLU(),
                          nn.Linear(hidden or d, 1))
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    bce = nn.BCEWithLogitsLoss()
    tr = torch.from_numpy(train_mask)
    for _ in range(epochs):
        opt.zero_grad()
        loss = bce(probe(x[tr]).squeeze(-1), t[tr])
        loss.backward()
        opt.step()
    with torch.no_grad():
        scores = probe(x[~tr]).squeeze(-1).numpy()
    return auc_score(scores, y[~train_mask])


# ------------------------------------------------------------- robustness

def robustness_noise(encoder: CoEncoder, head: PredictionHead,
                     runtime: EncoderRuntime, eval_view: GraphView, *,
                     rates=(0.1, 0.2, 0.3, 0.4, 0.5), seed: int = 0,
                     num_negatives: int = 100, max_queries: int | None = None,
                     setting: str = "transductive", config_hash: str = ""):
    """MRR under neighbor corruption at each rate, with attention capture."""
    report = MetricsReport()
    attention: dict[float, AttentionSummary] = {}
    for rate in rates:
        res = evaluate_mrr(encoder, head, runtime, eval_view,
                           num_negatives=num_negatives, seed=seed,
                           max_queries=max_queries, perturb_rate=rate,
                           collect_attention=True)
        report.add(task="robustness", setting=setting, seed=seed,
                   metric=f"mrr_p{int(round(rate * 100))}", value=res.mrr,
                   config_hash=config_hash)
        attention[rate] = res.attention
    return report, attention
