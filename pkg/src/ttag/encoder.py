"""Semantic-structural co-encoder.

L stacked layers, each of which (1) runs a transformer block over the node's
time-stamped summary sequence, (2) aggregates sampled temporal neighbors
with scaled dot-product attention over a pluggable backbone, and (3) fuses
the two streams with a cross-modal mixer whose output splits back into the
semantic and structural dims. The output head combines mean-pooled semantic
items, the structural state, and the fused pair into z_u(t).

Neighbor states at layer l are computed recursively TGAT-style: a neighbor
reached through an edge at time t_v is encoded at t_v from its own strictly
earlier history, so z_u(t) depends only on data before t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .embedding import EmbeddingCache, TextEmbedder, TimeEncoder, semantic_inputs
from .graph import GraphView
from .summaries import (
    SummaryChain,
    SummaryStore,
    reasoning_timestamps,
)

VARIANTS = ("full", "no_TSE", "no_SC", "no_CM", "CM_all")


# ----------------------------------------------------------------- modules

class SemanticBlock(nn.Module):
    """Pre-norm transformer encoder block over semantic item sequences.

    No positional encoding: temporal order is already carried by the
    time-encoding half of each item, so adding positions would double-count
    order (and would break permutation equivariance of the attention).
    """

    def __init__(self, dim: int, heads: int = 2, ff_mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim))
        # zero-init both residual branches, same convention as the mixer: a
        # fresh block is the identity, so stacking layers never buries the
        # input items under randomly mixed ones before training starts
        nn.init.zeros_(self.attn.out_proj.weight)
        nn.init.zeros_(self.attn.out_proj.bias)
        nn.init.zeros_(self.ff[-1].weight)
        nn.init.zeros_(self.ff[-1].bias)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        # x: (N, T, dim); valid: (N, T) bool, False marks padding
        if x.shape[1] == 0:
            raise ValueError("semantic sequence must be non-empty")
        pad = None if valid is None else ~valid
        y = self.ln1(x)
        a, _ = self.attn(y, y, y, key_padding_mask=pad, need_weights=False)
        x = x + a
        return x + self.ff(self.ln2(x))


class StructuralAttention(nn.Module):
    """Scaled dot-product attention over sampled temporal neighbors.

    a_uv = f_q(h_u) f_k(h_v)^T / sqrt(d_key); weights = softmax over the
    neighbor axis; the aggregate is AGG over the weight-scaled value rows
    (sum reproduces the softmax-weighted combination exactly). Edge features
    ride in as additive offsets on the value messages. The time_augmented
    switch feeds [state cat Phi(dt)] to f_q/f_k/f_v instead of plain states.
    """

    def __init__(self, d: int, d_key: int | None = None, agg: str = "sum",
                 time_augmented: bool = False):
        super().__init__()
        if agg not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {agg!r}")
        self.d = d
        self.d_key = d_key or d
        self.agg = agg
        self.time_augmented = time_augmented
        in_dim = 2 * d if time_augmented else d
        self.f_q = nn.Linear(in_dim, self.d_key)
        self.f_k = nn.Linear(in_dim, self.d_key)
        self.f_v = nn.Linear(in_dim, d)

    def forward(self, h_u, h_nbr, valid=None, value_offset=None,
                phi_self=None, phi_nbr=None):
        # h_u: (N, d); h_nbr: (N, K, d); valid: (N, K) bool
        if h_u.shape[-1] != self.d or h_nbr.shape[-1] != self.d:
            raise ValueError(
                f"expected state dim {self.d}, got {h_u.shape[-1]}/{h_nbr.shape[-1]}")
        q_in, k_in = h_u, h_nbr
        if self.time_augmented:
            q_in = torch.cat([h_u, phi_self], dim=-1)
            k_in = torch.cat([h_nbr, phi_nbr], dim=-1)
        scores = torch.einsum("nd,nkd->nk", self.f_q(q_in), self.f_k(k_in))
        scores = scores / (self.d_key ** 0.5)
        if valid is None:
            valid = torch.ones(h_nbr.shape[:2], dtype=torch.bool, device=h_nbr.device)
        neg = torch.finfo(scores.dtype).min
        weights = torch.softmax(scores.masked_fill(~valid, neg), dim=-1)
        weights = weights * valid  # rows with no neighbors become all-zero
        values = self.f_v(k_in)
        if value_offset is not None:
            values = values + value_offset
        rows = weights.unsqueeze(-1) * values
        agg = rows.sum(dim=1)
        if self.agg == "mean":
            denom = valid.sum(dim=1, keepdim=True).clamp(min=1).to(agg.dtype)
            agg = agg / denom
        return agg, weights

    def single(self, u_state: torch.Tensor, neighbor_states: torch.Tensor,
               value_offset: torch.Tensor | None = None):
        """One node, (n, d) neighbors; returns (H (d,), weights (n,))."""
        n = neighbor_states.shape[0]
        if n == 0:
            return (torch.zeros(self.d, dtype=u_state.dtype),
                    torch.zeros(0, dtype=u_state.dtype))
        off = None if value_offset is None else value_offset.unsqueeze(0)
        agg, w = self.forward(u_state.unsqueeze(0), neighbor_states.unsqueeze(0),
                              value_offset=off)
        return agg[0], w[0]


class StructuralMlp(nn.Module):
    """Two-layer perceptron over [h_prev cat aggregate], output dim d."""

    def __init__(self, d: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(2 * d, d), nn.ReLU(), nn.Linear(d, d))

    def forward(self, h_prev: torch.Tensor, agg: torch.Tensor) -> torch.Tensor:
        x = torch.cat([h_prev, agg], dim=-1)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite structural input")
        return self.net(x)


class CrossModalMixer(nn.Module):
    """Residual two-layer MLP on the fused [semantic cat structural] vector.

    The residual branch is zero-initialized, so a fresh mixer is exactly the
    identity map and the split returns its inputs unchanged.
    """

    def __init__(self, dim: int, split: tuple[int, int]):
        super().__init__()
        self.split = split
        self.lin1 = nn.Linear(dim, dim)
        self.lin2 = nn.Linear(dim, dim)
        nn.init.zeros_(self.lin2.weight)
        nn.init.zeros_(self.lin2.bias)

    def forward(self, x: torch.Tensor):
        out = x + self.lin2(torch.relu(self.lin1(x)))
        return torch.split(out, self.split, dim=-1)

    def single(self, e_latest: torch.Tensor, h: torch.Tensor):
        e, h_out = self.forward(torch.cat([e_latest, h], dim=-1).unsqueeze(0))
        return e[0], h_out[0]


# ----------------------------------------------------------------- runtime

def extract_chains(view: GraphView, store: SummaryStore, m: int,
                   base_only: bool = False) -> list[SummaryChain]:
    """Chains by dense node index; base_only keeps just the raw-text entry."""
    chains = []
    for idx, node in enumerate(view.node_ids):
        if base_only:
            chains.append(SummaryChain(node, {0.0: view.node_texts[idx]}))
            continue
        sched = reasoning_timestamps(view.adj_times[idx], m, node=node)
        chains.append(store.chain_for(node, sched, view.node_texts[idx]))
    return chains


class EncoderRuntime:
    """Constant per-dataset features the encoder consumes.

    Summary/node/edge texts are embedded once (cached by text hash); chain
    timestamps stay in numpy for the searchsorted filters. Holding chains
    fixed while swapping views is deliberate: it is what makes the future-
    mutation causality oracle exact.
    """

    def __init__(self, view: GraphView, chains: list[SummaryChain],
                 embedder: TextEmbedder, dtype=torch.float32):
        if len(chains) != view.num_nodes:
            raise ValueError("need one chain per node")
        cache = embedder if isinstance(embedder, EmbeddingCache) else EmbeddingCache(embedder)
        self.view = view
        self.chains = chains
        self.d = embedder.dim
        self.chain_times: list[np.ndarray] = []
        self.chain_emb: list[torch.Tensor] = []
        for chain in chains:
            times = sorted(chain.entries)
            self.chain_times.append(np.array(times, dtype=np.float64))
            mat = cache.embed_many([chain.entries[t] for t in times])
            self.chain_emb.append(torch.tensor(mat, dtype=dtype))
        self.node_emb = torch.tensor(
            cache.embed_many(view.node_texts) if view.num_nodes else
            np.zeros((0, self.d), dtype=np.float32), dtype=dtype)
        self.edge_emb = torch.tensor(
            cache.embed_many(view.edge_texts) if len(view) else
            np.zeros((0, self.d), dtype=np.float32), dtype=dtype)
        self.dtype = dtype

    def to(self, dtype) -> "EncoderRuntime":
        self.chain_emb = [t.to(dtype) for t in self.chain_emb]
        self.node_emb = self.node_emb.to(dtype)
        self.edge_emb = self.edge_emb.to(dtype)
        self.dtype = dtype
        return self


def build_runtime(view: GraphView, store: SummaryStore, m: int,
                  embedder: TextEmbedder, base_only: bool = False,
                  dtype=torch.float32) -> EncoderRuntime:
    return EncoderRuntime(view, extract_chains(view, store, m, base_only),
                          embedder, dtype=dtype)


@dataclass
class PerturbSpec:
    """Root-level neighbor corruption for the noise-robustness study."""

    rate: float
    rng: np.random.Generator
    pool: np.ndarray                      # dense node indices to draw from
    targets: np.ndarray | None = None     # bool per query; None = all roots


@dataclass
class AttentionCapture:
    """Final-layer root attention: weights with validity/perturbation masks."""

    weights: np.ndarray   # (Q, k)
    valid: np.ndarray     # (Q, k) bool
    perturbed: np.ndarray  # (Q, k) bool


@dataclass
class _Level:
    node: np.ndarray
    t: np.ndarray
    valid: np.ndarray
    edge: np.ndarray
    perturbed: np.ndarray = field(default=None)


# ---------------------------------------------------------------- encoder

class CoEncoder(nn.Module):
    """The L-layer co-encoder plus output head.

    All ablation variants share one parameter set; `variant` switches the
    forward path: no_SC runs the stacks independently and concatenates at
    the head (3d input), no_CM skips the mixer, CM_all mixes every semantic
    item through the wide mixer, no_TSE is the full architecture over
    base-only chains (handled when the runtime is built).
    """

    def __init__(self, d: int, L: int = 2, m: int = 8, k: int = 10,
                 heads: int = 2, ff_mult: int = 4, d_key: int | None = None,
                 agg: str = "sum", time_augmented: bool = False,
                 variant: str = "full"):
        super().__init__()
        if L < 1:
            raise ValueError("need at least one layer")
        self.d, self.L, self.m, self.k = d, L, m, k
        self.time_enc = TimeEncoder(d)
        self.semantic_blocks = nn.ModuleList(
            [SemanticBlock(2 * d, heads, ff_mult) for _ in range(L)])
        self.attn_layers = nn.ModuleList(
            [StructuralAttention(d, d_key, agg, time_augmented) for _ in range(L)])
        self.struct_mlps = nn.ModuleList([StructuralMlp(d) for _ in range(L)])
        self.mixers = nn.ModuleList(
            [CrossModalMixer(3 * d, (2 * d, d)) for _ in range(L)])
        wide = (m + 1) * 2 * d + d
        self.mixers_all = nn.ModuleList(
            [CrossModalMixer(wide, ((m + 1) * 2 * d, d)) for _ in range(L)])
        self.out_head = nn.Sequential(
            nn.Linear(6 * d, d), nn.ReLU(), nn.Linear(d, d))
        self.out_head_independent = nn.Sequential(
            nn.Linear(3 * d, d), nn.ReLU(), nn.Linear(d, d))
        # same identity-at-init convention as the mixer and the semantic
        # blocks: the head starts as a pass-through of the embedding half of
        # the freshest summary slot (the mean summary for the independent
        # head) and training opens up the remaining streams from there
        with torch.no_grad():
            for head, col in ((self.out_head, 3 * d), (self.out_head_independent, 0)):
                nn.init.zeros_(head[0].weight)
                nn.init.zeros_(head[0].bias)
                head[0].weight[:, col:col + d] = torch.eye(d)
                head[2].weight.copy_(torch.eye(d))
                nn.init.zeros_(head[2].bias)
        self.variant = variant

    @property
    def variant(self) -> str:
        return self._variant

    @variant.setter
    def variant(self, value: str):
        if value not in VARIANTS:
            raise ValueError(f"unknown variant {value!r}; expected one of {VARIANTS}")
        self._variant = value

    # ------------------------------------------------------------ internals

    def _expand(self, runtime: EncoderRuntime, node_idx, times, perturb):
        levels = [_Level(np.asarray(node_idx, dtype=np.int64),
                         np.asarray(times, dtype=np.float64),
                         np.ones(len(node_idx), dtype=bool),
                         np.full(len(node_idx), -1, dtype=np.int64))]
        k = self.k
        for depth in range(1, self.L + 1):
            parent = levels[-1]
            P = len(parent.node)
            node = np.zeros(P * k, dtype=np.int64)
            t = np.zeros(P * k, dtype=np.float64)
            valid = np.zeros(P * k, dtype=bool)
            edge = np.zeros(P * k, dtype=np.int64)
            for i in range(P):
                if not parent.valid[i]:
                    continue
                nbr, ts, eps = runtime.view.recent_neighbor_arrays(
                    int(parent.node[i]), float(parent.t[i]), k)
                c = len(nbr)
                if c:
                    s = i * k
                    node[s:s + c] = nbr
                    t[s:s + c] = ts
                    edge[s:s + c] = eps
                    valid[s:s + c] = True
            perturbed = np.zeros(P * k, dtype=bool)
            if depth == 1 and perturb is not None and perturb.rate > 0:
                if len(perturb.pool) == 0:
                    raise ValueError("perturbation pool is empty")
                for i in range(P):
                    if perturb.targets is not None and not perturb.targets[i]:
                        continue
                    slots = np.flatnonzero(valid[i * k:(i + 1) * k])
                    n_rep = round(perturb.rate * len(slots))
                    if n_rep == 0:
                        continue
                    chosen = perturb.rng.choice(len(slots), size=n_rep, replace=False)
                    for c_i in sorted(int(x) for x in chosen):
                        slot = i * k + slots[c_i]
                        node[slot] = perturb.pool[int(perturb.rng.integers(len(perturb.pool)))]
                        perturbed[slot] = True
            levels.append(_Level(node, t, valid, edge, perturbed))
        return levels

    def _assemble_semantic(self, runtime, level, dtype):
        """Padded (V, T, 2d) inputs x = [summary embedding cat Phi(t - t_k)]."""
        pos = np.flatnonzero(level.valid)
        V = len(pos)
        counts = np.empty(V, dtype=np.int64)
        for r, p in enumerate(pos):
            ct = runtime.chain_times[level.node[p]]
            counts[r] = max(1, int(np.searchsorted(ct, level.t[p], side="left")))
        T = int(counts.max()) if V else 1
        emb = torch.zeros(V, T, self.d, dtype=dtype)
        dts = np.zeros((V, T), dtype=np.float64)
        for r, p in enumerate(pos):
            c = counts[r]
            node = level.node[p]
            emb[r, :c] = runtime.chain_emb[node][:c]
            dts[r, :c] = level.t[p] - runtime.chain_times[node][:c]
        mask = torch.from_numpy(
            (np.arange(T)[None, :] < counts[:, None]))
        phi = self.time_enc(torch.from_numpy(dts).to(dtype))
        x = torch.cat([emb, phi * mask.unsqueeze(-1).to(dtype)], dim=-1)
        return x, mask, torch.from_numpy(counts)

    # -------------------------------------------------------------- forward

    def forward(self, runtime: EncoderRuntime, node_idx, times,
                perturb: PerturbSpec | None = None, capture: bool = False):
        if runtime.d != self.d:
            raise ValueError(
                f"runtime embeds at dim {runtime.d}, encoder expects {self.d}")
        dtype = next(self.parameters()).dtype
        levels = self._expand(runtime, node_idx, times, perturb)
        L, k = self.L, self.k

        # compact bookkeeping per level
        pos = [np.flatnonzero(lv.valid) for lv in levels]
        full2compact = []
        for lv, p in zip(levels, pos):
            f2c = np.full(len(lv.valid), -1, dtype=np.int64)
            f2c[p] = np.arange(len(p))
            full2compact.append(f2c)

        # child gather indices, masks, edge-text value offsets, time deltas
        child_idx, child_mask, edge_off, child_dt = [], [], [], []
        for j in range(L):
            pj = pos[j]
            gather = np.zeros((len(pj), k), dtype=np.int64)
            mask = np.zeros((len(pj), k), dtype=bool)
            epos = np.zeros((len(pj), k), dtype=np.int64)
            pdt = np.zeros((len(pj), k), dtype=np.float64)
            for r, p in enumerate(pj):
                base = p * k
                for c in range(k):
                    ci = full2compact[j + 1][base + c]
                    if ci >= 0:
                        gather[r, c] = ci
                        mask[r, c] = True
                        epos[r, c] = levels[j + 1].edge[base + c]
                        pdt[r, c] = levels[j].t[p] - levels[j + 1].t[base + c]
            child_idx.append(torch.from_numpy(gather))
            child_mask.append(torch.from_numpy(mask))
            if runtime.edge_emb.shape[0]:
                off = runtime.edge_emb[torch.from_numpy(epos).clamp(min=0)].to(dtype)
            else:
                off = torch.zeros(len(pj), k, self.d, dtype=dtype)
            edge_off.append(off * child_mask[j].unsqueeze(-1).to(dtype))
            child_dt.append(torch.from_numpy(pdt).to(dtype))

        # layer-0 states
        sem, sem_mask, sem_count = {}, {}, {}
        for j in range(L):
            sem[j], sem_mask[j], sem_count[j] = self._assemble_semantic(
                runtime, levels[j], dtype)
        h = {j: runtime.node_emb[torch.from_numpy(levels[j].node[pos[j]])].to(dtype)
             for j in range(L + 1)}

        roots = {}
        for l in range(1, L + 1):
            new_sem, new_h = {}, {}
            for j in range(L - l + 1):
                if sem[j].shape[0] == 0:
                    new_sem[j], new_h[j] = sem[j], h[j]
                    continue
                e_tilde = self.semantic_blocks[l - 1](sem[j], sem_mask[j])
                if h[j + 1].shape[0]:
                    child_h = (h[j + 1][child_idx[j]]
                               * child_mask[j].unsqueeze(-1).to(dtype))
                else:
                    child_h = torch.zeros(*child_idx[j].shape, self.d, dtype=dtype)
                attn = self.attn_layers[l - 1]
                phi_kw = {}
                if attn.time_augmented:
                    phi_kw = {
                        "phi_self": self.time_enc(
                            torch.zeros(child_h.shape[0], dtype=dtype)),
                        "phi_nbr": self.time_enc(child_dt[j]),
                    }
                agg, weights = attn(h[j], child_h, valid=child_mask[j],
                                    value_offset=edge_off[j], **phi_kw)
                h_tilde = self.struct_mlps[l - 1](h[j], agg)

                latest = (sem_count[j] - 1)
                rows = torch.arange(e_tilde.shape[0])
                e_latest_pre = e_tilde[rows, latest]
                if self._variant in ("no_CM", "no_SC"):
                    e_items, e_latest, h_post = e_tilde, e_latest_pre, h_tilde
                elif self._variant == "CM_all":
                    V, T = e_tilde.shape[0], e_tilde.shape[1]
                    if T > self.m + 1:
                        raise ValueError(
                            f"chain length {T} exceeds mixer capacity {self.m + 1}")
                    padded = torch.zeros(V, self.m + 1, 2 * self.d, dtype=dtype)
                    padded[:, :T] = e_tilde * sem_mask[j].unsqueeze(-1).to(dtype)
                    mixed, h_post = self.mixers_all[l - 1](
                        torch.cat([padded.reshape(V, -1), h_tilde], dim=-1))
                    e_items = mixed.reshape(V, self.m + 1, 2 * self.d)[:, :T]
                    e_items = e_items * sem_mask[j].unsqueeze(-1).to(dtype)
                    e_latest = e_items[rows, latest]
                else:  # full
                    e_latest, h_post = self.mixers[l - 1](
                        torch.cat([e_latest_pre, h_tilde], dim=-1))
                    e_items = e_tilde.clone()
                    e_items[rows, latest] = e_latest

                if l == L and j == 0:
                    roots = {"sem_pre": e_tilde, "h_pre": h_tilde,
                             "e_latest": e_latest, "h_post": h_post,
                             "weights": weights}
                new_sem[j], new_h[j] = e_items, h_post
            sem.update(new_sem)
            h.update(new_h)

        denom = sem_count[0].unsqueeze(-1).to(dtype)
        z_sem = (roots["sem_pre"] * sem_mask[0].unsqueeze(-1).to(dtype)).sum(1) / denom
        z_str = roots["h_pre"]
        if self._variant == "no_SC":
            z = self.out_head_independent(torch.cat([z_sem, z_str], dim=-1))
        else:
            z_mix = torch.cat([roots["e_latest"], roots["h_post"]], dim=-1)
            z = self.out_head(torch.cat([z_sem, z_str, z_mix], dim=-1))

        if capture:
            cap = AttentionCapture(
                weights=roots["weights"].detach().cpu().numpy(),
                valid=child_mask[0].numpy(),
                perturbed=levels[1].perturbed.reshape(-1, k)[pos[0]]
                if levels[1].perturbed is not None else
                np.zeros_like(child_mask[0].numpy()))
            return z, cap
        return z


def encode_one(encoder: CoEncoder, runtime: EncoderRuntime, u: str, t: float,
               **kw) -> torch.Tensor:
    idx = runtime.view.node_index[u]
    out = encoder(runtime, np.array([idx]), np.array([t]), **kw)
    z = out[0] if isinstance(out, tuple) else out
    return z[0]


def ablation_forward(encoder: CoEncoder, runtime: EncoderRuntime,
                     node_idx, times, variant: str):
    """Forward under the named variant; no_TSE expects a base-only runtime."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    previous = encoder.variant
    encoder.variant = "full" if variant == "no_TSE" else variant
    try:
        return encoder(runtime, node_idx, times)
    finally:
        encoder.variant = previous
