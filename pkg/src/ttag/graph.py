"""Temporal text-attributed graph store.

A graph is a time-sorted sequence of interactions (src, dst, time) with an
edge text per interaction and a node text per node. Frozen views are
immutable and safe for concurrent reads; ingestion is single-writer.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1


class GraphError(Exception):
    pass


class ParseError(GraphError):
    pass


@dataclass(frozen=True)
class TemporalInteraction:
    src: str
    dst: str
    time: float
    edge_text: str


@dataclass(frozen=True)
class NodeRecord:
    id: str
    text: str
    degree: int
    timestamps: list[float]


class GraphView:
    """Frozen, time-sorted view of a temporal text-attributed graph.

    Node ids are opaque strings mapped to dense integer indices at freeze
    time. Edge arrays are read-only; per-node adjacency is precomputed so
    history and neighbor queries are O(log E) slices.
    """

    def __init__(self, node_ids, node_texts, src, dst, times, edge_texts,
                 split="all", config_hash=None):
        self.node_ids: list[str] = list(node_ids)
        self.node_texts: list[str] = list(node_texts)
        self.node_index: dict[str, int] = {n: i for i, n in enumerate(self.node_ids)}
        self.src = np.ascontiguousarray(src, dtype=np.int64)
        self.dst = np.ascontiguousarray(dst, dtype=np.int64)
        self.times = np.ascontiguousarray(times, dtype=np.float64)
        self.edge_texts: list[str] = list(edge_texts)
        self.split = split
        self.config_hash = config_hash
        for arr in (self.src, self.dst, self.times):
            arr.flags.writeable = False
        self._build_adjacency()

    def _build_adjacency(self):
        per_node: list[list[tuple[float, int, int]]] = [[] for _ in self.node_ids]
        for pos in range(len(self.times)):
            s, d, t = int(self.src[pos]), int(self.dst[pos]), float(self.times[pos])
            per_node[s].append((t, d, pos))
            if d != s:
                per_node[d].append((t, s, pos))
        self.adj_times: list[np.ndarray] = []
        self.adj_nbr: list[np.ndarray] = []
        self.adj_edge: list[np.ndarray] = []
        for entries in per_node:
            # edge order is already time order, so no per-node sort needed
            self.adj_times.append(np.array([e[0] for e in entries], dtype=np.float64))
            self.adj_nbr.append(np.array([e[1] for e in entries], dtype=np.int64))
            self.adj_edge.append(np.array([e[2] for e in entries], dtype=np.int64))

    # ------------------------------------------------------------- basics

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[TemporalInteraction]:
        for i in range(len(self.times)):
            yield TemporalInteraction(
                self.node_ids[self.src[i]], self.node_ids[self.dst[i]],
                float(self.times[i]), self.edge_texts[i])

    def has_node(self, u: str) -> bool:
        return u in self.node_index

    def _require(self, u: str) -> int:
        if u not in self.node_index:
            raise GraphError(f"unknown node {u!r}")
        return self.node_index[u]

    def node(self, u: str) -> NodeRecord:
        i = self._require(u)
        ts = self.adj_times[i]
        return NodeRecord(u, self.node_texts[i], len(ts), [float(t) for t in ts])

    def node_text(self, idx: int) -> str:
        return self.node_texts[idx]

    # ------------------------------------------------------------ queries

    def historical_interactions(self, u: str, t: float) -> list[TemporalInteraction]:
        """All interactions involving u strictly before t, ascending by time."""
        i = self._require(u)
        cut = int(np.searchsorted(self.adj_times[i], t, side="left"))
        out = []
        for pos in self.adj_edge[i][:cut]:
            out.append(TemporalInteraction(
                self.node_ids[self.src[pos]], self.node_ids[self.dst[pos]],
                float(self.times[pos]), self.edge_texts[pos]))
        return out

    def recent_neighbors(self, u: str, t: float, k: int,
                         strategy: str = "most-recent") -> list[tuple[str, float, str]]:
        """The k most recent interactions of u before t, most-recent-last."""
        if k < 1:
            raise GraphError("k must be >= 1")
        if strategy != "most-recent":
            raise GraphError(f"unknown neighbor strategy {strategy!r}")
        i = self._require(u)
        nbr, ts, pos = self.recent_neighbor_arrays(i, t, k)
        return [(self.node_ids[n], float(tt), self.edge_texts[p])
                for n, tt, p in zip(nbr, ts, pos)]

    def recent_neighbor_arrays(self, idx: int, t: float, k: int):
        """Dense-index fast path: (neighbor_idx, times, edge_pos) arrays."""
        cut = int(np.searchsorted(self.adj_times[idx], t, side="left"))
        lo = max(0, cut - k)
        return self.adj_nbr[idx][lo:cut], self.adj_times[idx][lo:cut], self.adj_edge[idx][lo:cut]

    # ------------------------------------------------------ derived views

    def with_split(self, split: str) -> "GraphView":
        return GraphView(self.node_ids, self.node_texts, self.src, self.dst,
                         self.times, self.edge_texts, split=split,
                         config_hash=self.config_hash)

    def with_edges(self, positions: np.ndarray, split: str | None = None) -> "GraphView":
        """Sub-view on the given edge positions; node table is shared."""
        positions = np.asarray(positions, dtype=np.int64)
        return GraphView(
            self.node_ids, self.node_texts,
            self.src[positions], self.dst[positions], self.times[positions],
            [self.edge_texts[p] for p in positions],
            split=split or self.split, config_hash=self.config_hash)

    def edge_node_set(self) -> set[int]:
        return set(self.src.tolist()) | set(self.dst.tolist())

    # -------------------------------------------------------- persistence

    def save(self, directory, config_hash: str | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if config_hash is not None:
            self.config_hash = config_hash
        index = {
            "format_version": FORMAT_VERSION,
            "split": self.split,
            "config_hash": self.config_hash,
            "node_ids": self.node_ids,
        }
        (directory / "index.json").write_text(
            json.dumps(index, indent=1), encoding="utf-8")
        with open(directory / "nodes.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            for nid, text in zip(self.node_ids, self.node_texts):
                w.writerow([nid, text])
        with open(directory / "edges.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            for i in range(len(self.times)):
                w.writerow([self.node_ids[self.src[i]], self.node_ids[self.dst[i]],
                            repr(float(self.times[i])), self.edge_texts[i]])

    @classmethod
    def load(cls, directory) -> "GraphView":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
        if index.get("format_version") != FORMAT_VERSION:
            raise GraphError(f"unsupported view format in {directory}")
        with open(directory / "edges.csv", encoding="utf-8", newline="") as eh, \
                open(directory / "nodes.csv", encoding="utf-8", newline="") as nh:
            view = ingest(eh, nh, node_order=index["node_ids"])
        view.split = index.get("split", "all")
        view.config_hash = index.get("config_hash")
        return view


# ------------------------------------------------------------------ ingest

def _rows(stream, n_fields: int, what: str):
    reader = csv.reader(stream)
    for row in reader:
        if not row:
            continue
        if len(row) != n_fields:
            raise ParseError(
                f"{what} line {reader.line_num}: expected {n_fields} fields, got {len(row)}")
        yield reader.line_num, row


def ingest(edge_records: Iterable[str], node_texts: Iterable[str],
           node_order: Sequence[str] | None = None) -> GraphView:
    """Parse edge and node streams into a frozen, time-sorted GraphView.

    Nodes appearing only in edges get an empty text. node_order, when given,
    pins the dense-id assignment (used when reloading a persisted view).
    """
    texts: dict[str, str] = {}
    for line_num, row in _rows(node_texts, 2, "node file"):
        nid, text = row
        if nid in texts:
            raise ParseError(f"node file line {line_num}: duplicate node entry {nid!r}")
        texts[nid] = text

    raw: list[tuple[str, str, float, str]] = []
    for line_num, row in _rows(edge_records, 4, "edge file"):
        s, d, t_raw, text = row
        try:
            t = float(t_raw)
        except ValueError:
            raise ParseError(f"edge file line {line_num}: bad timestamp {t_raw!r}") from None
        if not math.isfinite(t) or t < 0:
            raise ParseError(f"edge file line {line_num}: negative or non-finite time {t_raw!r}")
        raw.append((s, d, t, text))

    raw.sort(key=lambda e: e[2])  # stable: ties keep input order

    if node_order is not None:
        ids = list(node_order)
        known = set(ids)
        for s, d, _, _ in raw:
            if s not in known or d not in known:
                raise ParseError(f"edge references node missing from index: {s!r}/{d!r}")
    else:
        ids = list(texts)
        known = set(ids)
        for s, d, _, _ in raw:
            for n in (s, d):
                if n not in known:
                    known.add(n)
                    ids.append(n)

    index = {n: i for i, n in enumerate(ids)}
    src = np.array([index[e[0]] for e in raw], dtype=np.int64)
    dst = np.array([index[e[1]] for e in raw], dtype=np.int64)
    times = np.array([e[2] for e in raw], dtype=np.float64)
    return GraphView(ids, [texts.get(n, "") for n in ids], src, dst, times,
                     [e[3] for e in raw])


# ------------------------------------------------------------------ splits

def chronological_split(view: GraphView, ratios=(0.6, 0.2, 0.2)):
    """Split edges by count in time order; cuts at floor(r0*E) and floor((r0+r1)*E)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise GraphError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    n = len(view)
    if n == 0:
        raise GraphError("cannot split an empty graph")
    a = math.floor(ratios[0] * n)
    b = math.floor((ratios[0] + ratios[1]) * n)
    pos = np.arange(n, dtype=np.int64)
    return (view.with_edges(pos[:a], split="train"),
            view.with_edges(pos[a:b], split="val"),
            view.with_edges(pos[b:], split="test"))


def inductive_filter(eval_view: GraphView, train_view: GraphView) -> GraphView:
    """Keep only eval edges where src or dst never appears among train edges."""
    seen = np.zeros(eval_view.num_nodes, dtype=bool)
    seen[list(train_view.edge_node_set())] = True
    keep = ~(seen[eval_view.src] & seen[eval_view.dst])
    return eval_view.with_edges(np.flatnonzero(keep))


# ------------------------------------------------------------ perturbation

def perturb_neighbors(neighbors: list[tuple[str, float, str]], p: float,
                      rng: np.random.Generator,
                      node_pool: Iterable[str]) -> list[tuple[str, float, str]]:
    """Replace round(p*k) neighbor ids with uniform draws from node_pool.

    Times and positions are preserved. The pool is sorted before drawing so
    results depend on the seed, not on set iteration order.
    """
    if not 0 <= p <= 1:
        raise GraphError(f"perturbation rate must be in [0, 1], got {p}")
    pool = sorted(node_pool)
    if p > 0 and not pool:
        raise GraphError("node_pool is empty")
    k = len(neighbors)
    n_replace = round(p * k)
    if n_replace == 0:
        return list(neighbors)
    slots = rng.choice(k, size=n_replace, replace=False)
    out = list(neighbors)
    for slot in sorted(int(s) for s in slots):
        _, t, text = out[slot]
        out[slot] = (pool[int(rng.integers(len(pool)))], t, text)
    return out
