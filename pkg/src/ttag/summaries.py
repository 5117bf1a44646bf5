"""Temporal reasoning chains: schedules, prompts, and summary extraction.

Each node gets at most m reasoning timestamps sampled at regular index
intervals over its interaction history, the last one pinned to its final
interaction. An LLM summarizes the node's textual neighborhood at each
reasoning time; summaries are cached in an append-only store so repeated
runs never re-request completed entries.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphView
from .llm import LlmClient

DEFAULT_PROMPT_TEMPLATE = """\
You are an assistant that tracks how a node's textual neighborhood evolves in a temporal graph.

## Goal
Summarize what the node is currently about, grounded in its recent interactions below. Answer with one short paragraph.

## Node
{node}

## Descriptions
{node_text}

## Current time
{current_time}

## Historical interactions
{history}
"""


def load_prompt_template(path) -> str:
    return Path(path).read_text(encoding="utf-8")


# ----------------------------------------------------------------- schedule

@dataclass(frozen=True)
class ReasoningSchedule:
    node: str
    times: list[float]


def reasoning_timestamps(timestamps, m: int, node: str = "") -> ReasoningSchedule:
    """Sample reasoning times t_{i*ceil(n/m)} for i=1..m-1 (indices clamped
    to n) plus the final time t_n, deduplicated and ascending."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    times = [float(t) for t in timestamps]
    n = len(times)
    if n == 0:
        return ReasoningSchedule(node, [])
    gap = math.ceil(n / m)
    idx = {min(i * gap, n) for i in range(1, m)} | {n}
    return ReasoningSchedule(node, sorted({times[j - 1] for j in idx}))


# ------------------------------------------------------------------ prompts

def build_prompt(node_text: str, t_hat: float, history,
                 template: str = DEFAULT_PROMPT_TEMPLATE,
                 history_limit: int = 32, node: str = "") -> str:
    """Render the sectioned prompt for summarizing a neighborhood at t_hat.

    history is a list of (neighbor, time, edge_text), ascending by time and
    strictly before t_hat; only the most recent history_limit lines appear.
    node is the subject's identifier so the summarizer can name it.
    """
    for _, t, _ in history:
        if t >= t_hat:
            raise ValueError(f"history entry at {t} is not before {t_hat}")
    recent = list(history)[-history_limit:]
    if recent:
        lines = "\n".join(f"- [t={t!r}] with {nbr}: {text}" for nbr, t, text in recent)
    else:
        lines = "(none)"
    return template.format(node=node or "(unnamed)", node_text=node_text,
                           current_time=repr(float(t_hat)), history=lines)


# ---------------------------------------------------------------- summarize

@dataclass
class CostLedger:
    """Token and call accounting; counters only ever grow."""

    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0
    wall_time: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, calls=0, input_tokens=0, output_tokens=0, wall_time=0.0):
        if min(calls, input_tokens, output_tokens) < 0 or wall_time < 0:
            raise ValueError("ledger increments must be non-negative")
        with self._lock:
            self.calls += calls
            self.input_tokens += input_tokens
            self.output_tokens += output_tokens
            self.wall_time += wall_time

    def as_dict(self) -> dict:
        return {"calls": self.calls, "input_tokens": self.input_tokens,
                "output_tokens": self.output_tokens, "wall_time": self.wall_time}


def summarize(client: LlmClient, prompt: str,
              ledger: CostLedger | None = None) -> tuple[str, int, int]:
    """One LLM call with the client's retry policy; usage goes to the ledger."""
    res = client.complete(prompt)
    if ledger is not None:
        ledger.add(calls=res.attempts, input_tokens=res.tokens_in,
                   output_tokens=res.tokens_out, wall_time=res.elapsed)
    return res.text, res.tokens_in, res.tokens_out


# -------------------------------------------------------------------- store

@dataclass(frozen=True)
class SummaryChain:
    node: str
    entries: dict[float, str]  # reasoning time -> summary; 0.0 holds the raw text


def summaries_before(chain: SummaryChain, t: float) -> list[tuple[float, str]]:
    """Entries with key < t, ascending; the time-0 base entry is always kept."""
    out = [(0.0, chain.entries[0.0])]
    out += sorted((k, v) for k, v in chain.entries.items() if 0.0 < k < t)
    return out


class SummaryStore:
    """Append-only summary cache keyed by (node_id, reasoning_time).

    When backed by a file, every put is flushed immediately so partially
    completed extraction runs are resumable. Thread-safe for concurrent
    appends with one writer per key.
    """

    def __init__(self, path=None):
        self._entries: dict[tuple[str, float], tuple[str, int, int]] = {}
        self._lock = threading.Lock()
        self._path = Path(path) if path is not None else None
        self._fh = None
        if self._path is not None and self._path.exists():
            with open(self._path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    self._entries[(rec["node"], float(rec["time"]))] = (
                        rec["summary"], rec["tokens_in"], rec["tokens_out"])

    def has(self, node: str, t: float) -> bool:
        return (node, float(t)) in self._entries

    def get(self, node: str, t: float) -> tuple[str, int, int]:
        return self._entries[(node, float(t))]

    def keys(self):
        return list(self._entries.keys())

    def count(self) -> int:
        return len(self._entries)

    def put(self, node: str, t: float, summary: str, tokens_in: int, tokens_out: int):
        rec = {"node": node, "time": float(t), "summary": summary,
               "tokens_in": tokens_in, "tokens_out": tokens_out}
        with self._lock:
            self._entries[(node, float(t))] = (summary, tokens_in, tokens_out)
            if self._path is not None:
                if self._fh is None:
                    self._path.parent.mkdir(parents=True, exist_ok=True)
                    self._fh = open(self._path, "a", encoding="utf-8")
                self._fh.write(json.dumps(rec) + "\n")
                self._fh.flush()

    def chain_for(self, node: str, schedule: ReasoningSchedule,
                  base_text: str) -> SummaryChain:
        entries = {0.0: base_text}
        for t in schedule.times:
            if not self.has(node, t):
                raise KeyError(f"missing summary for node {node!r} at t={t}")
            entries[float(t)] = self.get(node, t)[0]
        return SummaryChain(node, entries)

    def tokens_for(self, node: str, t: float) -> tuple[int, int]:
        _, tin, tout = self._entries[(node, float(t))]
        return tin, tout


# ---------------------------------------------------------------- run_chain

def _node_rng(seed: int, node: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}:{node}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def run_chain(view: GraphView, m: int, client: LlmClient, store: SummaryStore,
              template: str = DEFAULT_PROMPT_TEMPLATE, history_limit: int = 32,
              ledger: CostLedger | None = None, scramble_seed: int | None = None,
              workers: int | None = None) -> SummaryStore:
    """Summarize every node's neighborhood at each of its reasoning times.

    Fans out across nodes with bounded parallelism; within a node, calls run
    strictly sequentially in ascending reasoning-time order. Cached entries
    are never re-requested, so a second run makes zero calls and a failed
    run resumes where it stopped.

    scramble_seed activates the scrambled-chain mode: per node, the call
    made for reasoning time t_hat_{pi(j)} is stored under slot t_hat_j, so
    call counts are unchanged but the time alignment of the chain is
    destroyed. Meant for ablation runs on a fresh store.
    """
    jobs = []
    for idx, node in enumerate(view.node_ids):
        sched = reasoning_timestamps(view.adj_times[idx], m, node=node)
        if not sched.times:
            continue
        call_times = list(sched.times)
        if scramble_seed is not None:
            rng = _node_rng(scramble_seed, node)
            call_times = [sched.times[j] for j in rng.permutation(len(sched.times))]
        pairs = [(slot, call) for slot, call in zip(sched.times, call_times)
                 if not store.has(node, slot)]
        if pairs:
            jobs.append((node, view.node_texts[idx], pairs))

    def work(node, node_text, pairs):
        for slot_t, call_t in pairs:
            history = [
                ((e.dst if e.src == node else e.src), e.time, e.edge_text)
                for e in view.historical_interactions(node, call_t)
            ]
            prompt = build_prompt(node_text, call_t, history,
                                  template=template, history_limit=history_limit,
                                  node=node)
            summary, tin, tout = summarize(client, prompt, ledger=ledger)
            store.put(node, slot_t, summary, tin, tout)

    if not jobs:
        return store
    n_workers = workers if workers is not None else max(1, client.max_in_flight)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(work, *job) for job in jobs]
        try:
            for fut in futures:
                fut.result()
        except BaseException:
            for fut in futures:
                fut.cancel()
            raise
    return store


def total_calls_bound(view: GraphView, m: int) -> int:
    """Upper bound m * |V| on extraction calls; the true count is the sum of
    per-node schedule sizes."""
    return m * view.num_nodes
