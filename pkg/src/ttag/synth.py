"""Planted-signal synthetic interaction graphs.

Every node gets a latent topic; most nodes switch to a new topic once, at a
node-specific drift time. Links form preferentially between nodes whose
CURRENT topics match, so a node's recent partner roster tracks its current
topic while the static profile only ever hints at the initial one. A summary
of recent interactions names the roster, which carries signal about
post-drift behavior that no static text and no single interaction record
has; that asymmetry is exactly what the learning-sanity check measures.

The generator keeps a draw log so tests can count, rather than assume, how
often post-drift links are topic-matched.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphView, ingest

_TOPIC_VOCAB = [
    "kernel", "syscall", "scheduler", "driver", "interrupt", "paging",
    "sonata", "tempo", "chord", "melody", "rhythm", "octave",
    "glacier", "moraine", "crevasse", "firn", "serac", "icefall",
    "ledger", "audit", "invoice", "escrow", "dividend", "accrual",
    "sourdough", "crumb", "proofing", "hydration", "levain", "crust",
    "regatta", "spinnaker", "tiller", "leeward", "mooring", "keel",
    "orbit", "perigee", "thruster", "telemetry", "payload", "apogee",
    "fresco", "pigment", "gesso", "varnish", "canvas", "easel",
    "peloton", "derailleur", "cadence", "sprint", "breakaway", "criterium",
    "sonnet", "stanza", "meter", "couplet", "caesura", "enjambment",
    "isotope", "reactor", "neutron", "moderator", "fission", "cladding",
    "truffle", "brigade", "sommelier", "reduction", "braise", "mirepoix",
    "bogey", "fairway", "bunker", "wedge", "birdie", "caddie",
    "larva", "chrysalis", "instar", "molting", "pupa", "antennae",
    "gavel", "statute", "plaintiff", "affidavit", "subpoena", "tort",
    "loom", "warp", "weft", "shuttle", "bobbin", "selvage",
]

# adjacent topics share half their vocabulary (stride-3 windows of 6 over
# the word list): a single word is ambiguous between two topics, and only
# an aggregate of several words pins one down
TOPIC_WORDS = [_TOPIC_VOCAB[3 * i:3 * i + 6]
               for i in range((len(_TOPIC_VOCAB) - 6) // 3 + 1)]

NOISE_WORDS = [
    "about", "update", "quick", "note", "reply", "thanks", "meeting",
    "later", "today", "morning", "follow", "check", "draft", "version",
    "short", "long", "open", "closed", "early", "final", "minor", "major",
    "first", "second", "old", "new", "random", "general", "misc", "other",
    "topic", "thread", "message", "ping", "sync", "review", "item", "list",
    "plan", "idea",
]


@dataclass
class SynthConfig:
    nodes: int = 200
    edges: int = 5000
    signal: float = 1.0
    # 24 topics over 200 nodes keeps communities small (about 8 members), so
    # a sampled negative rarely shares the query's topic and roster overlap
    # separates the true destination cleanly
    topics: int = 24
    drift_prob: float = 0.8
    horizon: float = 10_000.0
    seed: int = 0
    # drift times land in this fraction of the horizon, early enough that
    # the last stretch of the graph is a settled post-drift regime
    drift_window: tuple[float, float] = (0.2, 0.5)
    # bare interaction records by default: who met whom is the signal, and
    # any text on the edge only hands shortcuts to models that read single
    # edges instead of aggregating a neighborhood
    topic_words_per_edge: int = 0
    noise_words_per_edge: int = 0

    def validate(self):
        if self.nodes < 10:
            raise ValueError("need at least 10 nodes")
        if self.edges < self.nodes:
            raise ValueError("need at least as many edges as nodes")
        if not 0.0 <= self.signal <= 1.0:
            raise ValueError("signal strength must be in [0, 1]")
        if not 2 <= self.topics <= len(TOPIC_WORDS):
            raise ValueError(f"topics must be in [2, {len(TOPIC_WORDS)}]")
        if not 0.0 <= self.drift_prob <= 1.0:
            raise ValueError("drift_prob must be in [0, 1]")
        lo, hi = self.drift_window
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("drift_window must be an increasing pair in [0, 1]")
        if self.topic_words_per_edge < 0 or self.noise_words_per_edge < 0:
            raise ValueError("per-edge word counts must be >= 0")


@dataclass
class SynthDataset:
    config: SynthConfig
    node_ids: list[str]
    node_texts: dict[str, str]
    edges: list[tuple[str, str, float, str]]
    labels: dict[str, int]              # 1 = node drifted
    draw_log: list[dict] = field(default_factory=list)
    truth: dict = field(default_factory=dict)

    def to_view(self) -> GraphView:
        """Round-trips through the standard csv parser on purpose."""
        return ingest(io.StringIO(self._edge_csv()), io.StringIO(self._node_csv()))

    def _edge_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        for s, d, t, text in self.edges:
            w.writerow([s, d, repr(t), text])
        return buf.getvalue()

    def _node_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        for n in self.node_ids:
            w.writerow([n, self.node_texts[n]])
        return buf.getvalue()

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "edges.csv").write_text(self._edge_csv(), encoding="utf-8")
        (directory / "nodes.csv").write_text(self._node_csv(), encoding="utf-8")
        with open(directory / "labels.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            for n in self.node_ids:
                w.writerow([n, self.labels[n]])
        with open(directory / "drawlog.jsonl", "w", encoding="utf-8") as fh:
            for row in self.draw_log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        meta = {"config": asdict(self.config), "truth": self.truth}
        (directory / "meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @staticmethod
    def load_labels(directory) -> dict[str, int]:
        labels = {}
        with open(Path(directory) / "labels.csv", encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh):
                if row:
                    labels[row[0]] = int(row[1])
        return labels


def generate(config: SynthConfig) -> SynthDataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, topics = config.nodes, config.topics

    node_ids = [f"u{i:04d}" for i in range(n)]
    # balanced initial topics so matching candidates always exist
    initial = np.arange(n) % topics
    rng.shuffle(initial)
    drifted = rng.random(n) < config.drift_prob
    lo, hi = config.drift_window
    drift_time = np.where(
        drifted, rng.uniform(lo, hi, size=n) * config.horizon, np.inf)
    shift = rng.integers(1, topics, size=n)
    new_topic = np.where(drifted, (initial + shift) % topics, initial)

    def topic_at(i: int, t: float) -> int:
        return int(new_topic[i] if t >= drift_time[i] else initial[i])

    node_texts = {}
    for i, name in enumerate(node_ids):
        # profiles are deliberately thin: two topical words diluted with
        # small talk, the way a real bio undersells what someone is up to
        words = list(rng.choice(TOPIC_WORDS[initial[i]], size=2, replace=False))
        words += list(rng.choice(NOISE_WORDS, size=2, replace=False))
        node_texts[name] = f"profile: interested in {' '.join(words)}"

    times = np.sort(rng.uniform(0.0, config.horizon, size=config.edges))
    edges = []
    draw_log = []
    everyone = np.arange(n)
    for t in times:
        t = float(t)
        u = int(rng.integers(n))
        tu = topic_at(u, t)
        use_signal = bool(rng.random() < config.signal)
        if use_signal:
            current = np.array([topic_at(j, t) for j in everyone])
            candidates = everyone[(current == tu) & (everyone != u)]
            if len(candidates):
                v = int(candidates[rng.integers(len(candidates))])
            else:
                v = int(rng.integers(n - 1))
                v += v >= u
        else:
            v = int(rng.integers(n - 1))
            v += v >= u
        tv = topic_at(v, t)

        pool = TOPIC_WORDS[tu]
        topic_part = rng.choice(pool, size=config.topic_words_per_edge, replace=False)
        noise_part = rng.choice(NOISE_WORDS, size=config.noise_words_per_edge,
                                replace=False)
        text = " ".join(list(topic_part) + list(noise_part))

        edges.append((node_ids[u], node_ids[v], t, text))
        draw_log.append({
            "src": node_ids[u], "dst": node_ids[v], "t": t,
            "src_topic": tu, "dst_topic": tv,
            "matched": tu == tv,
            "post_drift": bool(drifted[u] and t >= drift_time[u]),
            "signal_draw": use_signal,
        })

    labels = {name: int(drifted[i]) for i, name in enumerate(node_ids)}
    truth = {
        "initial_topic": {node_ids[i]: int(initial[i]) for i in range(n)},
        "new_topic": {node_ids[i]: int(new_topic[i]) for i in range(n)},
        "drift_time": {node_ids[i]: (None if not drifted[i] else float(drift_time[i]))
                       for i in range(n)},
    }
    return SynthDataset(config=config, node_ids=node_ids, node_texts=node_texts,
                        edges=edges, labels=labels, draw_log=draw_log, truth=truth)


def matched_fraction(draw_log, post_drift_only: bool = True) -> float:
    rows = [r for r in draw_log if r["post_drift"]] if post_drift_only else draw_log
    if not rows:
        raise ValueError("no rows to count")
    return sum(r["matched"] for r in rows) / len(rows)
