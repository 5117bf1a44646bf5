"""Shared fixture: a small interaction graph with mock chains and splits."""

import io

import numpy as np
import pytest
import torch

from ttag.embedding import HashEmbedder
from ttag.encoder import CoEncoder, build_runtime
from ttag.graph import chronological_split, ingest
from ttag.llm import MockLlmClient
from ttag.summaries import SummaryStore, run_chain
from ttag.training import PredictionHead

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]


def toy_graph(n_nodes=8, n_edges=48, seed=0):
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(n_nodes)]
    node_lines = "".join(
        f'{n},"{WORDS[i % len(WORDS)]} {n} profile"\n' for i, n in enumerate(names))
    edge_lines = []
    t = 0.0
    for _ in range(n_edges):
        t += float(rng.integers(1, 4))
        u, v = rng.choice(n_nodes, size=2, replace=False)
        word = WORDS[int(rng.integers(len(WORDS)))]
        edge_lines.append(f'{names[u]},{names[v]},{t},"{word} exchange {int(t)}"\n')
    return ingest(io.StringIO("".join(edge_lines)), io.StringIO(node_lines))


@pytest.fixture(scope="session")
def world():
    """Read-only bundle: full view, chronological splits, chains, runtime."""
    view = toy_graph()
    store = SummaryStore()
    run_chain(view, 4, MockLlmClient(), store)
    embedder = HashEmbedder(dim=8, seed=2)
    runtime = build_runtime(view, store, 4, embedder)
    return {
        "view": view,
        "splits": chronological_split(view),
        "store": store,
        "embedder": embedder,
        "runtime": runtime,
    }


def make_models(d=8, L=2, m=4, k=3, seed=0):
    torch.manual_seed(seed)
    return CoEncoder(d=d, L=L, m=m, k=k), PredictionHead(d)
