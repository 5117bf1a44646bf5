import time

import numpy as np

from ttag.embedding import HashEmbedder
from ttag.encoder import build_runtime
from ttag.evaluation import rank_with_ties
from ttag.graph import chronological_split
from ttag.llm import MockLlmClient
from ttag.summaries import SummaryStore, run_chain
from ttag.synth import SynthConfig, generate

rng = np.random.default_rng(0)
data = generate(SynthConfig(seed=0))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
run_chain(view, 8, MockLlmClient(), store, history_limit=16)
emb = HashEmbedder(dim=64, seed=0)
runtime = build_runtime(view, store, 8, emb)

# show full summaries of one drifted node
name = next(n for n, lab in data.labels.items() if lab == 1)
i = view.node_index[name]
chain = runtime.chains[i]
print("drift_time", data.truth["drift_time"][name],
      "topics", data.truth["initial_topic"][name], "->", data.truth["new_topic"][name])
for k in sorted(chain.entries):
    print(f"  [{k:9.1f}] {chain.entries[k]}")


def latest_summary_emb(node, t):
    times = runtime.chain_times[node]
    pos = np.searchsorted(times, t, side="left") - 1
    return runtime.chain_emb[node][max(pos, 0)].numpy()


def profile_emb(node):
    return runtime.node_emb[node].numpy()


for label, cand_fn in [("sum-sum", latest_summary_emb),
                       ("sum-profile", lambda v, t: profile_emb(v)),
                       ("profile-profile", None)]:
    t0 = time.time()
    pool = np.unique(test_v.dst)
    ranks = []
    for q in rng.choice(len(test_v), size=300, replace=False):
        u, v, t = int(test_v.src[q]), int(test_v.dst[q]), float(test_v.times[q])
        zu = profile_emb(u) if label == "profile-profile" else latest_summary_emb(u, t)
        negs = pool[pool != v][rng.integers(0, len(pool) - 1, size=100)]
        fn = cand_fn or (lambda v, t: profile_emb(v))
        pos_score = float(zu @ fn(v, t))
        neg_score = np.array([[float(zu @ fn(int(n), t)) for n in negs]])
        ranks.append(rank_with_ties(np.array([pos_score]), neg_score)[0])
    ranks = np.array(ranks, dtype=float)
    print(f"{label}: skyline MRR={np.mean(1.0 / ranks):.4f}  ({time.time()-t0:.1f}s)")
