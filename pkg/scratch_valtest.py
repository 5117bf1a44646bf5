import numpy as np

from ttag.embedding import HashEmbedder
from ttag.encoder import build_runtime
from ttag.evaluation import rank_with_ties
from ttag.graph import chronological_split
from ttag.llm import MockLlmClient
from ttag.summaries import SummaryStore, run_chain
from ttag.synth import SynthConfig, generate

data = generate(SynthConfig(seed=0))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
run_chain(view, 8, MockLlmClient(), store, history_limit=20)
emb = HashEmbedder(dim=64, seed=0)
runtime = build_runtime(view, store, 8, emb)

topic_of = {}
for name in data.node_ids:
    i = view.node_index[name]
    topic_of[i] = (data.truth["initial_topic"][name],
                   data.truth["new_topic"][name],
                   data.truth["drift_time"][name])


def current_topic(i, t):
    init, new, dt = topic_of[i]
    return new if (dt is not None and t >= dt) else init


def latest_summary_emb(node, t):
    times = runtime.chain_times[node]
    pos = np.searchsorted(times, t, side="left") - 1
    return runtime.chain_emb[node][max(pos, 0)].numpy(), times[max(pos, 0)]


for label, ev in [("val", val_v), ("test", test_v)]:
    rng = np.random.default_rng(1)
    pool = np.unique(ev.dst)
    ranks, lags, match_pos, match_negs = [], [], 0, []
    oracle_ranks = []
    for q in rng.choice(len(ev), size=400, replace=False):
        u, v, t = int(ev.src[q]), int(ev.dst[q]), float(ev.times[q])
        zu, t_k = latest_summary_emb(u, t)
        lags.append(t - t_k)
        negs = pool[pool != v][rng.integers(0, len(pool) - 1, size=100)]
        zs = [latest_summary_emb(int(n), t)[0] for n in negs]
        pos_score = float(zu @ latest_summary_emb(v, t)[0])
        neg_score = np.array([[float(zu @ z) for z in zs]])
        ranks.append(rank_with_ties(np.array([pos_score]), neg_score)[0])
        # ground-truth topic oracle: score 1 if current topics match
        tu = current_topic(u, t)
        match_pos += current_topic(v, t) == tu
        nm = np.array([current_topic(int(n), t) == tu for n in negs], dtype=float)
        match_negs.append(nm.sum())
        o_ranks = rank_with_ties(np.array([1.0 if current_topic(v, t) == tu else 0.0]),
                                 nm[None, :])
        oracle_ranks.append(o_ranks[0])
    ranks = np.array(ranks, float)
    oracle_ranks = np.array(oracle_ranks, float)
    print(f"{label}: skyline MRR={np.mean(1/ranks):.4f}  "
          f"topic-oracle MRR={np.mean(1/oracle_ranks):.4f}  "
          f"pos-matched={match_pos/len(ranks):.2f}  "
          f"matched-negs={np.mean(match_negs):.1f}  "
          f"summary-lag median={np.median(lags):.0f}")
