import sys
import time

import numpy as np
import torch

from ttag.embedding import HashEmbedder
from ttag.encoder import build_runtime
from ttag.evaluation import rank_with_ties
from ttag.graph import chronological_split
from ttag.llm import MockLlmClient
from ttag.summaries import SummaryStore, run_chain
from ttag.synth import SynthConfig, generate
from ttag.training import PredictionHead, bce_loss

HIDDEN = int(sys.argv[1]) if len(sys.argv) > 1 else 256
LR = float(sys.argv[2]) if len(sys.argv) > 2 else 5e-3
STEPS = int(sys.argv[3]) if len(sys.argv) > 3 else 600

data = generate(SynthConfig(seed=0))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
run_chain(view, 8, MockLlmClient(), store, history_limit=16)
emb = HashEmbedder(dim=64, seed=0)
rt = build_runtime(view, store, 8, emb)


def s_emb(node, t):
    times = rt.chain_times[node]
    pos = np.searchsorted(times, t, side="left") - 1
    return rt.chain_emb[node][max(pos, 0)]


torch.manual_seed(0)
head = PredictionHead(64, hidden=HIDDEN)
opt = torch.optim.Adam(head.parameters(), lr=LR)
rng = np.random.default_rng(0)
pool = np.unique(train_v.dst)

t0 = time.time()
for step in range(STEPS):
    idx = rng.integers(0, len(train_v), size=256)
    zu = torch.stack([s_emb(int(train_v.src[q]), float(train_v.times[q])) for q in idx])
    zv = torch.stack([s_emb(int(train_v.dst[q]), float(train_v.times[q])) for q in idx])
    negs = pool[rng.integers(0, len(pool), size=256)]
    zn = torch.stack([s_emb(int(ng), float(train_v.times[q]))
                      for ng, q in zip(negs, idx)])
    loss = bce_loss(head(zu, zv), head(zu, zn))
    opt.zero_grad(); loss.backward(); opt.step()

ranks = []
pool_t = np.unique(test_v.dst)
with torch.no_grad():
    for q in rng.choice(len(test_v), size=300, replace=False):
        u, v, t = int(test_v.src[q]), int(test_v.dst[q]), float(test_v.times[q])
        zu = s_emb(u, t)[None, :]
        negs = pool_t[pool_t != v][rng.integers(0, len(pool_t) - 1, size=100)]
        ps = float(head(zu, s_emb(v, t)[None, :]))
        ns = np.array([[float(head(zu, s_emb(int(n), t)[None, :])) for n in negs]])
        ranks.append(rank_with_ties(np.array([ps]), ns)[0])
print(f"hidden={HIDDEN} lr={LR} steps={STEPS}: "
      f"head-only test MRR={np.mean(1.0/np.array(ranks)):.4f} ({time.time()-t0:.0f}s)")
