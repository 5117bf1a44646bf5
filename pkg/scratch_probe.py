import time

import numpy as np
import torch

from ttag.embedding import HashEmbedder
from ttag.encoder import CoEncoder, build_runtime
from ttag.evaluation import evaluate_mrr
from ttag.graph import chronological_split
from ttag.llm import MockLlmClient
from ttag.seeding import derive_seed
from ttag.summaries import SummaryStore, run_chain
from ttag.synth import SynthConfig, generate
from ttag.training import PredictionHead, TrainSettings, train

t0 = time.time()
data = generate(SynthConfig(nodes=200, edges=5000, signal=1.0, topics=6, seed=0))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
client = MockLlmClient()
run_chain(view, 8, client, store)
print(f"extract done {time.time()-t0:.1f}s")

emb = HashEmbedder(dim=64, seed=0)
rt_full = build_runtime(view, store, 8, emb)
rt_base = build_runtime(view, store, 8, emb, base_only=True)
print(f"runtimes done {time.time()-t0:.1f}s")

# peek at two summaries of a drifted node
drifted = [n for n, lab in data.labels.items() if lab == 1][0]
chain = rt_full.chains[view.node_index[drifted]]
for k in sorted(chain.entries)[:1] + sorted(chain.entries)[-2:]:
    print(f"  [{drifted} @ {k:.0f}] {chain.entries[k][:110]}")

for name, rt in [("full", rt_full), ("no_TSE", rt_base)]:
    torch.manual_seed(derive_seed(0, "model"))
    enc = CoEncoder(d=64, L=2, m=8, k=10)
    head = PredictionHead(64)
    settings = TrainSettings(epochs=6, batch_size=512, lr=1e-3, patience=3,
                             eval_interval=2, seed=0, val_negatives=50,
                             val_queries=200)
    t1 = time.time()
    res = train(enc, head, rt, train_v, val_v, settings)
    t2 = time.time()
    r = evaluate_mrr(enc, head, rt, test_v, num_negatives=100, seed=0,
                     max_queries=400)
    print(f"{name}: val={res.best_val_mrr:.4f} test={r.mrr:.4f} "
          f"train={t2-t1:.1f}s eval={time.time()-t2:.1f}s total={time.time()-t0:.1f}s")
