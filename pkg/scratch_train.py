import sys
import time

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

HIST = int(sys.argv[1]) if len(sys.argv) > 1 else 16
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 20
K = int(sys.argv[3]) if len(sys.argv) > 3 else 5
LR = float(sys.argv[4]) if len(sys.argv) > 4 else 3e-3
SEED = int(sys.argv[5]) if len(sys.argv) > 5 else 0

t0 = time.time()
data = generate(SynthConfig(seed=SEED))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
run_chain(view, 8, MockLlmClient(), store, history_limit=HIST)
emb = HashEmbedder(dim=64, seed=0)
rt_full = build_runtime(view, store, 8, emb)
rt_base = build_runtime(view, store, 8, emb, base_only=True)
print(f"setup {time.time()-t0:.1f}s  hist={HIST} epochs={EPOCHS} k={K} seed={SEED}")

for name, rt in [("full", rt_full), ("no_TSE", rt_base)]:
    torch.manual_seed(derive_seed(SEED, "model"))
    enc = CoEncoder(d=64, L=2, m=8, k=K)
    head = PredictionHead(64, hidden=256)
    settings = TrainSettings(epochs=EPOCHS, batch_size=128, lr=LR, patience=6,
                             eval_interval=3, seed=SEED, val_negatives=50,
                             val_queries=240, weight_decay=0.0, head_lr=5e-3, head_warmup_epochs=2)
    t1 = time.time()
    res = train(enc, head, rt, train_v, val_v, settings)
    t2 = time.time()
    vals = [(e["epoch"], round(e["val_mrr"], 4)) for e in res.log
            if e.get("val_mrr") is not None]
    r = evaluate_mrr(enc, head, rt, test_v, num_negatives=100, seed=SEED,
                     max_queries=300)
    print(f"{name}: best_val={res.best_val_mrr:.4f}@{res.best_epoch} "
          f"test={r.mrr:.4f} train={t2-t1:.0f}s eval={time.time()-t2:.0f}s")
    print(f"  val curve: {vals}")
