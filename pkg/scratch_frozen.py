import numpy as np
import torch

from ttag.embedding import HashEmbedder
from ttag.encoder import CoEncoder, build_runtime
from ttag.evaluation import rank_with_ties
from ttag.graph import chronological_split
from ttag.llm import MockLlmClient
from ttag.seeding import derive_seed
from ttag.summaries import SummaryStore, run_chain
from ttag.synth import SynthConfig, generate
from ttag.training import PredictionHead, bce_loss

data = generate(SynthConfig(seed=0))
view = data.to_view()
train_v, val_v, test_v = chronological_split(view)
store = SummaryStore()
run_chain(view, 8, MockLlmClient(), store, history_limit=16)
emb = HashEmbedder(dim=64, seed=0)
rt = build_runtime(view, store, 8, emb)

torch.manual_seed(derive_seed(0, "model"))
enc = CoEncoder(d=64, L=2, m=8, k=2)
enc.eval()

# stream scales at init on a sample of queries
idx = np.arange(0, len(train_v), 37)
nodes, times = train_v.src[idx], train_v.times[idx]
with torch.no_grad():
    z, cap = enc(rt, nodes, times, capture=True)
d = enc.d
print("z norm", float(z.norm(dim=1).mean()))

# recompute the concat pieces by a second forward with hooks: easier to
# just instrument dims of out_head input via a monkeypatch
pieces = {}
orig = enc.out_head.forward
def spy(x):
    pieces["in"] = x.detach()
    return orig(x)
enc.out_head.forward = spy
with torch.no_grad():
    enc(rt, nodes, times)
x = pieces["in"]
z_sem, z_str, z_mix_e, z_mix_h = (x[:, :2*d], x[:, 2*d:3*d],
                                  x[:, 3*d:5*d], x[:, 5*d:])
for name, part in [("z_sem", z_sem), ("z_str", z_str),
                   ("z_mix.e_latest", z_mix_e), ("z_mix.h", z_mix_h)]:
    print(f"{name}: mean-norm {float(part.norm(dim=1).mean()):.3f}")
enc.out_head.forward = orig

# head trained on frozen init-encoder outputs
torch.manual_seed(1)
head = PredictionHead(64, hidden=256)
opt = torch.optim.Adam(head.parameters(), lr=5e-3)
rng = np.random.default_rng(0)
pool = np.unique(train_v.dst)


def encode(nodes, times):
    with torch.no_grad():
        return enc(rt, np.asarray(nodes), np.asarray(times))


import time
t0 = time.time()
for step in range(300):
    qi = rng.integers(0, len(train_v), size=256)
    negs = pool[rng.integers(0, len(pool), size=256)]
    all_nodes = np.concatenate([train_v.src[qi], train_v.dst[qi], negs])
    all_times = np.tile(train_v.times[qi], 3)
    z = encode(all_nodes, all_times)
    b = 256
    loss = bce_loss(head(z[:b], z[b:2*b]), head(z[:b], z[2*b:]))
    opt.zero_grad(); loss.backward(); opt.step()
    if step % 100 == 99:
        print(f"step {step+1} loss {float(loss):.1f} ({time.time()-t0:.0f}s)")

ranks = []
pool_t = np.unique(test_v.dst)
for qs in np.array_split(rng.choice(len(test_v), size=200, replace=False), 20):
    for q in qs:
        u, v, t = int(test_v.src[q]), int(test_v.dst[q]), float(test_v.times[q])
        negs = pool_t[pool_t != v][rng.integers(0, len(pool_t) - 1, size=100)]
        cand = np.concatenate([[u, v], negs])
        z = encode(cand, np.full(len(cand), t))
        with torch.no_grad():
            ps = float(head(z[:1], z[1:2]))
            ns = np.array([[float(s) for s in
                            head(z[:1].expand(100, -1), z[2:])]])
        ranks.append(rank_with_ties(np.array([ps]), ns)[0])
print(f"frozen-init-encoder head probe: test MRR={np.mean(1/np.array(ranks)):.4f}")
