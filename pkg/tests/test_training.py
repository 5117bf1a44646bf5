import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import make_models
from fdcheck import central_difference_check
from ttag.training import (
    CHECKPOINT_VERSION,
    NegativeSampler,
    PredictionHead,
    TrainingError,
    TrainResult,
    TrainSettings,
    bce_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)


# -------------------------------------------------------- prediction head

def test_head_zero_params_gives_half():
    head = PredictionHead(3)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    out = head(torch.randn(5, 3), torch.randn(5, 3))
    assert torch.equal(out, torch.full((5,), 0.5))


def test_head_outputs_strictly_inside_unit_interval():
    torch.manual_seed(0)
    head = PredictionHead(4)
    p = head(torch.randn(1000, 4), torch.randn(1000, 4))
    assert torch.all(p > 0) and torch.all(p < 1)


def test_head_rejects_non_finite_input():
    head = PredictionHead(3)
    bad = torch.full((1, 3), float("nan"))
    with pytest.raises(ValueError, match="non-finite"):
        head(bad, torch.zeros(1, 3))


def test_head_fd_gradients():
    torch.manual_seed(1)
    head = PredictionHead(4).double()
    z_u = torch.randn(6, 4, dtype=torch.float64)
    z_v = torch.randn(6, 4, dtype=torch.float64)
    probe = torch.randn(6, dtype=torch.float64)
    central_difference_check(
        list(head.parameters()), lambda: (head(z_u, z_v) * probe).sum(),
        np.random.default_rng(0), n_coords=20, h=1e-5, rtol=1e-4)


# ------------------------------------------------------------------- loss

def test_bce_perfect_prediction_is_clamped_tiny():
    loss = bce_loss(torch.tensor([1.0], dtype=torch.float64),
                    torch.tensor([0.0], dtype=torch.float64))
    expected = -2.0 * math.log(1.0 - 1e-7)
    assert math.isclose(float(loss), expected, rel_tol=1e-12)


def test_bce_coin_flip_is_two_log_two_per_pair():
    one = bce_loss(torch.tensor([0.5], dtype=torch.float64),
                   torch.tensor([0.5], dtype=torch.float64))
    assert math.isclose(float(one), 2 * math.log(2), rel_tol=1e-15)
    three = bce_loss(torch.full((3,), 0.5, dtype=torch.float64),
                     torch.full((3,), 0.5, dtype=torch.float64))
    assert math.isclose(float(three), 6 * math.log(2), rel_tol=1e-15)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_bce_finite_and_non_negative_on_unit_interval(pos, neg):
    loss = bce_loss(torch.tensor(pos, dtype=torch.float64),
                    torch.tensor(neg, dtype=torch.float64))
    assert torch.isfinite(loss)
    assert float(loss) >= 0.0


# ---------------------------------------------------------------- sampler

def test_sampler_never_returns_true_destination():
    sampler = NegativeSampler(np.arange(20), seed=0)
    true = np.random.default_rng(1).integers(0, 20, size=5000)
    out = sampler.sample_many(true)
    assert np.all(out != true)
    mat = sampler.sample_many(true[:100], k=7)
    assert np.all(mat != true[:100, None])


def test_sampler_is_deterministic_under_seed():
    a = NegativeSampler(np.arange(11), seed=42)
    b = NegativeSampler(np.arange(11), seed=42)
    true = np.zeros(200, dtype=np.int64)
    assert np.array_equal(a.sample_many(true), b.sample_many(true))


def test_sampler_uniform_over_pool_chi_squared():
    # true destination outside the pool, so no draw is ever rejected
    sampler = NegativeSampler(np.arange(50), seed=7)
    draws = sampler.sample_many(np.full(100_000, -1), k=1)
    counts = np.bincount(draws, minlength=50)
    assert counts.sum() == 100_000
    _, p_value = stats.chisquare(counts)
    assert p_value > 0.01


def test_sampler_rejects_degenerate_pools():
    with pytest.raises(ValueError, match="empty"):
        NegativeSampler(np.array([]), seed=0)
    single = NegativeSampler(np.array([3]), seed=0)
    with pytest.raises(ValueError, match="single node"):
        single.sample(3)
    assert single.sample(9) == 3  # fine when the true dst differs


def test_sampler_duplicate_pool_entries_are_collapsed():
    sampler = NegativeSampler(np.array([4, 4, 4, 9]), seed=0)
    assert np.array_equal(sampler.pool, np.array([4, 9]))


# ------------------------------------------------------------ train loop

def quick_settings(**kw):
    base = dict(epochs=2, batch_size=16, lr=1e-3, patience=5, eval_interval=1,
                seed=0, val_negatives=5, val_queries=4)
    base.update(kw)
    return TrainSettings(**base)


def test_train_runs_and_logs(world):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    result = train(enc, head, world["runtime"], train_v, val_v, quick_settings())
    assert isinstance(result, TrainResult)
    assert result.epochs_run == 2
    assert len(result.log) == 2
    for entry in result.log:
        assert math.isfinite(entry["loss"])
        assert 0.0 <= entry["val_mrr"] <= 1.0
    assert result.best_val_mrr == max(e["val_mrr"] for e in result.log)
    for p in enc.parameters():
        assert torch.isfinite(p).all()


def test_train_deterministic_under_seed(world):
    train_v, val_v, _ = world["splits"]
    losses = []
    for _ in range(2):
        enc, head = make_models(seed=5)
        result = train(enc, head, world["runtime"], train_v, val_v,
                       quick_settings(seed=3))
        losses.append([e["loss"] for e in result.log])
    assert losses[0] == losses[1]


def test_train_early_stopping_and_best_epoch(world):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    vals = iter([0.3, 0.5, 0.4, 0.45, 0.2, 0.1, 0.9])
    result = train(enc, head, world["runtime"], train_v, val_v,
                   quick_settings(epochs=10, patience=2),
                   val_metric_fn=lambda: next(vals))
    assert result.early_stopped
    assert result.epochs_run == 4          # two strikes after the 0.5 peak
    assert result.best_epoch == 2
    assert result.best_val_mrr == 0.5
    observed = [e["val_mrr"] for e in result.log]
    assert result.best_val_mrr == max(observed)


def test_train_restores_best_validation_state(world):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    snapshots = []
    vals = iter([1.0, 0.0, 0.0, 0.0])

    def probe():
        snapshots.append(head.net[0].weight.detach().clone())
        return next(vals)

    result = train(enc, head, world["runtime"], train_v, val_v,
                   quick_settings(epochs=10, patience=3), val_metric_fn=probe)
    assert result.best_epoch == 1
    # weights rolled back to the epoch-1 evaluation snapshot
    assert torch.equal(head.net[0].weight, snapshots[0])
    assert not torch.equal(snapshots[0], snapshots[-1])


def test_train_interval_gates_evaluations(world):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    calls = []
    result = train(enc, head, world["runtime"], train_v, val_v,
                   quick_settings(epochs=4, eval_interval=2),
                   val_metric_fn=lambda: calls.append(1) or 0.5)
    assert len(calls) == 2
    assert [("val_mrr" in e) for e in result.log] == [False, True, False, True]


def test_train_aborts_on_divergence(world):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    with torch.no_grad():
        head.net[0].weight.fill_(float("nan"))
    with pytest.raises(TrainingError, match="diverged.*epoch 1"):
        train(enc, head, world["runtime"], train_v, val_v, quick_settings())


def test_train_rejects_empty_view(world):
    enc, head = make_models()
    _, val_v, _ = world["splits"]
    empty = world["view"].with_edges(np.array([], dtype=np.int64))
    with pytest.raises(TrainingError, match="empty"):
        train(enc, head, world["runtime"], empty, val_v, quick_settings())


def test_train_writes_log_file(world, tmp_path):
    enc, head = make_models()
    train_v, val_v, _ = world["splits"]
    path = tmp_path / "train.log"
    result = train(enc, head, world["runtime"], train_v, val_v,
                   quick_settings(log_path=str(path)))
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert lines == result.log


# ------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(world, tmp_path):
    enc, head = make_models(seed=1)
    opt = torch.optim.Adam(list(enc.parameters()) + list(head.parameters()), lr=1e-3)
    z = enc(world["runtime"], np.array([0, 1]), np.array([50.0, 50.0]))
    head(z[:1], z[1:]).sum().backward()
    opt.step()

    path = tmp_path / "model.pt"
    save_checkpoint(path, enc, head, opt, config_hash="abc123",
                    extra={"epoch": 3, "val_mrr": 0.75})
    want = {k: v.clone() for k, v in enc.state_dict().items()}

    enc2, head2 = make_models(seed=99)
    opt2 = torch.optim.Adam(list(enc2.parameters()) + list(head2.parameters()))
    meta = load_checkpoint(path, enc2, head2, opt2, expect_hash="abc123")
    assert meta["epoch"] == 3 and meta["val_mrr"] == 0.75
    for k, v in enc2.state_dict().items():
        assert torch.equal(v, want[k]), k
    assert opt2.state_dict()["param_groups"][0]["lr"] == 1e-3


def test_checkpoint_preserves_variant(world, tmp_path):
    enc, head = make_models()
    enc.variant = "no_SC"
    path = tmp_path / "variant.pt"
    save_checkpoint(path, enc, head)
    enc2, head2 = make_models()
    assert enc2.variant == "full"
    load_checkpoint(path, enc2, head2)
    assert enc2.variant == "no_SC"


def test_checkpoint_hash_mismatch_rejected(tmp_path):
    enc, head = make_models()
    path = tmp_path / "model.pt"
    save_checkpoint(path, enc, head, config_hash="deadbeef")
    with pytest.raises(TrainingError, match="deadbeef"):
        load_checkpoint(path, enc, head, expect_hash="cafebabe")
    load_checkpoint(path, enc, head)  # no expectation, no complaint


def test_checkpoint_version_gate(tmp_path):
    enc, head = make_models()
    path = tmp_path / "model.pt"
    save_checkpoint(path, enc, head)
    payload = torch.load(path, weights_only=True)
    payload["format_version"] = CHECKPOINT_VERSION + 1
    torch.save(payload, path)
    with pytest.raises(TrainingError, match="format"):
        load_checkpoint(path, enc, head)
