import io
import math
import re
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttag.graph import ingest
from ttag.llm import ClientError, MockLlmClient, RetryPolicy, TransportError
from ttag.summaries import (
    DEFAULT_PROMPT_TEMPLATE,
    CostLedger,
    SummaryStore,
    build_prompt,
    reasoning_timestamps,
    run_chain,
    summaries_before,
    summarize,
)


def schedule_oracle(times, m):
    """Brute-force index enumeration: t_{i*ceil(n/m)} clamped, plus t_n, dedup."""
    n = len(times)
    if n == 0:
        return []
    g = math.ceil(n / m)
    idx = {min(i * g, n) for i in range(1, m)} | {n}
    vals = sorted({times[j - 1] for j in idx})
    return vals


# ------------------------------------------------------ reasoning schedule

def test_schedule_interval_sampling():
    times = list(range(1, 11))  # t_1..t_10 with value = index
    sched = reasoning_timestamps(times, m=4)
    assert sched.times == [3, 6, 9, 10]


def test_schedule_all_when_interval_one():
    times = [float(i) for i in range(1, 9)]
    assert reasoning_timestamps(times, m=8).times == times


def test_schedule_clamps_when_fewer_than_m():
    times = [1.0, 2.0, 3.0, 4.0, 5.0]
    assert reasoning_timestamps(times, m=8).times == times


def test_schedule_empty_timestamps():
    assert reasoning_timestamps([], m=8).times == []


def test_schedule_dedupes_repeated_timestamps():
    assert reasoning_timestamps([1.0, 1.0, 1.0, 2.0], m=4).times == [1.0, 2.0]


def test_schedule_rejects_bad_m():
    with pytest.raises(ValueError):
        reasoning_timestamps([1.0], m=0)


@given(
    n=st.integers(min_value=0, max_value=60),
    m=st.integers(min_value=1, max_value=20),
    seed=st.integers(min_value=0, max_value=999),
)
@settings(max_examples=300, deadline=None)
def test_schedule_matches_oracle(n, m, seed):
    rng = np.random.default_rng(seed)
    times = sorted(float(t) for t in rng.integers(0, 50, size=n))
    sched = reasoning_timestamps(times, m)
    assert sched.times == schedule_oracle(times, m)
    assert len(sched.times) <= min(m, n) or n == 0
    if n >= 1:
        assert sched.times[-1] == times[-1]
    assert all(a < b for a, b in zip(sched.times, sched.times[1:]))
    assert set(sched.times) <= set(times)


@given(n=st.integers(min_value=1, max_value=200), m=st.integers(min_value=1, max_value=20))
@settings(max_examples=200, deadline=None)
def test_schedule_interval_regularity(n, m):
    # distinct timestamps so selected indices are recoverable from values
    times = [float(i) for i in range(1, n + 1)]
    sched = reasoning_timestamps(times, m)
    if n >= m:
        idx = [int(t) for t in sched.times]
        gaps = [b - a for a, b in zip(idx, idx[1:])]
        g = math.ceil(n / m)
        assert all(gap == g for gap in gaps[:-1])
        if gaps:
            assert gaps[-1] <= g


# ---------------------------------------------------------------- prompts

HISTORY = [("a", 1.0, "met at the library"), ("b", 2.5, "argued about chess")]


def test_prompt_contains_sections_in_order():
    p = build_prompt("likes chess", 5.0, HISTORY)
    positions = [p.index(h) for h in
                 ("## Goal", "## Descriptions", "## Current time", "## Historical interactions")]
    assert positions == sorted(positions)
    assert "likes chess" in p
    assert "argued about chess" in p


def test_prompt_empty_history_marker():
    p = build_prompt("text", 5.0, [])
    assert "(none)" in p.split("## Historical interactions")[1]


def test_prompt_deterministic():
    assert build_prompt("text", 5.0, HISTORY) == build_prompt("text", 5.0, HISTORY)


def test_prompt_truncates_to_most_recent_k():
    history = [(f"n{i}", float(i), f"event number {i}") for i in range(40)]
    p = build_prompt("text", 99.0, history, history_limit=32)
    lines = [ln for ln in p.splitlines() if ln.startswith("- [t=")]
    assert len(lines) == 32
    assert "event number 39" in p       # most recent kept
    assert "event number 7" not in p    # oldest dropped


def test_prompt_rejects_acausal_history():
    with pytest.raises(ValueError):
        build_prompt("text", 2.0, HISTORY)  # entry at 2.5 >= 2.0


def test_prompt_custom_template_file(tmp_path):
    tpl = "X {node_text} Y {current_time} Z {history}"
    f = tmp_path / "tpl.txt"
    f.write_text(tpl, encoding="utf-8")
    from ttag.summaries import load_prompt_template
    p = build_prompt("hello", 3.0, [], template=load_prompt_template(f))
    assert p.startswith("X hello Y 3.0 Z")


# -------------------------------------------------------------- summarize

class FlakyClient(MockLlmClient):
    """Fails the first n_failures attempts with a transient error."""

    def __init__(self, n_failures, **kw):
        super().__init__(**kw)
        self.n_failures = n_failures

    def _call_once(self, prompt):
        if self.call_count <= self.n_failures:  # call_count already incremented
            raise TransportError("boom", status=503)
        return super()._call_once(prompt)


class AlwaysClientError(MockLlmClient):
    def _call_once(self, prompt):
        raise ClientError("bad request", status=400)


def fast_retry(attempts=3):
    return RetryPolicy(max_attempts=attempts, backoff_base=0.0)


def test_mock_summary_deterministic():
    client = MockLlmClient()
    p = build_prompt("likes chess", 5.0, HISTORY)
    s1, tin1, tout1 = summarize(client, p)
    s2, tin2, tout2 = summarize(client, p)
    assert (s1, tin1, tout1) == (s2, tin2, tout2)
    assert tin1 == len(p.split())
    assert tout1 == len(s1.split())


def test_mock_summary_depends_on_history():
    client = MockLlmClient()
    p1 = build_prompt("text", 5.0, HISTORY)
    p2 = build_prompt("text", 5.0, HISTORY[:1])
    assert summarize(client, p1)[0] != summarize(client, p2)[0]


def test_transient_failure_then_success():
    client = FlakyClient(1, retry=fast_retry())
    ledger = CostLedger()
    summary, _, _ = summarize(client, build_prompt("t", 1.0, []), ledger=ledger)
    assert summary
    assert ledger.calls == 2


def test_exhausted_retries_carry_status():
    client = FlakyClient(99, retry=fast_retry(3))
    with pytest.raises(TransportError) as exc:
        summarize(client, build_prompt("t", 1.0, []))
    assert exc.value.status == 503
    assert client.call_count == 3


def test_no_retry_on_client_error():
    client = AlwaysClientError(retry=fast_retry(3))
    with pytest.raises(ClientError):
        summarize(client, build_prompt("t", 1.0, []))
    assert client.call_count == 1


def test_oversized_response_truncated_with_warning(caplog):
    class LongWinded(MockLlmClient):
        def _call_once(self, prompt):
            return "word " * 500

    client = LongWinded(response_cap=100)
    with caplog.at_level("WARNING", logger="ttag.llm"):
        summary, _, _ = summarize(client, build_prompt("t", 1.0, []))
    assert len(summary) == 100
    assert any("truncat" in r.message for r in caplog.records)


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        summarize(MockLlmClient(), "")


# -------------------------------------------------------------- run_chain

def degree_view():
    # degrees (2, 5, 0): v0 twice, v1 five times, v2 isolated (node file only)
    edges = [("v0", "v1", 1, "e1"), ("v0", "v1", 2, "e2"),
             ("x", "v1", 3, "e3"), ("x", "v1", 4, "e4"), ("x", "v1", 5, "e5")]
    edge_lines = io.StringIO("".join(f'{s},{d},{t},"{x}"\n' for s, d, t, x in edges))
    node_lines = io.StringIO('v0,"zero"\nv1,"one"\nv2,"two"\nx,"aux"\n')
    return ingest(edge_lines, node_lines)


def test_run_chain_call_count_matches_schedule_sizes():
    view = degree_view()
    client = MockLlmClient()
    store = run_chain(view, m=8, client=client, store=SummaryStore())
    # x has degree 3; total calls = sum over nodes of |schedule|
    expected = sum(len(reasoning_timestamps(view.node(n).timestamps, 8).times)
                   for n in view.node_ids)
    assert client.call_count == expected
    assert expected == 2 + 5 + 0 + 3
    assert store.count() == expected


def test_run_chain_second_invocation_is_free():
    view = degree_view()
    client = MockLlmClient()
    store = SummaryStore()
    ledger = CostLedger()
    run_chain(view, m=8, client=client, store=store, ledger=ledger)
    first_calls, first_count = client.call_count, store.count()
    snap = {k: store.get(*k) for k in store.keys()}
    run_chain(view, m=8, client=client, store=store, ledger=ledger)
    assert client.call_count == first_calls
    assert ledger.calls == first_calls
    assert store.count() == first_count
    assert {k: store.get(*k) for k in store.keys()} == snap


def test_run_chain_resumable_after_failure(tmp_path):
    view = degree_view()
    path = tmp_path / "summaries.jsonl"

    class FailsLater(MockLlmClient):
        def _call_once(self, prompt):
            if self.call_count > 3:
                raise TransportError("down", status=500)
            return super()._call_once(prompt)

    with pytest.raises(TransportError):
        run_chain(view, m=8, client=FailsLater(retry=fast_retry(1)),
                  store=SummaryStore(path), workers=1)
    partial = SummaryStore(path)
    assert partial.count() == 3  # completed entries persisted before exit

    healthy = MockLlmClient()
    full = run_chain(view, m=8, client=healthy, store=partial)
    assert healthy.call_count == 10 - 3
    assert full.count() == 10


def test_run_chain_prompts_are_causal():
    view = degree_view()

    seen = []

    class Recorder(MockLlmClient):
        def _call_once(self, prompt):
            seen.append(prompt)
            return super()._call_once(prompt)

    run_chain(view, m=8, client=Recorder(), store=SummaryStore())
    assert seen
    for prompt in seen:
        t_hat = float(re.search(r"## Current time\n(\S+)", prompt).group(1))
        times = [float(x) for x in re.findall(r"- \[t=([^\]]+)\]", prompt)]
        assert all(t < t_hat for t in times)


def test_run_chain_concurrency_bound():
    view = degree_view()
    client = MockLlmClient(max_in_flight=2, latency=0.01)
    run_chain(view, m=8, client=client, store=SummaryStore())
    assert 0 < client.max_observed_in_flight <= 2


def test_run_chain_serial_bound_is_one():
    view = degree_view()
    client = MockLlmClient(max_in_flight=1, latency=0.005)
    run_chain(view, m=8, client=client, store=SummaryStore())
    assert client.max_observed_in_flight == 1


def test_run_chain_scrambled_same_calls_permuted_assignment():
    view = degree_view()
    normal = run_chain(view, m=8, client=MockLlmClient(), store=SummaryStore())
    c2 = MockLlmClient()
    scrambled = run_chain(view, m=8, client=c2, store=SummaryStore(), scramble_seed=5)
    assert c2.call_count == normal.count()
    assert set(scrambled.keys()) == set(normal.keys())
    per_node_equal = []
    for node in view.node_ids:
        keys = sorted(k for k in normal.keys() if k[0] == node)
        a = [normal.get(*k)[0] for k in keys]
        b = [scrambled.get(*k)[0] for k in keys]
        assert sorted(a) == sorted(b)  # same multiset of summaries
        per_node_equal.append(a == b)
    assert not all(per_node_equal)  # some node's assignment actually moved

    again = run_chain(view, m=8, client=MockLlmClient(), store=SummaryStore(),
                      scramble_seed=5)
    assert {k: again.get(*k) for k in again.keys()} == \
           {k: scrambled.get(*k) for k in scrambled.keys()}


# ------------------------------------------------------- summaries_before

def make_chain():
    view = degree_view()
    store = run_chain(view, m=8, client=MockLlmClient(), store=SummaryStore())
    sched = reasoning_timestamps(view.node("v1").timestamps, 8)
    return store.chain_for("v1", sched, base_text="one")


def test_summaries_before_base_only():
    chain = make_chain()
    assert summaries_before(chain, 0.5) == [(0.0, "one")]


def test_summaries_before_strict_filter():
    chain = make_chain()  # keys {0, 1, 2, 3, 4, 5}
    got = summaries_before(chain, 3.5)
    assert [t for t, _ in got] == [0.0, 1.0, 2.0, 3.0]


def test_summaries_before_infinity_returns_all():
    chain = make_chain()
    got = summaries_before(chain, math.inf)
    assert [t for t, _ in got] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_chain_base_entry_is_raw_text():
    chain = make_chain()
    assert chain.entries[0.0] == "one"
    assert chain.node == "v1"


def test_chain_missing_entry_errors():
    view = degree_view()
    store = SummaryStore()
    sched = reasoning_timestamps(view.node("v1").timestamps, 8)
    with pytest.raises(KeyError):
        store.chain_for("v1", sched, base_text="one")


# ------------------------------------------------------------- store, ledger

def test_store_roundtrip(tmp_path):
    path = tmp_path / "s.jsonl"
    store = SummaryStore(path)
    store.put("n1", 3.0, "hello world", 10, 2)
    store.put("n2", 0.5, 'tricky "quoted" text\nwith newline', 5, 6)
    back = SummaryStore(path)
    assert back.get("n1", 3.0) == ("hello world", 10, 2)
    assert back.get("n2", 0.5)[0] == 'tricky "quoted" text\nwith newline'
    assert back.count() == 2


def test_store_append_only(tmp_path):
    path = tmp_path / "s.jsonl"
    SummaryStore(path).put("n1", 1.0, "a", 1, 1)
    again = SummaryStore(path)
    again.put("n2", 2.0, "b", 1, 1)
    assert SummaryStore(path).count() == 2


def test_ledger_accumulates():
    ledger = CostLedger()
    ledger.add(calls=1, input_tokens=10, output_tokens=3, wall_time=0.5)
    ledger.add(calls=2, input_tokens=5, output_tokens=1, wall_time=0.25)
    assert (ledger.calls, ledger.input_tokens, ledger.output_tokens) == (3, 15, 4)
    assert ledger.wall_time == pytest.approx(0.75)


def test_ledger_rejects_negative_increment():
    with pytest.raises(ValueError):
        CostLedger().add(calls=-1)


def test_ledger_thread_safe():
    ledger = CostLedger()
    threads = [threading.Thread(target=lambda: [ledger.add(calls=1) for _ in range(100)])
               for _ in range(4)]
    [t.start() for t in threads]
    [t.join() for t in threads]
    assert ledger.calls == 400
