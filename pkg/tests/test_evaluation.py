import json

import pytest

from scenarios import synthetic_checkpoint
from typedmem.config import RunConfig
from typedmem.evaluation import (
    EvalClients,
    QueryRecord,
    compare_runs,
    dia_index,
    evidence_recall,
    gold_episodes,
    load_records,
    metrics_from_rows,
    read_log,
    run_eval,
    summary_path,
)
from typedmem.llm import FailingChatClient, StubChatClient


@pytest.fixture(scope="module")
def syn():
    return synthetic_checkpoint(seed=4, n_sessions=12, n_queries=20)


def stub_clients():
    s = StubChatClient("rules")
    return EvalClients(retrieval=s, answer=s, judge=s)


def test_record_parsing(tmp_path):
    path = tmp_path / "qa.json"
    path.write_text(json.dumps([
        {"question": "a?", "answer": 5, "category": 2, "evidence": ["D1:1"]},
        {"question": "b?", "gold_answer": "x", "category": "temporal", "id": "z"},
    ]))
    a, b = load_records(path)
    assert a.category == "multi_hop" and a.gold_answer == "5" and a.qid == "q00000"
    assert b.qid == "z" and b.evidence == ()
    with pytest.raises(ValueError):
        QueryRecord.from_dict({"question": "c", "category": 7})
    with pytest.raises(ValueError):
        QueryRecord.from_dict({"question": "c", "category": "adversarial"})


def test_evidence_recall_examples():
    assert evidence_recall(["a", "b", "c"], {"a", "z"}, 5) == 0.5
    assert evidence_recall(["x"] * 5 + ["a"], {"a"}, 5) == 0.0
    assert evidence_recall(["x"] * 5 + ["a"], {"a"}, 10) == 1.0
    assert evidence_recall(["a"], set(), 5) is None


def test_gold_resolution(syn, caplog):
    _, ckpt = syn
    index = dia_index(ckpt)
    ep1 = index["D1:1"]
    assert index["D1:2"] == ep1
    assert gold_episodes(["D1:1", "D1:2"], index) == {ep1}
    assert gold_episodes(["D99:1; D1:2"], index) == {ep1}
    assert gold_episodes(["D99:1"], index) == set() and "does not resolve" in caplog.text


def test_run_writes_log_and_summary(syn, tmp_path):
    s, ckpt = syn
    metrics, rows = run_eval({"syn4": ckpt}, s.records, RunConfig(), stub_clients(), log_path=tmp_path / "run.jsonl")
    assert metrics.n_questions == 20 == metrics.n_judged
    assert [r["qid"] for r in rows] == sorted(r.qid for r in s.records)
    assert metrics.max_retrieval_llm_calls <= 2 and metrics.protocol_llm_calls == 40
    assert set(metrics.er_at_k) == {"5", "10"}
    log = read_log(tmp_path / "run.jsonl")
    assert log == json.loads(json.dumps(rows))
    # everything in the summary can be recomputed from the log
    summary = json.loads(summary_path(tmp_path / "run.jsonl").read_text())
    assert summary["metrics"] == json.loads(json.dumps(metrics_from_rows(log).to_dict()))
    assert summary["config"]["bundle_size"] == 10


def test_per_1k_and_categories(syn):
    s, ckpt = syn
    metrics, rows = run_eval({"syn4": ckpt}, s.records, RunConfig(), stub_clients())
    tokens = sum(r["context_tokens"] for r in rows) / len(rows)
    assert metrics.ctx_tokens_per_query == tokens
    assert metrics.per_1k_efficiency == pytest.approx(metrics.judge_score / (tokens / 1000))
    assert sum(c["n"] for c in metrics.per_category.values()) == 20


def test_mixed_tokenizers_refused(syn):
    s, ckpt = syn
    _, rows_a = run_eval({"syn4": ckpt}, s.records[:4], RunConfig(), stub_clients())
    _, rows_b = run_eval({"syn4": ckpt}, s.records[:4], RunConfig(tokenizer="whitespace"), stub_clients())
    with pytest.raises(ValueError):
        metrics_from_rows(rows_a[:2] + rows_b[2:])
    with pytest.raises(ValueError):
        compare_runs(rows_a, rows_b)


def test_unjudged_rows_excluded(syn):
    s, ckpt = syn
    stub = StubChatClient("rules")
    clients = EvalClients(retrieval=stub, answer=stub, judge=FailingChatClient())
    metrics, rows = run_eval({"syn4": ckpt}, s.records[:5], RunConfig(), clients)
    assert metrics.n_unjudged == 5 and metrics.n_judged == 0
    assert all(r["label"] is None and r["error"] for r in rows)


def test_compare_runs(syn):
    s, ckpt = syn
    _, full = run_eval({"syn4": ckpt}, s.records, RunConfig(), stub_clients())
    _, off = run_eval({"syn4": ckpt}, s.records, RunConfig(enable_rerank=False), stub_clients())
    out = compare_runs(full, off, 500, 42)
    assert out["all"]["n"] == 20
    lo, hi = out["all"]["ci_pp"]
    assert lo <= out["all"]["delta_pp"] <= hi
    same = compare_runs(full, full, 500, 42)["all"]
    assert same["delta_pp"] == 0 and same["ci_pp"] == [0, 0] and same["mcnemar_mid_p"] == 1.0


def test_missing_checkpoint(syn):
    s, ckpt = syn
    with pytest.raises(KeyError):
        run_eval({"a": ckpt, "b": ckpt}, s.records[:1])
