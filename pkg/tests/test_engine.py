import json
from pathlib import Path

import numpy as np
import pytest

from pstream import distributions as d
from pstream.engine import bench, runner
from pstream.engine.graph import build_graph, graph_from_dict
from pstream.errors import ValidationError
from pstream.tuples import base_tuple, read_jsonl, write_jsonl

PIPELINES = Path(__file__).resolve().parents[1] / "pipelines"


def _graph(boxes, arrows):
    return {"boxes": [{"id": b, "kind": k, "config": c} for b, k, c in boxes], "arrows": arrows}


def test_q1_pipeline_has_five_boxes():
    g = build_graph(PIPELINES / "q1" / "pipeline.json")
    assert len(g.boxes) == 5
    assert g.sources == ["readings"] and g.sinks == ["out"]


def test_self_loop_is_a_cycle():
    spec = _graph([("s", "source", {}), ("f", "select", {}), ("k", "sink", {})],
                  [["s", "f"], ["f", "f"], ["f", "k"]])
    with pytest.raises(ValidationError, match="cycle through arrow f -> f"):
        graph_from_dict(spec)


def test_join_arity():
    spec = _graph([("s", "source", {}), ("j", "join", {}), ("k", "sink", {})], [["s", "j"], ["j", "k"]])
    with pytest.raises(ValidationError, match="exactly 2"):
        graph_from_dict(spec)


def test_dangling_arrow_and_unknown_kind():
    with pytest.raises(ValidationError, match="unknown box"):
        graph_from_dict(_graph([("s", "source", {})], [["s", "nowhere"]]))
    with pytest.raises(ValidationError, match="unknown kind"):
        graph_from_dict(_graph([("s", "source", {}), ("x", "teleport", {})], [["s", "x"]]))


def test_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "boxes": [\n    {"id": "s",, }\n  ]\n}\n')
    with pytest.raises(ValidationError, match="line 3"):
        build_graph(p)


def _write_inputs(tmp_path, n=20):
    ts = [base_tuple(f"t{i}", float(i), {"v": d.Gaussian1D(float(i), 1.0), "k": i % 3}) for i in range(n)]
    write_jsonl(tmp_path / "in.jsonl", ts)
    return ts


def test_identity_pipeline_copies_input(tmp_path):
    _write_inputs(tmp_path)
    spec = _graph([("src", "source", {"path": "in.jsonl"}), ("out", "sink", {"path": "out.jsonl"})],
                  [["src", "out"]])
    (tmp_path / "p.json").write_text(json.dumps(spec))
    runner.run(build_graph(tmp_path / "p.json"))
    assert (tmp_path / "out.jsonl").read_bytes() == (tmp_path / "in.jsonl").read_bytes()


def _agg_pipeline(tmp_path):
    spec = _graph([
        ("src", "source", {"path": "in.jsonl"}),
        ("fx", "transform", {"attr": "v", "affine": [2.0, 1.0]}),
        ("win", "window", {"range": 5, "slide": 5}),
        ("sum", "agg", {"op": "sum", "attr": "v", "method": "HIST_SAMPLE"}),
        ("out", "sink", {"path": "out.jsonl"}),
        ("hi", "select", {"attr": "v", "gt": 3.0}),
        ("raw", "sink", {}),
    ], [["src", "fx"], ["fx", "win"], ["win", "sum"], ["sum", "out"], ["src", "hi"], ["hi", "raw"]])
    (tmp_path / "p.json").write_text(json.dumps(spec))
    return build_graph(tmp_path / "p.json")


def test_metrics_conservation(tmp_path):
    _write_inputs(tmp_path)
    g = _agg_pipeline(tmp_path)
    _, m = runner.run(g)
    assert m.source_tuples == 20
    for b in g.sources:
        assert all(m.boxes[nxt].tuples_in == m.boxes[b].tuples_out for nxt in g.outputs(b))
    for a, b in g.arrows:
        if len(g.inputs(b)) == 1:
            assert m.boxes[b].tuples_in == m.boxes[a].tuples_out
    assert m.boxes["hi"].dropped + m.boxes["hi"].tuples_out == 20


def test_deterministic_runs_identical_and_threaded_equal_as_multiset(tmp_path):
    _write_inputs(tmp_path)
    g = _agg_pipeline(tmp_path)
    runner.run(g, seed=4)
    first = (tmp_path / "out.jsonl").read_bytes()
    runner.run(g, seed=4)
    assert (tmp_path / "out.jsonl").read_bytes() == first
    runner.run(g, seed=4, deterministic=False, capacity=2)
    assert sorted((tmp_path / "out.jsonl").read_bytes().splitlines()) == sorted(first.splitlines())


@pytest.mark.parametrize("deterministic", [True, False])
def test_runtime_error_halts_with_partial_metrics(tmp_path, deterministic):
    _write_inputs(tmp_path)
    # agg needs window closures; a bare tuple stream is a runtime error.
    spec = _graph([("src", "source", {"path": "in.jsonl"}), ("sum", "agg", {"op": "sum", "attr": "v"}),
                   ("out", "sink", {})], [["src", "sum"], ["sum", "out"]])
    with pytest.raises(runner.RunError) as exc:
        runner.run(graph_from_dict(spec, tmp_path), deterministic=deterministic)
    assert "sum" in str(exc.value)
    assert exc.value.metrics.boxes["src"].tuples_out >= 1


def test_unknown_binding_rejected(tmp_path):
    _write_inputs(tmp_path)
    g = _agg_pipeline(tmp_path)
    with pytest.raises(ValidationError):
        runner.run(g, {"nope": "x.jsonl"})


def test_q2_single_alert(tmp_path):
    outputs, _ = runner.run(build_graph(PIPELINES / "q2" / "pipeline.json"),
                            {"alerts": str(tmp_path / "alerts.jsonl")})
    (alert,) = outputs["alerts"]
    assert (alert.attrs["tag_id"], alert.attrs["sensor"]) == ("o1", "t1")
    assert len(list(read_jsonl(tmp_path / "alerts.jsonl"))) == 1


def test_q2_match_probability_oracle(tmp_path):
    # |D|^2 / 0.02 is noncentral chi-square (3 dof, lambda = 0.05^2 / 0.02); P(|D| < 0.5) frozen from scipy.
    outputs, _ = runner.run(build_graph(PIPELINES / "q2" / "pipeline.json"),
                            {"alerts": str(tmp_path / "alerts.jsonl")})
    assert outputs["alerts"][0].attrs["p_match"] == pytest.approx(0.9926622889706755, abs=1e-6)


@pytest.mark.filterwarnings("ignore::pstream.errors.NumericWarning")
def test_q1_pipeline_runs(tmp_path):
    outputs, m = runner.run(build_graph(PIPELINES / "q1" / "pipeline.json"),
                            {"out": str(tmp_path / "q1.jsonl")})
    assert m.boxes["locate"].tuples_out == 40 * 50
    for t in outputs["out"]:
        assert t.attrs["alert"] and t.attrs["exceed_prob"] > 0.5


def test_bench_window_of_one_is_identity():
    cfg = bench.BenchConfig(window=1, windows=5, seed=2)
    rows = {r.method: r for r in bench.bench_sum_methods(cfg)}
    assert rows["CF_INVERT"].variance_distance == 0.0
    assert rows["CF_FIT"].variance_distance < 0.01
    assert rows["HIST_SAMPLE"].variance_distance < 0.1


def test_bench_report_files(tmp_path):
    cfg = bench.BenchConfig(window=10, windows=2, seed=1)
    rows = bench.bench_sum_methods(cfg)
    csv_path, json_path = bench.write_report(rows, tmp_path / "r", cfg, timings=False)
    assert csv_path.read_text().splitlines()[0] == "method,throughput_tps,variance_distance"
    doc = json.loads(json_path.read_text())
    assert [r["method"] for r in doc["rows"]] == ["CF_INVERT", "CF_FIT", "HIST_SAMPLE"]
    assert all(r["throughput_tps"] is None for r in doc["rows"])
