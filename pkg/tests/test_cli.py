import json
import subprocess
import sys

import numpy as np
import pytest

from combtomo.cli import main
from combtomo.persist import model_to_dict, read_csv, read_dataset, read_model
from combtomo.simulator import probability

SMALL = {"profile": {"n_steps": 2, "ancillas": "1-2-2", "n_instruments": 3, "n_states": 2},
         "optimizer": {"max_iterations": 40, "tau0": 0.05}}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def pipeline(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "run"
    assert run("generate", "--config", cfg, "--seed", 4, "--out", out) == 0
    assert run("simulate", "--config", cfg, "--model", out / "model.json", "--out", out) == 0
    return cfg, out


def test_generate_shapes_for_growing_ancillas(tmp_path):
    cfg = write_config(tmp_path, {"profile": {"n_steps": 3, "ancillas": "1-2-3", "n_instruments": 2}})
    assert run("generate", "--config", cfg, "--out", tmp_path) == 0
    model = read_model(tmp_path / "model.json")
    assert [v.shape for v in model.comb.isometries] == [(4, 2), (6, 4), (6, 6)]


def test_zero_angle_model_equals_nominal(tmp_path):
    doc = dict(SMALL, experiment={"perturbation": {"angle": 0.0}})
    cfg = write_config(tmp_path, doc)
    assert run("generate", "--config", cfg, "--out", tmp_path) == 0
    a = model_to_dict(read_model(tmp_path / "model.json"))
    b = model_to_dict(read_model(tmp_path / "nominal.json"))
    assert {k: a[k] for k in ("comb", "instruments", "states")} == \
        {k: b[k] for k in ("comb", "instruments", "states")}


def test_model_round_trip_is_exact(pipeline, tmp_path):
    _, out = pipeline
    model = read_model(out / "model.json")
    from combtomo.persist import write_model
    write_model(tmp_path / "again.json", model, json.loads((out / "model.json").read_text())["meta"])
    assert (tmp_path / "again.json").read_bytes() == (out / "model.json").read_bytes()
    again = read_model(tmp_path / "again.json")
    assert all(np.array_equal(x, y) for x, y in zip(model.to_point(), again.to_point()))


def test_generate_and_simulate_are_deterministic(pipeline, tmp_path):
    cfg, out = pipeline
    other = tmp_path / "other"
    assert run("generate", "--config", cfg, "--seed", 4, "--out", other) == 0
    assert run("simulate", "--config", cfg, "--model", other / "model.json", "--out", other,
               "--threads", 8) == 0
    for name in ("model.json", "nominal.json", "dataset.jsonl"):
        assert (out / name).read_bytes() == (other / name).read_bytes()


def test_simulate_line_count_and_spot_check(tmp_path):
    cfg = write_config(tmp_path, {"profile": {"n_steps": 1, "ancillas": "1-2", "n_instruments": 2}})
    assert run("generate", "--config", cfg, "--out", tmp_path) == 0
    assert run("simulate", "--config", cfg, "--model", tmp_path / "model.json", "--out", tmp_path) == 0
    lines = (tmp_path / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 4 * 2 * 2
    rec = json.loads(lines[5])
    assert set(rec) == {"u", "v", "x", "L", "value", "kind", "shots"}
    data = read_dataset(tmp_path / "dataset.jsonl")
    model = read_model(tmp_path / "model.json")
    assert abs(data.records[5].value - probability(model, data.records[5].sequence)) < 1e-15


def test_exact_dataset_groups_sum_to_one(pipeline):
    _, out = pipeline
    from combtomo.simulator import group_sums
    sums = group_sums(read_dataset(out / "dataset.jsonl"))
    assert max(abs(s - 1) for s in sums.values()) < 1e-10


def test_reconstruct_from_truth(pipeline, tmp_path):
    cfg, out = pipeline
    res = tmp_path / "rec"
    assert run("reconstruct", "--config", cfg, "--dataset", out / "dataset.jsonl", "--truth",
               out / "model.json", "--init", "truth-perturbed:0", "--out", res) == 0
    trace = read_csv(res / "trace.csv")
    assert list(trace[0]) == ["iter", "loss", "grad_norm", "wall_ms"]
    assert len(trace) <= 2 and float(trace[-1]["grad_norm"]) < 1e-5
    meta = json.loads((res / "model_out.json").read_text())["meta"]
    assert meta["reason"] == "converged"


def test_iqct_keeps_local_operations(pipeline, tmp_path):
    cfg, out = pipeline
    res = tmp_path / "iqct"
    assert run("reconstruct", "--config", cfg, "--dataset", out / "dataset.jsonl", "--nominal",
               out / "nominal.json", "--init", "prior", "--mode", "iqct", "--out", res) == 0
    a = json.loads((res / "model_out.json").read_text())
    b = json.loads((out / "nominal.json").read_text())
    assert a["instruments"] == b["instruments"] and a["states"] == b["states"]
    assert a["comb"] != b["comb"]


def test_reconstruct_is_deterministic(pipeline, tmp_path):
    cfg, out = pipeline
    outs = []
    for k, threads in enumerate((1, 8)):
        res = tmp_path / f"r{k}"
        assert run("reconstruct", "--config", cfg, "--dataset", out / "dataset.jsonl", "--nominal",
                   out / "nominal.json", "--init", "prior", "--threads", threads, "--out", res) == 0
        outs.append(res)
    assert (outs[0] / "model_out.json").read_bytes() == (outs[1] / "model_out.json").read_bytes()
    cols = [[(r["iter"], r["loss"], r["grad_norm"]) for r in read_csv(o / "trace.csv")] for o in outs]
    assert cols[0] == cols[1]


def test_evaluate_reports(pipeline, tmp_path):
    cfg, out = pipeline
    same = tmp_path / "same"
    assert run("evaluate", "--config", cfg, "--truth", out / "model.json", "--model", out / "model.json",
               "--out", same) == 0
    rows = read_csv(same / "report.csv")
    assert list(rows[0]) == ["slot", "instrument", "branch", "fro_diff"]
    assert rows[-1]["slot"] == "summary" and float(rows[-1]["fro_diff"]) == 0
    assert all(float(r["fro_diff"]) == 0 for r in rows)
    assert len(list(same.glob("ptm_*.svg"))) == 6
    diff_panels = [line for f in same.glob("ptm_*.svg") for line in f.read_text().splitlines()
                   if "<title>" in line and "rect" in line]
    assert diff_panels

    moved = tmp_path / "moved"
    assert run("evaluate", "--config", cfg, "--truth", out / "model.json", "--model", out / "nominal.json",
               "--dataset", out / "dataset.jsonl", "--out", moved) == 0
    assert float(read_csv(moved / "report.csv")[-1]["fro_diff"]) > 0
    ev = json.loads((moved / "evaluation.json").read_text())
    assert ev["losses"]["truth"] < 1e-20 < ev["losses"]["model"]


def test_evaluate_structure_mismatch(pipeline, tmp_path):
    cfg, out = pipeline
    other = write_config(tmp_path, {"profile": {"n_steps": 1, "ancillas": "1-2", "n_instruments": 3}}, "o.json")
    assert run("generate", "--config", other, "--out", tmp_path / "o") == 0
    assert run("evaluate", "--truth", out / "model.json", "--model", tmp_path / "o" / "model.json",
               "--out", tmp_path) == 3


def suite_config(tmp_path, **suite):
    doc = {"profile": {"n_steps": 1, "ancillas": "1-2", "n_instruments": 3, "n_states": 2},
           "optimizer": {"tau0": 0.05},
           "suite": dict({"ancillas": ["1-1", "1-2"], "n_steps": [1], "angles": [0.5, 1.0],
                          "seeds": [0, 1, 2], "max_iterations": 5}, **suite)}
    return write_config(tmp_path, doc, "suite.json")


def test_suite_bookkeeping_and_thread_independence(tmp_path):
    cfg = suite_config(tmp_path)
    assert run("suite", "--config", cfg, "--out", tmp_path / "s1") == 0
    assert run("suite", "--config", cfg, "--out", tmp_path / "s8", "--threads", 8) == 0
    rows = read_csv(tmp_path / "s1" / "summary.csv")
    assert len(rows) == 24 and len(list((tmp_path / "s1").rglob("trace.csv"))) == 24
    assert (tmp_path / "s1" / "summary.csv").read_bytes() == (tmp_path / "s8" / "summary.csv").read_bytes()
    for f in (tmp_path / "s1").rglob("*"):
        if f.suffix in (".json", ".jsonl") and f.name != "manifest.json":
            assert f.read_bytes() == (tmp_path / "s8" / f.relative_to(tmp_path / "s1")).read_bytes()
    assert (tmp_path / "s1" / "fig2a.svg").exists()
    manifest = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    from combtomo.persist import sha256
    for path, digest in manifest["outputs"].items():
        assert sha256(path) == digest


def test_empty_suite(tmp_path):
    cfg = suite_config(tmp_path, ancillas=[])
    assert run("suite", "--config", cfg, "--out", tmp_path) == 0
    assert (tmp_path / "summary.csv").read_text().strip() == \
        "ancillas,n_steps,angle,seed,method,final_loss,grad_norm,iterations,reason,delta_ptm"


def test_benchmark(tmp_path):
    cfg = write_config(tmp_path, {"profile": {"n_instruments": 2, "n_states": 2},
                                  "benchmark": {"ancillas": ["1-1-1", "1-2-2"], "repetitions": 2}})
    assert run("benchmark", "--config", cfg, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "benchmark.csv")
    assert [r["ancillas"] for r in rows] == ["1-1-1", "1-2-2"]


def test_exit_codes(pipeline, tmp_path, capsys):
    cfg, out = pipeline
    bad = write_config(tmp_path, {"profile": {"colour": "blue"}}, "bad.json")
    assert run("generate", "--config", bad, "--out", tmp_path) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("combtomo: error=config")
    assert run("generate", "--config", write_config(tmp_path, {"profile": {"ancillas": "1-3-1"}}, "p.json"),
               "--out", tmp_path) == 2
    assert run("reconstruct", "--dataset", out / "dataset.jsonl", "--init", "sideways", "--out", tmp_path) == 2
    assert run("simulate", "--model", tmp_path / "missing.json", "--out", tmp_path) == 5
    (tmp_path / "junk.json").write_text('{"format": "combtomo-model", "version": 1}')
    assert run("simulate", "--model", tmp_path / "junk.json", "--out", tmp_path) == 3
    doc = json.loads((out / "model.json").read_text())
    doc["comb"][0][0][0] = [5.0, 0.0]
    (tmp_path / "offmanifold.json").write_text(json.dumps(doc))
    assert run("simulate", "--model", tmp_path / "offmanifold.json", "--out", tmp_path) == 3
    lines = (out / "dataset.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["value"] = float("nan")
    (tmp_path / "nan.jsonl").write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    assert run("reconstruct", "--config", cfg, "--dataset", tmp_path / "nan.jsonl", "--nominal",
               out / "nominal.json", "--init", "prior", "--out", tmp_path / "nan") == 4
    capsys.readouterr()
    assert run("reconstruct", "--config", cfg, "--dataset", out / "dataset.jsonl", "--init", "prior",
               "--out", tmp_path) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "combtomo", "generate", "--out", str(tmp_path),
                           "--config", write_config(tmp_path, SMALL)],
                          capture_output=True, text=True, env={"COMBTOMO_LOG": "debug", "PATH": ""})
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "model.json").exists()
