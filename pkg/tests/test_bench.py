import json
import socket

import pytest

from llmq_vrp import bench
from llmq_vrp import instance as I
from llmq_vrp.agent import TrainConfig
from llmq_vrp.milp import GENERALIZED, exact_solve

from conftest import PYTH_VRP, pyth, seeded

QUICK = ["--episodes", "6", "--warmup", "16"]


@pytest.fixture
def vrp_files(tmp_path):
    paths = []
    for k in range(2):
        p = tmp_path / f"in{k}.vrp"
        p.write_text(PYTH_VRP.replace("pyth-k2", f"pyth{k}-k2"))
        paths.append(str(p))
    return paths


@pytest.fixture
def inst_file(tmp_path):
    p = tmp_path / "small.json"
    I.save(seeded(4, 1), p)
    return p


def test_prepare_manifest_stable_and_guarded(tmp_path, vrp_files):
    out = tmp_path / "corpus"
    assert bench.main(["prepare", *vrp_files, "--out", str(out)]) == 0
    first = (out / "manifest.json").read_bytes()
    m = json.loads(first)
    assert [e["file"] for e in m["instances"]] == ["pyth0-k2.json", "pyth1-k2.json"]
    assert all((out / e["file"]).exists() for e in m["instances"])
    assert bench.main(["prepare", *vrp_files, "--out", str(out)]) == 2
    assert bench.main(["prepare", *vrp_files, "--out", str(out), "--force"]) == 0
    assert (out / "manifest.json").read_bytes() == first
    for e in m["instances"]:
        assert e["sha256"] == bench.sha256_text((out / e["file"]).read_text())


def test_dqn_touches_no_advisor(tmp_path, inst_file):
    out = tmp_path / "runs"
    assert bench.main(["train", str(inst_file), "--out", str(out), "--method", "dqn",
                       "--seeds", "0", *QUICK]) == 0
    d = out / "syn-n5-s1" / "dqn" / "all" / "seed0"
    assert not (d / "advisor.jsonl").exists()
    s = json.loads((d / "summary.json").read_text())
    assert s["llm_calls"] == 0 and s["phase_switch"] is None
    assert s["switches"]["double"] is True


def test_three_seeds_offline(tmp_path, inst_file, monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("network touched")
    monkeypatch.setattr(socket, "socket", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    out = tmp_path / "runs"
    assert bench.main(["train", str(inst_file), "--out", str(out), "--method", "llm-mock",
                       *QUICK]) == 0
    root = out / "syn-n5-s1" / "llm-mock" / "all"
    sums = [json.loads((root / f"seed{k}" / "summary.json").read_text()) for k in range(3)]
    assert all((root / f"seed{k}" / "episodes.jsonl").exists() for k in range(3))
    assert all((root / f"seed{k}" / "advisor.jsonl").stat().st_size > 0 for k in range(3))
    agg = json.loads((root / "aggregate.json").read_text())
    assert agg["runs"] == 3 and agg["seeds"] == [0, 1, 2]
    assert agg["satisfaction"] == pytest.approx(sum(s["satisfaction"] for s in sums) / 3)


def test_reruns_are_byte_identical(tmp_path, inst_file):
    for name in ("a", "b"):
        bench.main(["train", str(inst_file), "--out", str(tmp_path / name), "--seeds", "4",
                    *QUICK])
    rel = "syn-n5-s1/llm-mock/all/seed4"
    for f in ("episodes.jsonl", "summary.json", "checkpoint_final.npz", "advisor.jsonl"):
        assert (tmp_path / "a" / rel / f).read_bytes() == (tmp_path / "b" / rel / f).read_bytes()


def test_report_two_methods_one_instance(tmp_path, inst_file, capsys):
    out = tmp_path / "runs"
    for m in ("dqn", "llm-mock"):
        bench.main(["train", str(inst_file), "--out", str(out), "--method", m,
                    "--seeds", "0", "1", *QUICK])
    capsys.readouterr()
    assert bench.main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:3] == ["instance", "method", "config"]
    assert "gap%" in lines[0] and "satisf%" in lines[0]
    assert len(lines) == 3
    rows, _ = bench.collect(out)
    parsed = bench.read_csv((out / "results.csv").read_text())
    assert len(parsed) == len(rows) == 2
    for r, p in zip(rows, parsed):
        for k in bench.RESULT_FIELDS:
            want = r[k]
            got = p[k]
            if want is None:
                assert got == ""
            elif isinstance(want, float):
                assert float(got) == want
            else:
                assert got == str(want)
    curves = bench.read_csv((out / "curves.csv").read_text())
    assert len(curves) == 2 * 2 * 6
    assert (out / "results.csv").read_bytes().count(b"\r") == 0


def test_oracle_plan_gives_zero_gap(tmp_path):
    p = tmp_path / "one.json"
    I.save(pyth(1), p)
    out = tmp_path / "runs"
    assert bench.main(["train", str(p), "--out", str(out), "--method", "dqn", "--seeds", "0",
                       *QUICK]) == 0
    rows, _ = bench.collect(out)
    assert rows[0]["gap_mean"] == 0.0 and rows[0]["found"] == 1


def test_aggregate_is_hand_mean():
    sums = [{"gap": 1.0, "best_episode": 3, "satisfaction": 1.0},
            {"gap": None, "best_episode": None, "satisfaction": 0.0},
            {"gap": 4.0, "best_episode": 9, "satisfaction": 1.0}]
    agg = bench.aggregate(sums)
    assert agg["runs"] == 3 and agg["found"] == 2
    assert agg["gap_mean"] == 2.5 and agg["gap_std"] == 1.5
    assert agg["satisfaction"] == 2 / 3 and agg["episodes_to_best"] == 6.0


def test_ablation_table_shape(tmp_path, inst_file, capsys):
    out = tmp_path / "abl"
    assert bench.main(["ablate", str(inst_file), "--out", str(out), "--seeds", "0",
                       *QUICK]) == 0
    rows = bench.read_csv((out / "results.csv").read_text())
    table = [r for r in rows if r["instance"] == "ALL"]
    for m in ("dqn", "llm-mock"):
        mine = [r for r in table if r["method"] == m]
        assert [r["config"] for r in mine] == list(bench.ABLATIONS)
    dashed = {r["config"] for r in table if r["method"] == "dqn" and r["runs"] == ""}
    assert dashed == {"no-llm-memory", "no-llm-per"}
    assert bench.DASH in capsys.readouterr().out
    s = json.loads((out / "syn-n5-s1/llm-mock/no-double/seed0/summary.json").read_text())
    assert s["switches"]["double"] is False and s["switches"]["dueling"] is True


def test_missing_oracle(tmp_path):
    big = I.synthetic_instance(9, 1)
    with pytest.raises(bench.MissingOracle):
        bench.oracle_cost(big, None)
    assert bench.oracle_cost(big, 123.0) == 123.0


def test_oracle_command(tmp_path, capsys):
    p = tmp_path / "f.vrp"
    p.write_text(PYTH_VRP)
    assert bench.main(["oracle", str(p)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["cost"] == exact_solve(I.read_vrp(p), weights=GENERALIZED).best_cost


def test_exit_codes(tmp_path, inst_file, monkeypatch):
    assert bench.main(["train"]) == 2
    assert bench.main(["report", str(tmp_path)]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"no_such_key": 1}')
    assert bench.main(["train", str(inst_file), "--out", str(tmp_path / "x"),
                       "--config", str(cfg)]) == 2
    big = tmp_path / "big.json"
    I.save(I.synthetic_instance(9, 1), big)
    assert bench.main(["oracle", str(big)]) == 1

    real = bench.train

    def flaky(inst, cfg, backend, seed, out_dir):
        if seed == 1:
            raise RuntimeError("boom")
        return real(inst, cfg, backend, seed=seed, out_dir=out_dir)
    monkeypatch.setattr(bench, "train", flaky)
    out = tmp_path / "flaky"
    assert bench.main(["train", str(inst_file), "--out", str(out), "--method", "dqn",
                       *QUICK]) == 1
    agg = json.loads((out / "syn-n5-s1/dqn/all/aggregate.json").read_text())
    assert agg["seeds"] == [0, 2] and "boom" in agg["errors"][0]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 40, "lr": 0.01}))
    args = bench.build_parser().parse_args(["train", "x", "--out", "o", "--config", str(cfg),
                                            "--episodes", "7"])
    tc = bench._train_config(args)
    assert tc.episodes == 7 and tc.lr == 0.01 and tc == TrainConfig(episodes=7, lr=0.01)
