import csv
import json

import pytest

from coopdet.cli import RunConfig, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_align_example(capsys):
    code, out, _ = run(capsys, "align", "--extent", "5,16,837,848", "--k", "16")
    assert code == 0
    assert out.splitlines() == ["p=(5,11,0,0)", "fixel origin (0,1)"]


@pytest.mark.parametrize("argv", [
    ["align", "--extent", "1,2,3", "--k", "4"],
    ["align", "--extent", "5,5,1,1", "--k", "4"],
    ["gen", "--scenes", "2"],
    ["frobnicate"],
    [],
])
def test_usage_errors_are_one_json_line(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"] == "usage"


def test_data_errors(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--data", tmp_path / "missing", "--out", tmp_path / "m.afsm")
    assert code == 3 and json.loads(err)["error"] == "data"


def test_config_rejects_unknown_keys(tmp_path):
    from coopdet.cli import DataError
    with pytest.raises(DataError):
        RunConfig.from_dict({"schema_version": 1, "learning_rte": 0.1})
    with pytest.raises(DataError):
        RunConfig.from_dict({"schema_version": 2})
    cfg = RunConfig.from_dict({"schema_version": 1, "bank": [2, 4, 8]})
    assert cfg.bank == (2, 4, 8)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--scenes", "6", "--seed", "4", "--out", str(root / "train")]) == 0
    assert main(["gen", "--scenes", "3", "--seed", "5", "--split", "test", "--out", str(root / "test")]) == 0
    (root / "cfg.json").write_text(json.dumps({"schema_version": 1, "epochs": 1, "batch_size": 2, "seed": 1}))
    assert main(["train", "--data", str(root / "train"), "--config", str(root / "cfg.json"),
                 "--out", str(root / "m.afsm")]) == 0
    return root


def test_gen_refuses_non_empty_dir(capsys, workdir):
    code, _, err = run(capsys, "gen", "--scenes", "1", "--out", workdir / "train")
    assert code == 3


def test_train_writes_log(workdir):
    rows = list(csv.DictReader(open(workdir / "m.afsm.csv")))
    assert len(rows) == 3 and {r["c_t"] for r in rows} <= {"2", "4"}


def test_infer_and_eval(capsys, workdir):
    code, _, _ = run(capsys, "infer", "--model", workdir / "m.afsm", "--data", workdir / "test",
                     "--budget", 100_000, "--out", workdir / "pred.csv")
    assert code == 0
    rows = list(csv.DictReader(open(workdir / "pred.csv")))
    assert {int(r["frame_id"]) for r in rows} == {0, 1, 2}
    assert all(r["fallback"] == "0" and int(r["message_bytes"]) <= 100_000 for r in rows)
    code, out, _ = run(capsys, "eval", "--pred", workdir / "pred.csv", "--data", workdir / "test",
                       "--iou", 0.7, "--out", workdir / "report.csv")
    assert code == 0
    assert (workdir / "report_pr.csv").exists()
    assert set(json.loads(out)["ap"]) == {"vehicle", "pedestrian"}
    code, out, _ = run(capsys, "compare", workdir / "report.csv")
    assert out.splitlines()[0] == "model,mode,vehicle_ap,pedestrian_ap"


def test_infer_tiny_budget_falls_back(capsys, workdir):
    code, _, _ = run(capsys, "infer", "--model", workdir / "m.afsm", "--data", workdir / "test",
                     "--budget", 10, "--mode", "nma", "--out", workdir / "pred_fb.csv")
    assert code == 0
    rows = list(csv.DictReader(open(workdir / "pred_fb.csv")))
    assert rows and all(r["fallback"] == "1" and r["c_t"] == "" for r in rows)


def test_eval_rejects_bad_predictions(capsys, workdir):
    bad = workdir / "bad.csv"
    bad.write_text("frame_id,class\n0,vehicle\n")
    code, _, err = run(capsys, "eval", "--pred", bad, "--data", workdir / "test", "--out", workdir / "r.csv")
    assert code == 3
