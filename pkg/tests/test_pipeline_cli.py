import csv
import json
import shutil
import socket

import pytest

from commval.cli import main
from commval.config import RunConfig
from commval.errors import MissingStageOutput, StageFailed
from commval.pipeline import Manifest, emit_reports, read_json, run_stage
from commval.synthetic import generate


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    """A small fixture with every stage already run."""
    fx = generate(tmp_path_factory.mktemp("fx"), n_communities=12, seed=5)
    assert main(["run", "--config", str(fx.config)]) == 0
    return fx


@pytest.fixture
def run_copy(done, tmp_path):
    root = tmp_path / "fx"
    shutil.copytree(done.root, root)
    return root


def out_of(root):
    return root / "out"


def test_manifest_contents(done):
    m = read_json(out_of(done.root) / "manifest.json")
    assert m["complete"] is True
    assert m["config"]["k"] == 17 and m["seed"] == 5
    assert m["provider"]["name"] == "mock"
    assert all(s["status"] == "complete" for s in m["stages"].values())
    text = (out_of(done.root) / "manifest.json").read_text()
    assert "time" not in text.lower()


@pytest.mark.parametrize("stage,output", [("label", "labels.jsonl"), ("scales", "scales.json"),
                                          ("canonicalize", "canonical_map.json"), ("recall", "recall.json")])
def test_stage_rerun_is_byte_identical(run_copy, stage, output):
    path = out_of(run_copy) / output
    before = path.read_bytes()
    path.unlink()
    assert main([stage, "--config", str(run_copy / "commval.cfg")]) == 0
    assert path.read_bytes() == before


def test_missing_input_stage_fails(run_copy):
    (out_of(run_copy) / "records.jsonl").unlink()
    cfg = RunConfig.from_file(run_copy / "commval.cfg")
    with pytest.raises(StageFailed):
        run_stage("scales", cfg)
    m = read_json(out_of(run_copy) / "manifest.json")
    assert m["stages"]["scales"]["status"] == "failed" and m["complete"] is False
    assert main(["scales", "--config", str(run_copy / "commval.cfg")]) == 1


def test_prosocial_without_scores_exits_1(run_copy, capsys):
    cfg = run_copy / "commval.cfg"
    cfg.write_text("\n".join(l for l in cfg.read_text().splitlines() if not l.startswith("scores")) + "\n")
    assert main(["prosocial", "--config", str(cfg)]) == 1
    assert "scores" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["label", "--config", str(bad)]) == 2
    bad.write_text("k = lots\n")
    assert main(["canonicalize", "--config", str(bad)]) == 2
    assert main(["label", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_report_skips_missing_outputs(run_copy):
    cfg = RunConfig.from_file(run_copy / "commval.cfg")
    (out_of(run_copy) / "recall.json").unlink()
    written = {p.name for p in emit_reports(cfg, Manifest(cfg))}
    assert "prevalence.csv" in written and "recall.csv" not in written


def test_report_without_outputs(tmp_path):
    cfg = RunConfig(out_dir=str(tmp_path / "empty"))
    with pytest.raises(MissingStageOutput):
        emit_reports(cfg, Manifest(cfg))


def test_compare_cli(done, tmp_path, capsys):
    out = tmp_path / "cmp.json"
    o = str(out_of(done.root))
    assert main(["compare", "--from", o, "--to", o, "--community", "c00", "--output", str(out)]) == 0
    result = read_json(out)
    assert result["added"] == [] and result["removed"] == [] and result["kept"]
    assert "kept:" in capsys.readouterr().out


def test_annotate_and_alpha_cli(run_copy, capsys):
    sheet = run_copy / "sheet.csv"
    assert main(["annotate-sample", "--config", str(run_copy / "commval.cfg"), "--output", str(sheet)]) == 0
    lines = sheet.read_text().splitlines()
    assert lines[0].startswith("comment_id,community,body,value")
    # unfilled worksheet: no pairable items
    assert main(["alpha", str(sheet)]) == 1
    with open(sheet, newline="") as fh:
        data = list(csv.DictReader(fh))
    for i, row in enumerate(data):
        row["rater_1"] = "yes"
        row["rater_2"] = "no" if i % 5 == 0 else "yes"
        row["resolution"] = "yes"
    with open(sheet, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(data[0]))
        w.writeheader()
        w.writerows(data)
    capsys.readouterr()
    assert main(["alpha", str(sheet)]) == 0
    out = capsys.readouterr().out
    assert "krippendorff_alpha" in out and "accuracy: 1.0000" in out


def test_http_provider_unreachable(run_copy, monkeypatch):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    monkeypatch.setenv("COMMVAL_API_BASE", f"http://127.0.0.1:{port}")
    monkeypatch.setenv("COMMVAL_API_KEY", "test")
    (out_of(run_copy) / "cache.jsonl").unlink()
    (out_of(run_copy) / "records.jsonl").unlink()
    code = main(["extract", "--config", str(run_copy / "commval.cfg"), "--provider", "http", "--max-retries", "0"])
    assert code == 1
    m = json.loads((out_of(run_copy) / "manifest.json").read_text())
    assert m["stages"]["extract"]["status"] == "failed"
