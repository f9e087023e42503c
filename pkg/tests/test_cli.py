import csv
import json
import warnings
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dissect.cli import main
from dissect.detector import DetectionReport
from dissect.plots import histogram_svg, line_svg, write_svg

SVG = "{http://www.w3.org/2000/svg}"


def test_train_attack_extract(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "net.bin")]) == 0
    assert "test accuracy" in capsys.readouterr().out
    assert (tmp_path / "net.bin").stat().st_size > 0
    assert main(["attack", "--out", str(tmp_path / "adv.bin")]) == 0
    assert "success rate" in capsys.readouterr().out
    assert main(["extract", "--out", str(tmp_path / "pd")]) == 0
    files = list((tmp_path / "pd").glob("*.csv"))
    assert any(f.name.startswith("clean_") for f in files)
    assert any(f.name.startswith("adv_") for f in files)
    assert main(["extract", "--feature", "counts", "--out", str(tmp_path / "c")]) == 0
    rows = list(csv.reader(open(tmp_path / "c" / "features.csv")))
    assert {r[0] for r in rows} == {"clean", "adv"} and all(len(r) == 4 for r in rows)


def test_detect_is_reproducible(tmp_path, isolated_cache):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["detect", "--seed", "2", "--out", str(a)]) == 0
    for p in isolated_cache.iterdir():
        p.unlink()
    assert main(["detect", "--seed", "2", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = DetectionReport.from_json(a.read_text())
    assert report.config["seed"] == 2 and report.config["mode"] == "unsupervised"


def test_detect_writes_stdout_and_report_summarizes(tmp_path, capsys):
    assert main(["detect", "--mode", "sup"]) == 0
    text = capsys.readouterr().out
    assert json.loads(text)["config"]["mode"] == "supervised"
    (tmp_path / "r.json").write_text(text)
    assert main(["report", str(tmp_path / "r.json"), "--out", str(tmp_path / "r.csv"),
                 "--svg", str(tmp_path / "h.svg")]) == 0
    assert "AUC" in capsys.readouterr().out
    assert ET.parse(tmp_path / "h.svg").getroot().tag == SVG + "svg"


def test_prune_sweep_and_compare_edges(tmp_path):
    assert main(["prune-sweep", "--fractions", "0,0.5", "--out", str(tmp_path / "p.csv"),
                 "--svg", str(tmp_path / "p.svg")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert [float(r["fraction"]) for r in rows] == [0.0, 0.5]
    ET.parse(tmp_path / "p.svg")
    assert main(["compare-edges", "--out", str(tmp_path / "e.csv")]) == 0
    assert len(list(csv.DictReader(open(tmp_path / "e.csv")))) == 2


def test_invalid_input_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"q": 2}')
    assert main(["detect", "--config", str(cfg)]) == 2
    assert main(["report", str(tmp_path / "missing.json")]) == 2
    cfg.write_text('{"epsilon": 0.0}')
    assert main(["detect", "--config", str(cfg)]) == 2
    assert "dissect:" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"optimizer": "sgd", "lr": 1e300}')
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["train", "--config", str(cfg)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


# --------------------------------------------------------------------------
# SVG output
# --------------------------------------------------------------------------


def test_line_chart_structure(tmp_path):
    svg = line_svg([0, 1, 2], {"a": [0.1, 0.5, 0.2], "b<&>": [1, 1, 1]}, title="t & u")
    write_svg(svg, tmp_path / "l.svg")
    root = ET.parse(tmp_path / "l.svg").getroot()
    lines = root.findall(SVG + "polyline")
    assert len(lines) == 2
    assert len(lines[0].get("points").split()) == 3


def test_histogram_counts_match_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=50), rng.normal(1, size=30)
    root = ET.fromstring(histogram_svg({"a": a, "b": b}, bins=7))
    lines = root.findall(SVG + "polyline")
    assert len(lines) == 2
    # every bin contributes two vertices plus the two baseline anchors
    assert all(len(p.get("points").split()) == 2 * 7 + 2 for p in lines)


def test_constant_series_does_not_divide_by_zero():
    ET.fromstring(line_svg([1, 1], {"c": [2, 2]}))
