import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from heatwave import cli
from heatwave.cli import CliError, coerce_value, parse_config, run
from heatwave.mesh import generate_unit_square, load_mesh


def test_coerce_scalars():
    assert coerce_value("8") == 8
    assert coerce_value("0.25") == 0.25
    assert coerce_value("1e-8") == 1e-8
    assert coerce_value("true") is True
    assert coerce_value("False") is False
    assert coerce_value("none") is None
    assert coerce_value("weighted_hm1") == "weighted_hm1"
    # inf/nan stay strings so reports remain strict JSON
    assert coerce_value("inf") == "inf"
    assert coerce_value("nan") == "nan"


def test_coerce_tuples():
    assert coerce_value("8, 16, 32") == (8, 16, 32)
    assert coerce_value("0.85,1.15") == (0.85, 1.15)
    assert coerce_value("1,inf") == (1, "inf")
    assert coerce_value("8,8; 16,16") == ((8, 8), (16, 16))
    assert coerce_value("8,") == (8,)


def test_shape_like_lifts_to_default_container():
    norms = ("l2", "weighted_l2", "weighted_hm1")
    assert cli._shape_like(coerce_value("weighted_hm1"), norms) == ("weighted_hm1",)
    pairs = ((8, 8), (16, 16))
    assert cli._shape_like(coerce_value("8,8"), pairs) == ((8, 8),)
    assert cli._shape_like(coerce_value("4,4;8,8"), pairs) == ((4, 4), (8, 8))
    # scalar defaults pass through untouched
    assert cli._shape_like(coerce_value("0.5"), 1.0) == 0.5


def test_parse_config_sections_comments_kebab(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# header comment\n"
        "[mesh]\n"
        "ns = 4, 8   # trailing comment\n"
        "\n"
        "[time]\n"
        "interior-times = 4\n"
        "T = 0.5\n"
    )
    values = parse_config(cfg)
    assert values == {"ns": "4, 8", "interior_times": "4", "T": "0.5"}


def test_parse_config_rejects_bad_lines(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n")
    with pytest.raises(CliError, match="key = value"):
        parse_config(bad)
    dup = tmp_path / "dup.cfg"
    dup.write_text("[a]\nn = 4\n[b]\nn = 8\n")
    with pytest.raises(CliError, match="duplicate key 'n'"):
        parse_config(dup)


def test_missing_config_exit2_names_path(tmp_path, capsys):
    code = run(["conv", "--config", str(tmp_path / "missing.cfg")])
    assert code == 2
    assert "missing.cfg" in capsys.readouterr().err


def test_unknown_config_key_exit2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus_knob = 3\n")
    code = run(["conv", "--config", str(cfg)])
    assert code == 2
    err = capsys.readouterr().err
    assert "bogus_knob" in err and "run.cfg" in err


def test_usage_errors_exit2(capsys):
    assert run([]) == 2
    assert run(["not-a-command"]) == 2
    assert run(["conv", "--not-a-flag", "1"]) == 2
    capsys.readouterr()


def test_driver_value_error_exit2(tmp_path, capsys):
    code = run(["conv", "--problem", "mystery", "--out", str(tmp_path)])
    assert code == 2
    assert "mystery" in capsys.readouterr().err


def test_lemma42_example_clean(tmp_path):
    out = tmp_path / "out"
    code = run(
        [
            "lemma42",
            "--gamma",
            "0.7853981633974483",
            "--count",
            "100000",
            "--seed",
            "1",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["rows"][0]["metrics"]["violations"] == 0.0


def test_mesh_roundtrip(tmp_path):
    path = tmp_path / "m.txt"
    assert run(["mesh", "--n", "2", "--out", str(path)]) == 0
    mesh = load_mesh(path)
    ref = generate_unit_square(2)
    np.testing.assert_array_equal(mesh.vertices, ref.vertices)
    np.testing.assert_array_equal(mesh.cells, ref.cells)


def test_report_schema_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[ladder]\nns = 4, 8\nout = %s\n" % (tmp_path / "ignored"))
    out = tmp_path / "out"
    code = run(["conv", "--config", str(cfg), "--ns", "4,5", "--out", str(out)])
    assert code == 0
    text = (out / "report.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    rep = json.loads(text)
    assert list(rep) == [
        "schema_version",
        "experiment",
        "config",
        "rows",
        "fits",
        "provenance",
    ]
    assert rep["schema_version"] == 1
    assert rep["experiment"] == "conv"
    # the flag wins over the config-file ladder
    assert rep["config"]["ns"] == [4, 5]
    assert rep["provenance"]["generated"] == "1970-01-01T00:00:00Z"
    for row in rep["rows"]:
        assert set(row) == {"h", "k", "q", "r", "metrics", "flags"}


def test_failures_exit1(tmp_path, capsys):
    out = tmp_path / "out"
    code = run(["conv", "--ns", "4,8", "--max-error", "1e-30", "--out", str(out)])
    assert code == 1
    assert "FAIL" in capsys.readouterr().err
    # artifacts are still written so the failure can be inspected
    assert (out / "report.json").exists()
    assert (out / "tables.csv").exists()


def test_artifacts_byte_stable(tmp_path):
    args = ["conv", "--ns", "4,8", "--q", "0"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(args + ["--out", str(a)]) == 0
    assert run(args + ["--out", str(b)]) == 0
    for name in ("report.json", "tables.csv", "plot.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_header_and_cells(tmp_path):
    out = tmp_path / "out"
    assert run(["solve", "--n", "4", "--m", "4", "--out", str(out)]) == 0
    lines = (out / "tables.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:4] == ["h", "k", "q", "r"]
    assert header[-1] == "flags"
    assert header[4:-1] == sorted(header[4:-1])
    rep = json.loads((out / "report.json").read_text())
    assert len(lines) == 1 + len(rep["rows"])
    # 17 significant digits survive the round trip
    h = float(lines[1].split(",")[0])
    assert h == rep["rows"][0]["h"]
    # fixed-mesh study: no ladder, hence no plot
    assert not (out / "plot.svg").exists()


def _axes_lines_and_texts(path):
    """Collect line2d groups directly under the axes plus all text."""
    root = ET.parse(path).getroot()
    lines, texts = [], []

    def walk(el, zone):
        gid = el.get("id", "")
        if el.tag.endswith("}g"):
            if gid.startswith("axes_"):
                zone = "axes"
            elif gid.startswith(("xtick", "ytick", "matplotlib.axis", "legend")):
                zone = "decoration"
            elif gid.startswith("line2d") and zone == "axes":
                lines.append(gid)
        if el.tag.endswith("}text") and el.text:
            texts.append(el.text)
        for child in el:
            walk(child, zone)

    walk(root, None)
    return lines, texts


def test_svg_one_polyline_per_series(tmp_path):
    out = tmp_path / "out"
    assert run(["conv", "--ns", "4,8", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    series = cli._ladder_series(rep["rows"])
    assert series
    lines, texts = _axes_lines_and_texts(out / "plot.svg")
    # one measured polyline plus one dashed reference per series
    assert len(lines) == 2 * len(series)
    for key in series:
        assert key in texts


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "heatwave.cli",
            "lemma42",
            "--count",
            "1000",
            "--out",
            str(tmp_path / "out"),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "lemma42" in proc.stdout
