import csv
import hashlib
import json
import math
import subprocess
import sys

import pytest

from channelfx.cli import main, parse_resolution
from channelfx.errors import ValidationError

STRIP = {"type": "parametric2d", "c": {"kind": "polynomial", "coef": [0.0]}, "w": {"kind": "polynomial", "coef": [1.0]}, "u_range": [0.0, 1.0]}
WAVY = {"type": "parametric2d", "c": {"kind": "polynomial", "coef": [0.0]}, "w": {"kind": "sinusoid", "a0": 1.0, "amp": 0.3, "k": 2 * math.pi}, "u_range": [0.0, 1.0]}
WEDGE = {"type": "conjugate", "map": "log-wedge", "v_range": [-math.pi / 12, math.pi / 12], "u_range": [0.0, 1.0]}


def write_config(tmp_path, name="run.json", **cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def check_manifest(out):
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"]
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    return manifest


def test_coeff_strip(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=STRIP)
    assert main(["coeff", "--config", cfg, "--out", str(out), "--grid", "16x8"]) == 0
    rows = read_csv(out / "coeff.csv")
    assert list(rows[0]) == ["u", "sigma", "area", "G", "flux_grad_u", "D_inf", "D_fj"]
    assert len(rows) == 17
    assert all(abs(float(r["D_inf"]) - 1.0) < 1e-14 for r in rows)
    m = check_manifest(out)
    assert m["command"] == "coeff"
    assert cfg in m["inputs"]
    assert set(m["versions"]) >= {"channelfx", "numpy", "scipy", "numba", "python", "backend"}


def test_csv_values_use_17_significant_digits(tmp_path):
    out = tmp_path / "out"
    assert main(["conjugate", "--map", "log-wedge", "--v-range=-0.3,0.3", "--u-range", "0,1", "--grid", "8x8", "--out", str(out)]) == 0
    rows = read_csv(out / "conjugate.csv")
    assert list(rows[0]) == ["u", "sigma", "area", "D"]
    x = rows[3]["sigma"]
    assert float(x) == pytest.approx(0.6 * math.exp(2 * 0.375), rel=1e-15)
    assert len(x.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 17
    check_manifest(out)


def test_harmonic_outputs(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=WEDGE)
    assert main(["harmonic", "--config", cfg, "--out", str(out), "--grid", "32x16"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["J_mean"] == pytest.approx(math.pi / 6, rel=1e-9)
    assert report["D_fin_defined"] is True
    rows = read_csv(out / "profiles.csv")
    assert list(rows[0]) == ["u", "J", "rho", "D_fin"]
    assert (out / "h.csv").exists()
    check_manifest(out)


def test_simulate_effective_conserves_mass(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=WAVY, sim={"mode": "effective", "dt": 1e-3, "T": 0.05})
    assert main(["simulate", "--config", cfg, "--out", str(out), "--grid", "32x8"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stamps"] == 51
    assert summary["mass_drift"] < 1e-12
    check_manifest(out)


def test_simulate_full(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=WAVY, sim={"mode": "full", "dt": 1e-3, "T": 0.01})
    assert main(["simulate", "--config", cfg, "--out", str(out), "--grid", "16x8"]) == 0
    assert json.loads((out / "summary.json").read_text())["mass_drift"] < 1e-12


def test_simulate_mfpt(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=STRIP)
    args = ["simulate", "--config", cfg, "--out", str(out), "--mode", "mfpt", "--N", "500", "--dt", "1e-3", "--seed", "4", "--grid", "16x8"]
    assert main(args) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["mfpt"]["n"] == 500
    assert s["effective_D_fj"] == pytest.approx(0.5, rel=1e-10)
    assert s["effective_D_fin"] == pytest.approx(0.5, rel=1e-6)


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, spec=WAVY, sim={"mode": "particles", "N": 200, "dt": 1e-3})
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", cfg, "--out", str(out), "--seed", "9"]) == 0
        digests.append(check_manifest(out)["outputs"])
    assert digests[0] == digests[1]


def test_sweep_wedge_reports_exact(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, spec=WEDGE, levels=["16x8", "32x16", "64x32"])
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert [r["level"] for r in rows] == ["16x8", "32x16", "64x32"]
    assert rows[1]["h_order"] == "exact"
    assert rows[2]["D_inf_gap_order"] == "exact"
    assert sorted(p.name for p in (out / "levels").iterdir()) == ["level_0.json", "level_1.json", "level_2.json"]


def test_sweep_observes_second_order(tmp_path, monkeypatch):
    monkeypatch.setenv("CHANNELFX_THREADS", "2")
    out = tmp_path / "out"
    spec = {"type": "reparametrized", "base": WEDGE, "f": {"kind": "polynomial", "coef": [0, 1, 0.5]}}
    cfg = write_config(tmp_path, spec=spec, levels=["32x16", "64x32", "128x64"])
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert float(rows[2]["h_order"]) > 1.9
    assert float(rows[2]["J_std_order"]) > 1.9
    assert float(rows[2]["D_inf_gap_order"]) > 1.8


@pytest.mark.parametrize(
    "argv, code",
    [
        (["sweep", "--levels", "32x16"], 2),
        (["harmonic", "--grid", "30x16"], 2),
        (["harmonic", "--grid", "32x16", "--max-iter", "2"], 3),
        (["coeff", "--D0", "-1"], 2),
    ],
)
def test_exit_codes(tmp_path, argv, code, capsys):
    cfg = write_config(tmp_path, spec=WAVY)
    assert main(argv + ["--config", cfg, "--out", str(tmp_path / "out")]) == code
    assert capsys.readouterr().err.startswith("error:")


def test_validation_message_carries_path(tmp_path, capsys):
    bad = dict(WAVY, w={"kind": "sinusoid", "a0": 0.1, "amp": 0.3, "k": 6.0})
    cfg = write_config(tmp_path, spec=bad)
    assert main(["coeff", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "/spec/w" in capsys.readouterr().err


def test_missing_spec_and_bad_json(tmp_path):
    assert main(["coeff", "--out", str(tmp_path / "o")]) == 2
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["coeff", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_io_errors(tmp_path):
    assert main(["coeff", "--config", str(tmp_path / "missing.json")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path, spec=STRIP)
    assert main(["coeff", "--config", cfg, "--out", str(blocker / "sub")]) == 4


def test_parse_resolution():
    assert parse_resolution("64x32", "/grid") == (64, 32)
    for bad in ("64", "4x8", "2048x8", "64x33", "axb"):
        with pytest.raises(ValidationError):
            parse_resolution(bad, "/grid")


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, spec=STRIP)
    proc = subprocess.run(
        [sys.executable, "-m", "channelfx", "coeff", "--config", cfg, "--out", str(tmp_path / "o"), "--grid", "8x8"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "manifest.json").exists()
