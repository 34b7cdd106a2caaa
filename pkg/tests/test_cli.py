import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from driftline.cli import main
from driftline.config import load_config
from driftline.pipeline import stream_records

CONFIG = {
    "seed": 2,
    "stream": {"generator": {"events": 8000, "dims": 3, "feedback_delay": [20, 200]}},
    "injections": [{"kind": "covariate_mean_shift", "start": 5000, "magnitude": 2.0, "dims": [0]}],
}


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.yaml").write_text(yaml.safe_dump(CONFIG))
    return d


@pytest.fixture(scope="module")
def ran(done):
    import io
    from contextlib import redirect_stdout
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(["run", "--config", str(done / "cfg.yaml"), "--out", str(done / "run")])
    return code, buf.getvalue()


def test_run_prints_summary(ran, done):
    code, out = ran
    assert code == 0
    assert out.startswith("seed 2: 8000 events, 8000 feedback, 0 malformed")
    assert "covariate_mean_shift at 5000" in out
    assert (done / "run" / "run_report.json").exists()
    assert (done / "run" / "config.yaml").exists()


def test_report_text_matches_run(ran, done, capsys):
    assert main(["report", "--run", str(done / "run")]) == 0
    assert capsys.readouterr().out == ran[1]


def test_report_jsonl(ran, done, capsys):
    assert main(["report", "--run", str(done / "run"), "--format", "jsonl"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    kinds = [r["record"] for r in rows]
    assert kinds[0] == "summary" and rows[0]["events"] == 8000
    assert kinds.count("injection") == 1 and "model" in kinds and "phase" in kinds
    saved = json.loads((done / "run" / "run_report.json").read_text())
    assert [r for r in rows if r["record"] == "model"][0]["version"] == saved["models"][0]["version"]


def test_seed_override(done, tmp_path, capsys):
    cfg = {**CONFIG, "stream": {"generator": {"events": 1500, "dims": 2}}, "injections": []}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["run", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "r"), "--seed", "9"]) == 0
    assert capsys.readouterr().out.startswith("seed 9:")
    assert load_config(yaml.safe_load((tmp_path / "r" / "config.yaml").read_text())).seed == 9


def test_inject_then_run_from_file(tmp_path, capsys):
    base = load_config({"seed": 4, "stream": {"generator": {"events": 3000, "dims": 2}}})
    src = tmp_path / "clean.jsonl"
    src.write_text("".join(json.dumps(r) + "\n" for r in stream_records(base)))
    (tmp_path / "spec.yaml").write_text(yaml.safe_dump(
        {"seed": 1, "injections": [{"kind": "covariate_mean_shift", "start": 1000, "magnitude": 3.0, "dims": [1]}]}))
    dst = tmp_path / "shifted.jsonl"
    assert main(["inject", "--in", str(src), "--out", str(dst), "--spec", str(tmp_path / "spec.yaml")]) == 0
    clean = [json.loads(x) for x in src.read_text().splitlines()]
    shifted = [json.loads(x) for x in dst.read_text().splitlines()]
    assert len(clean) == len(shifted)
    prim_c = [r for r in clean if "features" in r]
    prim_s = [r for r in shifted if "features" in r]
    assert prim_c[:1000] == prim_s[:1000]
    sd = float(np.std([r["features"][1] for r in prim_c]))  # shifts are in recorded standard deviations
    for c, s in zip(prim_c[1000:], prim_s[1000:]):
        assert s["features"][1] == pytest.approx(c["features"][1] + 3.0 * sd)
        assert s["features"][0] == c["features"][0]
    (tmp_path / "f.yaml").write_text(yaml.safe_dump({"seed": 4, "stream": {"file": "shifted.jsonl"}}))
    assert main(["run", "--config", str(tmp_path / "f.yaml"), "--out", str(tmp_path / "r")]) == 0
    assert "3000 events" in capsys.readouterr().out


@pytest.mark.parametrize("body, where", [
    ({"seed": 1, "stream": {"generator": {"events": -5}}}, "events"),
    ({"seed": 1, "bogus": 1}, "bogus"),
    ({"seed": 1, "injections": [{"kind": "nope", "start": 1}]}, "injections[0].kind"),
])
def test_config_errors_exit_2(tmp_path, capsys, body, where):
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump(body))
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("config error") and where in err


def test_missing_files_exit_3(tmp_path, capsys):
    assert main(["report", "--run", str(tmp_path / "nowhere")]) == 3
    assert "missing store directory" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path / "o")]) in (2, 3)
    (tmp_path / "spec.yaml").write_text("injections: []\n")
    assert main(["inject", "--in", str(tmp_path / "x.jsonl"), "--out", str(tmp_path / "y"),
                 "--spec", str(tmp_path / "spec.yaml")]) == 3


def test_inject_spec_errors(tmp_path, capsys):
    (tmp_path / "in.jsonl").write_text("")
    (tmp_path / "spec.yaml").write_text("injections: []\nextra: 1\n")
    assert main(["inject", "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "o"),
                 "--spec", str(tmp_path / "spec.yaml")]) == 2
    assert "extra" in capsys.readouterr().err


def test_console_script_and_log_level(tmp_path):
    cfg = {"seed": 1, "stream": {"generator": {"events": 3000, "dims": 2}}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    env = {**os.environ, "DRIFTLINE_LOG": "info"}
    proc = subprocess.run([sys.executable, "-m", "driftline.cli", "run", "--config", str(tmp_path / "c.yaml"),
                           "--out", str(tmp_path / "r")], capture_output=True, text=True, env=env, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "INFO driftline.policy: model v1 trained" in proc.stderr
    quiet = subprocess.run([sys.executable, "-m", "driftline.cli", "report", "--run", str(tmp_path / "r")],
                           capture_output=True, text=True, timeout=120)
    assert quiet.returncode == 0 and quiet.stderr == ""
    assert quiet.stdout == proc.stdout
