import csv
import dataclasses
import json
import subprocess
import sys
from pathlib import Path

import pytest

import magnonmem.tomography
from magnonmem import experiments
from magnonmem.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_OK, EXIT_STATS, format_cell, main
from magnonmem.memory import herald_probability
from magnonmem.plan import ConfigError, ExperimentPlan, default_plan, load_plan
from magnonmem.polarization import Basis, Fiducial

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="plan.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# plans and configs

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    plan = load_plan(path)
    plan.validate()


def test_published_defaults_config():
    plan = load_plan(CONFIGS / "published_defaults.toml")
    assert plan.timing.tau_L == 2e-6
    assert plan.timing.t_w == plan.timing.tau_L / 2
    assert plan.timing.t_r == plan.timing.t_w + plan.timing.tau_L / 4
    assert herald_probability(plan.noise) == 1e-6
    assert plan.noise.epsilon_retrieval == 0.5


def test_thetas_and_states_parse(tmp_path):
    plan = load_plan(_write(tmp_path, '[plan]\nmode = "theta-sweep"\nseed = 1\nthetas = [0.0, 0.5, 1.0, 1.5, 2.0]\nphi = 0.25\n'))
    assert len(plan.states) == 5 and plan.states[1].phi == 0.25
    plan = load_plan(_write(tmp_path, '[plan]\nmode = "fiducials"\nseed = 1\nstates = ["H", {theta = 0.3, phi = 1.0}]\n'))
    assert plan.labels[0] == "H" and plan.states[1].theta == 0.3
    plan = load_plan(_write(tmp_path, '[plan]\nmode = "rate-projection"\n'))
    assert plan.mode == "rate"


def test_default_states():
    assert len(default_plan("fiducials").states) == 6
    assert len(default_plan("theta-sweep").states) == 10
    assert default_plan("g2").settings == (Basis.BALANCED,)


@pytest.mark.parametrize(
    "text,line",
    [
        ('[plan]\nmode = "fiducials"\nseed = 1\n\n[noise]\nq = 0.1\nbogus = 3\n', 7),
        ('[plan]\nmode = "fiducials"\nseed = 1\n\n[noise]\nalpha_perp = 0.01\nq = 2.0\n', 7),
        ('[plan]\nmode = "fiducials"\nseed = 1\nstates = ["H", "Q"]\n', 4),
        ('[plan]\nmode = "fiducials"\nseed = 1\nherald = "maybe"\n', 4),
        ('\n[plan]\nmode = "scatter"\n', 3),
        ('[plan]\nmode = "fiducials"\n[timing]\nread_duration = 1e-6\n', 4),
    ],
)
def test_config_errors_carry_line_numbers(tmp_path, text, line):
    path = _write(tmp_path, text)
    with pytest.raises(ConfigError, match=f"{path.name}:{line}:"):
        load_plan(path)


def test_seed_required_for_simulation():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentPlan(mode="fiducials", states=(Fiducial.H.state,)).validate()
    with pytest.raises(ConfigError):
        ExperimentPlan(mode="fiducials", seed=1, trials=0, states=(Fiducial.H.state,)).validate()
    ExperimentPlan(mode="rate").validate()


# command line

def test_exit_code_config_error(tmp_path, capsys):
    assert main(["fiducials", "--config", str(_write(tmp_path, "[plan\n"))]) == EXIT_CONFIG
    assert main(["g2"]) == EXIT_CONFIG  # no seed
    assert "seed" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_exit_code_insufficient_statistics(tmp_path):
    # sampled heralding at p = 1e-6: no heralds in a thousand trials
    cfg = _write(tmp_path, '[plan]\nmode = "fiducials"\nseed = 1\ntrials = 1000\nherald = "sampled"\nstates = ["H"]\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_STATS


def test_exit_code_non_convergence(tmp_path, monkeypatch):
    original = magnonmem.tomography.mle_reconstruct

    def stalled(counts, **kw):
        return dataclasses.replace(original(counts, **kw), converged=False)

    monkeypatch.setattr(magnonmem.tomography, "mle_reconstruct", stalled)
    cfg = _write(tmp_path, '[plan]\nmode = "fiducials"\nseed = 1\ntrials = 3000\nstates = ["H"]\n[noise]\nmu_bg = 0.5\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONVERGENCE


def test_rate_upgrade(tmp_path, capsys):
    out = tmp_path / "rate"
    assert main(["rate", "--config", str(CONFIGS / "upgrade_rate.toml"), "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(open(out / "rate.csv")))
    assert rows == [["probability", "rate_per_s", "trials_per_second"], ["0.01", "200", "20000"]]
    payload = json.loads((out / "rate.json").read_text())
    assert payload["probability"] == 0.01 and payload["rate_per_s"] == 200.0


def test_format_flag(tmp_path):
    out = tmp_path / "only_json"
    assert main(["rate", "--config", str(CONFIGS / "upgrade_rate.toml"), "--out", str(out), "--format", "json"]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["rate.json"]


def test_subcommand_overrides_config_mode(tmp_path):
    out = tmp_path / "g2"
    args = ["g2", "--config", str(CONFIGS / "calibrated.toml"), "--out", str(out)]
    assert main(args) == EXIT_OK
    assert json.loads((out / "g2.json").read_text())["mode"] == "g2"


def _small_fiducials(tmp_path):
    return _write(
        tmp_path,
        '[plan]\nmode = "fiducials"\nseed = 99\ntrials = 6000\nbackground_factor = 2\n'
        '[noise]\nT2 = 1e-4\nmu_bg = 0.0744622\n[output]\nrecords = true\n',
        "small.toml",
    )


def test_byte_identical_reruns(tmp_path):
    cfg = _small_fiducials(tmp_path)
    runs = []
    for name, extra in (("a", []), ("b", []), ("c", ["--workers", "3"])):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg), "--out", str(out)] + extra) == EXIT_OK
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert len(runs[0]) == 2 + 12
    assert runs[0] == runs[1] == runs[2]


def test_csv_matches_api(tmp_path):
    cfg = _small_fiducials(tmp_path)
    out = tmp_path / "api"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    plan = load_plan(cfg)
    result = experiments.run(plan)
    with open(out / "fiducials.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == result.columns
    for row, values in zip(rows[1:], result.rows()):
        assert row == [format_cell(v) for v in values]
    payload = json.loads((out / "fiducials.json").read_text())
    assert payload["states"][0]["report"]["fidelity"] == result.states[0].report.fidelity


def test_format_cell():
    assert format_cell(0.123456789) == "0.123457"
    assert format_cell(200.0) == "200"
    assert format_cell(True) == "true"
    assert format_cell(7) == "7"
    assert format_cell("H") == "H"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "magnonmem", "rate", "--config", str(CONFIGS / "upgrade_rate.toml"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "rate.csv").exists()
