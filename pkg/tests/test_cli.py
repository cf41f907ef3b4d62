import json

import pytest

from shootlab.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from shootlab.config import ConfigError, load_config, parse_config


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_json(tmp_path, command, cfg_text="", extra=()):
    cfg = write(tmp_path, cfg_text)
    out = tmp_path / f"{command}.json"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_defaults_parse():
    cfg = load_config(None)
    assert cfg.problem == "linear_integrator"
    assert cfg.solver.step_policy == "compensated"
    assert cfg.sweep_accuracy.h_list == [0.1, 0.01, 0.001]


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"solver": {"step_size": 3}})


@pytest.mark.parametrize(
    "text",
    [
        'problem = "rocket"\n',
        "n_intervals = 0\n",
        '[solver]\nmethod = "adam"\n',
        "[controls]\ninitial = []\n",
        'format = "xml"\n',
        "n_intervals = [\n",
    ],
)
def test_bad_configs_exit_3(tmp_path, text):
    cfg = write(tmp_path, text)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o.json")]) == EXIT_CONFIG


def test_missing_config_file_exit_3(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_bad_argument_exit_3():
    with pytest.raises(SystemExit) as info:
        main(["solve", "--format", "yaml"])
    assert info.value.code == EXIT_CONFIG


@pytest.mark.parametrize("seed", ["-1", str(2**64)])
def test_seed_out_of_range(tmp_path, seed):
    assert main(["verify", "--seed", seed, "--out", str(tmp_path / "o.json")]) == EXIT_CONFIG


def test_solve_report_schema(tmp_path):
    code, rep = run_json(tmp_path, "solve", 'problem = "damped_linear"\nn_intervals = 20\n')
    assert code == EXIT_OK
    assert set(rep) >= {"experiment", "status", "config", "verdicts", "passed", "messages", "tables",
                        "wall_clock_seconds"}
    assert rep["experiment"] == "solve" and rep["status"] == "ok"
    assert rep["verdicts"]["converged"] and rep["verdicts"]["bound_satisfied"]
    ctl = rep["tables"]["controls"]
    assert ctl["columns"] == ["k", "t_k", "u_k", "x_k", "lambda_k", "dH_du_k"]
    assert len(ctl["rows"]) == 20


def test_divergence_exit_2_writes_partial(tmp_path):
    text = '[solver]\nstep_policy = "fixed"\nalpha = 500.0\nmax_iterations = 100\n'
    code, rep = run_json(tmp_path, "solve", text)
    assert code == EXIT_DIVERGED
    assert rep is not None and rep["status"] == "diverged"


def test_verdict_failure_still_exits_0(tmp_path):
    code, rep = run_json(tmp_path, "hamiltonianize", "[hamiltonianize]\nstep = 0.2\n")
    assert code == EXIT_OK
    assert rep["verdicts"]["drift_within_tolerance"] is False
    assert rep["passed"] is False


def test_determinism_modulo_clock(tmp_path):
    from shootlab.experiments import COMMANDS

    cfg = parse_config({"seed": 42, "n_intervals": 8})
    a = COMMANDS["verify"](cfg).to_json(include_clock=False)
    b = COMMANDS["verify"](cfg).to_json(include_clock=False)
    assert a == b
    c = COMMANDS["verify"](parse_config({"seed": 43, "n_intervals": 8})).to_json(include_clock=False)
    assert c != a


def test_seed_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, "seed = 1\n")
    outs = []
    for seed in ("5", "5"):
        out = tmp_path / f"o{len(outs)}.json"
        assert main(["verify", "--config", str(cfg), "--seed", seed, "--out", str(out)]) == EXIT_OK
        rep = json.loads(out.read_text())
        rep.pop("wall_clock_seconds")
        rep["config"].pop("output")
        outs.append(rep)
    assert outs[0] == outs[1]
    assert outs[0]["config"]["seed"] == 5


def test_csv_output(tmp_path):
    out = tmp_path / "acc.csv"
    assert main(["sweep-accuracy", "--format", "csv", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "# experiment: sweep-accuracy"
    assert "# table: fixed_eps" in lines
    i = lines.index("# table: fixed_eps")
    header = lines[i + 1].split(",")
    assert header[:3] == ["h", "n_intervals", "eps"]
    row = dict(zip(header, lines[i + 2].split(",")))
    assert float(row["eps_over_h"]) == pytest.approx(1e-5, rel=1e-12)
    assert any(l.startswith("# verdict: bound_scales_as_inverse_h = pass") for l in lines)


def test_stdout_when_no_out(capsys):
    assert main(["gradcheck", "--seed", "3"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdicts"] == {"derivatives": True, "oracle_agreement": True}


@pytest.mark.parametrize(
    "command, text",
    [
        ("verify", ""),
        ("sweep-rate", ""),
        ("adaptive-noise", 'problem = "damped_linear"\nn_intervals = 16\n'),
        ("hamiltonianize", ""),
        ("refine", 'problem = "damped_linear"\n[solver]\nstep_policy = "backtracking"\n'),
        ("basin", 'problem = "cubic_drag"\nn_intervals = 20\n[solver]\nstep_policy = "fixed"\ntolerance = 1e-6\n'
                  "[basin]\ncount = 5\nmax_iterations = 5000\n"),
    ],
)
def test_commands_pass_their_verdicts(tmp_path, command, text):
    code, rep = run_json(tmp_path, command, text)
    assert code == EXIT_OK
    assert rep["passed"], rep["verdicts"]


def test_refine_fixed_eps_reports_violation(tmp_path):
    text = 'problem = "damped_linear"\n[solver]\nstep_policy = "backtracking"\n[refine]\nfixed_eps = 1e-5\n'
    code, rep = run_json(tmp_path, "refine", text)
    assert code == EXIT_OK
    assert rep["verdicts"]["final_ratio_within_target"] is False
    assert rep["messages"]
