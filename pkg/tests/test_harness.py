import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urlbmdp.errors import ConfigError, ContractViolation
from urlbmdp.harness import cli
from urlbmdp.harness.config import ExperimentConfig, expand_grid, load_config, parse_assignments
from urlbmdp.harness.output import (
    bands, emit_plot_data, format_bands, format_csv, parse_csv, read_csv, render_svg,
)
from urlbmdp.harness.runner import (
    LearningCurveRecord, ObservationTable, replicate_streams, run_experiment, run_replicate,
)

SMALL = dict(budget=300, eval_every=100, eval_episodes=20, replicates=2)


# -- configuration ---------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nH = 10\nalgorithm=oracleq-lat  # inline\npca_dims = none\nbudget = 1e4\n")
    cfg = load_config(path, ["H=5", "record_time = true"])
    assert (cfg.H, cfg.algorithm, cfg.pca_dims, cfg.budget, cfg.record_time) == (
        5, "oracleq-lat", None, 10_000, True)


def test_config_dump_round_trips():
    cfg = ExperimentConfig(algorithm="qlearning-obs", lr=0.3, J=7, novelty_factor=None)
    assert ExperimentConfig(**parse_assignments(cfg.dumps().splitlines())) == cfg


@pytest.mark.parametrize("lines", [
    ["nosuchkey = 1"], ["H = five"], ["pooled = maybe"], ["just words"],
    ["algorithm = dqn"], ["env = gaussian", "algorithm = qlearning-obs"],
    ["replicates = 0"], ["budget = 0"], ["pooled = true", "mode = theoretical"],
    ["B = 0"], ["ulo = spectral"], ["alpha = 2"], ["novelty_factor = 0.5"],
])
def test_invalid_configs(lines):
    with pytest.raises(ConfigError):
        load_config(None, lines)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_expand_grid_is_cartesian_in_file_order():
    grid = expand_grid("H = 5, 10\n# skip\nalgorithm = url, oracleq-lat, qlearning-lat\n")
    assert len(grid) == 6
    assert grid[0] == {"H": 5, "algorithm": "url"} and grid[-1] == {"H": 10, "algorithm": "qlearning-lat"}
    assert expand_grid("") == [{}]


# -- records ---------------------------------------------------------------------


def test_two_replicates_three_marks_give_six_rows():
    records = list(run_experiment(ExperimentConfig(algorithm="oracleq-lat", **SMALL)))
    assert len(records) == 6
    assert [r.replicate for r in records] == [0, 0, 0, 1, 1, 1]
    assert [r.trajectories for r in records[:3]] == [100, 200, 300]
    assert format_csv(records).count("\n") == 7


def test_url_records_match_environment_counter(monkeypatch):
    from urlbmdp.harness import runner

    envs = []
    original = runner.LockEnv

    def tracking(*args, **kwargs):
        envs.append(original(*args, **kwargs))
        return envs[-1]

    monkeypatch.setattr(runner, "LockEnv", tracking)
    cfg = ExperimentConfig(algorithm="url", budget=400, eval_every=150, eval_episodes=10, replicates=1)
    records = run_replicate(cfg, 0)
    assert records[-1].trajectories == envs[0].episodes >= 400
    marks = [r.trajectories for r in records]
    assert marks == sorted(marks) and len(set(m // 150 for m in marks[:-1])) == len(marks) - 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 10**9),
                          st.floats(allow_nan=False, allow_infinity=False),
                          st.floats(0, 1e6, allow_nan=False)), max_size=20))
def test_csv_round_trip(rows):
    records = [LearningCurveRecord(*row) for row in rows]
    assert parse_csv(format_csv(records)) == records


def test_csv_rejects_wrong_header():
    with pytest.raises(ContractViolation):
        parse_csv("a,b,c\n1,2,3\n")


# -- bands -----------------------------------------------------------------------


def records_from(values):
    return [LearningCurveRecord(i, 100 * (p + 1), v) for i, curve in enumerate(values)
            for p, v in enumerate(curve)]


def test_identical_replicates_give_zero_width_bands():
    out = bands(records_from([[0.1, 0.4, 0.5]] * 4))
    assert all(b.std == 0.0 and b.lower == b.upper == b.mean for b in out)
    assert [b.n for b in out] == [4, 4, 4]


def two_pass_std(xs):
    mean = math.fsum(xs) / len(xs)
    return math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / len(xs))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=1, max_size=12))
def test_band_statistics_match_two_pass_oracle(curves):
    out = bands(records_from(curves))
    for p, b in enumerate(out):
        column = [c[p] for c in curves]
        assert abs(b.mean - math.fsum(column) / len(column)) < 1e-12
        assert abs(b.std - two_pass_std(column)) < 1e-12


def test_bands_align_ragged_curves_by_position():
    out = bands([LearningCurveRecord(0, 100, 0.0), LearningCurveRecord(0, 205, 1.0),
                 LearningCurveRecord(1, 110, 1.0)])
    assert [(b.n, b.trajectories) for b in out] == [(2, 105.0), (1, 205.0)]
    assert "point\ttrajectories" in format_bands(out)
    with pytest.raises(ContractViolation):
        bands([])


def test_svg_is_deterministic(tmp_path):
    series = {"a": bands(records_from([[0.1, 0.3], [0.2, 0.5]]))}
    first = render_svg(series, "t")
    assert first == render_svg(series, "t")
    assert first.lstrip().startswith("<?xml") and "<svg" in first
    paths = emit_plot_data({"a": records_from([[0.1, 0.3]])}, tmp_path, "fig")
    assert [p.name for p in paths] == ["a_bands.tsv", "fig.svg"]


# -- determinism ------------------------------------------------------------------------


def test_replicate_streams_are_independent_of_order():
    a = replicate_streams(7, 3)
    b = replicate_streams(7, 3)
    assert a["labels"] == b["labels"]
    assert a["train"].random() == b["train"].random()
    assert replicate_streams(7, 4)["labels"] != a["labels"]


@pytest.mark.parametrize("algorithm", ["url", "oracleq-obs", "qlearning-lat"])
def test_runs_are_byte_identical_across_worker_counts(algorithm):
    cfg = ExperimentConfig(algorithm=algorithm, **SMALL)
    serial = format_csv(run_experiment(cfg))
    assert serial == format_csv(run_experiment(cfg))
    assert serial == format_csv(run_experiment(cfg.replace(workers=2)))
    assert serial != format_csv(run_experiment(cfg.replace(seed=1)))


# -- observation tables ---------------------------------------------------------------


def test_observation_table_reserves_zero_for_unseen():
    table = ObservationTable(1)
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(table.register(X), [1, 2, 1])
    np.testing.assert_array_equal(table.predict(np.array([[0.0, 1.0], [5.0, 5.0]])), [2, 0])
    assert table.n_states == 3


# -- CLI ----------------------------------------------------------------------------------


def test_cli_run_and_plot(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    args = ["run", "--set", "algorithm=oracleq-lat", "--set", "budget=200", "--set", "eval_every=100",
            "--set", "eval_episodes=10", "--set", "replicates=2", "--name", "demo"]
    assert cli.main(args) == 0
    records = read_csv(tmp_path / "demo.csv")
    assert len(records) == 4
    assert load_config(tmp_path / "demo.cfg").algorithm == "oracleq-lat"
    assert cli.main(["plot", str(tmp_path / "demo.csv"), "--name", "fig"]) == 0
    assert (tmp_path / "fig.svg").exists() and (tmp_path / "demo_bands.tsv").exists()


def test_cli_sweep(tmp_path):
    grid = tmp_path / "g.grid"
    grid.write_text("algorithm = oracleq-lat\nc = 0.01, 0.1\n")
    code = cli.main(["sweep", str(grid), "--out", str(tmp_path), "--prefix", "t",
                     "--set", "budget=50", "--set", "replicates=1", "--set", "eval_episodes=5"])
    assert code == 0
    assert sorted(p.name for p in tmp_path.glob("t_*.csv")) == [
        "t_algorithm-oracleq-lat_c-0.01.csv", "t_algorithm-oracleq-lat_c-0.1.csv"]


def test_cli_sweep_validates_every_combination_first(tmp_path):
    grid = tmp_path / "g.grid"
    grid.write_text("algorithm = oracleq-lat, dqn\n")
    assert cli.main(["sweep", str(grid), "--out", str(tmp_path)]) == 2
    assert not list(tmp_path.glob("*.csv"))


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--set", "algorithm=dqn"]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert cli.main(["plot", str(tmp_path / "missing.csv")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    args = ["run", "--set", "algorithm=oracleq-lat", "--set", "budget=20", "--set", "replicates=1",
            "--set", "eval_episodes=2", "--out", str(blocker / "sub")]
    assert cli.main(args) == 3
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_selfcheck(capsys):
    assert cli.main(["selfcheck"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 4 and all(line.startswith("PASS") for line in out)
