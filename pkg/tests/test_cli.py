import functools
import json

import pytest

from datareuse import capacity, cli, dist_core, error_calculus, portfolio, power, simulation, subsampling
from datareuse.report import parse_obj, parse_text

ALPHA = 0.05


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def portfolio_file(tmp_path):
    plan = {"kind": "t", "alpha": 0.05, "n1": 100, "n2": 50, "prior": [[0.5, 1.0]]}
    path = tmp_path / "p.json"
    path.write_text(
        json.dumps(
            {
                "plans": [plan, plan],
                "dataset_size": 100,
                "joint_points": [[[0.05, 1.0], [0.05, 1.0]], [[0.05, 0.5], [0.05, 0.5]]],
            }
        )
    )
    return str(path)


@pytest.fixture
def qaly_file(tmp_path):
    plan = {"kind": "z", "n1": 40, "n2": 40, "prior": [[-0.2, 0.5], [0.4, 0.5]]}
    path = tmp_path / "q.json"
    path.write_text(
        json.dumps({"plans": [plan], "utility": {"kind": "qaly"}, "grid": [[[0.01, 1.0], [0.05, 1.0], [0.2, 0.5]]]})
    )
    return str(path)


COMMAND_LINES = [
    ["error-dist", "--p2g1", "0,0.5,1"],
    ["stoploss"],
    ["capacity", "--n", "10000", "--k", "2000", "--ell", "400,550,300", "--lambda", "0,0.5", "--overlap-pmf", "false"],
    ["capacity", "--n", "12", "--k", "4", "--ell", "2", "--method", "exact_tail", "--overlap-pmf", "true"],
    ["power", "--kind", "t", "--delta", "0.5", "--n1", "100,50", "--n2", "50,50", "--target-power", "0.8"],
    ["power", "--kind", "z", "--delta", "0.5", "--n1", "1000", "--n2", "500"],
    ["subsample", "--n", "50", "--k", "10,10,5", "--seed", "3", "--audit-c", "4", "--audit-ell", "5", "--trials", "50"],
    ["subsample", "--n", "50", "--k", "20,20", "--strategy", "disjoint_partition"],
    ["simulate", "--design", "shared-control", "--m", "3", "--n-arm", "20", "--n-control", "20", "--reps", "200"],
    ["simulate", "--design", "survival", "--reps", "200", "--mode", "gatekeep_split"],
    ["reuse", "--rates", "0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1"],
]


def test_capacity_row(capsys):
    code, out, _ = run(capsys, "capacity", "--n", "10000", "--k", "2000", "--ell", "550", "--p-tol", "0.05")
    assert code == 0
    assert "0.275,550,24311" in out.splitlines()


def test_parse_capacity_config():
    cfg = cli.parse_and_validate(["capacity", "--n", "10000", "--k", "2000", "--ell", "550", "--p-tol", "0.05"])
    assert cfg.command == "capacity"
    assert cfg.params["n"] == 10000 and cfg.params["ell"] == [550] and cfg.params["p_tol"] == 0.05


def test_missing_required_names_it(capsys):
    code, _, err = run(capsys, "capacity", "--k", "2000")
    assert code == 2
    assert "'n'" in err


def test_every_violation_listed(capsys):
    code, _, err = run(capsys, "capacity", "--n", "ten", "--method", "magic")
    assert code == 2
    assert len([ln for ln in err.splitlines() if ln.startswith("error:")]) == 3


def test_unknown_command_and_flag(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "capacity", "--n", "5", "--k", "2", "--bogus", "1")[0] == 2


def test_config_precedence_and_unknown_keys(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[simulate]\nreps = 1000\ndesign = shared-control\nm = 2\n")
    cfg = cli.parse_and_validate(["simulate", "--config", str(ini), "--reps", "5000"])
    assert cfg.params["reps"] == 5000 and cfg.params["m"] == 2
    cfg = cli.parse_and_validate(["simulate", "--config", str(ini)])
    assert cfg.params["reps"] == 1000
    ini.write_text("[simulate]\nreps = 1000\ncolour = blue\n")
    with pytest.raises(cli.ValidationError) as exc:
        cli.parse_and_validate(["simulate", "--config", str(ini)])
    assert any("colour" in p for p in exc.value.problems)
    assert any("design" in p for p in exc.value.problems)


def test_zero_replications_is_runtime_error(capsys):
    code, _, err = run(capsys, "simulate", "--design", "shared-control", "--reps", "0")
    assert code == 1
    assert "replications must be ≥ 1" in err


def test_stoploss_curves(capsys):
    code, out, _ = run(capsys, "stoploss", "--alpha", "0.05", "--p2g1", "0,0.25,0.5,0.75,1")
    assert code == 0
    t = parse_text(out).get("stoploss")
    assert len(t.rows) == 5
    for c, rho1 in zip(t.column("p2g1"), t.column("L1")):
        assert rho1 == pytest.approx(ALPHA * c, abs=1e-12)
    assert all(r == pytest.approx(2 * ALPHA, abs=1e-12) for r in t.column("L0"))


def test_error_dist_matches_closed_forms(capsys):
    _, out, _ = run(capsys, "error-dist", "--p2g1", "0.05,1")
    t = parse_text(out).get("error_dist")
    indep, same = t.rows
    assert indep[1:4] == pytest.approx([(1 - ALPHA) ** 2, 2 * ALPHA - 2 * ALPHA**2, ALPHA**2], abs=1e-12)
    assert same[1:4] == pytest.approx([1 - ALPHA, 0, ALPHA], abs=1e-12)
    assert same[t.columns.index("fwer")] == pytest.approx(ALPHA, abs=1e-12)


def test_optimize_menu(capsys, portfolio_file):
    code, out, _ = run(capsys, "optimize", "--portfolio", portfolio_file)
    assert code == 0
    rep = parse_text(out)
    assert rep.get("best").rows[0][0] == 0
    assert rep.get("best").column("utility")[0] == pytest.approx(-0.364, abs=0.01)
    assert rep.get("surface").column("utility")[1] == pytest.approx(-0.606, abs=0.01)


def test_bad_portfolio_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"plans": [{"n1": 5, "speed": 3}]}))
    code, _, err = run(capsys, "optimize", "--portfolio", str(p))
    assert code == 2
    assert "speed" in err and "grid" in err


@pytest.mark.parametrize("argv", COMMAND_LINES, ids=lambda a: "-".join(a[:2]))
def test_output_is_reproducible_and_parseable(argv, capsys):
    code, first, _ = run(capsys, *argv)
    assert code == 0
    _, second, _ = run(capsys, *argv)
    assert first == second
    rep = parse_text(first)
    again = parse_text(rep.to_text())
    assert again.meta == rep.meta
    assert [(t.name, t.columns, t.rows) for t in again.tables] == [(t.name, t.columns, t.rows) for t in rep.tables]
    _, obj, _ = run(capsys, *argv, "--format", "obj")
    parsed = parse_obj(obj)
    assert [t.name for t in parsed.tables] == [t.name for t in rep.tables]
    assert parsed.to_obj() == obj


def test_out_flag_writes_file(tmp_path, capsys):
    target = tmp_path / "r.csv"
    code, out, _ = run(capsys, "reuse", "--rates", "0.25,0.25", "--out", str(target))
    assert code == 0 and out == ""
    assert parse_text(target.read_text()).get("summary").column("lecam_bound") == [4.0]


OPERATIONS = {
    dist_core: ["log_binomial", "hypergeom_pmf", "hypergeom_tail", "normal_cdf", "poisson_pmf", "bernoulli_sum_pmf"],
    error_calculus: [
        "two_event_distribution",
        "stop_loss_premium",
        "stop_loss_curve",
        "stop_loss_compare",
        "pcer",
        "fwer",
        "fdr_global_null",
        "expected_utility",
        "shared_control_correlation",
    ],
    power: ["type2_error", "power", "required_sample_size", "portfolio_expected_type2"],
    capacity: [
        "pairwise_overlap_tail",
        "max_studies",
        "capacity_table",
        "guaranteed_overlap_two",
        "min_k_for_overlap_fraction",
        "pigeonhole_capacity",
        "unit_reuse",
    ],
    subsampling: ["subsample", "allocate", "overlap_matrix", "empirical_max_overlap"],
    simulation: ["run_shared_control", "run_survival_reuse", "logrank_statistic", "weibull_sample"],
    portfolio: ["qaly_utility", "expected_portfolio_utility", "grid_search"],
    cli: ["parse_and_validate", "execute"],
}


def test_every_operation_reachable_from_cli(monkeypatch, capsys, portfolio_file, qaly_file):
    seen = set()
    modules = list(OPERATIONS) + [cli]

    for mod, names in OPERATIONS.items():
        for name in names:
            original = getattr(mod, name)

            def wrapper(*a, _orig=original, _key=f"{mod.__name__}.{name}", **kw):
                seen.add(_key)
                return _orig(*a, **kw)

            functools.update_wrapper(wrapper, original)
            # patch every module that imported the name directly
            for other in modules:
                if getattr(other, name, None) is original:
                    monkeypatch.setattr(other, name, wrapper)

    lines = COMMAND_LINES + [
        ["optimize", "--portfolio", portfolio_file],
        ["optimize", "--portfolio", qaly_file],
        ["simulate", "--design", "shared-control", "--m", "2", "--n-arm", "10", "--n-control", "10", "--reps", "20"],
    ]
    for argv in lines:
        assert cli.main(argv) == 0, argv
    capsys.readouterr()
    expected = {f"{m.__name__}.{n}" for m, names in OPERATIONS.items() for n in names}
    assert expected - seen == set()


def test_null_portfolio_keys_are_absent_and_bad_utility_rejected(tmp_path, capsys):
    p = tmp_path / "p.json"
    plan = {"n1": 30, "n2": 30, "prior": [[0.5, 1.0]]}
    p.write_text(json.dumps({"plans": [plan], "grid": [[[0.05, 1.0]]], "joint_points": None}))
    assert run(capsys, "optimize", "--portfolio", str(p))[0] == 0
    p.write_text(json.dumps({"plans": [plan], "grid": [[[0.05, 1.0]]], "utility": {"kind": "cubic"}}))
    code, _, err = run(capsys, "optimize", "--portfolio", str(p))
    assert code == 2 and "cubic" in err
