import json

import pytest

from dopf.admm import read_trace_csv, run_admm
from dopf.cli import RunSpec, build_parser, list_presets, load_network, main, spec_from_args
from dopf.diagnostics import relative_objective
from dopf.network import Bus, CostPoly, Network, to_json

from conftest import bundled

MINI = """function mpc = mini
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	345	1	{vmax}	{vmin};
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	250	250	250	0	0	1	-360	360;
];
mpc.gencost = [
	2	1500	0	3	0.11	5	150;
];
"""


@pytest.fixture
def mini(tmp_path):
    def make(vmax=1.1, vmin=0.9, name="mini.m"):
        p = tmp_path / name
        p.write_text(MINI.format(vmax=vmax, vmin=vmin))
        return str(p)
    return make


# ---------------------------------------------------------------- validate

def test_validate_bundled_case(capsys):
    assert main(["validate", "--case", "case9"]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_corrupted_file(tmp_path, capsys):
    p = tmp_path / "broken.m"
    p.write_text("function mpc = broken\nmpc.bus = [1 2 3;\n")
    assert main(["validate", "--case", str(p)]) == 2
    assert "error" in capsys.readouterr().err


def test_validate_inverted_bounds(mini, capsys):
    assert main(["validate", "--case", mini(vmax=0.9, vmin=1.1)]) == 1
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and "bus 1" in lines[0]


def test_validate_missing_file():
    assert main(["validate", "--case", "/nonexistent/case.m"]) == 2


def test_validate_taps_flag():
    assert main(["validate", "--case", "case14"]) == 2
    assert main(["validate", "--case", "case14", "--taps", "ignore"]) == 0


# ---------------------------------------------------------------- solve

def test_solve_missing_file(capsys):
    assert main(["solve", "--case", "/nonexistent/case.m"]) == 2
    assert "error" in capsys.readouterr().err


def test_solve_corrupted_file(tmp_path):
    p = tmp_path / "broken.m"
    p.write_text("mpc.baseMVA = ;")
    assert main(["solve", "--case", str(p), "--iters", "2"]) == 2


def test_solve_rejects_inverted_bounds(mini):
    assert main(["solve", "--case", mini(vmax=0.9, vmin=1.1), "--iters", "2"]) == 2


@pytest.mark.parametrize("argv", [["--stop", "consensus"], ["--rho", "-1"], ["--net-update", "mean"],
                                  ["--preset", "no-such-preset"], ["--iters", "x"]])
def test_solve_bad_settings(argv):
    assert main(["solve", "--case", "toy2"] + argv) == 2


def test_solve_without_case():
    assert main(["solve", "--iters", "2"]) == 2


def test_trace_is_byte_identical_without_timing(tmp_path):
    outs = []
    for tag in ("a", "b"):
        t = tmp_path / f"{tag}.csv"
        assert main(["solve", "--preset", "case9", "--iters", "4", "--timing", "off", "--trace-out", str(t)]) == 0
        outs.append(t.read_bytes())
    assert outs[0] == outs[1]
    rows = read_trace_csv(outs[0].decode())
    assert [r.iter for r in rows] == [1, 2, 3, 4]
    assert all(r.wall_ms == 0.0 for r in rows)


def test_report_round_trips_solver_numbers(tmp_path):
    rp = tmp_path / "out" / "report.json"
    tp = tmp_path / "trace.jsonl"
    assert main(["solve", "--preset", "case9", "--iters", "3", "--timing", "off",
                 "--report-out", str(rp), "--trace-out", str(tp)]) == 0
    rep = json.loads(rp.read_text())
    spec = RunSpec(case="case9", scale_pd=1.1, qgmin_override=10.0, iters=3, timing="off")
    direct = run_admm(load_network(spec), spec.admm_config())
    for key, val in (("objective", direct.objective), ("delta", direct.kkt.delta),
                     ("epsilon", direct.kkt.epsilon), ("worst_df", direct.stats.max_df)):
        assert rep[key] == val or abs(rep[key] - val) <= 1e-15 * abs(val)
    assert rep["buses"][0]["pg_mw"] == float(direct.z[0].pg) * 100.0
    assert rep["relative_objective"] == relative_objective(direct.objective, 6135.2)
    assert rep["a"] == direct.kkt.a and rep["b"] == direct.kkt.b
    assert rep["config"]["scale_pd"] == 1.1
    assert len(tp.read_text().splitlines()) == 3
    assert json.loads(tp.read_text().splitlines()[0])["iter"] == 1


def test_flags_override_preset():
    args = build_parser().parse_args(["solve", "--preset", "case9", "--rho", "1000", "--scale-pd", "1.0"])
    spec = spec_from_args(args)
    assert spec.case == "case9" and spec.rho == 1000.0 and spec.scale_pd == 1.0
    assert spec.qgmin_override == 10.0


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    names = capsys.readouterr().out.split()
    assert names == list_presets() == ["case14", "case30", "case9", "toy2"]


def test_preset_applies_overrides():
    spec = spec_from_args(build_parser().parse_args(["solve", "--preset", "case9"]))
    net, base = load_network(spec), bundled("case9")
    assert net.buses[4].pd == pytest.approx(1.1 * base.buses[4].pd)


def test_all_failing_solve_exits_3(tmp_path):
    # one bus whose demand lies below its generation floor: every round fails
    b = Bus(0, 1.0, 0.0, 2.0, 3.0, -1.0, 1.0, 0.9, 1.1, 0j, CostPoly(1.0, 0.0, 0.0))
    p = tmp_path / "stuck.json"
    p.write_text(to_json(Network((b,), (), 1.0)))
    assert main(["validate", "--case", str(p)]) == 0
    assert main(["solve", "--case", str(p), "--iters", "3"]) == 3


# ---------------------------------------------------------------- oracle

def test_oracle_size_limit(capsys):
    assert main(["oracle", "--case", "case9"]) == 1
    assert "at most 3" in capsys.readouterr().err


def test_oracle_report(tmp_path, capsys):
    rp = tmp_path / "oracle.json"
    assert main(["oracle", "--case", "toy2", "--refine-passes", "3", "--report-out", str(rp)]) == 0
    d = json.loads(rp.read_text())
    assert d["resolution"] == 400 and d["passes"] == 4
    assert f"{d['objective']:.9f}" in capsys.readouterr().out


def test_oracle_missing_file():
    assert main(["oracle", "--case", "/nonexistent.m"]) == 2


@pytest.mark.slow
def test_gossip_close_to_exact_average(tmp_path):
    objs = {}
    for mode in ("average", "gossip"):
        rp = tmp_path / f"{mode}.json"
        assert main(["solve", "--preset", "case9", "--iters", "1000", "--net-update", mode,
                     "--gossip-rounds", "200", "--report-out", str(rp)]) == 0
        objs[mode] = json.loads(rp.read_text())["objective"]
    assert relative_objective(objs["gossip"], objs["average"]) <= 5e-3
