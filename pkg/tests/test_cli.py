import json
import math

import numpy as np
import pytest

from cliff_lhmp.cli import build_parser, main
from cliff_lhmp.dataio import write_trajectories
from cliff_lhmp.mapping import GridSpec, map_from_mixtures
from cliff_lhmp.motion import mixture
from cliff_lhmp.predictor import PredictionConfig, cvm_predict
from cliff_lhmp.serialization import read_heatmap, read_map, read_predictions, read_reports, write_map
from cliff_lhmp.synthetic import generate_synthetic, make_scenario


@pytest.fixture(scope="module")
def corridor_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    sc = make_scenario("corridor")
    train, test = d / "train.csv", d / "test.csv"
    write_trajectories(generate_synthetic(sc, 40, np.random.default_rng(0)), train)
    write_trajectories(generate_synthetic(sc, 6, np.random.default_rng(1)), test)
    assert main(["build-map", str(train), "-o", str(d / "m.json"), "--workers", "1"]) == 0
    return d, train, test


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_build_map_corridor(corridor_files, capsys):
    d, train, _ = corridor_files
    code, out, _ = run(["build-map", train, "-o", d / "m0.json", "--workers", 1], capsys)
    assert code == 0
    summary = json.loads(out)
    m = read_map(d / "m0.json")
    assert (d / "m0.json").read_bytes() == (d / "m.json").read_bytes()
    assert summary["cells_populated"] == len(m) > 0
    for (ix, iy), cell in m.cells.items():
        x, y = m.grid.cell_center(ix, iy)
        assert 0.0 <= y <= 6.0
        main_comp = max(cell.mixture.components, key=lambda c: c.weight)
        assert abs(main_comp.mean_theta) < 0.3


def test_build_map_deterministic_across_workers(corridor_files, capsys):
    d, train, _ = corridor_files
    for name, workers in (("a.json", 1), ("c.json", 2)):
        assert run(["build-map", train, "-o", d / name, "--workers", workers], capsys)[0] == 0
    assert (d / "a.json").read_bytes() == (d / "c.json").read_bytes() == (d / "m.json").read_bytes()


def test_build_map_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    code, _, err = run(["build-map", empty, "-o", tmp_path / "m.json"], capsys)
    assert code == 3 and "empty-map" in err
    assert not (tmp_path / "m.json").exists()


def northbound_map(path):
    g = GridSpec(-5, -5, 1, 60, 20)
    m = mixture([(1.0, math.pi / 2, 1.0, np.diag([0.05**2, 0.01]))])
    write_map(map_from_mixtures(g, {(i, j): m for i in range(60) for j in range(20)}, 10), path)


def test_predict_huge_beta_equals_cvm(corridor_files, capsys):
    d, _, test = corridor_files
    northbound_map(d / "n.json")
    code, out, _ = run(["predict", "--map", d / "n.json", test, "-o", d / "p.csv", "--k", 1, "--beta", 1e6,
                        "--horizon", 20], capsys)
    assert code == 0 and "0 samples truncated" in out
    recs = read_predictions(d / "p.csv")
    assert len(recs) == 6
    for r in recs:
        cvm = cvm_predict(r.start, PredictionConfig(horizon_s=20))
        assert np.max(np.abs(r.prediction.xy - cvm.xy)) <= 1e-6


def test_predict_off_map_truncates_immediately(tmp_path, capsys):
    g = GridSpec(100, 100, 1, 3, 3)
    write_map(map_from_mixtures(g, {(1, 1): mixture([(1.0, 0.0, 1.0, np.eye(2) * 0.1)])}, 10), tmp_path / "m.json")
    write_trajectories(generate_synthetic(make_scenario("corridor"), 2, np.random.default_rng(0)), tmp_path / "t.csv")
    code, out, _ = run(["predict", "--map", tmp_path / "m.json", tmp_path / "t.csv", "-o", tmp_path / "p.csv",
                        "--k", 2], capsys)
    assert code == 0 and "4 samples truncated" in out
    for r in read_predictions(tmp_path / "p.csv"):
        assert r.prediction.truncated and len(r.prediction) == 0 and r.prediction.truncation_step == 1


def test_predict_reproducible(corridor_files, capsys):
    d, train, test = corridor_files
    for name in ("p1.csv", "p2.csv"):
        assert run(["predict", "--map", d / "m.json", test, "-o", d / name, "--k", 3, "--seed", 5], capsys)[0] == 0
    assert (d / "p1.csv").read_bytes() == (d / "p2.csv").read_bytes()


def test_predict_rejects_unknown_map_version(corridor_files, capsys):
    d, _, test = corridor_files
    (d / "bad.json").write_text(json.dumps({"format_version": 999}))
    code, _, err = run(["predict", "--map", d / "bad.json", test, "-o", d / "p.csv"], capsys)
    assert code == 3 and "supported: 1" in err


def test_evaluate_arc_cliff_beats_cvm(tmp_path, capsys):
    sc = make_scenario("arc")
    write_trajectories(generate_synthetic(sc, 80, np.random.default_rng(0)), tmp_path / "train.csv")
    write_trajectories(generate_synthetic(sc, 10, np.random.default_rng(1)), tmp_path / "test.csv")
    assert run(["build-map", tmp_path / "train.csv", "-o", tmp_path / "m.json", "--workers", 1], capsys)[0] == 0
    code, _, _ = run(["evaluate", "--map", tmp_path / "m.json", tmp_path / "test.csv", "--horizons", "5,20",
                      "-o", tmp_path / "r.json", "--table", tmp_path / "r.csv", "--workers", 1], capsys)
    assert code == 0
    reps = {r.method: r for r in read_reports(tmp_path / "r.json")}
    assert set(reps) == {"cliff_lhmp", "cvm"}
    assert reps["cliff_lhmp"].at(20).ade_mean < reps["cvm"].at(20).ade_mean
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + 2 * 2 * 2


def test_sweep_writes_one_report_per_value(corridor_files, capsys):
    d, train, test = corridor_files
    code, out, _ = run(["sweep", "--map", d / "m.json", test, "--axis", "beta", "--values", "1,10",
                        "--horizons", "5", "--k", 2, "--workers", 1], capsys)
    assert code == 0
    doc = json.loads(out)
    assert [r["axis_value"] for r in doc["reports"]] == [1.0, 10.0]


def test_compare_maps_with_itself(corridor_files, capsys):
    d, train, _ = corridor_files
    code, _, _ = run(["compare-maps", d / "m.json", d / "m.json", "-o", d / "kl.json", "--samples", 2000], capsys)
    assert code == 0
    h = read_heatmap(d / "kl.json")
    assert h.defined.any() and np.all(h.values[h.defined] <= 0.01)


def test_gen_synthetic_zero(tmp_path, capsys):
    code, _, _ = run(["gen-synthetic", "corridor", "-n", 0, "-o", tmp_path / "e.csv"], capsys)
    assert code == 0
    assert (tmp_path / "e.csv").read_bytes() == b"t_s,person_id,x_m,y_m\n"


def test_gen_synthetic_reproducible(tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        run(["gen-synthetic", "y-junction", "-n", 5, "--seed", 4, "-o", tmp_path / name], capsys)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_usage_errors(corridor_files, capsys):
    d, _, test = corridor_files
    northbound_map(d / "n.json")
    code, _, err = run(["predict", "--map", d / "n.json", test, "-o", d / "p.csv", "--beta", -1], capsys)
    assert code == 2 and "beta" in err
    with pytest.raises(SystemExit) as exc:
        main(["predict"])
    assert exc.value.code == 2


def test_help_lists_defaults_and_paper_sources():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    text = sub["predict"].format_help()
    for flag in ("--beta", "--rs", "--os", "--dt", "--horizon", "--k", "--sigma-obs", "--seed", "--workers"):
        assert flag in text
    assert "(paper default)" in text and "default: 1.0" in text
    for name in ("build-map", "evaluate", "sweep", "compare-maps", "gen-synthetic"):
        assert "default" in sub[name].format_help()
