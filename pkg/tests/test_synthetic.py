import math

import numpy as np
import pytest

from cliff_lhmp.dataio import trajectories_to_text
from cliff_lhmp.errors import InvalidArgumentError
from cliff_lhmp.synthetic import SCENARIOS, generate_synthetic, generate_with_branches, make_scenario


def test_noise_free_corridor_is_straight():
    for tr in generate_synthetic(make_scenario("corridor", heading_noise=0.0), 10, np.random.default_rng(0)):
        assert np.all(tr.y == tr.y[0])
        assert np.all(np.diff(tr.x) > 0)


def test_y_junction_branch_counts():
    pairs = generate_with_branches(make_scenario("y-junction", p=0.5), 1000, np.random.default_rng(1))
    upper = sum(b == 0 for _, b in pairs)
    assert abs(upper - 500) <= 50


def test_y_junction_branches_diverge():
    pairs = generate_with_branches(make_scenario("y-junction", heading_noise=0.0), 20, np.random.default_rng(2))
    for tr, b in pairs:
        assert (tr.y[-1] > tr.y[0]) == (b == 0)


@pytest.mark.parametrize("name", ["quarter-circle", "arc"])
def test_noise_free_arc_stays_on_circle(name):
    sc = make_scenario(name, heading_noise=0.0)
    for tr in generate_synthetic(sc, 10, np.random.default_rng(3)):
        r = np.hypot(tr.x - sc.center[0], tr.y - sc.center[1])
        assert np.max(np.abs(r - r[0])) <= 1e-6
        assert abs(r[0] - sc.radius) <= sc.radius_spread


def test_quarter_circle_spans_a_quarter_turn():
    sc = make_scenario("quarter-circle", heading_noise=0.0, radius_spread=0.0)
    (tr,) = generate_synthetic(sc, 1, np.random.default_rng(0))
    start = math.atan2(tr.y[0], tr.x[0])
    end = math.atan2(tr.y[-1], tr.x[-1])
    assert end - start == pytest.approx(math.pi / 2, abs=0.05)


def test_l_corner_turns_north():
    sc = make_scenario("l-corner", heading_noise=0.0)
    for tr in generate_synthetic(sc, 5, np.random.default_rng(4)):
        assert tr.x[-1] > 15 and tr.y[-1] > 20


def test_generation_reproducible_and_nested():
    sc = make_scenario("y-junction")
    a = generate_synthetic(sc, 50, np.random.default_rng(9))
    b = generate_synthetic(sc, 50, np.random.default_rng(9))
    c = generate_synthetic(sc, 20, np.random.default_rng(9))
    assert trajectories_to_text(a) == trajectories_to_text(b)
    assert a[:20] == c


def test_zero_trajectories_and_bad_names():
    assert generate_synthetic(SCENARIOS["corridor"], 0, np.random.default_rng(0)) == []
    with pytest.raises(InvalidArgumentError):
        make_scenario("spiral")
    with pytest.raises(InvalidArgumentError):
        make_scenario("y-junction", p=1.5)


def test_every_scenario_samples_inside_its_extent():
    for name, sc in SCENARIOS.items():
        for tr in generate_synthetic(sc, 5, np.random.default_rng(1)):
            assert all(sc.extent.cell_of(x, y) is not None for x, y in zip(tr.x, tr.y)), name
