from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodyn.bifurcation import (BaseRegion, BifKind, FoodRegion, NoHopf, NotApplicable, base_region,
                                classify_region, curve_values, hopf_xi, label_consistent, region_grid,
                                saddle_node_xi, saddle_node_xi_exact, scan_parameter, transcritical_xi,
                                transcritical_xi_exact)
from ecodyn.equilibria import interior_equilibria
from ecodyn.model import ModelParams, jacobian

TRANS = ModelParams(gamma=1.0, alpha=1.0, xi=0.0, eps=0.5, delta=8.0, m=6.0, omega=4.0)


def test_transcritical_exact_value():
    # xi* = (m (u + g) - delta g) / ((delta - m alpha) u) with u = omega g^2 + 1 = 5: (36 - 8) / 10
    assert transcritical_xi_exact(TRANS) == Fraction(14, 5)


def test_transcritical_point_and_transversality():
    bp = transcritical_xi(TRANS)
    assert bp.kind is BifKind.TRANSCRITICAL
    assert bp.value == pytest.approx(2.8, abs=1e-12)
    assert bp.valid
    # E1 is non-hyperbolic exactly there
    J = jacobian((1.0, 0.0), TRANS.with_(xi=bp.value))
    assert abs(J[1, 1]) < 1e-12


def test_saddle_node_exact_value():
    assert saddle_node_xi_exact(TRANS) == 3
    assert saddle_node_xi(TRANS).value == pytest.approx(3.0, abs=1e-12)


def test_saddle_node_requires_delta_not_m_alpha():
    with pytest.raises(NotApplicable):
        saddle_node_xi(TRANS.with_(alpha=8.0 / 6.0))


def test_scan_brackets_transcritical():
    scan = scan_parameter(TRANS, "xi", 2.0, 4.0, 200)
    ev = [e for e in scan.events if e["equilibrium"] == "E1" and e["type"] == "stability_change"]
    assert ev
    assert abs(ev[0]["value"] - 2.8) < 1e-3
    assert ev[0]["n_unstable_before"] == 0 and ev[0]["n_unstable_after"] == 1


def test_scan_sees_e2_appear_at_three():
    scan = scan_parameter(TRANS, "xi", 2.0, 4.0, 41)
    ev = [e for e in scan.events if e["equilibrium"] == "E2" and e["type"] == "appearance"]
    assert len(ev) == 1 and abs(ev[0]["value"] - 3.0) < 1e-3


def test_scan_rejects_single_step():
    with pytest.raises(ValueError):
        scan_parameter(TRANS, "xi", 2.0, 4.0, 1)


def test_hopf_in_xi_is_a_trace_zero():
    p = ModelParams(gamma=10.0, alpha=0.1, xi=0.45, eps=0.35, delta=0.45, m=0.28, omega=0.01)
    eq = interior_equilibria(p)[0].location
    try:
        bp = hopf_xi(p, eq)
    except NoHopf:
        pytest.skip("no trace crossing along this branch")
    J = jacobian(tuple(bp.equilibrium), p.with_(xi=bp.value))
    assert abs(np.trace(J)) < 1e-7
    assert np.linalg.det(J) > 0


def test_region_example_in_a2_a3_band():
    lab = classify_region(TRANS, 1.0, 4.0)
    phi1, _, phi3, _ = lab.curve_values
    assert phi1 == pytest.approx(2.0) and phi3 == pytest.approx(-14.0)
    assert lab.food_region in (FoodRegion.A2, FoodRegion.A3)


def test_base_regions_by_interior_count():
    assert base_region(ModelParams(4.0, 0.0, 0.0, 1.0, 8.0, 1.7, 0.9)) is BaseRegion.R1
    assert base_region(ModelParams(2.0, 0.0, 0.0, 0.5, 1.0, 0.35, 0.04)) is BaseRegion.R2
    assert base_region(ModelParams(24.0, 0.0, 0.0, 0.16, 8.0, 1.0, 0.15)) is BaseRegion.R3


def test_region_rejects_negative_food():
    with pytest.raises(ValueError):
        classify_region(TRANS, -1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 4), st.floats(0, 6))
def test_labels_consistent_with_curve_signs(alpha, xi):
    assert label_consistent(classify_region(TRANS, alpha, xi, BaseRegion.R1))


def test_curve_ordering():
    # phi3 <= phi1 <= phi2, phi4 for any food pair
    for a, x in [(0.0, 0.0), (1.0, 2.0), (3.0, 0.5)]:
        p1, p2, p3, p4 = curve_values(TRANS, a, x)
        assert p3 <= p1 <= p2 and p1 <= p4


def test_small_region_grid():
    cells = region_grid(TRANS, 2.0, 6.0, 12)
    assert len(cells) == 144
    for al, xi, lab, e2 in cells:
        assert label_consistent(lab)
        assert e2 == (curve_values(TRANS, al, xi)[0] > 0)
