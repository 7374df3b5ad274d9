"""Projection primitives, Dykstra composition, and the charger feasible set."""

import numpy as np
import pytest

import oracles
from trades.errors import EmptyIntersectionSuspected, InfeasibleSpec, MaxSweepsExceeded
from trades.projections import (
    Box,
    DiskPairs,
    FeasibleSetProjector,
    Halfspace,
    Hyperplane,
    Intersection,
    box_projector,
    build_ev_projector,
    identity_projector,
    project_dykstra,
    project_primitive,
)


# ---------------------------------------------------------------- primitives


def test_box_clamps_componentwise():
    box = Box([0.0, 0.0], [1.0, 1.0])
    out = project_primitive(box, [2.0, -1.0])
    assert np.array_equal(out, [1.0, 0.0])


def test_box_interior_point_untouched():
    box = Box([-1.0, -1.0], [1.0, 1.0])
    v = np.array([0.25, -0.75])
    assert np.array_equal(box.project(v), v)


def test_box_semi_infinite_bounds():
    box = Box([0.0, -np.inf], [np.inf, 0.0])
    out = box.project([-3.0, 5.0])
    assert np.array_equal(out, [0.0, 0.0])


def test_hyperplane_symmetric_halving():
    hp = Hyperplane([1.0, 1.0], 2.0)
    out = project_primitive(hp, [3.0, 3.0])
    assert np.allclose(out, [1.0, 1.0], rtol=0, atol=1e-14)


def test_hyperplane_point_on_plane_fixed():
    # integer-valued points keep the residual exactly zero in floats
    hp = Hyperplane([1.0, 1.0], 2.0)
    v = np.array([7.0, -5.0])
    assert np.array_equal(hp.project(v), v)


def test_halfspace_untouched_when_satisfied():
    hs = Halfspace([1.0, 1.0], 2.0)
    v = np.array([0.5, 0.5])
    assert np.array_equal(hs.project(v), v)


def test_halfspace_projects_like_hyperplane_when_violated():
    hs = Halfspace([1.0, 1.0], 2.0)
    hp = Hyperplane([1.0, 1.0], 2.0)
    v = np.array([3.0, 3.0])
    assert np.allclose(hs.project(v), hp.project(v), rtol=0, atol=1e-14)


def test_disk_pairs_radial_scaling():
    # (3,4) has norm 5, cap 1 scales by 1/5
    disks = DiskPairs(2, [(0, 1)], 1.0)
    out = project_primitive(disks, [3.0, 4.0])
    assert np.allclose(out, [0.6, 0.8], rtol=0, atol=1e-14)


def test_disk_pairs_only_violating_pair_moves():
    disks = DiskPairs(4, [(0, 2), (1, 3)], 1.0)
    v = np.array([3.0, 0.1, 4.0, 0.2])
    out = disks.project(v)
    assert np.allclose(out[[0, 2]], [0.6, 0.8], rtol=0, atol=1e-14)
    assert out[1] == 0.1 and out[3] == 0.2


def test_primitive_constructor_validation():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Hyperplane([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        Halfspace([0.0], 1.0)
    with pytest.raises(ValueError):
        DiskPairs(4, [(0, 1), (1, 2)], 1.0)
    with pytest.raises(ValueError):
        DiskPairs(4, [(0, 5)], 1.0)
    with pytest.raises(ValueError):
        DiskPairs(4, [(0, 1)], 0.0)


def test_dimension_mismatch_rejected():
    box = Box([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        box.project([1.0, 2.0, 3.0])


def test_project_primitive_refuses_intersection():
    inter = Intersection([Box([0.0], [1.0])])
    with pytest.raises(ValueError):
        project_primitive(inter, [0.5])


# ------------------------------------------------------------------- Dykstra


def test_dykstra_box_halfspace_corner():
    """Box [0,2]^2 with x+y<=1 pulls (2,2) to the midpoint of the edge."""
    inter = Intersection([Box([0.0, 0.0], [2.0, 2.0]), Halfspace([1.0, 1.0], 1.0)])
    out = project_dykstra(inter, [2.0, 2.0])
    assert np.allclose(out, [0.5, 0.5], rtol=0, atol=1e-8)
    # cross-check against the dense active-set oracle
    ineq = oracles.box_constraints([0.0, 0.0], [2.0, 2.0])
    ineq.append((np.array([1.0, 1.0]), 1.0))
    ref = oracles.projection_qp_oracle(np.array([2.0, 2.0]), [], ineq)
    assert np.allclose(out, ref, rtol=0, atol=1e-6)


def test_singleton_intersection_matches_primitive():
    box = Box([-1.0, 0.0], [1.0, 3.0])
    inter = Intersection([box])
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.normal(scale=4.0, size=2)
        assert np.allclose(project_dykstra(inter, v), box.project(v),
                           rtol=0, atol=1e-10)


def test_dykstra_matches_qp_oracle_random_instances():
    """Random 2-4 dim box/halfspace/hyperplane intersections vs brute force."""
    rng = np.random.default_rng(1234)
    for trial in range(100):
        dim = int(rng.integers(2, 5))
        anchor = rng.normal(size=dim)
        lower = anchor - rng.uniform(0.3, 2.0, size=dim)
        upper = anchor + rng.uniform(0.3, 2.0, size=dim)
        members = [Box(lower, upper)]
        eqs = []
        ineqs = oracles.box_constraints(lower, upper)
        for _ in range(int(rng.integers(1, 3))):
            a = rng.normal(size=dim)
            b = float(a @ anchor + rng.uniform(0.1, 1.0))
            members.append(Halfspace(a, b))
            ineqs.append((a, b))
        if trial % 3 == 0:
            a = rng.normal(size=dim)
            b = float(a @ anchor)
            members.append(Hyperplane(a, b))
            eqs.append((a, b))
        inter = Intersection(members)
        v = anchor + rng.normal(scale=3.0, size=dim)
        got = project_dykstra(inter, v)
        ref = oracles.projection_qp_oracle(v, eqs, ineqs)
        assert np.linalg.norm(got - ref) <= 1e-6, f"trial {trial}"


def test_dykstra_requires_intersection():
    with pytest.raises(ValueError):
        project_dykstra(Box([0.0], [1.0]), [2.0])


def test_nested_intersections_rejected():
    inner = Intersection([Box([0.0], [1.0])])
    with pytest.raises(ValueError):
        Intersection([inner])


def test_intersection_dim_consistency():
    with pytest.raises(ValueError):
        Intersection([Box([0.0], [1.0]), Box([0.0, 0.0], [1.0, 1.0])])


def test_max_sweeps_carries_best_iterate():
    inter = Intersection([Box([0.0, 0.0], [2.0, 2.0]), Halfspace([1.0, 1.0], 1.0)])
    with pytest.raises(MaxSweepsExceeded) as info:
        project_dykstra(inter, [2.0, 2.0], max_sweeps=1)
    err = info.value
    assert err.sweeps == 1
    assert err.best.shape == (2,)
    assert np.all(np.isfinite(err.best))
    assert err.residual >= 0.0


def test_disjoint_sets_flagged_during_projection():
    # [0,1] and [2,3] share no point; the iterate settles far from both
    inter = Intersection([Box([0.0], [1.0]), Box([2.0], [3.0])], certify=False)
    with pytest.raises(EmptyIntersectionSuspected) as info:
        project_dykstra(inter, [1.5])
    assert info.value.residual > 0.5


def test_disjoint_sets_flagged_at_construction():
    with pytest.raises(EmptyIntersectionSuspected):
        Intersection([Box([0.0], [1.0]), Box([2.0], [3.0])])


# ------------------------------------------------------- projector wrappers


def test_projector_wrapper_dispatch():
    box = Box([0.0, 0.0], [1.0, 1.0])
    proj = FeasibleSetProjector(box)
    assert proj.dim == 2
    assert np.array_equal(proj([2.0, -1.0]), [1.0, 0.0])
    assert proj.membership_residual([0.5, 0.5]) == 0.0


def test_identity_projector_returns_input():
    proj = identity_projector(3)
    v = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(proj(v), v)


def test_box_projector_shortcut():
    proj = box_projector([0.0], [1.0])
    assert proj([5.0])[0] == 1.0


# ----------------------------------------------------------- charger EV set


def test_ev_symmetric_split_from_origin():
    """Two plugged slots, 3 kWh target: each slot takes half the draw."""
    proj = build_ev_projector([1, 1], 3.0, 4.0)
    out = proj(np.zeros(4))
    assert np.allclose(out, [-1.5, -1.5, 0.0, 0.0], rtol=0, atol=1e-9)
    kkt = oracles.ev_kkt_residual(np.zeros(4), out, [1, 1], 4.0)
    assert kkt <= 1e-6


def test_ev_equality_pins_single_slot():
    proj = build_ev_projector([1], 2.0, 3.0)
    out = proj(np.array([-5.0, 0.0]))
    assert np.allclose(out, [-2.0, 0.0], rtol=0, atol=1e-9)


def test_ev_zero_target_keeps_origin():
    proj = build_ev_projector([1, 1, 1], 0.0, 7.0)
    out = proj(np.zeros(6))
    assert np.array_equal(out, np.zeros(6))


def test_ev_infeasible_target_rejected():
    with pytest.raises(InfeasibleSpec):
        build_ev_projector([1, 0], 5.0, 3.0)


def test_ev_unplugged_slots_pinned():
    rng = np.random.default_rng(42)
    plugged = np.array([1, 0, 1, 0, 1, 1])
    proj = build_ev_projector(plugged, 6.0, 7.0)
    for _ in range(5):
        out = proj(rng.normal(scale=5.0, size=12))
        p, q = out[:6], out[6:]
        assert np.all(np.abs(p[plugged == 0]) <= 1e-8)
        assert np.all(p <= 1e-8)
        assert abs(p[plugged == 1].sum() + 6.0) <= 1e-8
        assert np.all(np.hypot(p, q) <= 7.0 + 1e-8)


def test_ev_reactive_support_modes():
    plugged = np.array([1, 0])
    v = np.array([0.0, 0.0, 0.0, 5.0])  # asks for reactive power on the empty slot
    free_q = build_ev_projector(plugged, 1.0, 7.0)(v)
    assert free_q[3] > 1.0  # inverter keeps supporting without a vehicle
    pinned = build_ev_projector(plugged, 1.0, 7.0, reactive_always_on=False)(v)
    assert abs(pinned[3]) <= 1e-8
    kkt = oracles.ev_kkt_residual(v, pinned, plugged, 7.0, reactive_always_on=False)
    assert kkt <= 1e-6


def test_ev_random_day_membership_and_kkt():
    """Full-day horizon: membership residuals and QP stationarity."""
    rng = np.random.default_rng(2024)
    for trial in range(10):
        plugged = rng.random(24) < 0.6
        if not plugged.any():
            plugged[0] = True
        s_max = 7.0
        target = float(rng.uniform(0.0, 0.8 * s_max * plugged.sum()))
        proj = build_ev_projector(plugged, target, s_max)
        v = rng.normal(scale=4.0, size=48)
        out = proj(v)
        assert proj.membership_residual(out) <= 1e-8, f"trial {trial}"
        kkt = oracles.ev_kkt_residual(v, out, plugged, s_max)
        assert kkt <= 1e-6, f"trial {trial}"


def test_ev_projector_output_always_near_member():
    # wrapper guarantee: residual stays below 10x the sweep tolerance
    rng = np.random.default_rng(5)
    proj = build_ev_projector([1, 1, 0, 1], 4.0, 7.0)
    for _ in range(10):
        out = proj(rng.normal(scale=10.0, size=8))
        assert proj.membership_residual(out) <= 1e-9


# ------------------------------------------------------- shared properties


def _projection_zoo():
    """(projection callable, dim) pairs covering every set variant.

    Intersections run Dykstra at 1e-12 so the composite projection is
    resolved well below the 1e-10 property tolerances being checked.
    """
    ev = build_ev_projector([1, 1, 0, 1], 5.0, 6.0, dykstra_tol=1e-12)
    corner = Intersection([Box([0.0, 0.0], [2.0, 2.0]), Halfspace([1.0, 1.0], 1.0)])
    return [
        (Box([-1.0, 0.0, -np.inf], [1.0, 2.0, 0.5]).project, 3),
        (Hyperplane([1.0, -2.0, 0.5], 1.5).project, 3),
        (Halfspace([1.0, 1.0], 1.0).project, 2),
        (DiskPairs(4, [(0, 2), (1, 3)], 2.0).project, 4),
        (lambda v: project_dykstra(corner, v, tol=1e-12), 2),
        (ev, 8),
    ]


def test_idempotence_on_random_points():
    rng = np.random.default_rng(99)
    for proj, dim in _projection_zoo():
        for _ in range(200):
            v = rng.normal(scale=3.0, size=dim)
            once = proj(v)
            twice = proj(once)
            assert np.linalg.norm(twice - once) <= 1e-10


def test_nonexpansiveness_on_random_pairs():
    rng = np.random.default_rng(100)
    for proj, dim in _projection_zoo():
        for _ in range(200):
            u = rng.normal(scale=3.0, size=dim)
            v = rng.normal(scale=3.0, size=dim)
            lhs = np.linalg.norm(proj(u) - proj(v))
            assert lhs <= np.linalg.norm(u - v) + 1e-10


def test_feasible_points_are_fixed_points():
    rng = np.random.default_rng(101)
    box = Box([-1.0, -1.0], [1.0, 1.0])
    disks = DiskPairs(4, [(0, 1), (2, 3)], 2.0)
    for _ in range(50):
        vb = rng.uniform(-1.0, 1.0, size=2)
        assert np.array_equal(box.project(vb), vb)
        vd = rng.normal(size=4)
        vd *= 0.9 * 2.0 / max(np.hypot(vd[0], vd[1]), np.hypot(vd[2], vd[3]), 2.0)
        assert np.array_equal(disks.project(vd), vd)
    # exact feasibility for the intersection via rejection sampling
    inter = Intersection([Box([0.0, 0.0], [2.0, 2.0]), Halfspace([1.0, 1.0], 1.0)])
    kept = 0
    while kept < 50:
        v = rng.uniform(0.0, 2.0, size=2)
        if v.sum() > 1.0:
            continue
        kept += 1
        assert np.linalg.norm(project_dykstra(inter, v) - v) <= 1e-10


def test_intersection_membership_is_worst_member():
    inter = Intersection([Box([0.0, 0.0], [2.0, 2.0]), Halfspace([1.0, 1.0], 1.0)])
    v = np.array([3.0, 0.0])  # violates the box by 1, the halfspace by sqrt(2)
    expected = max(m.membership_residual(v) for m in inter.members)
    assert inter.membership_residual(v) == expected
