import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cfwp.errors import DegenerateDirection, InvalidInput, IrregularSingularity, PreconditionError
from cfwp.models.schemas import SolverOptions
from cfwp.services.integrator import (indicial, integrate, match_infinity, match_residuals, recessive_direction,
                                      solve_bounded)
from cfwp.services.modes import SyntheticCoeffs


@pytest.mark.parametrize("lam, n_admissible", [(0.0, 0), (1.0, 0), (math.sqrt(2.0), 1), (3.0, 1)])
def test_euclidean_indicial_data(radial, lam, n_admissible):
    data = indicial(radial(lam=lam))
    expected = np.array([[-0.5, math.sqrt(2.0) * lam], [math.sqrt(2.0) * lam, -0.5]])
    assert_allclose(data.residue_matrix, expected, atol=1e-6)
    assert data.threshold == pytest.approx(1.5, abs=0.02)
    assert_allclose(data.exponents, [-0.5 - math.sqrt(2.0) * lam, -0.5 + math.sqrt(2.0) * lam], atol=1e-6)
    assert len(data.admissible) == n_admissible
    assert data.summary()["admissible"] == n_admissible


def test_indicial_rejects_irregular_singularity():
    with pytest.raises(IrregularSingularity):
        indicial(SyntheticCoeffs.from_text(sigma="1/t^2"))


def test_decoupled_component_decays_like_inverse_square_root(radial):
    t0 = 1e-3
    traj = integrate(radial(lam=0.0), t0, 4 * t0, [1.0, 0.0])
    u, w = traj.states[-1]
    assert traj.t_end == pytest.approx(4 * t0)
    assert u == pytest.approx(0.5, rel=1e-8)
    assert w == 0.0


def test_constant_coupling_matches_hyperbolic_solution():
    coeffs = SyntheticCoeffs.from_text(sigma="c", params={"c": 0.5})
    traj = integrate(coeffs, 1.0, 3.0, [1.0, 0.0], rel_tol=1e-12)
    assert_allclose(traj.states[-1], [math.cosh(1.0), math.sinh(1.0)], rtol=1e-9)
    assert_allclose(traj.state_at(2.0), [math.cosh(0.5), math.sinh(0.5)], rtol=1e-9)


def test_backward_integration():
    coeffs = SyntheticCoeffs.from_text(sigma="c", params={"c": 0.5})
    traj = integrate(coeffs, 3.0, 1.0, [1.0, 0.0], rel_tol=1e-12)
    assert traj.stats["direction"] == -1
    assert_allclose(traj.states[0], [math.cosh(1.0), -math.sinh(1.0)], rtol=1e-9)


def test_integration_is_linear_in_the_initial_state(radial):
    coeffs = radial(k=1, lam=0.8)
    first = integrate(coeffs, 1e-2, 10.0, [1.0, 0.0])
    second = integrate(coeffs, 1e-2, 10.0, [0.0, 1.0])
    combined = integrate(coeffs, 1e-2, 10.0, [2.0, -3.0])
    for t in (0.1, 1.0, 10.0):
        expected = 2.0 * first.state_at(t) - 3.0 * second.state_at(t)
        assert_allclose(combined.state_at(t), expected, rtol=1e-7, atol=1e-7 * np.linalg.norm(expected))


def test_integrate_rejects_bad_arguments(radial):
    coeffs = radial(lam=1.0)
    with pytest.raises(InvalidInput):
        integrate(coeffs, 0.0, 1.0, [1.0, 0.0])
    with pytest.raises(InvalidInput):
        integrate(coeffs, 1.0, 1.0, [1.0, 0.0])
    with pytest.raises(InvalidInput):
        integrate(coeffs, 1.0, 2.0, [0.0, 0.0])


def test_partial_l2_past_the_end_is_none(radial):
    traj = integrate(radial(lam=0.0), 1e-3, 1e-1, [1.0, 0.0])
    first, beyond = traj.partial_l2([1e-2, 1.0])
    # ∫ t0/t dt 从 t0 到 10·t0
    assert first == pytest.approx(1e-3 * math.log(10.0), rel=1e-4)
    assert beyond is None


def test_bounded_solution_of_euclidean_mode_has_threshold_slope(radial):
    bounded = solve_bounded(radial(lam=math.sqrt(2.0)))
    assert len(bounded) == 1
    traj = bounded[0]
    assert traj.stats["exponent"] == pytest.approx(1.5, abs=1e-6)
    assert traj.log_slope(1e-5, 1e-3) == pytest.approx(1.5, abs=1e-6)
    assert not traj.blowup


def test_two_dimensional_bounded_subspace():
    coeffs = SyntheticCoeffs.from_text(rho="2/t", tau="3/t")
    data = indicial(coeffs)
    assert data.threshold == pytest.approx(1.0, abs=1e-9)
    bounded = solve_bounded(coeffs, SolverOptions(t_max=1e2, horizons=[1.0, 10.0, 1e2]), data)
    assert len(bounded) == 2
    assert sorted(t.stats["exponent"] for t in bounded) == pytest.approx([2.0, 3.0])
    coupled = SyntheticCoeffs.from_text(rho="2/t", sigma="1", tau="3/t")
    opts = SolverOptions(t_max=1e2, horizons=[1.0, 10.0, 1e2])
    results = match_residuals(coupled, solve_bounded(coupled, opts), [1.0], opts)
    assert results[0].residual == 0.0


def test_euclidean_bounded_solution_does_not_match_recessive_one(radial):
    coeffs = radial(lam=math.sqrt(2.0))
    bounded = solve_bounded(coeffs)
    results = match_residuals(coeffs, bounded, [1.0, 10.0])
    assert [r.t_mid for r in results] == [1.0, 10.0]
    assert all(r.residual > 0.1 for r in results)


def test_planted_solution_matches(planted):
    bounded = solve_bounded(planted)
    assert len(bounded) == 1
    assert bounded[0].stats["exponent"] == pytest.approx(2.0, abs=1e-6)
    assert match_infinity(planted, bounded, 1.0) < 1e-6
    assert match_infinity(planted, bounded, 10.0) < 1e-6


def test_matching_requires_a_bounded_trajectory(radial):
    with pytest.raises(PreconditionError):
        match_residuals(radial(lam=1.0), [], [1.0])


def test_recessive_direction_is_degenerate_without_coupling(radial):
    with pytest.raises(DegenerateDirection):
        recessive_direction(radial(lam=0.0), 1e4)
    v = recessive_direction(radial(lam=1.0), 1e4)
    assert abs(v[0] + v[1]) == pytest.approx(0.0, abs=1e-12)


def test_backward_state_between_nodes():
    coeffs = SyntheticCoeffs.from_text(sigma="c", params={"c": 0.5})
    traj = integrate(coeffs, 3.0, 1.0, [1.0, 0.0], rel_tol=1e-12, min_nodes=8)
    t = 1.2345
    assert t not in traj.nodes
    shift = 0.5 * (t - 3.0)
    assert_allclose(traj.state_at(t), [math.cosh(shift), math.sinh(shift)], rtol=1e-9)
    with pytest.raises(InvalidInput):
        traj.state_at(3.5)


def test_growth_past_the_norm_limit_is_a_blowup():
    coeffs = SyntheticCoeffs.from_text(rho="1")
    traj = integrate(coeffs, 1.0, 100.0, [1.0, 0.0], max_norm=1e10)
    assert traj.blowup
    # U = e^{t−1} 在 t = 1 + 10 ln 10 处越过 1e10
    assert 1.0 + 10.0 * math.log(10.0) <= traj.t_blowup < 27.0
    assert traj.t_end == traj.t_blowup
    first, beyond = traj.partial_l2([10.0, 50.0])
    assert first == pytest.approx((math.exp(18.0) - 1.0) / 2.0, rel=2e-2)
    assert beyond is None


def test_error_estimate_comes_from_a_coarser_rerun(radial):
    coeffs = radial(k=1, lam=0.8)
    plain = integrate(coeffs, 1e-2, 10.0, [1.0, 0.0], rel_tol=1e-8)
    assert "error_estimate" not in plain.stats
    traj = integrate(coeffs, 1e-2, 10.0, [1.0, 0.0], rel_tol=1e-8, estimate_error=True)
    assert traj.stats["error_node"] == pytest.approx(10.0)
    assert 0.0 <= traj.stats["error_estimate"] < 1e-4 * np.linalg.norm(traj.states[-1])
    assert_allclose(traj.states, plain.states)


@pytest.mark.parametrize("lam, k", [(0.8, 1), (math.sqrt(2.0), 0), (2.5, -2)])
def test_halving_the_tolerance_stays_within_the_error_estimate(radial, lam, k):
    coeffs = radial(k=k, lam=lam)
    coarse = integrate(coeffs, 1e-2, 10.0, [1.0, 0.0], rel_tol=1e-8, estimate_error=True)
    fine = integrate(coeffs, 1e-2, 10.0, [1.0, 0.0], rel_tol=5e-9)
    change = np.linalg.norm(fine.states[-1] - coarse.states[-1])
    floor = 1e-13 * np.linalg.norm(coarse.states[-1])
    assert change < 10.0 * coarse.stats["error_estimate"] + floor
