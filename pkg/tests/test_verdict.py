import logging
import math
import os
import random
import time

import pytest

from cfwp.errors import InvalidInput, ResourceLimit
from cfwp.models.schemas import GeometryConfig, RunConfig, SolverOptions, SweepConfig
from cfwp.services import export
from cfwp.services.geometry import GeometryService
from cfwp.services.verdict import VerdictService, assemble_verdict, blowup_count, l2_behaviour


@pytest.fixture
def service():
    return VerdictService()


def test_euclidean_mode_has_no_l2_state(service, euclidean, mode_factory):
    verdict = service.classify_mode(euclidean, mode_factory(lam=math.sqrt(2.0)))
    assert verdict.verdict == "no-L2"
    assert verdict.bounded_dim == 1
    assert verdict.l2_divergent == [True]
    assert verdict.matching_residual > 0.1
    assert verdict.hypotheses_ok
    assert verdict.evidence["lambda_branch"] == "above"
    assert set(verdict.evidence["residuals"]) == {"1", "10"}


def test_uncoupled_euclidean_mode_has_no_bounded_solution(service, euclidean, mode_factory):
    verdict = service.classify_mode(euclidean, mode_factory(lam=0.0))
    assert verdict.verdict == "no-L2"
    assert verdict.bounded_dim == 0
    assert verdict.matching_residual is None
    assert verdict.evidence["lambda_branch"] == "below"


def test_planted_bound_state_is_detected(service, planted):
    verdict = service.classify_system(planted)
    assert verdict.verdict == "candidate-L2"
    assert verdict.matching_residual < 1e-6
    assert verdict.mode is None
    assert verdict.grid_entry()["mode"] is None


def test_classification_keeps_trajectories(service, euclidean, mode_factory):
    kept = []
    service.classify_mode(euclidean, mode_factory(lam=math.sqrt(2.0)), keep=kept)
    assert len(kept) == 1
    assert float(kept[0].csv_rows()[0][0]) == 1e-6


def test_l2_behaviour_labels():
    assert l2_behaviour([1.0, 2.0, 3.0, 4.0])[0] == "divergent"
    assert l2_behaviour([1.0, 1.01, 1.0101, 1.010101])[0] == "convergent"
    assert l2_behaviour([1.0, 1.3, 1.35, 1.36])[0] == "inconclusive"
    assert l2_behaviour([1.0, 1.0, 1.0, 1.0])[0] == "convergent"


def test_l2_behaviour_with_blowup():
    label, increments = l2_behaviour([1.0, 2.0, None, None])
    assert label == "divergent"
    assert increments == [1.0, 1.0, None, None]
    assert l2_behaviour([1.0, 1.0, 1.0], blowup=True)[0] == "divergent"


@pytest.mark.parametrize("bounded_dim, behaviours, residual, expected", [
    (0, [], None, "no-L2"),
    (1, ["divergent"], None, "inconclusive"),
    (1, ["convergent"], 1e-8, "candidate-L2"),
    (1, ["divergent"], 1e-8, "candidate-L2"),
    (1, ["divergent"], 0.5, "no-L2"),
    (1, ["convergent"], 0.5, "inconclusive"),
    (1, ["divergent"], 1e-4, "inconclusive"),
    (2, ["divergent", "divergent"], 0.0, "candidate-L2"),
])
def test_assemble_verdict(bounded_dim, behaviours, residual, expected):
    assert assemble_verdict(bounded_dim, behaviours, residual) == expected


def test_grid_modes_order_and_limits():
    grid = SweepConfig(k_range=(-1, 1), epsilon_values=[-1, 1], lambda_grid=[0.0, 1.0])
    modes = VerdictService.grid_modes(grid)
    assert len(modes) == 12
    assert (modes[0].k, modes[0].epsilon, modes[0].lam) == (-1, -1, 0.0)
    with pytest.raises(InvalidInput):
        VerdictService.grid_modes(SweepConfig(k_range=(0, 0), lambda_grid=[]))
    with pytest.raises(ResourceLimit):
        VerdictService.grid_modes(SweepConfig(k_range=(-40, 40), lambda_grid=[1.0]))
    with pytest.raises(ResourceLimit):
        VerdictService.grid_modes(SweepConfig(k_range=(0, 0), lambda_grid=[0.5] * 1025))


def _small_sweep():
    geometry = GeometryService.preset_config("euclidean")
    grid = SweepConfig(k_range=(0, 0), epsilon_values=[1, -1], lambda_grid=[0.0, math.sqrt(2.0)])
    return geometry, grid


def test_small_sweep_summary(service):
    geometry, grid = _small_sweep()
    report = service.sweep(geometry, grid)
    summary = report.summary
    assert summary.total == 4
    assert summary.counts == {"no-L2": 4, "candidate-L2": 0, "inconclusive": 0}
    assert summary.fractions["no-L2"] == "100%"
    assert summary.fractions["candidate-L2"] == "0%"
    assert summary.kernel_empty
    assert summary.l2_index == 0
    assert summary.hypotheses_ok
    assert summary.worst_mode["verdict"] == "no-L2"
    document = report.to_document()
    assert [entry["mode"]["lambda"] for entry in document["grid"]] == [0.0, math.sqrt(2.0)] * 2


def test_sweep_is_deterministic(service):
    geometry, grid = _small_sweep()
    first = [v.grid_entry() for v in service.sweep(geometry, grid).grid]
    second = [v.grid_entry() for v in service.sweep(geometry, grid).grid]
    assert first == second


@pytest.mark.slow
def test_parallel_sweep_matches_serial(service):
    geometry, grid = _small_sweep()
    serial = [v.grid_entry() for v in service.sweep(geometry, grid, jobs=1).grid]
    parallel = [v.grid_entry() for v in service.sweep(geometry, grid, jobs=2).grid]
    assert serial == parallel


def test_sweep_on_geometry_failing_int_condition_is_inconclusive(service):
    geometry = GeometryConfig(m=1, alpha="t/sqrt(2)", beta="t", gamma="1/t")
    grid = SweepConfig(k_range=(0, 0), epsilon_values=[1], lambda_grid=[1.0])
    report = service.sweep(geometry, grid)
    assert report.grid[0].verdict == "inconclusive"
    assert report.grid[0].evidence["errors"]


def test_identities_on_euclidean_mode(service, euclidean, mode_factory):
    report = service.verify_identities(euclidean, mode_factory(lam=math.sqrt(2.0)))
    statuses = {check.name: check.status for check in report.checks}
    assert statuses == {
        "ine": "pass",
        "determinant": "pass",
        "in": "pass",
        "uwnega": "pass",
        "difference": "skipped",
        "decoupled": "skipped",
        "transport": "pass",
        "sign-structure": "pass",
    }
    assert report.all_passed


def test_decoupled_identity_at_zero_coupling(service, euclidean, mode_factory):
    report = service.verify_identities(euclidean, mode_factory(lam=0.0))
    statuses = {check.name: check.status for check in report.checks}
    assert statuses["decoupled"] == "pass"
    assert statuses["difference"] == "skipped"
    assert report.all_passed


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, -1.0])
def test_difference_identity_in_surviving_case(service, euclidean, mode_factory, lam):
    report = service.verify_identities(euclidean, mode_factory(epsilon=-1, lam=lam))
    difference = next(check for check in report.checks if check.name == "difference")
    assert difference.status == "pass", difference.detail
    signs = next(check for check in report.checks if check.name == "sign-structure")
    assert signs.status == "pass"
    assert "positive" in signs.detail


def test_identities_skip_transport_with_conformal_factor(service, iwai_katayama, mode_factory):
    report = service.verify_identities(iwai_katayama, mode_factory(k=1, lam=1.0))
    transport = next(check for check in report.checks if check.name == "transport")
    assert transport.status == "skipped"
    ine = next(check for check in report.checks if check.name == "ine")
    assert ine.status == "pass"


@pytest.mark.slow
@pytest.mark.parametrize("name", ["euclidean.json", "iwai-katayama.json"])
def test_full_sweep_finds_no_l2_states(config_doc, name):
    config = RunConfig.model_validate(config_doc(name))
    started = time.perf_counter()
    report = VerdictService(config.solver).sweep(config.geometry, config.sweep, jobs=min(4, os.cpu_count() or 1))
    assert time.perf_counter() - started < 120.0
    assert report.summary.total == 9 * 2 * 15
    assert report.summary.counts["no-L2"] == report.summary.total
    assert report.summary.kernel_empty


def test_sweep_report_serializes_identically(service):
    geometry, grid = _small_sweep()
    documents = []
    for _ in range(2):
        document = service.sweep(geometry, grid).to_document()
        document.pop("generated_at")
        documents.append(export.dumps(document))
    assert documents[0] == documents[1]


@pytest.mark.parametrize("epsilon, lam", [(1, 0.0), (1, math.sqrt(2.0)), (-1, 1.0), (-1, 3.0)])
def test_verdict_is_stable_across_tolerances(euclidean, mode_factory, epsilon, lam):
    mode = mode_factory(epsilon=epsilon, lam=lam)
    loose = VerdictService(SolverOptions(rel_tol=1e-8)).classify_mode(euclidean, mode)
    tight = VerdictService(SolverOptions(rel_tol=1e-10)).classify_mode(euclidean, mode)
    assert loose.verdict == tight.verdict
    assert loose.bounded_dim == tight.bounded_dim


def test_planted_verdict_is_stable_across_tolerances(planted):
    for rel_tol in (1e-8, 1e-10):
        assert VerdictService(SolverOptions(rel_tol=rel_tol)).classify_system(planted).verdict == "candidate-L2"


def test_blowups_are_summarized_once_per_sweep(service, caplog):
    # α 有界使 β/α² 线性增长，ε = −1 时有界解以 e^{t²/4} 增长
    geometry = GeometryConfig(m=1, alpha="t/(sqrt(2)*(1+t))", beta="t")
    grid = SweepConfig(k_range=(0, 0), epsilon_values=[-1], lambda_grid=[math.sqrt(2.0), 2.0])
    with caplog.at_level(logging.DEBUG, logger="cfwp"):
        report = service.sweep(geometry, grid)
    count = blowup_count(report.grid)
    assert count == 2
    verdict_records = [r for r in caplog.records if r.name == "cfwp.services.verdict" and "blew up" in r.getMessage()]
    warnings = [r for r in verdict_records if r.levelno == logging.WARNING]
    assert len(warnings) == 1
    assert warnings[0].getMessage().startswith("2 bounded trajectories blew up")
    assert all(r.levelno == logging.DEBUG for r in verdict_records if r not in warnings)
    assert all(v.verdict != "candidate-L2" for v in report.grid)


@pytest.mark.parametrize("m, seed", [(1, 5), (3, 8)])
def test_transport_identity_over_random_modes(service, mode_factory, m, seed):
    rng = random.Random(seed)
    geom = GeometryService.preset("euclidean", m=m)
    for _ in range(4):
        mode = mode_factory(k=rng.randint(-3, 3), l=rng.randint(0, m - 1), epsilon=rng.choice([-1, 1]),
                            lam=rng.uniform(-2.5, 2.5))
        report = service.verify_identities(geom, mode)
        checks = {check.name: check for check in report.checks}
        assert checks["transport"].status == "pass", (mode, checks["transport"].detail)
        assert checks["ine"].status == "pass"
