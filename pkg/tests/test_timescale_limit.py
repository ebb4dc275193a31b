import numpy as np
import pytest

from src.models.errors import LimitNotSupportedError, NumericalError
from src.models.matrices import GeneralMatrix, RateMatrix, StateSpace, TransitionMatrix
from src.models.params import InitialBlocks, ScalingSequence
from src.services.seedbank_models import (
    ancient_g,
    ancient_lines_semigroup,
    ancient_semigroup,
    imbalanced_ghat,
    prelimit_decomposition,
    projection_p,
    reduce_generator,
)
from src.services.timescale_limit import (
    assemble_limit,
    check_step_condition,
    detect_projection,
    discrete_steps,
    exit_rate,
    extract_g,
    run_pipeline,
    seedbank_family,
    verify_discretization_lemma,
)

TWO = StateSpace(((0, 0), (1, 0)))


def _constant_q(c: float) -> RateMatrix:
    return RateMatrix(TWO, [[-1.0, 1.0], [1.0, -1.0]])


def test_step_condition_holds_for_seedbank_family():
    init = InitialBlocks(3, 2)
    q_family, _, bound = seedbank_family(init, 1.0)
    scaling = ScalingSequence.seedbank([0.2, 0.1, 0.05])
    report = check_step_condition(q_family, scaling, bound)
    assert report.verdict
    for record in report.records:
        assert record.q == exit_rate(q_family(record.c))
        assert record.q <= record.rate_bound
    ratios = [r.ratio for r in report.records]
    assert ratios[0] > ratios[1] > ratios[2]


def test_step_condition_for_constant_rates():
    fast = ScalingSequence((0.1, 0.01, 0.001), a_of=lambda c: 1 / c, b_of=lambda c: c ** -2)
    assert check_step_condition(_constant_q, fast).verdict
    frozen = ScalingSequence((0.1, 0.01, 0.001), a_of=lambda c: 1.0, b_of=lambda c: c ** -2)
    assert not check_step_condition(_constant_q, frozen).verdict


def test_detect_projection_of_identity():
    P_hat, residuals = detect_projection(TransitionMatrix(TWO, np.eye(2)), 10.0, [1, 2, 4])
    assert np.array_equal(P_hat.entries, np.eye(2))
    assert all(r.residual == 0.0 for r in residuals)


def test_detect_projection_recovers_lineage_collapse():
    init = InitialBlocks(3, 1)
    A, _ = prelimit_decomposition(0.05, 1.0, init)
    P_hat, residuals = detect_projection(A, 0.05 ** -2, [10, 40, 160], n0=3)
    assert np.array_equal(P_hat.entries, projection_p(init).entries)
    values = [r.residual for r in residuals]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    for r in residuals:
        assert r.absorption_bound == pytest.approx(2 / r.C)
        assert r.residual <= 2 * r.absorption_bound


def test_detect_projection_two_state_absorption():
    a = 50.0
    eps = 1 / a
    A = TransitionMatrix(TWO, [[1 - eps, eps], [0.0, 1.0]])
    P_hat, residuals = detect_projection(A, a, [5, 10, 20])
    assert np.array_equal(P_hat.entries, np.array([[0.0, 1.0], [0.0, 1.0]]))
    values = [r.residual for r in residuals]
    assert values[0] > values[1] > values[2]


def test_detect_projection_rejects_mixing_chain():
    A = TransitionMatrix(TWO, [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(LimitNotSupportedError):
        detect_projection(A, 10.0, [1, 2])


def test_detect_projection_rejects_non_stochastic_input():
    with pytest.raises(NumericalError):
        detect_projection(GeneralMatrix(TWO, [[0.5, 0.2], [0.0, 1.0]]), 10.0, [1])


def test_extract_g_with_constant_family():
    P = GeneralMatrix(TWO, np.eye(2))
    B = GeneralMatrix(TWO, [[-1.0, 1.0], [2.0, -2.0]])
    G_hat, residuals = extract_g(P, {0.2: B, 0.1: B, 0.05: B})
    assert np.array_equal(G_hat.entries, B.entries)
    assert all(r == 0.0 for _, r in residuals)


def test_extract_g_rejects_divergent_family():
    P = GeneralMatrix(TWO, np.eye(2))
    family = {c: GeneralMatrix(TWO, np.eye(2) / c) for c in (0.2, 0.1, 0.05)}
    with pytest.raises(LimitNotSupportedError):
        extract_g(P, family)


def test_extract_g_recovers_ancient_generator():
    init = InitialBlocks(2, 1)
    P = projection_p(init)
    family = {c: prelimit_decomposition(c, 1.0, init)[1] for c in (0.1, 0.05, 0.02)}
    G_hat, residuals = extract_g(P, family)
    reference = reduce_generator(P, ancient_g(init, 1.0)).entries
    assert np.abs(G_hat.entries - reference).max() <= 5 * 0.02
    assert residuals[-1] == (0.02, 0.0)


def test_assemble_limit_basics():
    init = InitialBlocks(2, 1)
    P = projection_p(init)
    zero = GeneralMatrix(P.space, np.zeros((len(P.space), len(P.space))))
    assert np.array_equal(assemble_limit(P, zero, 0.0).entries, np.eye(len(P.space)))
    assert np.array_equal(assemble_limit(P, zero, 2.0).entries, P.entries)


def test_assemble_limit_matches_ancient_semigroup():
    init = InitialBlocks(2, 1)
    P = projection_p(init)
    G = reduce_generator(P, ancient_g(init, 1.0))
    reference = ancient_semigroup(ancient_lines_semigroup(init, 1.0), 1.0).entries
    assert np.abs(assemble_limit(P, G, 1.0).entries - reference).max() < 1e-6
    product = assemble_limit(P, G, 0.4).entries @ assemble_limit(P, G, 0.9).entries
    assert np.abs(product - assemble_limit(P, G, 1.3).entries).max() < 1e-8


def test_assemble_limit_rejects_non_commuting_generator():
    init = InitialBlocks(2, 1)
    with pytest.raises(LimitNotSupportedError):
        assemble_limit(projection_p(init), ancient_g(init, 1.0), 1.0)


def test_discrete_steps_floors_robustly():
    assert discrete_steps(0.1 ** -3, 1.0) == 1000
    assert discrete_steps(8.0, 0.5) == 4
    assert discrete_steps(3.0, 0.5) == 1


def test_discretization_lemma_frozen_chain():
    frozen = RateMatrix(TWO, np.zeros((2, 2)))
    scaling = ScalingSequence.seedbank([0.2, 0.1])
    report = verify_discretization_lemma(lambda c: frozen, scaling, [1.0], (0, 0))
    assert all(r.tv == 0.0 and r.bound == 0.0 for r in report.records)
    assert report.passed


def test_discretization_lemma_seedbank():
    init = InitialBlocks(2, 1)
    q_family, _, _ = seedbank_family(init, 1.0)
    scaling = ScalingSequence.seedbank([0.2, 0.1, 0.05])
    report = verify_discretization_lemma(q_family, scaling, [1.0], init.state)
    assert report.passed
    assert report.bounds_decreasing
    assert [r.steps for r in report.records] == [125, 1000, 8000]


def test_pipeline_recovers_projection_and_generator():
    init = InitialBlocks(3, 2)
    q_family, decompose, bound = seedbank_family(init, 1.0)
    scaling = ScalingSequence.seedbank([0.2, 0.1, 0.05, 0.02])
    report = run_pipeline(q_family, decompose, scaling, [10, 40, 160], [1.0], init.state, rate_bound=bound)
    P = projection_p(init)
    assert report.passed
    assert np.array_equal(report.limit.P_hat.entries, P.entries)
    reference = reduce_generator(P, ancient_g(init, 1.0)).entries
    assert np.abs(report.limit.G_hat.entries - reference).max() <= 5 * 0.02
    assert report.limit.rounding_error < 0.05
    semigroup = report.semigroup[1.0].entries
    exact = ancient_semigroup(ancient_lines_semigroup(init, 1.0), 1.0).entries
    assert np.abs(semigroup - exact).max() < 0.05


def test_pipeline_on_two_island_family():
    init = InitialBlocks(2, 2)
    q_family, decompose, bound = seedbank_family(init, 1.0, structured=True)
    scaling = ScalingSequence.seedbank([0.2, 0.1, 0.05, 0.02])
    report = run_pipeline(q_family, decompose, scaling, [10, 40, 160], [0.5], init.state, rate_bound=bound)
    P = projection_p(init)
    assert np.array_equal(report.limit.P_hat.entries, P.entries)
    reference = reduce_generator(P, imbalanced_ghat(init, 1.0)).entries
    assert np.abs(report.limit.G_hat.entries - reference).max() <= 5 * 0.02
