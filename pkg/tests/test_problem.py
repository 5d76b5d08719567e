import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import program_optimum
from shield.instances import d1, d2, random_program, t0
from shield.problem import (ConstraintBlock, EpigraphProgram, ProgramFormatError, RegularizedProgram,
                            dumps, epsilon_crit, loads, tighten, validate)
from shield.solver import solve


def test_identity_program_is_valid():
    pr = RegularizedProgram.build(np.eye(2), np.zeros(2), A_s=[[1.0, 0.0]], b_s=[1.0],
                                  S=np.eye(2), lam=1.0, zeta=0.5, epsilon=0.1)
    report = validate(pr)
    assert report.ok and bool(report) and str(report) == "ok"


def test_negative_eigenvalue_reported():
    pr = RegularizedProgram.build(np.diag([1.0, -1.0]), np.zeros(2))
    assert "not positive definite" in validate(pr)


def test_zero_screenable_row_reported():
    pr = RegularizedProgram.build(np.eye(2), np.zeros(2), A_s=[[0.0, 0.0]], b_s=[1.0])
    assert "zero Lipschitz constant" in validate(pr)


def test_bad_selection_rows_and_params_reported():
    pr = RegularizedProgram.build(np.eye(2), np.zeros(2), S=[[1.0, 1.0]], lam=-1.0, zeta=0.0, epsilon=0.0)
    report = validate(pr)
    for text in ("not unit rows", "lambda must be nonnegative", "zeta must be positive",
                 "epsilon must be positive"):
        assert text in report


def test_asymmetric_q_reported():
    pr = RegularizedProgram.build([[2.0, 1.0], [0.0, 2.0]], np.zeros(2))
    assert "not symmetric" in validate(pr)


def test_lipschitz_is_row_norm():
    blk = ConstraintBlock([[3.0, 4.0], [0.0, -2.0]], [1.0, 2.0])
    np.testing.assert_allclose(blk.lipschitz, [5.0, 2.0])


def test_epsilon_crit_examples():
    assert epsilon_crit(d1()) == pytest.approx(0.125)
    pr = RegularizedProgram.build(4 * np.eye(2), np.zeros(2), A_s=[[2.0, 0.0]], b_s=[1.0], zeta=1.0)
    assert epsilon_crit(pr) == pytest.approx(0.5)
    half = pr.with_params(zeta=0.5)
    assert epsilon_crit(half) == pytest.approx(epsilon_crit(pr) / 4)
    assert epsilon_crit(t0()) == np.inf


@given(st.integers(0, 10_000))
def test_epsilon_crit_monotone(seed):
    pr = random_program(seed, max_n=8, max_screen=6)
    e = epsilon_crit(pr)
    assert e > 0
    assert epsilon_crit(pr.with_params(zeta=2 * pr.zeta)) >= e
    scaled = RegularizedProgram(pr.Q, pr.c, ConstraintBlock(2 * pr.screenable.A, pr.screenable.b),
                                pr.immutable, pr.equality, pr.S, pr.lam, pr.zeta, pr.epsilon)
    assert epsilon_crit(scaled) <= e
    stiffer = RegularizedProgram(pr.Q + np.eye(pr.n), pr.c, pr.screenable, pr.immutable, pr.equality,
                                 pr.S, pr.lam, pr.zeta, pr.epsilon)
    assert epsilon_crit(stiffer) >= e


def test_tighten_examples():
    assert tighten(d1()).screenable.b.tolist() == [4.5]
    assert tighten(d2()).screenable.b.tolist() == [0.5]
    pr = t0()
    assert tighten(pr) is pr
    base = d2()
    tt = tighten(base)
    np.testing.assert_array_equal(tt.immutable.b, base.immutable.b)


@given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_tighten_composes(z1, z2):
    pr = d1()
    twice = tighten(tighten(pr, z1), z2)
    once = tighten(pr, z1 + z2)
    np.testing.assert_allclose(twice.screenable.b, once.screenable.b, atol=1e-12)


def test_epigraph_row_layout():
    pr = d2()
    epi = EpigraphProgram(pr)
    qp = epi.qp()
    assert qp.n == 2 and qp.m == 3
    sl = epi.row_slices()
    assert (sl["screenable"], sl["epi_pos"], sl["epi_neg"]) == (slice(0, 1), slice(1, 2), slice(2, 3))
    assert EpigraphProgram(pr).qp(drop_redundant=False).m == 4


@pytest.mark.parametrize("seed", range(100))
def test_epigraph_matches_enumeration(seed):
    pr = random_program(seed, n=int(np.random.default_rng(seed).integers(2, 7)),
                        n_screen=3, n_immut=1, n_eq=int(seed % 2), n_sparse=2)
    sol = solve(pr)
    x_ref, v_ref = program_optimum(pr)
    assert sol.optimal
    np.testing.assert_allclose(sol.theta, x_ref, atol=1e-6)
    assert sol.objective == pytest.approx(v_ref, abs=1e-6)
    # at the optimum the slacks equal |S theta|
    np.testing.assert_allclose(sol.s, np.abs(pr.S @ sol.theta), atol=1e-8)


@given(st.integers(0, 10_000))
def test_serialization_roundtrip(seed):
    pr = random_program(seed, max_n=6, max_screen=5)
    back = loads(dumps(pr))
    for a, b in ((pr.Q, back.Q), (pr.c, back.c), (pr.S, back.S), (pr.screenable.A, back.screenable.A),
                 (pr.immutable.b, back.immutable.b), (pr.equality[0], back.equality[0])):
        np.testing.assert_array_equal(a, b)
    assert (back.lam, back.zeta, back.epsilon) == (pr.lam, pr.zeta, pr.epsilon)


def test_parse_error_has_position():
    with pytest.raises(ProgramFormatError) as info:
        loads('{"version": "shield-v1",\n "Q": [[1]\n')
    assert info.value.line == 3 and info.value.column is not None


def test_wrong_version_and_missing_keys():
    doc = json.loads(dumps(d1()))
    doc["version"] = "other"
    with pytest.raises(ProgramFormatError):
        loads(json.dumps(doc))
    doc = json.loads(dumps(d1()))
    del doc["Q"]
    with pytest.raises(ProgramFormatError, match="missing"):
        loads(json.dumps(doc))


def test_zero_lambda_has_no_sparse_block():
    pr = d1().with_params(lam=0.0)
    assert pr.n_sparse == 0


def test_zero_dimensional_program():
    pr = RegularizedProgram.build(np.zeros((0, 0)), np.zeros(0), A_s=np.zeros((1, 0)), b_s=[1.0])
    assert pr.n == 0 and pr.n_screenable == 1
    sol = solve(pr)
    assert sol.optimal and sol.theta.size == 0
