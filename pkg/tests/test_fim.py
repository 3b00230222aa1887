import math

import numpy as np
import pytest

from mpeb import fim
from mpeb.channel import DmParams, build_link, rms_bandwidth_sq
from mpeb.gradients import SPEED_OF_LIGHT as C, unit

from conftest import synthetic_link


def closed_form_delay_info(alpha, params, w2=1.0):
    return 8 * math.pi ** 2 * rms_bandwidth_sq(params) * abs(alpha) ** 2 / params.n0 * w2


def test_single_path_matches_closed_form(params, awgn):
    a = 2e-3 * np.exp(0.7j)
    link = synthetic_link([20e-9], [0.3], [a])
    E, deg = fim.delay_efim(link, params, awgn)
    assert not deg
    assert E[0, 0] == pytest.approx(closed_form_delay_info(a, params), rel=0.02)
    En, _ = fim.delay_efim(link, params, awgn, "no-overlap")
    assert E[0, 0] == pytest.approx(En[0, 0], rel=0.02)


def test_efim_scalar_reduction(params, awgn):
    link = synthetic_link([20e-9], [0.0], [1e-3 * np.exp(1.1j)])
    b = fim.fim_blocks(link, params, awgn)
    E, _ = fim.efim_delays(b)
    expected = b.A[0, 0] - (b.BR[0, 0] ** 2 + b.BI[0, 0] ** 2) / b.C[0, 0]
    assert E[0, 0] == pytest.approx(expected, rel=1e-12)


def test_zero_amplitudes_give_zero_blocks(params, awgn):
    link = synthetic_link([20e-9, 23e-9], [0.0, 1.0], [0, 0])
    b = fim.fim_blocks(link, params, awgn)
    for M in (b.A, b.BR, b.BI):
        assert not np.any(M)


def test_zero_coupling_returns_a():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = fim.FimBlocks(A=A, BR=np.zeros((2, 2)), BI=np.zeros((2, 2)), C=np.eye(2))
    np.testing.assert_allclose(fim.efim_delays(b)[0], A)


def test_schur_below_a_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        X = rng.normal(size=(4 * k, 2 * k))
        alpha = rng.normal(size=k) + 1j * rng.normal(size=k)
        blocks = fim.blocks_from_gram(X.T @ X, alpha)
        full = blocks.assembled()
        assert np.linalg.eigvalsh(full).min() >= -1e-9 * np.linalg.norm(full, 2)
        E, _ = fim.efim_delays(blocks)
        assert np.linalg.eigvalsh(blocks.A - E).min() >= -1e-9 * np.linalg.norm(blocks.A, 2)
        assert np.linalg.eigvalsh(E).min() >= -1e-9 * np.linalg.norm(blocks.A, 2)


def test_separated_paths_decouple(params, awgn):
    link = synthetic_link([20e-9, 28e-9], [0.0, 1.0], [1e-3, 0.8e-3j])
    b = fim.fim_blocks(link, params, awgn)
    for M in (b.A, b.C):
        assert abs(M[0, 1]) <= 1e-3 * min(M[0, 0], M[1, 1])


def test_assembled_fim_psd(room, params):
    link = build_link((10, 7), (4.2, 3.3), room, 2, params)
    J = fim.fim_blocks(link, params, DmParams()).assembled()
    np.testing.assert_allclose(J, J.T, rtol=0, atol=1e-12 * np.abs(J).max())
    assert np.linalg.eigvalsh(J).min() >= -1e-9 * np.linalg.norm(J, 2)


def test_dm_weight_halves_information(params):
    link = synthetic_link([20e-9], [0.0], [1e-3], tau_los=10e-9)
    dm = DmParams()
    s = fim.ranging_information(link, params, dm)[0]
    # pick omega1 so that T_N * S(tau) = N0 at this delay
    s_unit = fim.ranging_information(link, params, DmParams(omega1=0.0))[0]
    from mpeb.channel import dm_pdp
    shape = dm_pdp(20e-9, DmParams(omega1=1.0), 10e-9)
    half = DmParams(omega1=params.n0 / (params.tn * shape))
    assert fim.ranging_information(link, params, half)[0] == pytest.approx(s_unit / 2)
    assert s < s_unit


def test_toa_rank_one_and_orthogonal_pair():
    lam = 1e20
    g = fim.agent_rows(synthetic_link([1e-8], [0.4], [1]))
    J = fim.efim_position_toa([(np.array([[lam]]), g)])
    w, v = np.linalg.eigh(J)
    assert w[0] == pytest.approx(0, abs=1e-9 * w[1])
    np.testing.assert_allclose(abs(v[:, 1] @ unit(0.4)), 1, rtol=1e-12)
    assert math.isinf(fim.peb(J))
    G = fim.agent_rows(synthetic_link([1e-8, 2e-8], [0.0, math.pi / 2], [1, 1]))
    J = fim.efim_position_toa([(lam * np.eye(2), G)])
    np.testing.assert_allclose(J, lam / C ** 2 * np.eye(2), rtol=1e-12, atol=1e-12 * lam / C ** 2)
    assert fim.peb(J) == pytest.approx(C * math.sqrt(2 / lam), rel=1e-12)


def test_adding_anchor_never_hurts(room, params, awgn):
    rng = np.random.default_rng(9)
    for _ in range(10):
        agent = rng.uniform([0.5, 0.5], [9.5, 6.7])
        terms = []
        pebs = []
        for anchor in ((10, 7), (2, 1), (5, 0.5)):
            link = build_link(anchor, agent, room, 1, params)
            E, _ = fim.delay_efim(link, params, awgn)
            terms.append((E, fim.agent_rows(link)))
            pebs.append(fim.peb(fim.efim_position_toa(terms)))
        assert pebs[1] <= pebs[0] * (1 + 1e-12) and pebs[2] <= pebs[1] * (1 + 1e-12)


def test_tdoa_single_los_anchor_has_no_information():
    g = fim.agent_rows(synthetic_link([1e-8], [0.4], [1]))
    J = fim.efim_position_tdoa([(np.array([[1e20]]), g, 0)], 1)
    np.testing.assert_allclose(J, 0, atol=1e-6)


def test_tdoa_below_toa(room, params, awgn):
    agent = np.array([4.0, 3.0])
    terms = []
    for anchor in ((10, 7), (2, 1)):
        link = build_link(anchor, agent, room, 2, params)
        E, _ = fim.delay_efim(link, params, awgn)
        terms.append((E, fim.agent_rows(link)))
    toa = fim.efim_position_toa(terms)
    sync = fim.efim_position_tdoa([(E, G, 0) for E, G in terms], 1)
    asyn = fim.efim_position_tdoa([(E, G, i) for i, (E, G) in enumerate(terms)], 2)
    tol = 1e-9 * np.linalg.norm(toa)
    assert np.linalg.eigvalsh(toa - sync).min() >= -tol
    assert np.linalg.eigvalsh(sync - asyn).min() >= -tol
    assert fim.peb(toa) <= fim.peb(sync) <= fim.peb(asyn)


def test_coop_single_agent_reduces_to_mono(room, params, awgn):
    link = build_link((4, 3), (4, 3), room, 2, params, mono=True)
    E, _ = fim.delay_efim(link, params, awgn)
    G = fim.mono_rows(link)
    out = fim.efim_position_coop([(E, G)], 1)
    np.testing.assert_allclose(out[0], fim.efim_position_toa([(E, G)]), rtol=1e-12)


def test_schur_complement_pinv_handles_unobservable():
    J = np.zeros((4, 4))
    J[:2, :2] = np.diag([2.0, 3.0])
    np.testing.assert_allclose(fim.schur_complement(J, [0, 1]), np.diag([2.0, 3.0]))


def test_peb_examples():
    a = 7.0
    assert fim.peb(np.diag([a, a])) == pytest.approx(math.sqrt(2 / a))
    assert fim.peb(np.diag([4.0, 1.0])) == pytest.approx(math.sqrt(1.25))
    assert fim.peb(np.diag([4.0, 1.0])) == pytest.approx(1.118, abs=1e-3)
    assert math.isinf(fim.peb(np.outer([1, 2], [1, 2])))
    assert math.isinf(fim.peb(np.zeros((2, 2))))


def test_ellipse_examples():
    e = fim.error_ellipse(np.diag([4.0, 1.0]), scale=20)
    assert e.a == pytest.approx(20.0)
    assert e.b == pytest.approx(10.0)
    assert abs(e.theta) == pytest.approx(math.pi / 2)
    circ = fim.error_ellipse(3 * np.eye(2), scale=1)
    assert circ.a == pytest.approx(circ.b)
    e2 = fim.error_ellipse(np.diag([4.0, 1.0]), scale=40)
    assert e2.a == pytest.approx(2 * e.a) and e2.b == pytest.approx(2 * e.b)
    assert fim.error_ellipse(np.outer([1, 0], [1, 0])) is None
    R = np.array([[math.cos(0.3), -math.sin(0.3)], [math.sin(0.3), math.cos(0.3)]])
    rot = fim.error_ellipse(R @ np.diag([4.0, 1.0]) @ R.T, scale=1)
    assert rot.theta == pytest.approx(0.3 + math.pi / 2 - math.pi)
