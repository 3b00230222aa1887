"""Fisher information for MPC parameters and the resulting position bounds.

Per link the signal parameters are the MPC delays and the real and
imaginary parts of the complex amplitudes. The amplitudes are nuisance
parameters; eliminating them through a Schur complement leaves a
``K x K`` equivalent FIM (EFIM) over the delays. Position EFIMs follow by
projecting the delay EFIMs through the spatial delay gradients and
eliminating the remaining nuisance parameters (clock offsets, partner
positions) the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from .channel import (DmParams, LinkModel, NoiseWhitener, SignalParams, dm_pdp, frame_pdp,
                      rms_bandwidth_sq, signal_matrices)
from .gradients import SPEED_OF_LIGHT, agent_gradient, anchor_gradient

# condition number of the amplitude block above which it is regularized
COND_LIMIT = 1e12
# relative eigenvalue floor below which a position EFIM counts as singular
SINGULAR_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FimBlocks:
    """Blocks of the signal-parameter FIM ordered as ``[tau, Re a, Im a]``."""

    A: np.ndarray
    BR: np.ndarray
    BI: np.ndarray
    C: np.ndarray

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def assembled(self) -> np.ndarray:
        k = self.k
        Z = np.zeros((k, k))
        return np.block([[self.A, self.BR, self.BI],
                         [self.BR.T, self.C, Z],
                         [self.BI.T, Z, self.C]])


@dataclass(frozen=True)
class Ellipse:
    """Error ellipse: semi-axes ``a >= b`` (m), orientation of ``a`` (rad)."""

    a: float
    b: float
    theta: float


def blocks_from_gram(gram: np.ndarray, alpha) -> FimBlocks:
    """FIM blocks from ``[S, dS]^T C^{-1} [S, dS]`` and the amplitudes."""
    alpha = np.asarray(alpha, dtype=complex)
    k = len(alpha)
    Gss = gram[:k, :k]
    Gsd = gram[:k, k:]
    Gdd = gram[k:, k:]
    A = 2.0 * np.real(np.outer(alpha, alpha.conj())) * Gdd
    # [B^R]_{k,k'} = 2 Re(a_k) s_k'^T C^-1 ds_k
    BR = 2.0 * alpha.real[:, None] * Gsd.T
    BI = 2.0 * alpha.imag[:, None] * Gsd.T
    C = 2.0 * Gss
    return FimBlocks(A=_sym(A), BR=BR, BI=BI, C=_sym(C))


def fim_blocks(link: LinkModel, params: SignalParams, dm: DmParams,
               whitener: Optional[NoiseWhitener] = None) -> FimBlocks:
    """Signal-parameter FIM blocks of one link under AWGN plus DM."""
    if whitener is None:
        rel, n = link.window(params)
        whitener = NoiseWhitener(params, frame_pdp(params, dm, n))
    else:
        rel, n = link.window(params, whitener.n)
    S, D = signal_matrices(rel, params, n)
    gram = whitener.gram(np.hstack([S, D]))
    return blocks_from_gram(gram, link.amplitudes)


def efim_delays(blocks: FimBlocks):
    """Delay EFIM ``A - B C^{-1} B^T`` with the amplitudes eliminated.

    Returns ``(efim, degenerate)``; ``degenerate`` marks an amplitude block
    whose condition number exceeded ``COND_LIMIT`` and was regularized.
    """
    k = blocks.k
    if k == 0:
        return np.zeros((0, 0)), False
    C = blocks.C
    degenerate = False
    if not np.all(np.isfinite(C)) or np.linalg.cond(C) > COND_LIMIT:
        degenerate = True
        C = C + 1e-12 * np.trace(C) / k * np.eye(k)
    fac = linalg.cho_factor(C, lower=True, check_finite=False)
    X = linalg.cho_solve(fac, np.hstack([blocks.BR.T, blocks.BI.T]), check_finite=False)
    reduction = blocks.BR @ X[:, :k] + blocks.BI @ X[:, k:]
    return _sym(blocks.A - reduction), degenerate


def ranging_information(link: LinkModel, params: SignalParams, dm: DmParams) -> np.ndarray:
    """Per-MPC delay information without path overlap (1/s^2).

    ``8 pi^2 beta_eff^2 |a_k|^2 / (N0 + T_N S_nu(tau_k))``.
    """
    sinr = np.abs(link.amplitudes) ** 2 / (
        params.n0 + params.tn * dm_pdp(link.delays, dm, link.tau_los))
    return 8.0 * math.pi ** 2 * rms_bandwidth_sq(params) * sinr


def delay_efim(link: LinkModel, params: SignalParams, dm: DmParams, model: str = "full",
               whitener: Optional[NoiseWhitener] = None):
    """Delay EFIM of a link under ``model`` ``"full"`` or ``"no-overlap"``.

    Returns ``(efim, degenerate)``.
    """
    if link.k == 0:
        return np.zeros((0, 0)), False
    if model == "no-overlap":
        return np.diag(ranging_information(link, params, dm)), False
    if model != "full":
        raise ValueError(f"unknown model {model!r}")
    return efim_delays(fim_blocks(link, params, dm, whitener))


def efim_no_overlap(links: Iterable[LinkModel], params: SignalParams, dm: DmParams) -> np.ndarray:
    """Agent position EFIM assuming mutually orthogonal MPC pulses.

    Each MPC contributes ``lambda_k h_k h_k^T`` where ``h_k`` is its
    delay gradient w.r.t. the agent (``G_M`` rows for monostatic links).
    """
    J = np.zeros((2, 2))
    for link in links:
        if link.k == 0:
            continue
        G = mono_rows(link) if link.mono else agent_rows(link)
        J += project(np.diag(ranging_information(link, params, dm)), G)
    return J


def delay_efims_batch(links: Sequence[LinkModel], params: SignalParams, dm: DmParams,
                      whitener: NoiseWhitener):
    """Full-model delay EFIMs of many links sharing one whitener.

    All signal vectors are whitened in a single block solve.
    """
    rel, spans = [], []
    start = 0
    for link in links:
        r, _ = link.window(params, whitener.n)
        rel.append(r)
        spans.append((start, start + link.k))
        start += link.k
    if start == 0:
        return [(np.zeros((0, 0)), False) for _ in links]
    S, D = signal_matrices(np.concatenate(rel), params, whitener.n)
    Y = whitener.whiten(np.hstack([S, D]))
    Ys, Yd = Y[:, :start], Y[:, start:]
    out = []
    for link, (lo, hi) in zip(links, spans):
        if hi == lo:
            out.append((np.zeros((0, 0)), False))
            continue
        Yl = np.hstack([Ys[:, lo:hi], Yd[:, lo:hi]])
        out.append(efim_delays(blocks_from_gram(Yl.T @ Yl, link.amplitudes)))
    return out


def agent_rows(link: LinkModel) -> np.ndarray:
    """``G_T``: delay gradients w.r.t. the receiving agent."""
    return agent_gradient(link.angles).reshape(-1, 2)


def anchor_rows(link: LinkModel) -> np.ndarray:
    """``G_R``: delay gradients w.r.t. the transmitting node."""
    return anchor_gradient(link.angles, link.orders, link.nus).reshape(-1, 2)


def mono_rows(link: LinkModel) -> np.ndarray:
    """``G_M``: delay gradients when transmitter and receiver move together."""
    return agent_rows(link) + anchor_rows(link)


def project(efim: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``H^T efim H``."""
    if H.shape[0] == 0:
        return np.zeros((H.shape[1], H.shape[1]))
    return _sym(H.T @ efim @ H)


def efim_position_toa(terms: Iterable) -> np.ndarray:
    """Position EFIM of one agent from independent links.

    ``terms`` yields ``(delay_efim, G_T)`` pairs, one per anchor.
    """
    J = np.zeros((2, 2))
    for efim, G in terms:
        J += project(efim, G)
    return J


def efim_position_tdoa(terms: Iterable, n_groups: int) -> np.ndarray:
    """Position EFIM with one unknown clock offset per synchronization group.

    ``terms`` yields ``(delay_efim, G_T, group)``. The offset adds to every
    delay of the group's links, so its Jacobian column is all ones.
    """
    dim = 2 + n_groups
    J = np.zeros((dim, dim))
    for efim, G, group in terms:
        H = np.zeros((G.shape[0], dim))
        H[:, :2] = G
        H[:, 2 + group] = 1.0
        J += project(efim, H)
    return schur_complement(J, [0, 1])


def joint_fim(terms: Iterable, n_agents: int, prior: Optional[dict] = None) -> np.ndarray:
    """Joint ``2N x 2N`` position FIM of cooperating agents.

    ``terms`` yields ``(delay_efim, H)`` with ``H`` of shape ``K x 2N``.
    ``prior`` optionally maps agent index -> information added to its block.
    """
    J = np.zeros((2 * n_agents, 2 * n_agents))
    for efim, H in terms:
        J += project(efim, H)
    for idx, mu in (prior or {}).items():
        J[2 * idx:2 * idx + 2, 2 * idx:2 * idx + 2] += mu * np.eye(2)
    return J


def efim_position_coop(terms: Iterable, n_agents: int, agents: Optional[Sequence[int]] = None,
                       prior: Optional[dict] = None) -> dict:
    """Per-agent 2x2 EFIMs after eliminating all other agents' positions."""
    J = joint_fim(terms, n_agents, prior)
    agents = range(n_agents) if agents is None else agents
    return {a: schur_complement(J, [2 * a, 2 * a + 1]) for a in agents}


def schur_complement(J: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """EFIM of the parameters ``keep`` with all others treated as nuisance.

    The nuisance block is pseudo-inverted so unobservable nuisance
    directions are handled without failing.
    """
    keep = list(keep)
    rest = [i for i in range(J.shape[0]) if i not in keep]
    A = J[np.ix_(keep, keep)]
    if not rest:
        return _sym(A)
    B = J[np.ix_(keep, rest)]
    C = J[np.ix_(rest, rest)]
    return _sym(A - B @ np.linalg.pinv(C, rcond=1e-12, hermitian=True) @ B.T)


def is_singular(I: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(_sym(np.asarray(I, dtype=float)))
    return not (w[-1] > 0 and w[0] > SINGULAR_RTOL * w[-1])


def peb(I: np.ndarray) -> float:
    """Position error bound ``sqrt(trace(I^{-1}))`` (m); ``inf`` if singular."""
    I = np.asarray(I, dtype=float)
    if not np.all(np.isfinite(I)) or is_singular(I):
        return math.inf
    return math.sqrt(np.trace(np.linalg.inv(I)))


def error_ellipse(I: np.ndarray, scale: float = 20.0) -> Optional[Ellipse]:
    """Scaled standard-deviation ellipse of ``I^{-1}``; ``None`` if singular."""
    I = np.asarray(I, dtype=float)
    if not np.all(np.isfinite(I)) or is_singular(I):
        return None
    w, v = np.linalg.eigh(np.linalg.inv(_sym(I)))
    major = v[:, 1]
    theta = math.atan2(major[1], major[0])
    if theta <= -math.pi / 2:
        theta += math.pi
    elif theta > math.pi / 2:
        theta -= math.pi
    return Ellipse(a=scale * math.sqrt(w[1]), b=scale * math.sqrt(max(w[0], 0.0)), theta=theta)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


