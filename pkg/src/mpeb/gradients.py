"""MPC delays and spatial delay gradients.

A gradient row tells how the delay of one multipath component changes
when a node moves. For an MPC between an anchor-side node ``j`` (whose VA
produced it) and an agent ``n``::

    h = (1/c) * (delta(n, l) e(phi) - delta(j, l) e((-1)^Q phi + 2 nu))

where ``l`` is the node being moved, ``phi`` the angle of
``p_agent - p_VA``, ``Q`` the VA order and ``nu`` its effective wall
angle. The helpers below are written for numpy broadcasting so the same
code serves single MPCs and whole grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import GeometryError, VirtualAnchor

SPEED_OF_LIGHT = 299_792_458.0

# Below this VA-agent distance (m) the MPC angle is undefined.
DEGENERATE_DISTANCE = 1e-9


def unit(phi) -> np.ndarray:
    """Unit vector(s) ``[cos phi, sin phi]`` with a trailing axis of size 2."""
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def rot(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class Mpc:
    """One deterministic multipath component of the link ``j -> n``."""

    va: VirtualAnchor
    delay: float
    angle: float
    agent: int = 0
    node: int = 1

    @property
    def order(self) -> int:
        return self.va.order

    @property
    def nu(self) -> float:
        return self.va.effective_angle


def mpc_delay(agent, va) -> float:
    """Propagation delay (s) between an agent and a VA (or plain point)."""
    pos = va.position if isinstance(va, VirtualAnchor) else va
    return float(np.linalg.norm(np.asarray(agent, float) - np.asarray(pos, float))) / SPEED_OF_LIGHT


def mpc_angle(agent, va) -> float:
    pos = va.position if isinstance(va, VirtualAnchor) else va
    d = np.asarray(agent, float) - np.asarray(pos, float)
    if np.hypot(d[0], d[1]) < DEGENERATE_DISTANCE:
        raise GeometryError("agent coincides with the virtual anchor; MPC angle undefined")
    return float(np.arctan2(d[1], d[0]))


def make_mpc(agent, va: VirtualAnchor, agent_index: int = 0, node_index: int = 1) -> Mpc:
    return Mpc(va=va, delay=mpc_delay(agent, va), angle=mpc_angle(agent, va),
               agent=agent_index, node=node_index)


def va_jacobian(va: VirtualAnchor) -> np.ndarray:
    """Jacobian of the VA position w.r.t. the position of its physical node.

    Its transpose is ``Rot(2 nu) diag(1, -1)^Q``.
    """
    flip = np.diag([1.0, -1.0]) if va.order % 2 else np.eye(2)
    return (rot(2.0 * va.effective_angle) @ flip).T


def anchor_direction(phi, order, nu):
    """Angle ``(-1)^Q phi + 2 nu`` of the anchor-side gradient term."""
    sign = np.where(np.asarray(order) % 2 == 1, -1.0, 1.0)
    return sign * np.asarray(phi, float) + 2.0 * np.asarray(nu, float)


def agent_gradient(phi) -> np.ndarray:
    """Delay gradient w.r.t. the agent: ``e(phi) / c``."""
    return unit(phi) / SPEED_OF_LIGHT


def anchor_gradient(phi, order, nu) -> np.ndarray:
    """Delay gradient w.r.t. the transmitting node: ``-e((-1)^Q phi + 2 nu) / c``."""
    return -unit(anchor_direction(phi, order, nu)) / SPEED_OF_LIGHT


def mono_gradient(phi, order, nu) -> np.ndarray:
    """Delay gradient when transmitter and receiver are the same moving node."""
    return agent_gradient(phi) + anchor_gradient(phi, order, nu)


def mono_gradient_parity(phi, order, nu) -> np.ndarray:
    """Closed form of :func:`mono_gradient` split by the parity of ``Q``.

    Even ``Q``: ``(2/c) sin(nu) e(phi + nu - pi/2)``;
    odd ``Q``: ``(2/c) sin(nu - phi) e(nu - pi/2)``.
    """
    phi = np.asarray(phi, float)
    nu = np.asarray(nu, float)
    odd = (np.asarray(order) % 2 == 1)[..., None]
    even_form = (2.0 * np.sin(nu))[..., None] * unit(phi + nu - np.pi / 2)
    odd_form = (2.0 * np.sin(nu - phi))[..., None] * unit(nu - np.pi / 2)
    return np.where(odd, odd_form, even_form) / SPEED_OF_LIGHT


def delay_gradient(va: VirtualAnchor, agent_pos, wrt: int, agent: int, node: int) -> np.ndarray:
    """Gradient of the MPC delay w.r.t. the position of node ``wrt``.

    ``agent`` is the receiving agent index ``n`` and ``node`` the index
    ``j`` of the node whose VA produced the MPC. Nodes other than these two
    get a zero gradient.
    """
    phi = mpc_angle(agent_pos, va)
    h = np.zeros(2)
    if wrt == agent:
        h += agent_gradient(phi)
    if wrt == node:
        h += anchor_gradient(phi, va.order, va.effective_angle)
    return h


def gradient_agent(mpc: Mpc) -> np.ndarray:
    return agent_gradient(mpc.angle)


def gradient_anchor(mpc: Mpc) -> np.ndarray:
    return anchor_gradient(mpc.angle, mpc.order, mpc.nu)


def gradient_mono(mpc: Mpc) -> np.ndarray:
    if mpc.order < 1:
        raise ValueError("monostatic gradients are defined for reflected paths only (Q >= 1)")
    return mono_gradient(mpc.angle, mpc.order, mpc.nu)


def stack_gradients(mpcs: Sequence[Mpc], role: str = "agent") -> np.ndarray:
    """Stack per-MPC gradients as rows of a ``K x 2`` matrix.

    ``role`` is ``"agent"`` (G_T), ``"anchor"`` (G_R) or ``"mono"`` (G_M).
    """
    fn = {"agent": gradient_agent, "anchor": gradient_anchor, "mono": gradient_mono}[role]
    if not mpcs:
        return np.zeros((0, 2))
    return np.array([fn(m) for m in mpcs])


def link_jacobian(mpcs: Sequence[Mpc], n_nodes: int, agent: int, node: int) -> np.ndarray:
    """Delay Jacobian ``K x 2N`` of a link w.r.t. all ``n_nodes`` node positions.

    Uninvolved nodes get zero columns; ``agent == node`` is the monostatic
    case where both terms land in the same columns. Nodes with an index
    outside ``range(n_nodes)`` (fixed anchors) contribute no columns.
    """
    H = np.zeros((len(mpcs), 2 * n_nodes))
    if 0 <= agent < n_nodes:
        H[:, 2 * agent:2 * agent + 2] += stack_gradients(mpcs, "agent")
    if 0 <= node < n_nodes:
        H[:, 2 * node:2 * node + 2] += stack_gradients(mpcs, "anchor")
    return H
