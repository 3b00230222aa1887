"""Transmit pulse, sampled signal vectors, MPC amplitudes and noise statistics.

The received baseband signal of one link is modelled as a sum of delayed,
scaled copies of a unit-energy root-raised-cosine (RRC) pulse, plus
diffuse multipath (DM) with a double-exponential power delay profile and
white Gaussian noise. Only second-order DM statistics are needed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, linalg

from .gradients import SPEED_OF_LIGHT


class PulseWindowError(ValueError):
    """Requested pulse delay does not fit into the observation window."""


@dataclass(frozen=True)
class SignalParams:
    """Pulse and sampling parameters.

    ``noise_psd`` is the two-sided AWGN level ``N0/2``. ``sample_period``
    and ``nyquist_period`` default to ``T_p/16`` and ``T_p``.
    """

    carrier: float = 7e9
    pulse_duration: float = 1e-9
    rolloff: float = 0.6
    noise_psd: float = 1e-8
    sample_period: Optional[float] = None
    nyquist_period: Optional[float] = None
    reflection_loss_db: float = 3.0
    truncation: float = 8.0  # pulse support is |t| <= truncation * T_p

    def __post_init__(self):
        for name in ("carrier", "pulse_duration", "noise_psd", "truncation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in (0, 1]")
        if self.ts > self.pulse_duration / 8 * (1 + 1e-12):
            raise ValueError("sample period must not exceed T_p / 8")

    @property
    def ts(self) -> float:
        return self.sample_period if self.sample_period is not None else self.pulse_duration / 16

    @property
    def tn(self) -> float:
        return self.nyquist_period if self.nyquist_period is not None else self.pulse_duration

    @property
    def n0(self) -> float:
        return 2.0 * self.noise_psd

    @property
    def sigma2(self) -> float:
        """Per-sample AWGN variance ``N0 / T_s``."""
        return self.n0 / self.ts

    @property
    def support_samples(self) -> int:
        """Half-width of the truncated pulse in samples."""
        return int(math.floor(self.truncation * self.pulse_duration / self.ts + 1e-9))

    def with_pulse(self, pulse_duration: float) -> "SignalParams":
        return replace(self, pulse_duration=pulse_duration)


@dataclass(frozen=True)
class DmParams:
    """Double-exponential DM power delay profile.

    ``omega1`` is the total (normalized) DM power, ``gamma1`` the decay and
    ``gamma_rise`` the rise time constant (s), ``chi`` the rise depth.
    """

    omega1: float = 1.16e-6
    gamma1: float = 20e-9
    gamma_rise: float = 5e-9
    chi: float = 0.98

    def __post_init__(self):
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must lie in [0, 1]")
        if not (self.gamma1 > 0 and self.gamma_rise > 0):
            raise ValueError("DM time constants must be positive")
        if self.omega1 < 0:
            raise ValueError("omega1 must be non-negative")

    @classmethod
    def off(cls) -> "DmParams":
        return cls(omega1=0.0)

    @property
    def k_norm(self) -> float:
        g1, gr, chi = self.gamma1, self.gamma_rise, self.chi
        return (g1 + gr) / (g1 * (g1 + gr * (1.0 - chi)))


# --------------------------------------------------------------------------
# RRC pulse

def _rrc_raw(x, beta):
    """Unnormalized RRC shape in units of the symbol period, with derivative."""
    x = np.asarray(x, dtype=float)
    a = math.pi * (1.0 - beta)
    b = math.pi * (1.0 + beta)
    g = 4.0 * beta
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(a * x) + g * x * np.cos(b * x)
        dnum = a * np.cos(a * x) + g * np.cos(b * x) - g * b * x * np.sin(b * x)
        den = math.pi * x * (1.0 - (g * x) ** 2)
        dden = math.pi * (1.0 - 3.0 * (g * x) ** 2)
        h = num / den
        dh = (dnum * den - num * dden) / den ** 2
    return h, dh


# half-width of the bridge used around removable singularities
_BRIDGE = 1e-4


def rrc_shape(x, beta: float):
    """RRC shape ``h(x)`` and ``h'(x)`` for ``x = t / T_p`` (no truncation).

    The formula has removable singularities at ``x = 0`` and
    ``x = +-1/(4 beta)``; points closer than ``_BRIDGE`` are linearly
    interpolated between the two bridge ends.
    """
    x = np.asarray(x, dtype=float)
    h, dh = _rrc_raw(x, beta)
    for xs in (0.0, 0.25 / beta, -0.25 / beta):
        near = np.abs(x - xs) < _BRIDGE
        if not np.any(near):
            continue
        (hl, hr), (dl, dr) = _rrc_raw(np.array([xs - _BRIDGE, xs + _BRIDGE]), beta)
        w = (x[near] - xs + _BRIDGE) / (2 * _BRIDGE)
        h = np.array(h, copy=True)
        dh = np.array(dh, copy=True)
        h[near] = hl + w * (hr - hl)
        dh[near] = dl + w * (dr - dl)
    return h, dh


@lru_cache(maxsize=None)
def _window_moments(beta: float, half_width: float):
    """Energy of ``h`` and of ``h'`` over ``|x| <= half_width``."""
    pts = [0.25 / beta] if 0.25 / beta < half_width else []

    def energy(f):
        total, _ = integrate.quad(lambda x: f(x) ** 2, 0.0, half_width, points=pts or None,
                                  limit=400, epsabs=0.0, epsrel=1e-12)
        return 2.0 * total

    e0 = energy(lambda x: float(rrc_shape(np.array([x]), beta)[0][0]))
    e1 = energy(lambda x: float(rrc_shape(np.array([x]), beta)[1][0]))
    return e0, e1


def rrc_pulse(t, params: SignalParams, derivative: bool = False):
    """Unit-energy RRC pulse ``s(t)`` (or ``s'(t)``) truncated to ``|t| <= 8 T_p``.

    The truncated pulse is rescaled so its continuous energy over the
    window is exactly one.
    """
    s, ds = pulse_pair(t, params)
    return ds if derivative else s


def pulse_pair(t, params: SignalParams):
    """``s(t)`` and ``s'(t)`` from a single shape evaluation."""
    tp = params.pulse_duration
    x = np.asarray(t, dtype=float) / tp
    e0, _ = _window_moments(params.rolloff, params.truncation)
    h, dh = rrc_shape(x, params.rolloff)
    inside = np.abs(x) <= params.truncation * (1 + 1e-12)
    scale = 1.0 / math.sqrt(tp * e0)
    return np.where(inside, h * scale, 0.0), np.where(inside, dh * scale / tp, 0.0)


def rms_bandwidth_sq(params: SignalParams) -> float:
    """Mean-square bandwidth ``beta_eff^2 = int s'^2 / (4 pi^2 int s^2)`` in Hz^2."""
    e0, e1 = _window_moments(params.rolloff, params.truncation)
    return e1 / e0 / (4.0 * math.pi ** 2 * params.pulse_duration ** 2)


def sample_signal(tau: float, params: SignalParams, n_samples: int) -> np.ndarray:
    """Sampled pulse ``[s(T_s - tau), ..., s(N T_s - tau)]``."""
    _check_window(tau, params, n_samples)
    t = np.arange(1, n_samples + 1) * params.ts - tau
    return rrc_pulse(t, params)


def pulse_derivative(tau: float, params: SignalParams, n_samples: int) -> np.ndarray:
    """Derivative of :func:`sample_signal` w.r.t. the delay, ``-s'(i T_s - tau)``."""
    _check_window(tau, params, n_samples)
    t = np.arange(1, n_samples + 1) * params.ts - tau
    return -rrc_pulse(t, params, derivative=True)


def _check_window(tau, params, n_samples):
    if not 0.0 <= tau < n_samples * params.ts - params.pulse_duration:
        raise PulseWindowError(
            f"delay {tau:.4g} s outside the observation window of {n_samples} samples")


def signal_matrices(delays, params: SignalParams, n_samples: int):
    """Signal matrix ``S`` and derivative matrix ``dS/dtau`` (``N x K`` each).

    Only the samples inside each truncated pulse support are evaluated.
    """
    delays = np.asarray(delays, dtype=float).ravel()
    k = len(delays)
    S = np.zeros((n_samples, k))
    D = np.zeros_like(S)
    if k == 0:
        return S, D
    ok = (delays >= 0.0) & (delays < n_samples * params.ts - params.pulse_duration)
    if not ok.all():
        _check_window(float(delays[~ok][0]), params, n_samples)
    rows, vals, dvals, inside = pulse_windows(delays, params, n_samples)
    cols = np.broadcast_to(np.arange(k)[:, None], rows.shape)
    S[rows[inside], cols[inside]] = vals[inside]
    D[rows[inside], cols[inside]] = dvals[inside]
    return S, D


def pulse_windows(delays, params: SignalParams, n_samples: int):
    """Pulse support of each delay as ``K x W`` arrays ``(rows, s, ds/dtau, inside)``.

    ``rows`` are 0-based sample indices; ``inside`` marks those that fall
    into the window of ``n_samples``.
    """
    delays = np.asarray(delays, dtype=float)
    ts = params.ts
    m = params.support_samples
    offsets = np.arange(-m - 1, m + 2)
    idx = np.rint(delays / ts).astype(int)[:, None] + offsets[None, :]
    t = idx * ts - delays[:, None]
    inside = (idx >= 1) & (idx <= n_samples)
    s, ds = pulse_pair(t, params)
    return idx - 1, s, -ds, inside


# --------------------------------------------------------------------------
# deterministic amplitudes and diffuse multipath

def amplitude(path_length: float, order: int, params: SignalParams) -> complex:
    """Complex MPC amplitude: Friis free-space loss plus a fixed loss per bounce."""
    path_length = np.asarray(path_length, dtype=float)
    if np.any(path_length <= 0):
        from .geometry import GeometryError
        raise GeometryError("path length must be positive")
    mag = SPEED_OF_LIGHT / (4.0 * math.pi * params.carrier * path_length)
    mag = mag * (10.0 ** (-params.reflection_loss_db / 20.0)) ** np.asarray(order)
    tau = path_length / SPEED_OF_LIGHT
    out = mag * np.exp(-2j * math.pi * params.carrier * tau)
    return complex(out) if out.ndim == 0 else out


def dm_pdp(tau, dm: DmParams, tau_los: float = 0.0):
    """DM power delay profile ``S_nu(tau)``, zero before the LOS delay."""
    tau = np.asarray(tau, dtype=float)
    x = tau - tau_los
    xp = np.maximum(x, 0.0)
    val = dm.omega1 * dm.k_norm * (1.0 - dm.chi * np.exp(-xp / dm.gamma_rise)) * np.exp(-xp / dm.gamma1)
    out = np.where(x >= 0.0, val, 0.0)
    return float(out) if out.ndim == 0 else out


def whitening_weight(tau, params: SignalParams, dm: DmParams, tau_los: float = 0.0):
    """Squared whitening weight ``w^2 = N0 / (N0 + T_N S_nu(tau))``."""
    return params.n0 / (params.n0 + params.tn * dm_pdp(tau, dm, tau_los))


def pulse_toeplitz(params: SignalParams, n_samples: int) -> np.ndarray:
    """Matrix ``P[n, i] = s((n - i) T_s)`` of shifted pulses."""
    k = np.arange(n_samples)
    return rrc_pulse((k[:, None] - k[None, :]) * params.ts, params)


def dm_covariance(params: SignalParams, pdp) -> np.ndarray:
    """DM covariance ``[C_c]_{n,m} = T_s sum_i S(i T_s) s((n-i) T_s) s((m-i) T_s)``."""
    pdp = np.asarray(pdp, dtype=float)
    P = pulse_toeplitz(params, len(pdp))
    return params.ts * (P * pdp) @ P.T


def noise_covariance(params: SignalParams, pdp) -> np.ndarray:
    """Total noise covariance ``sigma_n^2 I + C_c``."""
    C = dm_covariance(params, pdp)
    C[np.diag_indices_from(C)] += params.sigma2
    return C


def dm_covariance_band(params: SignalParams, pdp) -> np.ndarray:
    """Lower band storage of :func:`dm_covariance`: ``ab[d, n] = C[n + d, n]``."""
    pdp = np.asarray(pdp, dtype=float)
    n = len(pdp)
    m = params.support_samples
    p = rrc_pulse(np.arange(-m, m + 1) * params.ts, params)
    bw = min(2 * m, n - 1)
    ab = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        q = np.zeros(2 * m + 1)
        q[:2 * m + 1 - d] = p[d:] * p[:2 * m + 1 - d]  # q[k + m] = p(k + d) p(k)
        full = np.convolve(pdp, q)
        ab[d, :n - d] = params.ts * full[m:m + n - d]
    return ab


class NoiseWhitener:
    """Cholesky factor of the noise covariance, applied via banded block solves.

    ``whiten(X)`` returns ``L^{-1} X`` where ``C_n = L L^T``, so that
    ``X^T C_n^{-1} Y = whiten(X)^T whiten(Y)``. The factor is never
    inverted explicitly.
    """

    def __init__(self, params: SignalParams, pdp):
        pdp = np.asarray(pdp, dtype=float)
        self.params = params
        self.n = len(pdp)
        self.white = not np.any(pdp)
        if self.white:
            self.scale = 1.0 / math.sqrt(params.sigma2)
            return
        ab = dm_covariance_band(params, pdp)
        ab[0] += params.sigma2
        lb = linalg.cholesky_banded(ab, lower=True)
        bw = lb.shape[0] - 1
        self.block = max(bw, 64)
        self._diag, self._sub = self._blocks(lb, bw)

    def _blocks(self, lb, bw):
        n, m = self.n, self.block
        diag, sub = [], []
        for start in range(0, n, m):
            stop = min(start + m, n)
            rows = np.arange(start, stop)
            D = np.zeros((stop - start, stop - start))
            S = np.zeros((stop - start, m)) if start else None
            for d in range(bw + 1):
                cols = rows - d
                ok = cols >= 0
                r, c = rows[ok], cols[ok]
                vals = lb[d, c]
                inblk = c >= start
                D[r[inblk] - start, c[inblk] - start] = vals[inblk]
                if start:
                    prev = ~inblk
                    S[r[prev] - start, c[prev] - (start - m)] = vals[prev]
            diag.append(D)
            sub.append(S)
        return diag, sub

    def whiten(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.white:
            return X * self.scale
        squeeze = X.ndim == 1
        X = X.reshape(self.n, -1)
        # forward substitution leaves rows above a column's first nonzero at
        # zero, so sort columns by that row and solve only the active prefix
        nz = X != 0
        first = np.where(nz.any(axis=0), nz.argmax(axis=0), self.n)
        order = np.argsort(first, kind="stable")
        Xs = X[:, order]
        first = first[order]
        m = self.block
        Y = np.zeros_like(Xs)
        for b, start in enumerate(range(0, self.n, m)):
            stop = min(start + m, self.n)
            act = int(np.searchsorted(first, stop, side="left"))
            if act == 0:
                continue
            rhs = Xs[start:stop, :act]
            if start:
                rhs = rhs - self._sub[b] @ Y[start - m:start, :act]
            Y[start:stop, :act] = linalg.solve_triangular(self._diag[b], rhs, lower=True,
                                                          check_finite=False)
        out = np.empty_like(Y)
        out[:, order] = Y
        return out[:, 0] if squeeze else out

    def gram(self, X) -> np.ndarray:
        """``X^T C_n^{-1} X``."""
        Y = self.whiten(X)
        return Y.T @ Y


# --------------------------------------------------------------------------
# link models

@dataclass(frozen=True, eq=False)
class LinkModel:
    """Visible MPCs of one transmitter -> receiver link, sorted by delay.

    ``mono`` links have the receiver as its own transmitter; their direct
    path is excluded and the DM onset sits at zero delay.
    """

    tx: np.ndarray
    rx: np.ndarray
    delays: np.ndarray
    angles: np.ndarray
    orders: np.ndarray
    nus: np.ndarray
    amplitudes: np.ndarray
    tau_los: float
    mono: bool = False
    sequences: tuple = ()

    @property
    def k(self) -> int:
        return len(self.delays)

    def window(self, params: SignalParams, n_samples: Optional[int] = None):
        """Delays in the link's sampling frame and the number of samples.

        The sample grid starts ``support + 1`` samples before the LOS delay,
        so the DM onset always lands on the same sample and every link of a
        sweep shares one noise covariance.
        """
        lead = (params.support_samples + 1) * params.ts
        rel = self.delays - self.tau_los + lead
        need = window_length(rel.max() if self.k else lead, params)
        if n_samples is None:
            n_samples = need
        elif n_samples < need:
            raise PulseWindowError("observation window too short for this link")
        return rel, n_samples


def window_length(max_rel_delay: float, params: SignalParams) -> int:
    return int(math.ceil(max_rel_delay / params.ts)) + params.support_samples + 2


def frame_pdp(params: SignalParams, dm: DmParams, n_samples: int) -> np.ndarray:
    """DM PDP on the link sampling grid (onset at the frame's LOS sample)."""
    lead = (params.support_samples + 1) * params.ts
    return dm_pdp(np.arange(1, n_samples + 1) * params.ts, dm, lead)


def link_batch(tx, rx, plan, q_max: int, params: SignalParams, mono: bool = False):
    """Geometry and amplitudes of all candidate MPCs for many node pairs.

    ``tx`` and ``rx`` are ``(P, 2)`` arrays (broadcastable). Returns a dict
    of ``(P, S)`` arrays over the ``S`` wall sequences (``visible``,
    ``delay``, ``angle``, ``amplitude``) plus per-sequence ``order``/``nu``
    and per-point ``tau_los``.
    """
    from .geometry import effective_wall_angle, trace_paths, wall_sequences
    from .gradients import DEGENERATE_DISTANCE

    tx = np.atleast_2d(np.asarray(tx, dtype=float))
    rx = np.atleast_2d(np.asarray(rx, dtype=float))
    seqs = wall_sequences(len(plan.walls), q_max)
    if mono:
        # a loop and its reverse traversal share delay, gradient and phase,
        # so they arrive as one component with twice the amplitude
        seqs = [s for s in seqs if s and tuple(s) <= tuple(reversed(s))]
    n_pts = np.broadcast_shapes(tx.shape, rx.shape)[0]
    n_seq = len(seqs)
    visible = np.zeros((n_pts, n_seq), dtype=bool)
    dist = np.zeros((n_pts, n_seq))
    angle = np.zeros((n_pts, n_seq))
    for s, seq in enumerate(seqs):
        vis, _, va = trace_paths(tx, rx, plan, seq)
        d = rx - va
        visible[:, s] = vis
        dist[:, s] = np.hypot(d[..., 0], d[..., 1])
        angle[:, s] = np.arctan2(d[..., 1], d[..., 0])
    degenerate = np.any(visible & (dist < DEGENERATE_DISTANCE), axis=1)
    visible &= dist >= DEGENERATE_DISTANCE
    orders = np.array([len(s) for s in seqs], dtype=int)
    nus = np.array([effective_wall_angle([plan.walls[w] for w in s]) for s in seqs])
    safe = np.where(visible, dist, 1.0)
    amp = np.where(visible, amplitude(safe, orders[None, :], params), 0.0)
    if mono:
        twins = np.array([tuple(s) != tuple(reversed(s)) for s in seqs], dtype=bool)
        amp = amp * np.where(twins, 2.0, 1.0)
    if mono:
        tau_los = np.zeros(n_pts)
    else:
        los = np.broadcast_to(rx - tx, (n_pts, 2))
        tau_los = np.hypot(los[:, 0], los[:, 1]) / SPEED_OF_LIGHT
    return {
        "visible": visible, "delay": dist / SPEED_OF_LIGHT, "angle": angle,
        "amplitude": amp, "order": orders, "nu": nus, "tau_los": tau_los,
        "degenerate": degenerate, "sequences": seqs,
        "tx": np.broadcast_to(tx, (n_pts, 2)), "rx": np.broadcast_to(rx, (n_pts, 2)),
        "mono": mono,
    }


def link_from_batch(batch, i: int) -> LinkModel:
    """Extract the :class:`LinkModel` of point ``i`` from :func:`link_batch` output."""
    vis = np.flatnonzero(batch["visible"][i])
    delays = batch["delay"][i, vis]
    order = np.argsort(delays, kind="stable")
    idx = vis[order]
    return LinkModel(
        tx=batch["tx"][i].copy(), rx=batch["rx"][i].copy(),
        delays=batch["delay"][i, idx], angles=batch["angle"][i, idx],
        orders=batch["order"][idx], nus=batch["nu"][idx],
        amplitudes=batch["amplitude"][i, idx], tau_los=float(batch["tau_los"][i]),
        mono=batch["mono"], sequences=tuple(batch["sequences"][j] for j in idx),
    )


def build_link(tx, rx, plan, q_max: int, params: SignalParams, mono: bool = False) -> LinkModel:
    """Link model for a single transmitter/receiver pair."""
    from .geometry import GeometryError

    batch = link_batch(np.asarray(tx, float)[None], np.asarray(rx, float)[None], plan, q_max,
                       params, mono=mono)
    if batch["degenerate"][0]:
        raise GeometryError("receiver coincides with a virtual anchor")
    return link_from_batch(batch, 0)
