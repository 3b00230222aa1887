import numpy as np
import pytest

from mpeb.channel import DmParams, LinkModel, SignalParams
from mpeb.geometry import Floorplan


@pytest.fixture
def room():
    return Floorplan.rectangle(10.0, 7.2)


@pytest.fixture
def params():
    return SignalParams()


@pytest.fixture
def awgn():
    return DmParams.off()


def synthetic_link(delays, angles, amplitudes, orders=None, nus=None, tau_los=None):
    """Link with hand-picked MPCs, bypassing the geometry."""
    d = np.asarray(delays, dtype=float)
    k = len(d)
    return LinkModel(
        tx=np.zeros(2), rx=np.zeros(2), delays=d, angles=np.asarray(angles, dtype=float),
        orders=np.zeros(k, int) if orders is None else np.asarray(orders),
        nus=np.zeros(k) if nus is None else np.asarray(nus, dtype=float),
        amplitudes=np.asarray(amplitudes, dtype=complex),
        tau_los=float(d.min()) if tau_los is None else tau_los)
