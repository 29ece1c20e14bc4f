"""Initial data for the blow-up and convergence experiments."""

from __future__ import annotations

import numpy as np

from .assembly import nodal_interpolant
from .mesh import Mesh
from .stepper import State


def _r2(x, y):
    return (x - 0.5) ** 2 + (y - 0.5) ** 2


def blowup_u(x, y):
    return 1000.0 * np.exp(-100.0 * _r2(x, y))


def blowup_c(x, y):
    return 500.0 * np.exp(-50.0 * _r2(x, y))


def gauss5_u(x, y):
    return 10.0 * np.exp(-10.0 * _r2(x, y)) + 5.0


def sincos_u(x, y):
    return np.sin(np.pi * x) ** 2 * np.cos(np.pi * y) ** 2


def zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


INITIAL_CONDITIONS = {
    "blowup": (blowup_u, blowup_c),
    "gauss5": (gauss5_u, zero),
    "sincos": (sincos_u, zero),
}


def initial_state(mesh: Mesh, ic: str | tuple = "blowup") -> State:
    """Nodal interpolants of (u0, c0); ``ic`` is a name or a pair of callables."""
    if isinstance(ic, str):
        try:
            u0, c0 = INITIAL_CONDITIONS[ic]
        except KeyError:
            raise ValueError(f"unknown initial condition {ic!r}; choose from {sorted(INITIAL_CONDITIONS)}") from None
    else:
        u0, c0 = ic
    return State(nodal_interpolant(mesh, u0), nodal_interpolant(mesh, c0), 0.0)
