"""Fixed-step Runge-Kutta helpers shared by the deterministic integrators."""

from __future__ import annotations


def rk4_step(f, t: float, y, h: float):
    """One classical fourth-order Runge-Kutta step of ``dy/dt = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
