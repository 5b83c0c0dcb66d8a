"""Closed-form third-order Magnus JSA for the symmetric group-velocity-matched source.

With eta_s = -eta_i = tau and a Gaussian phase-matching function the first
order JSA factorises as f0(ws) f0(wi).  The third-order correction brings in
a second Schmidt function f1 built from the imaginary error function; its
imaginary part produces a phase linear along the anti-diagonal, i.e. a group
delay beta that grows with gain.  Second order does not act on vacuum and is
omitted.

Outputs are interaction-picture quantities; the walk-off phase is added by
:func:`gaindelay.propagator.lab_frame_phase`.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy import special

from .jsa import JsaGrid
from .model import CrystalParams, FrequencyGrid, PumpParams, walkoff_beta0


class TruncationWarning(UserWarning):
    """Third-order truncation is used beyond its range of validity (gain > 1)."""


_SQRT_PI = np.sqrt(np.pi)
_NORM0 = np.pi ** -0.25


def erfi(x):
    """Imaginary error function -i erf(ix).

    Uses erfi(x) = 2/sqrt(pi) exp(x^2) D(x) with D the Dawson integral, which
    is accurate near zero and only overflows where erfi itself does.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return 2.0 / _SQRT_PI * np.exp(x * x) * special.dawsn(x)


def f0(dw, tau: float):
    """First Schmidt function, unit-normalized Gaussian of amplitude width 1/(2 tau)."""
    dw = np.asarray(dw, dtype=float)
    return _NORM0 * np.sqrt(2 * tau) * np.exp(-2 * tau**2 * dw**2)


def f1(dw, tau: float):
    """Second Schmidt function sqrt(3) f0 erfi(sqrt(4/3) tau dw).

    Evaluated in fused form: the Gaussians of f0 and erfi combine into
    exp(-(2/3) tau^2 dw^2), which stays finite for any detuning.
    """
    dw = np.asarray(dw, dtype=float)
    x = np.sqrt(4.0 / 3.0) * tau * dw
    return (np.sqrt(3.0) * _NORM0 * np.sqrt(2 * tau) * 2.0 / _SQRT_PI
            * np.exp(-(2.0 / 3.0) * tau**2 * dw**2) * special.dawsn(x))


def _meta(tau, eps=None, order=None):
    meta = {"tau_ps": float(tau), "source": "magnus"}
    if eps is not None:
        meta["gain"] = float(eps)
    if order is not None:
        meta["order"] = order
    return meta


def jsa_order1(grid: FrequencyGrid, tau: float) -> JsaGrid:
    """Separable first-order JSA f0(ws) f0(wi)."""
    v = f0(grid.detunings, tau)
    return JsaGrid(grid, grid, np.outer(v, v), "mode-normalized", _meta(tau, order=1))


def _l3_k3(grid: FrequencyGrid, tau: float):
    a, b = f0(grid.detunings, tau), f1(grid.detunings, tau)
    l3 = (np.outer(a, a) - np.outer(b, b)) / 12.0
    k3 = (np.outer(a, b) - np.outer(b, a)) / (4.0 * np.sqrt(3.0))
    return l3, k3


def jsa_order3(grid: FrequencyGrid, tau: float) -> JsaGrid:
    """Mode-normalized third-order term sqrt(18) (L3 - i K3)."""
    l3, k3 = _l3_k3(grid, tau)
    return JsaGrid(grid, grid, np.sqrt(18.0) * (l3 - 1j * k3), "mode-normalized",
                   _meta(tau, order=3))


def jsa_total(grid: FrequencyGrid, tau: float, eps: float) -> JsaGrid:
    """Gain-weighted eps J1 + eps^3 (L3 - i K3)."""
    if eps < 0:
        raise ValueError("gain must be non-negative")
    if eps > 1:
        warnings.warn(f"third-order Magnus truncation at gain {eps:g} > 1", TruncationWarning,
                      stacklevel=2)
    a = f0(grid.detunings, tau)
    l3, k3 = _l3_k3(grid, tau)
    amp = eps * np.outer(a, a) + eps**3 * (l3 - 1j * k3)
    return JsaGrid(grid, grid, amp, "gain-weighted", _meta(tau, eps, order=3))


def joint_phase_antidiagonal(tau: float, eps: float, dw):
    """arg J at (ws, wi) = (dw, -dw).

    On the anti-diagonal f0 f0 = f0^2 and f1(s) f1(i) = -f1^2, so with
    e = erfi(sqrt(4/3) tau dw), J is proportional to
    eps + (eps^3/12)(1 + 3 e^2) + i (eps^3/2) e .
    """
    e = erfi(np.sqrt(4.0 / 3.0) * tau * np.asarray(dw, dtype=float))
    eps2 = eps * eps
    with np.errstate(invalid="ignore", over="ignore"):
        ph = np.arctan(eps2 * e / (2.0 + eps2 / 6.0 + 0.5 * eps2 * e**2))
    # erfi overflow: the ratio tends to 2/e -> 0
    return np.where(np.isfinite(e), ph, 0.0)


def beta_of_gain(tau: float, eps: float) -> float:
    """Gain-induced delay reduction 24 tau eps^2 / (sqrt(3 pi)(12 + eps^2)) in ps."""
    if tau <= 0 or eps < 0:
        raise ValueError("need tau > 0 and eps >= 0")
    e2 = eps * eps
    return 24.0 * tau * e2 / (np.sqrt(3 * np.pi) * (12.0 + e2))


class AnalyticDelayResult(NamedTuple):
    beta: float
    beta0: float
    T: float
    valid: bool  # third-order truncation trusted (gain <= 1)


def delay_analytic(crystal: CrystalParams, pump: PumpParams) -> AnalyticDelayResult:
    """Total signal-idler delay T = beta0 - beta."""
    beta = beta_of_gain(pump.pulse_duration, pump.gain)
    beta0 = walkoff_beta0(crystal)
    return AnalyticDelayResult(beta, beta0, beta0 - beta, pump.gain <= 1.0)


def mean_pairs(eps):
    """Single-mode mean photon number per beam, sinh^2 eps."""
    return np.sinh(eps) ** 2
