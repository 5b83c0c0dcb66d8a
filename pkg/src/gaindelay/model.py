"""Physical parameters, frequency grids and phase-matching primitives.

Internal units throughout the package: lengths in mm, times in ps, angular
frequencies in rad/ps and powers in W.  Nonlinear coefficients are stored in
the customary W^-1 m^-1 and converted where they are used.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Mapping, NamedTuple

import numpy as np

from .errors import ConfigError

C_MMPS = 0.299792458  # speed of light in mm/ps

PMF_KINDS = ("sinc", "gaussian")


def _check_keys(cls, data: Mapping[str, Any], path: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def _require(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise ConfigError(message, path)


class _Serializable:
    """Mixin giving dataclasses a strict ``from_dict`` / ``to_dict`` pair."""

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], path: str | None = None):
        path = path or cls.__name__
        _check_keys(cls, data, path)
        try:
            return cls(**data)
        except ConfigError as exc:
            # re-anchor the field path below the caller's prefix
            if exc.path and not exc.path.startswith(path):
                raise ConfigError(exc.message, f"{path}.{exc.path}") from None
            raise
        except TypeError as exc:
            raise ConfigError(str(exc), path) from None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}


@dataclass(frozen=True)
class CrystalParams(_Serializable):
    """Nonlinear crystal description.

    Group indices are taken as constants over the bandwidth of interest
    (no dispersion beyond group velocity).  ``gamma_s`` and ``gamma_i``
    default to ``2*gamma_p/3`` and ``2*gamma_p``.
    """

    length: float = 2.0
    group_index_pump: float = 1.8092
    group_index_signal: float = 1.8514
    group_index_idler: float = 1.7538
    pmf_kind: str = "sinc"
    gaussian_gamma: float = 0.193
    gamma_p: float = 0.0
    gamma_s: float | None = None
    gamma_i: float | None = None
    poling_period: float | None = None

    def __post_init__(self):
        for name in ("length", "group_index_pump", "group_index_signal",
                     "group_index_idler", "gaussian_gamma", "gamma_p"):
            _require(_is_number(getattr(self, name)) and np.isfinite(getattr(self, name)),
                     "must be a finite number", name)
        _require(self.length > 0, "must be > 0", "length")
        for name in ("group_index_pump", "group_index_signal", "group_index_idler"):
            _require(getattr(self, name) > 1, "group index must be > 1", name)
        _require(self.pmf_kind in PMF_KINDS, f"must be one of {PMF_KINDS}", "pmf_kind")
        _require(self.gaussian_gamma > 0, "must be > 0", "gaussian_gamma")
        _require(self.gamma_p >= 0, "must be >= 0", "gamma_p")
        if self.gamma_s is None:
            object.__setattr__(self, "gamma_s", 2.0 * self.gamma_p / 3.0)
        if self.gamma_i is None:
            object.__setattr__(self, "gamma_i", 2.0 * self.gamma_p)
        for name in ("gamma_s", "gamma_i"):
            _require(_is_number(getattr(self, name)) and getattr(self, name) >= 0,
                     "must be a number >= 0", name)

    @property
    def type2_ordered(self) -> bool:
        """True when n_s >= n_p >= n_i (signal slowest, idler fastest)."""
        return self.group_index_signal >= self.group_index_pump >= self.group_index_idler

    def inverse_velocity_offsets(self) -> tuple[float, float]:
        """(1/v_s - 1/v_p, 1/v_i - 1/v_p) in ps/mm."""
        n_p = self.group_index_pump
        return ((self.group_index_signal - n_p) / C_MMPS,
                (self.group_index_idler - n_p) / C_MMPS)

    def replace(self, **changes) -> "CrystalParams":
        base = self.to_dict()
        # derived XPM coefficients follow gamma_p unless given explicitly
        if "gamma_p" in changes:
            base.update(gamma_s=None, gamma_i=None)
        base.update(changes)
        return CrystalParams(**base)


@dataclass(frozen=True)
class PumpParams(_Serializable):
    """Pump pulse.  ``pulse_duration`` is the amplitude duration tau of f0."""

    pulse_duration: float = 0.132
    gain: float = 0.0
    center_wavelength: float = 779.2
    peak_power: float = 0.0
    beam_waist: float = 125.0
    rep_rate: float = 200.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            _require(_is_number(v) and np.isfinite(v), "must be a finite number", f.name)
        _require(self.pulse_duration > 0, "must be > 0", "pulse_duration")
        _require(self.gain >= 0, "must be >= 0", "gain")
        _require(self.peak_power >= 0, "must be >= 0", "peak_power")
        _require(self.center_wavelength > 0, "must be > 0", "center_wavelength")
        _require(self.beam_waist > 0, "must be > 0", "beam_waist")
        _require(self.rep_rate > 0, "must be > 0", "rep_rate")

    def replace(self, **changes) -> "PumpParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid of detunings (rad/ps) with an odd number of points.

    The grid is symmetric about zero unless ``offset_steps`` shifts it
    rigidly by a whole number of steps (used for frame-invariance checks).
    """

    n_points: int
    half_width: float
    offset_steps: int = 0

    def __post_init__(self):
        _require(isinstance(self.n_points, (int, np.integer)) and self.n_points >= 3,
                 "must be an integer >= 3", "n_points")
        _require(self.n_points % 2 == 1, "must be odd so the grid contains zero", "n_points")
        _require(_is_number(self.half_width) and self.half_width > 0, "must be > 0", "half_width")
        _require(isinstance(self.offset_steps, (int, np.integer)), "must be an integer",
                 "offset_steps")
        _require(abs(self.offset_steps) < self.n_points // 2, "shift exceeds the grid",
                 "offset_steps")

    @classmethod
    def default(cls, tau: float, n_points: int = 401, width_factor: float = 8.0):
        """Grid spanning +-width_factor/tau."""
        return cls(n_points, width_factor / tau)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def detunings(self) -> np.ndarray:
        m = self.n_points // 2
        k = np.arange(-m, m + 1) + self.offset_steps
        w = k * self.spacing
        w.flags.writeable = False
        return w

    @property
    def zero_index(self) -> int:
        return self.n_points // 2 - self.offset_steps

    def __len__(self):
        return self.n_points

    def to_dict(self) -> dict:
        return {"n_points": int(self.n_points), "half_width": float(self.half_width),
                "offset_steps": int(self.offset_steps)}

    @classmethod
    def from_dict(cls, data):
        _check_keys(cls, data, "grid")
        return cls(**data)


def group_velocity(index: float) -> float:
    """Group velocity c/n in mm/ps."""
    if not index > 0:
        raise ValueError(f"group index must be positive, got {index}")
    return C_MMPS / index


def walkoff_beta0(crystal: CrystalParams) -> float:
    """Low-gain signal/idler delay for pairs born mid-crystal, in ps."""
    return 0.5 * crystal.length * (crystal.group_index_signal - crystal.group_index_idler) / C_MMPS


class GvmParams(NamedTuple):
    eta_s: float
    eta_i: float
    product_residual: float  # |tau^2 + eta_s*eta_i|
    sum_residual: float  # |eta_s + eta_i|


def gvm_params(crystal: CrystalParams, pump: PumpParams) -> GvmParams:
    """Group-velocity-mismatch times (ps) in Gaussian-PMF units.

    Ideal symmetric matching, for which the first-order JSA is separable,
    has eta_s = -eta_i = tau.
    """
    ds, di = crystal.inverse_velocity_offsets()
    scale = np.sqrt(crystal.gaussian_gamma) * crystal.length / 2
    eta_s, eta_i = scale * ds, scale * di
    tau = pump.pulse_duration
    return GvmParams(eta_s, eta_i, abs(tau**2 + eta_s * eta_i), abs(eta_s + eta_i))


def phase_matching(dk, crystal: CrystalParams) -> np.ndarray:
    """Phase-matching function at wavevector mismatch ``dk`` (rad/mm).

    Real valued for both kinds and equal to 1 at ``dk = 0``.
    """
    x = 0.5 * crystal.length * np.asarray(dk, dtype=float)
    if crystal.pmf_kind == "sinc":
        return np.sinc(x / np.pi)
    return np.exp(-crystal.gaussian_gamma * x**2)


def symmetric_crystal(tau: float, length: float = 2.0, group_index_pump: float = 1.8092,
                      gaussian_gamma: float = 0.193, pmf_kind: str = "gaussian",
                      **extra) -> CrystalParams:
    """Crystal whose group indices realise eta_s = -eta_i = tau exactly.

    This is the configuration for which the closed-form JSA holds.
    """
    dn = tau * C_MMPS / (np.sqrt(gaussian_gamma) * length / 2)
    return CrystalParams(length=length, group_index_pump=group_index_pump,
                         group_index_signal=group_index_pump + dn,
                         group_index_idler=group_index_pump - dn,
                         pmf_kind=pmf_kind, gaussian_gamma=gaussian_gamma, **extra)
