"""Sampled joint spectral amplitude container."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, InputDataError
from .model import FrequencyGrid

NORM_CONVENTIONS = ("mode-normalized", "gain-weighted")


@dataclass(frozen=True, eq=False)
class JsaGrid:
    """Complex J(ds, di) on a pair of uniform detuning grids.

    ``amplitude[j, k]`` is J at (grid_s.detunings[j], grid_i.detunings[k]) in
    continuum units, so that sum |J|^2 ds di approximates the integral.
    A mode-normalized JSA integrates to one; a gain-weighted one carries the
    gain in its norm (sum of r_k^2 for numerical results).
    """

    grid_s: FrequencyGrid
    grid_i: FrequencyGrid
    amplitude: np.ndarray
    norm_convention: str = "gain-weighted"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=complex)
        if amp.shape != (self.grid_s.n_points, self.grid_i.n_points):
            raise ConfigError(f"amplitude shape {amp.shape} does not match grids", "amplitude")
        if not np.all(np.isfinite(amp)):
            raise ConfigError("non-finite entries", "amplitude")
        if self.norm_convention not in NORM_CONVENTIONS:
            raise ConfigError(f"must be one of {NORM_CONVENTIONS}", "norm_convention")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitude", amp)
        if self.norm_convention == "mode-normalized" and abs(self.norm() - 1.0) > 1e-6:
            raise ConfigError(f"mode-normalized JSA has norm {self.norm():.8g}", "amplitude")

    @property
    def area_element(self) -> float:
        return self.grid_s.spacing * self.grid_i.spacing

    @property
    def ws(self) -> np.ndarray:
        return self.grid_s.detunings

    @property
    def wi(self) -> np.ndarray:
        return self.grid_i.detunings

    def norm(self) -> float:
        """Integrated |J|^2."""
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.area_element)

    def inner(self, other: "JsaGrid") -> complex:
        """Grid inner product <self, other>."""
        self._check_same_grid(other)
        return complex(np.vdot(self.amplitude, other.amplitude) * self.area_element)

    def fidelity(self, other: "JsaGrid") -> float:
        """|<a,b>|^2 / (|a|^2 |b|^2), insensitive to global phase and scale."""
        den = self.norm() * other.norm()
        if den == 0:
            raise ValueError("fidelity undefined for a zero JSA")
        return abs(self.inner(other)) ** 2 / den

    def normalized(self) -> "JsaGrid":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize a zero JSA")
        return self.with_amplitude(self.amplitude / np.sqrt(n), "mode-normalized")

    def with_amplitude(self, amplitude, norm_convention=None, **meta) -> "JsaGrid":
        return JsaGrid(self.grid_s, self.grid_i, amplitude,
                       norm_convention or self.norm_convention, {**self.metadata, **meta})

    def transpose(self) -> "JsaGrid":
        """Exchange the roles of signal and idler axes."""
        return JsaGrid(self.grid_i, self.grid_s, self.amplitude.T, self.norm_convention,
                       dict(self.metadata))

    def marginal(self, axis: str = "s") -> np.ndarray:
        """Marginal spectral amplitude sqrt(int |J|^2 dw_other)."""
        if axis == "s":
            return np.sqrt(np.sum(np.abs(self.amplitude) ** 2, axis=1) * self.grid_i.spacing)
        return np.sqrt(np.sum(np.abs(self.amplitude) ** 2, axis=0) * self.grid_s.spacing)

    def _check_same_grid(self, other):
        if self.grid_s != other.grid_s or self.grid_i != other.grid_i:
            raise ValueError("JSAs live on different grids")

    # serialization: <prefix>_re.csv, <prefix>_im.csv and <prefix>.json
    def save(self, prefix) -> list[Path]:
        prefix = Path(prefix)
        hdr = ["rows: signal detuning index, columns: idler detuning index",
               "units: J in ps (continuum amplitude); detunings in rad/ps"]
        paths = [io.write_matrix(f"{prefix}_re.csv", self.amplitude.real, hdr + ["part = real"]),
                 io.write_matrix(f"{prefix}_im.csv", self.amplitude.imag, hdr + ["part = imag"])]
        side = {"grid_s": self.grid_s.to_dict(), "grid_i": self.grid_i.to_dict(),
                "norm_convention": self.norm_convention, "metadata": self.metadata,
                "units": {"detuning": "rad/ps", "amplitude": "ps"}}
        paths.append(io.write_json(f"{prefix}.json", side))
        return paths

    @classmethod
    def load(cls, prefix) -> "JsaGrid":
        prefix = Path(prefix)
        side = io.read_json(f"{prefix}.json")
        try:
            gs = FrequencyGrid.from_dict(side["grid_s"])
            gi = FrequencyGrid.from_dict(side["grid_i"])
            conv = side["norm_convention"]
        except (KeyError, ConfigError) as exc:
            raise InputDataError(f"bad sidecar: {exc}", f"{prefix}.json") from None
        re = io.read_csv(f"{prefix}_re.csv")[2]
        im = io.read_csv(f"{prefix}_im.csv")[2]
        if re.shape != im.shape or re.shape != (gs.n_points, gi.n_points):
            raise InputDataError("matrix shape does not match sidecar grids", f"{prefix}_re.csv")
        return cls(gs, gi, re + 1j * im, conv, side.get("metadata", {}))
