"""Beam-splitter interference of signal and idler and synthetic coincidence histograms.

Mixing signal and idler on a balanced splitter and detecting one photon in
each output projects the JSA onto its antisymmetric part.  A relative delay
T between the beams appears as fringes cos[T (w1 - w2)] across the
anti-diagonal.  Histograms are synthesised directly in frequency space: the
timing jitter of the fibre spectrometer becomes a Gaussian spectral blur.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import interpolate, ndimage

from . import io
from .errors import ConfigError, InputDataError
from .jsa import JsaGrid
from .magnus import f0, mean_pairs
from .model import _require, _Serializable

C_NM_PER_PS = 299792.458  # speed of light in nm/ps


@dataclass(frozen=True)
class DetectionChain(_Serializable):
    """Detection and spectrometer parameters (units in field comments)."""

    efficiency: float = 0.07  # per arm
    fiber_gdd: float = 1.033  # ns/nm
    detector_jitter: float = 0.1  # ns
    bin_width: float = 30.0  # GHz
    T_BBO_offset: float = 0.833  # ps
    rep_rate: float = 200.0  # kHz
    integration_time: float = 300.0  # s
    center_wavelength: float = 1558.0  # nm

    def __post_init__(self):
        _require(0 < self.efficiency <= 1, "must lie in (0, 1]", "efficiency")
        _require(self.bin_width > 0, "must be > 0", "bin_width")
        _require(self.fiber_gdd > 0, "must be > 0", "fiber_gdd")
        _require(self.detector_jitter >= 0, "must be >= 0", "detector_jitter")
        _require(self.center_wavelength > 0, "must be > 0", "center_wavelength")
        _require(self.rep_rate > 0 and self.integration_time > 0, "must be > 0",
                 "rep_rate" if self.rep_rate <= 0 else "integration_time")

    @property
    def jitter_ghz(self) -> float:
        """Frequency uncertainty equivalent to the detector jitter."""
        dlam = self.detector_jitter / self.fiber_gdd  # nm
        return C_NM_PER_PS * dlam / self.center_wavelength**2 * 1e3  # THz -> GHz

    @property
    def jitter_sigma(self) -> float:
        """Jitter-equivalent spectral blur in rad/ps."""
        return 2 * np.pi * self.jitter_ghz * 1e-3

    @property
    def bin_rad(self) -> float:
        """Histogram bin width in rad/ps."""
        return 2 * np.pi * self.bin_width * 1e-3

    def replace(self, **changes) -> "DetectionChain":
        return DetectionChain(**{**self.to_dict(), **changes})


class Marginal:
    """Marginal spectral amplitude j(w), normalised so that int j^2 dw = 1."""

    def __init__(self, func, description: dict):
        self._func = func
        self.description = description

    def __call__(self, w) -> np.ndarray:
        return self._func(np.asarray(w, dtype=float))

    @classmethod
    def gaussian(cls, tau: float) -> "Marginal":
        """Separable-source marginal j = f0, i.e. j^2 ~ exp(-4 tau^2 w^2)."""
        return cls(lambda w: f0(w, tau), {"kind": "gaussian", "tau_ps": tau})

    @classmethod
    def from_bandwidth(cls, sigma: float) -> "Marginal":
        """Gaussian with rms width ``sigma`` (rad/ps) of j^2."""
        return cls.gaussian(1.0 / (2 * np.sqrt(2) * sigma))

    @classmethod
    def sampled(cls, w, j) -> "Marginal":
        w, j = np.asarray(w, dtype=float), np.abs(np.asarray(j, dtype=float))
        if w.ndim != 1 or w.shape != j.shape or w.size < 3 or np.any(np.diff(w) <= 0):
            raise ValueError("sampled marginal needs increasing 1-D abscissae matching j")
        norm = np.sqrt(np.trapezoid(j**2, w))
        if norm == 0:
            raise ValueError("marginal is identically zero")
        jn = j / norm
        return cls(lambda x: np.interp(x, w, jn, left=0.0, right=0.0),
                   {"kind": "sampled", "n": int(w.size)})

    @classmethod
    def from_jsa(cls, jsa: JsaGrid, axis: str = "s") -> "Marginal":
        g = jsa.grid_s if axis == "s" else jsa.grid_i
        return cls.sampled(g.detunings, jsa.marginal(axis))


def _fringe(delay, w1, w2):
    return np.cos(delay * (w1 - w2))


class AttenuatedModel:
    """[j(w1) j(w2)]^2 (1 - V cos[T (w1 - w2)])."""

    def __init__(self, marginal: Marginal, delay: float, visibility: float):
        self.marginal, self.delay, self.visibility = marginal, delay, visibility

    def __call__(self, w1, w2, extra_delay=0.0):
        env = (self.marginal(w1) * self.marginal(w2)) ** 2
        return env * (1 - self.visibility * _fringe(self.delay + extra_delay, w1, w2))

    def describe(self):
        return {"model": "attenuated", "delay_ps": self.delay, "visibility": self.visibility,
                "marginal": self.marginal.description}


class ThermalModel:
    """Full two-thermal-mode coincidence density with distinct marginals."""

    def __init__(self, ja: Marginal, jb: Marginal, delay: float, lam: float):
        self.ja, self.jb, self.delay, self.lam = ja, jb, delay, lam

    def __call__(self, w1, w2, extra_delay=0.0):
        a1, a2, b1, b2 = self.ja(w1), self.ja(w2), self.jb(w1), self.jb(w2)
        cross = a1 * a2 * b1 * b2 * _fringe(self.delay + extra_delay, w1, w2)
        return 0.25 * self.lam**2 * (2 * a1**2 * a2**2 + a1**2 * b2**2 + a2**2 * b1**2
                                     + 2 * b1**2 * b2**2 - 2 * cross)

    def describe(self):
        return {"model": "thermal", "delay_ps": self.delay, "lambda": self.lam,
                "marginal_a": self.ja.description, "marginal_b": self.jb.description}


class PureModel:
    """One-pair projection (1/4)|J(w1,w2) - J(w2,w1)|^2 interpolated off-grid."""

    def __init__(self, jsa: JsaGrid):
        self.jsa = jsa
        pts = (jsa.ws, jsa.wi)
        opts = dict(method="cubic", bounds_error=False, fill_value=0.0)
        self._re = interpolate.RegularGridInterpolator(pts, jsa.amplitude.real, **opts)
        self._im = interpolate.RegularGridInterpolator(pts, jsa.amplitude.imag, **opts)

    def _j(self, a, b):
        p = np.stack([a.ravel(), b.ravel()], axis=-1)
        return (self._re(p) + 1j * self._im(p)).reshape(a.shape)

    def __call__(self, w1, w2, extra_delay=0.0):
        w1, w2 = np.broadcast_arrays(np.asarray(w1, float), np.asarray(w2, float))
        # extra delay d multiplies J(ws, wi) by exp[-i (d/2)(ws - wi)]
        ph = np.exp(-0.5j * extra_delay * (w1 - w2))
        return 0.25 * np.abs(self._j(w1, w2) * ph - self._j(w2, w1) * np.conj(ph)) ** 2

    def describe(self):
        return {"model": "pure", "jsa": dict(self.jsa.metadata)}


@dataclass(frozen=True, eq=False)
class Interferogram:
    """Coincidence density or counts N(w1, w2) on uniform axes (rad/ps).

    ``model`` keeps the analytic density (if any) so that histogram
    synthesis can evaluate it on finer sub-bins; it is not serialised.
    """

    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray
    kind: str = "probability"
    provenance: str = "model-density"
    metadata: dict = field(default_factory=dict)
    model: object = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        a1, a2 = np.array(self.axis1, float), np.array(self.axis2, float)
        if vals.shape != (a1.size, a2.size):
            raise ConfigError(f"values shape {vals.shape} does not match axes", "values")
        for name, a in (("axis1", a1), ("axis2", a2)):
            d = np.diff(a)
            if a.size < 2 or np.any(d <= 0) or np.ptp(d) > 1e-9 * abs(d.mean()) * max(1, a.size):
                raise ConfigError("axis must be uniform and increasing", name)
        if not np.all(np.isfinite(vals)) or vals.min() < -1e-12 * max(1.0, np.abs(vals).max()):
            raise ConfigError("entries must be finite and non-negative", "values")
        if self.kind not in ("probability", "counts"):
            raise ConfigError("must be 'probability' or 'counts'", "kind")
        if self.provenance not in ("synthetic", "model-density", "measured"):
            raise ConfigError("unknown provenance", "provenance")
        for name, arr in (("values", np.clip(vals, 0, None)), ("axis1", a1), ("axis2", a2)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def spacing(self) -> tuple[float, float]:
        return (float(self.axis1[1] - self.axis1[0]), float(self.axis2[1] - self.axis2[0]))

    def total(self) -> float:
        return float(self.values.sum())

    def with_values(self, values, **meta) -> "Interferogram":
        return Interferogram(self.axis1, self.axis2, values, self.kind, self.provenance,
                             {**self.metadata, **meta}, self.model)

    def save(self, prefix) -> list[Path]:
        hdr = [f"kind = {self.kind}", f"provenance = {self.provenance}",
               "rows: omega_1 index, columns: omega_2 index (axes in sidecar, THz)",
               "units: counts per bin" if self.kind == "counts" else "units: probability density"]
        paths = [io.write_matrix(f"{prefix}.csv", self.values, hdr)]
        d1, d2 = self.spacing
        side = {"axis1_thz": self.axis1 / (2 * np.pi), "axis2_thz": self.axis2 / (2 * np.pi),
                "bin_width_ghz": [d1 / (2 * np.pi) * 1e3, d2 / (2 * np.pi) * 1e3],
                "kind": self.kind, "provenance": self.provenance, "metadata": self.metadata}
        paths.append(io.write_json(f"{prefix}.json", side))
        return paths

    @classmethod
    def load(cls, prefix) -> "Interferogram":
        prefix = Path(prefix)
        if prefix.suffix == ".csv":
            prefix = prefix.with_suffix("")
        side = io.read_json(f"{prefix}.json")
        try:
            a1 = 2 * np.pi * np.asarray(side["axis1_thz"], float)
            a2 = 2 * np.pi * np.asarray(side["axis2_thz"], float)
            kind, prov = side["kind"], side["provenance"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputDataError(f"bad sidecar ({exc})", f"{prefix}.json") from None
        vals = io.read_csv(f"{prefix}.csv")[2]
        try:
            return cls(a1, a2, vals, kind, prov, side.get("metadata", {}))
        except ConfigError as exc:
            raise InputDataError(str(exc), f"{prefix}.csv") from None


def _default_axis(tau=0.132, spacing=None):
    # j^2 j^2 ~ exp(-4 tau^2 (w1^2 + w2^2)) is below 1e-40 beyond 5/tau
    spacing = spacing or 2 * np.pi * 0.03
    half = 5.0 / tau
    m = int(half / spacing)
    return np.arange(-m, m + 1) * spacing


def coincidence_density_pure(jsa: JsaGrid) -> Interferogram:
    """(1/4)|J(w1,w2) - J(w2,w1)|^2 on the JSA grid (requires equal grids)."""
    if jsa.grid_s != jsa.grid_i:
        raise ValueError("signal and idler grids must coincide")
    A = jsa.amplitude
    vals = 0.25 * np.abs(A - A.T) ** 2
    return Interferogram(jsa.ws, jsa.wi, vals, "probability", "model-density",
                         {"model": "pure"}, PureModel(jsa))


def _as_marginal(m) -> Marginal:
    if isinstance(m, Marginal):
        return m
    if isinstance(m, JsaGrid):
        return Marginal.from_jsa(m)
    if isinstance(m, tuple) and len(m) == 2:
        return Marginal.sampled(*m)
    raise TypeError("marginal must be a Marginal, JsaGrid or (w, j) tuple")


def coincidence_density_attenuated(marginal, T: float, visibility: float = 1.0 / 3.0,
                                   axis=None) -> Interferogram:
    """Strongly attenuated (thermal-limit) coincidence density, unit prefactor."""
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
    model = AttenuatedModel(_as_marginal(marginal), T, visibility)
    ax = _default_axis() if axis is None else np.asarray(axis, float)
    vals = model(ax[:, None], ax[None, :])
    return Interferogram(ax, ax, vals, "probability", "model-density", model.describe(), model)


def thermal_coincidence_density(ja, jb, T: float, lam: float, axis=None) -> Interferogram:
    """Two-thermal-state density including the beam-splitter bunching terms."""
    model = ThermalModel(_as_marginal(ja), _as_marginal(jb), T, lam)
    ax = _default_axis() if axis is None else np.asarray(axis, float)
    vals = model(ax[:, None], ax[None, :])
    return Interferogram(ax, ax, vals, "probability", "model-density", model.describe(), model)


@dataclass(frozen=True)
class AttenuationParams:
    lam: float  # thermal parameter eta<n>/(1 + eta<n>)
    nbar: float  # thermal occupation of the squashed state (nan out of domain)
    eps_prime: float  # residual two-mode squeezing
    in_domain: bool  # False when the nbar radicand is negative


def thermal_attenuation_params(eps: float, eta: float) -> AttenuationParams:
    """Parameters of a two-mode squeezed state after loss eta on both arms."""
    if not 0 < eta <= 1:
        raise ValueError("efficiency must lie in (0, 1]")
    n = float(mean_pairs(eps))
    lam = eta * n / (1 + eta * n)
    rad = 1 + 2 * eta * n - 4 * (eta * n) ** 2
    nbar = math.sqrt(rad) - 1 if rad >= 0 else float("nan")
    sh, ch = math.sinh(eps), math.cosh(eps)
    x = 2 * eta * sh * ch / (2 * sh * sh * eta + 1)
    eps_p = 0.5 * math.atanh(x) if x < 1 else float("inf")
    return AttenuationParams(lam, nbar, eps_p, rad >= 0)


def synthesize_histogram(density: Interferogram, chain: DetectionChain, total_counts: float,
                         *, seed: int = 0, oversample: int = 8, poisson: bool = True,
                         jitter: bool = True) -> Interferogram:
    """Spectrally resolved coincidence histogram as measured by the detection chain.

    The density is evaluated on ``oversample`` sub-bins per histogram bin
    with the BBO offset added to its delay, blurred by the jitter-equivalent
    spectral width, summed into bins and scaled to ``total_counts``.  With
    ``poisson`` the counts are Poisson draws from a counter-based generator.
    """
    if not total_counts > 0:
        raise ValueError("total_counts must be positive")
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    bw = chain.bin_rad
    half = min(-density.axis1[0], density.axis1[-1], -density.axis2[0], density.axis2[-1])
    nb = 2 * int(math.floor(half / bw - 0.5)) + 1
    if nb < 5:
        raise ValueError("density support is narrower than a few histogram bins")
    centers = (np.arange(nb) - nb // 2) * bw
    sub = bw / oversample
    fine = (centers[:, None] + ((np.arange(oversample) + 0.5) / oversample - 0.5) * bw).ravel()
    if density.model is not None:
        dens = density.model(fine[:, None], fine[None, :], extra_delay=chain.T_BBO_offset)
    else:
        if chain.T_BBO_offset != 0:
            raise ValueError("density has no analytic model, so the BBO offset cannot be applied")
        interp = interpolate.RegularGridInterpolator((density.axis1, density.axis2),
                                                     density.values, bounds_error=False,
                                                     fill_value=0.0)
        g1, g2 = np.meshgrid(fine, fine, indexing="ij")
        dens = interp(np.stack([g1.ravel(), g2.ravel()], -1)).reshape(g1.shape)
    dens = np.clip(dens, 0, None)
    if jitter and chain.jitter_sigma > 0:
        dens = ndimage.gaussian_filter(dens, chain.jitter_sigma / sub, mode="constant",
                                       truncate=6.0)
    binned = dens.reshape(nb, oversample, nb, oversample).sum(axis=(1, 3))
    total = binned.sum()
    if total <= 0:
        raise ValueError("density integrates to zero over the histogram window")
    means = binned * (total_counts / total)
    if poisson:
        rng = np.random.Generator(np.random.Philox(seed))
        counts = rng.poisson(means).astype(float)
    else:
        counts = means
    meta = {"seed": int(seed), "total_counts": float(total_counts), "poisson": bool(poisson),
            "oversample": int(oversample), "jitter_blur_ghz": chain.jitter_ghz if jitter else 0.0,
            "chain": chain.to_dict(), "density": dict(density.metadata)}
    return Interferogram(centers, centers, counts, "counts", "synthetic", meta)
