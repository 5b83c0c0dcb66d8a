"""Heisenberg-picture propagation of signal/idler fields in the pump frame.

Signal annihilation and idler creation operators are sampled on a detuning
grid (``a_j = sqrt(Delta) a(w_j)``) and evolved along z by

    d/dz a  = i A a   + i g(z) C b^dag
    d/dz b^dag = -i B b^dag - i g(z) C^dag a

with ``A = diag(dk_s) + XPM_s`` and ``B = diag(dk_i) + XPM_i`` Hermitian and
``C_jk = kappa Delta P(w_j + w_k)`` the pair-creation (Hankel) kernel.
The stacked generator ``G = i [[A, gC], [-gC^dag, -B]]`` satisfies
``G^dag S + S G = 0`` with ``S = diag(I, -I)``, so every slice propagator
is a Bogoliubov transformation.

The default integrator is a symmetric splitting of each slice into the
exact exponentials of its linear and pair-creation parts.  The pair part
is exponentiated in closed form from the SVD of C.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
import scipy.linalg

from . import io
from .errors import ConfigError, SolverError
from .jsa import JsaGrid
from .model import (
    C_MMPS, CrystalParams, FrequencyGrid, PumpParams, _require, _Serializable, walkoff_beta0,
)

INTEGRATORS = ("split", "expm", "rk4")
PUMP_SUPPORT_FLOOR = 1e-6  # pump amplitude (relative) that must fit inside the window
SPM_SUPPORT_FLOOR = 1e-3  # same for the SPM-broadened pump, whose wings decay slowly
INVARIANT_LIMIT = 1e-6


@dataclass(frozen=True)
class SolverSettings(_Serializable):
    """Discretisation and integrator choice.

    ``window_halfwidth`` defaults to 8/tau.  ``gaussian_extent`` is the
    half-range, in standard deviations, of the z-profile used to realise a
    Gaussian phase-matching function.
    """

    n_freq: int = 401
    n_zsteps: int = 200
    window_halfwidth: float | None = None
    integrator: str = "split"
    chi3: bool = True
    grid_offset_steps: int = 0
    gaussian_extent: float = 5.0

    def __post_init__(self):
        _require(isinstance(self.n_freq, int) and self.n_freq >= 3 and self.n_freq % 2 == 1,
                 "must be an odd integer >= 3", "n_freq")
        _require(isinstance(self.n_zsteps, int) and self.n_zsteps >= 50,
                 "must be an integer >= 50", "n_zsteps")
        _require(self.window_halfwidth is None or self.window_halfwidth > 0, "must be > 0",
                 "window_halfwidth")
        _require(self.integrator in INTEGRATORS, f"must be one of {INTEGRATORS}", "integrator")
        _require(isinstance(self.chi3, bool), "must be true or false", "chi3")
        _require(isinstance(self.grid_offset_steps, int), "must be an integer",
                 "grid_offset_steps")
        _require(self.gaussian_extent >= 2, "must be >= 2", "gaussian_extent")

    def grid(self, tau: float) -> FrequencyGrid:
        half = self.window_halfwidth if self.window_halfwidth is not None else 8.0 / tau
        return FrequencyGrid(self.n_freq, half, self.grid_offset_steps)

    def replace(self, **changes) -> "SolverSettings":
        return SolverSettings(**{**self.to_dict(), **changes})


@dataclass(frozen=True, eq=False)
class PumpField:
    """Undepleted classical pump in its own frame.

    The temporal envelope is ``exp(-t^2 / (4 tau^2))`` (spectral amplitude
    ``exp(-tau^2 nu^2)`` with unit peak).  With SPM the field acquires the
    phase ``theta(z, t) = gamma_p P(t) l(z)`` where ``l`` is the distance
    travelled inside the crystal.
    """

    tau: float
    peak_power: float
    spm_enabled: bool
    gamma_p: float  # W^-1 mm^-1
    length: float
    center_offset: float = 0.0
    n_time: int = 385

    @classmethod
    def from_params(cls, pump: PumpParams, crystal: CrystalParams, spm: bool = True,
                    center_offset: float = 0.0) -> "PumpField":
        on = bool(spm and crystal.gamma_p > 0 and pump.peak_power > 0)
        return cls(pump.pulse_duration, pump.peak_power, on, crystal.gamma_p * 1e-3,
                   crystal.length, center_offset)

    def spectral_amplitude(self, nu) -> np.ndarray:
        """Linear (SPM-free) spectral amplitude."""
        nu = np.asarray(nu, dtype=float)
        return np.exp(-self.tau**2 * (nu - self.center_offset) ** 2).astype(complex)

    def intensity(self, t) -> np.ndarray:
        """Instantaneous power normalised to its peak."""
        return np.exp(-np.asarray(t, dtype=float) ** 2 / (2 * self.tau**2))

    def travelled(self, z) -> np.ndarray:
        return np.clip(np.asarray(z, dtype=float) + self.length / 2, 0.0, self.length)

    def theta(self, z, t) -> np.ndarray:
        """SPM phase (rad) at position z (mm) and local time t (ps)."""
        if not self.spm_enabled:
            return np.zeros(np.broadcast(np.asarray(z), np.asarray(t)).shape)
        return self.gamma_p * self.peak_power * self.intensity(t) * self.travelled(z)

    def spectrum_at(self, z: float, nu) -> np.ndarray:
        """Spectral amplitude after the SPM phase accumulated up to z."""
        nu = np.asarray(nu, dtype=float)
        if not self.spm_enabled or self.travelled(z) == 0.0:
            return self.spectral_amplitude(nu)
        return self.spectra_at([z], nu)[0]

    def spectra_at(self, zs, nu) -> np.ndarray:
        """Rows of ``spectrum_at`` for several positions, sharing one DFT kernel."""
        nu = np.asarray(nu, dtype=float)
        zs = np.asarray(zs, dtype=float)
        if not self.spm_enabled:
            return np.tile(self.spectral_amplitude(nu), (zs.size, 1))
        t = np.linspace(-12 * self.tau, 12 * self.tau, self.n_time)
        dt = t[1] - t[0]
        env = np.exp(-t**2 / (4 * self.tau**2)) * np.exp(1j * self.theta(zs[:, None], t[None, :]))
        kern = np.exp(1j * np.outer(t, nu - self.center_offset))
        return env @ kern * dt / (2 * self.tau * np.sqrt(np.pi))


@dataclass(frozen=True, eq=False)
class TransferMatrices:
    """Bogoliubov blocks: a_out = U_ss a + V_si b^dag, b_out^dag = V_is* a + U_ii* b^dag."""

    U_ss: np.ndarray
    V_si: np.ndarray
    U_ii: np.ndarray
    V_is: np.ndarray
    grid: FrequencyGrid
    settings: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.residuals:
            object.__setattr__(self, "residuals", bogoliubov_residuals(
                self.U_ss, self.V_si, self.U_ii, self.V_is))

    @property
    def worst_residual(self) -> float:
        return max(self.residuals.values())

    def mean_photons(self) -> float:
        """Signal photons per pulse (equal to idler photons)."""
        return float(np.sum(np.abs(self.V_si) ** 2))

    def save(self, prefix) -> list:
        paths = []
        for name in ("U_ss", "V_si", "U_ii", "V_is"):
            m = getattr(self, name)
            for part, arr in (("re", m.real), ("im", m.imag)):
                paths.append(io.write_matrix(f"{prefix}_{name}_{part}.csv", arr,
                                             [f"block = {name}", f"part = {part}",
                                              "units: dimensionless (discrete modes)"]))
        paths.append(io.write_json(f"{prefix}.json", {
            "grid": self.grid.to_dict(), "settings": self.settings,
            "invariant_residuals": self.residuals}))
        return paths


def bogoliubov_residuals(U, V, Ui, Vi) -> dict:
    n = U.shape[0]
    eye = np.eye(n)
    return {
        "signal_commutator": float(np.abs(U @ U.conj().T - V @ V.conj().T - eye).max()),
        "idler_commutator": float(np.abs(Ui @ Ui.conj().T - Vi @ Vi.conj().T - eye).max()),
        "cross_commutator": float(np.abs(U @ Vi.T - V @ Ui.T).max()),
    }


def _from_stacked(K, grid, settings) -> TransferMatrices:
    n = grid.n_points
    return TransferMatrices(K[:n, :n].copy(), K[:n, n:].copy(), K[n:, n:].conj(),
                            K[n:, :n].conj(), grid, settings)


class _System:
    """Discretised equations of motion for one (crystal, pump, settings) triple."""

    def __init__(self, crystal: CrystalParams, pump: PumpParams, settings: SolverSettings,
                 center_offset: float = 0.0):
        self.crystal, self.pump, self.settings = crystal, pump, settings
        self.tau = pump.pulse_duration
        self.grid = settings.grid(self.tau)
        self.w = np.asarray(self.grid.detunings)
        self.n = n = self.grid.n_points
        ds, di = crystal.inverse_velocity_offsets()
        self.ks, self.ki = ds * self.w, di * self.w
        self.field = PumpField.from_params(pump, crystal, settings.chi3, center_offset)
        self._idx = np.add.outer(np.arange(n), np.arange(n))
        self.nu = self.w[0] * 2 + self.grid.spacing * np.arange(2 * n - 1)
        self._check_window()

        L = crystal.length
        if crystal.pmf_kind == "gaussian":
            sz = L * np.sqrt(crystal.gaussian_gamma / 2)
            self.z_half = max(settings.gaussian_extent * sz, L / 2)
        else:
            self.z_half = L / 2
        self.z_edges = np.linspace(-self.z_half, self.z_half, settings.n_zsteps + 1)
        self.dz = self.z_edges[1] - self.z_edges[0]

        self.kappa = self._calibrate(pump.gain)
        self.xpm = None
        if settings.chi3 and pump.peak_power > 0 and (crystal.gamma_s > 0 or crystal.gamma_i > 0):
            self.xpm = (self._xpm_kernel(crystal.gamma_s), self._xpm_kernel(crystal.gamma_i))
        self._c0 = self.kappa * self.grid.spacing * self.field.spectral_amplitude(self.nu)[self._idx]
        self._spm_cache = {}
        self._linear_cache = {}
        if self.field.spm_enabled:
            mids = 0.5 * (self.z_edges[1:] + self.z_edges[:-1])
            self._spm_cache = dict(zip(mids.tolist(), self.field.spectra_at(mids, self.nu)))

    # model ingredients
    def _check_window(self):
        """The pump must have decayed inside the single-photon window."""
        f = self.field
        nu = np.linspace(-2 * self.grid.half_width, 2 * self.grid.half_width, 4 * self.n + 1)
        need = 0.0
        for amp, floor in ((np.abs(f.spectral_amplitude(nu)), PUMP_SUPPORT_FLOOR),
                           (np.abs(f.spectrum_at(self.crystal.length / 2, nu)), SPM_SUPPORT_FLOOR)):
            above = np.abs(nu[amp > floor * amp.max()])
            need = max(need, above.max() if above.size else 0.0)
        if need > self.grid.half_width - abs(self.grid.offset_steps) * self.grid.spacing:
            raise ConfigError(
                f"frequency window +-{self.grid.half_width:.4g} rad/ps cannot hold the pump "
                f"support; need window_halfwidth >= {need:.4g} rad/ps", "solver.window_halfwidth")

    def pmf_born(self) -> np.ndarray:
        """First-order (Born) z-integral of the coupling profile, L*Phi(dk)."""
        dk = self.ks[:, None] + self.ki[None, :]
        L = self.crystal.length
        x = dk * L / 2
        if self.crystal.pmf_kind == "gaussian":
            return np.sqrt(np.pi * self.crystal.gaussian_gamma) * L * np.exp(
                -self.crystal.gaussian_gamma * x**2)
        return L * np.sinc(x / np.pi)

    def _calibrate(self, eps: float) -> float:
        """Coupling constant giving sum r_k^2 = eps^2 at low gain."""
        if eps == 0:
            return 0.0
        born = self.field.spectral_amplitude(self.nu)[self._idx] * self.pmf_born()
        return eps / (self.grid.spacing * np.sqrt(np.sum(np.abs(born) ** 2)))

    def _xpm_kernel(self, gamma) -> np.ndarray:
        """Discrete convolution by the pump power: X_jk = gamma Delta/(2 pi) M(w_j - w_k)."""
        tau = self.tau
        d = self.w[:, None] - self.w[None, :]
        m = self.pump.peak_power * np.sqrt(2 * np.pi) * tau * np.exp(-(tau * d) ** 2 / 2)
        return gamma * 1e-3 * self.grid.spacing / (2 * np.pi) * m

    def coupling_profile(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.crystal.pmf_kind == "gaussian":
            return np.exp(-z**2 / (self.crystal.gaussian_gamma * self.crystal.length**2))
        return (np.abs(z) <= self.crystal.length / 2 + 1e-12).astype(float)

    def inside(self, z: float) -> bool:
        return abs(z) <= self.crystal.length / 2

    def coupling(self, z: float) -> np.ndarray:
        """Pair-creation kernel C(z) without the profile factor."""
        if not self.field.spm_enabled or not self.inside(z) and z < 0:
            return self._c0
        p = self._spm_cache.get(float(z))
        if p is None:
            p = self.field.spectrum_at(z, self.nu)
        return self.kappa * self.grid.spacing * p[self._idx]

    def linear_blocks(self, z: float):
        """Hermitian blocks (A, B); vectors when diagonal."""
        if self.xpm is None or not self.inside(z):
            return self.ks, self.ki
        return np.diag(self.ks) + self.xpm[0], np.diag(self.ki) + self.xpm[1]

    def generator(self, z: float) -> np.ndarray:
        n = self.n
        A, B = self.linear_blocks(z)
        A = np.diag(A) if A.ndim == 1 else A
        B = np.diag(B) if B.ndim == 1 else B
        C = self.coupling_profile(z) * self.coupling(z)
        G = np.empty((2 * n, 2 * n), dtype=complex)
        G[:n, :n] = 1j * A
        G[:n, n:] = 1j * C
        G[n:, :n] = -1j * C.conj().T
        G[n:, n:] = -1j * B
        return G

    @property
    def static(self) -> bool:
        """True when every slice has the same propagator."""
        return self.crystal.pmf_kind == "sinc" and not self.field.spm_enabled

    # slice propagators
    def _half_linear(self, z):
        # the blocks take only two values (inside / outside the crystal)
        key = self.xpm is not None and self.inside(z)
        if key in self._linear_cache:
            return self._linear_cache[key]
        A, B = self.linear_blocks(z)
        h = self.dz / 2
        if A.ndim == 1:
            out = np.exp(1j * h * A), np.exp(-1j * h * B)
        else:
            ea, va = np.linalg.eigh(A)
            eb, vb = np.linalg.eigh(B)
            out = ((va * np.exp(1j * h * ea)) @ va.conj().T,
                   (vb * np.exp(-1j * h * eb)) @ vb.conj().T)
        self._linear_cache[key] = out
        return out

    def _split_slice(self, z, svd_cache):
        n = self.n
        C = self.coupling(z)
        key = id(C) if C is self._c0 else None
        if key is not None and key in svd_cache:
            W, S, Zh = svd_cache[key]
        else:
            W, S, Zh = np.linalg.svd(C)
            if key is not None:
                svd_cache[key] = (W, S, Zh)
        th = self.coupling_profile(z) * self.dz * S
        ch, sh = np.cosh(th), np.sinh(th)
        Wh, Z = W.conj().T, Zh.conj().T
        E = np.empty((2 * n, 2 * n), dtype=complex)
        E[:n, :n] = (W * ch) @ Wh
        E[:n, n:] = 1j * (W * sh) @ Zh
        E[n:, :n] = -1j * (Z * sh) @ Wh
        E[n:, n:] = (Z * ch) @ Zh
        la, lb = self._half_linear(z)
        if la.ndim == 1:
            d = np.concatenate([la, lb])
            return d[:, None] * E * d[None, :]
        E[:n, :] = la @ E[:n, :]
        E[n:, :] = lb @ E[n:, :]
        E[:, :n] = E[:, :n] @ la
        E[:, n:] = E[:, n:] @ lb
        return E

    def slices(self) -> Iterator[np.ndarray]:
        """Per-slice propagators in order of increasing z."""
        mids = 0.5 * (self.z_edges[1:] + self.z_edges[:-1])
        kind = self.settings.integrator
        cache: dict = {}
        eye = np.eye(2 * self.n)
        for zm, z0 in zip(mids, self.z_edges[:-1]):
            if kind == "split":
                yield self._split_slice(zm, cache)
            elif kind == "expm":
                yield scipy.linalg.expm(self.generator(zm) * self.dz)
            else:
                h = self.dz
                g0, gm, g1 = self.generator(z0), self.generator(z0 + h / 2), self.generator(z0 + h)
                k1 = g0
                k2 = gm @ (eye + h / 2 * k1)
                k3 = gm @ (eye + h / 2 * k2)
                k4 = g1 @ (eye + h * k3)
                yield eye + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def first_slice(self) -> np.ndarray:
        return next(iter(self.slices()))

    def output_reference(self) -> np.ndarray:
        """Diagonal that undoes free propagation beyond the exit facet."""
        ex = self.z_half - self.crystal.length / 2
        return np.concatenate([np.exp(-1j * self.ks * ex), np.exp(1j * self.ki * ex)])

    def describe(self) -> dict:
        return {**self.settings.to_dict(), "window_halfwidth": self.grid.half_width,
                "z_range_mm": [float(-self.z_half), float(self.z_half)],
                "coupling_kappa": float(self.kappa), "spm": self.field.spm_enabled,
                "xpm": self.xpm is not None}


def build_generator(z: float, crystal: CrystalParams, pump: PumpParams,
                    settings: SolverSettings = SolverSettings()) -> np.ndarray:
    """Stacked generator G(z) with d/dz (a, b^dag) = G (a, b^dag)."""
    return _System(crystal, pump, settings).generator(z)


def _product(system: _System) -> np.ndarray:
    nz = system.settings.n_zsteps
    if system.static:
        E = system.first_slice()
        return np.linalg.matrix_power(E, nz)
    K = None
    for E in system.slices():
        K = E if K is None else E @ K
    return K


def propagate(crystal: CrystalParams, pump: PumpParams,
              settings: SolverSettings = SolverSettings(), *, check: bool = True,
              center_offset: float = 0.0) -> TransferMatrices:
    """Transfer matrices from the entrance to the exit facet."""
    system = _System(crystal, pump, settings, center_offset)
    K = _product(system)
    K = system.output_reference()[:, None] * K
    tm = _from_stacked(K, system.grid, system.describe())
    if check and tm.worst_residual > INVARIANT_LIMIT:
        raise SolverError(
            f"Bogoliubov invariants violated ({tm.worst_residual:.2e} > {INVARIANT_LIMIT:g}); "
            f"increase n_zsteps (currently {settings.n_zsteps}) or use the split integrator")
    return tm


def iter_transfer(crystal: CrystalParams, pump: PumpParams,
                  settings: SolverSettings = SolverSettings()):
    """Yield (z, TransferMatrices) at every slice boundary, without output re-referencing."""
    system = _System(crystal, pump, settings)
    K = np.eye(2 * system.n, dtype=complex)
    for z, E in zip(system.z_edges[1:], system.slices()):
        K = E @ K
        yield float(z), _from_stacked(K, system.grid, {})


class SchmidtDecomposition(NamedTuple):
    jsa: JsaGrid
    r: np.ndarray  # squeezing parameters, descending
    signal_modes: np.ndarray  # columns, discrete-mode normalised
    idler_modes: np.ndarray
    mean_photons: float


def jsa_from_transfer(tm: TransferMatrices, tol: float = INVARIANT_LIMIT) -> SchmidtDecomposition:
    """Gain-weighted JSA and Schmidt structure of the output state.

    Uses the pair correlation M = <a_out b_out^T> = U_ss V_is^T, whose SVD
    F s G^T gives ``r_k = arcsinh(2 s_k)/2`` and the output mode pairs.  The
    amplitude is expressed in the convention where free walk-off yields the
    phase -(T/2)(ws - wi), i.e. the physical delay appears with negative
    slope along the anti-diagonal.
    """
    if tm.worst_residual > tol:
        raise SolverError(f"transfer matrices violate Bogoliubov invariants "
                          f"({tm.worst_residual:.2e}); refusing to decompose")
    M = tm.U_ss @ tm.V_is.T
    F, s, Gh = np.linalg.svd(M)
    r = 0.5 * np.arcsinh(2 * s)
    amp = -1j * (F * r) @ Gh
    amp = np.conj(amp) / tm.grid.spacing
    jsa = JsaGrid(tm.grid, tm.grid, amp, "gain-weighted", {"source": "propagator"})
    return SchmidtDecomposition(jsa, r, np.conj(F), Gh.T, float(np.sum(np.sinh(r) ** 2)))


def lab_frame_phase(jsa: JsaGrid, crystal: CrystalParams, inverse: bool = False) -> JsaGrid:
    """Attach (or with ``inverse`` remove) the walk-off phase of pairs born mid-crystal.

    Multiplies by exp[-i (L/2)(dk_s(ws) + dk_i(wi))]; for symmetric matching
    this is exp[-i (beta0/2)(ws - wi)].
    """
    ds, di = crystal.inverse_velocity_offsets()
    half = crystal.length / 2
    ph = -half * (ds * jsa.ws[:, None] + di * jsa.wi[None, :])
    if inverse:
        ph = -ph
    return jsa.with_amplitude(jsa.amplitude * np.exp(1j * ph), frame="interaction" if inverse else "lab")


@dataclass(frozen=True, eq=False)
class DynamicsMap:
    """Photon-number densities on a (z, t) grid.

    ``t`` is laboratory time with t = 0 when the pump peak enters the
    crystal.  Signal and idler densities are in photons per ps; the pump
    row is its intensity normalised to peak.
    """

    z: np.ndarray
    t: np.ndarray
    densities: dict
    velocities: dict
    metadata: dict = field(default_factory=dict)

    def centroids(self, beam: str) -> np.ndarray:
        """Mean arrival time at each z (nan where the density vanishes)."""
        d = self.densities[beam]
        tot = d.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, d @ self.t / tot, np.nan)

    def totals(self, beam: str) -> np.ndarray:
        """Photons per pulse at each z."""
        return np.trapezoid(self.densities[beam], self.t, axis=1)

    def exit_delay(self) -> float:
        """Signal minus idler centroid time at the exit facet (ps)."""
        return float(self.centroids("signal")[-1] - self.centroids("idler")[-1])

    def long_table(self):
        for beam in ("pump", "signal", "idler"):
            d = self.densities[beam]
            for i, z in enumerate(self.z):
                for k, t in enumerate(self.t):
                    yield (z, t, d[i, k], beam)

    def save(self, prefix) -> list:
        hdr = ["units: z in mm, t in ps (lab time, pump peak enters at t = 0)",
               "density: photons per ps (signal, idler); intensity / peak (pump)"]
        paths = [io.write_csv(f"{prefix}_long.csv", self.long_table(), hdr,
                              ["z_mm", "t_ps", "density", "beam"])]
        rows = zip(self.z, self.centroids("pump"), self.centroids("signal"),
                   self.centroids("idler"), self.totals("signal"), self.totals("idler"))
        paths.append(io.write_csv(f"{prefix}_centroids.csv", rows, hdr[:1],
                                  ["z_mm", "t_pump_ps", "t_signal_ps", "t_idler_ps",
                                   "photons_signal", "photons_idler"]))
        paths.append(io.write_json(f"{prefix}.json", {**self.metadata, "velocities_mm_per_ps": self.velocities}))
        return paths


def pulse_dynamics(crystal: CrystalParams, pump: PumpParams,
                   settings: SolverSettings = SolverSettings(), t_samples=None,
                   n_z: int = 41) -> DynamicsMap:
    """Photon-number density maps from the evolving Bogoliubov blocks."""
    system = _System(crystal, pump, settings)
    L, n = crystal.length, system.n
    vp = C_MMPS / crystal.group_index_pump
    ds, di = crystal.inverse_velocity_offsets()
    if t_samples is None:
        margin = 12 * system.tau + L * max(abs(ds), abs(di))
        t_samples = np.linspace(-margin, L / vp + margin, 601)
    t = np.asarray(t_samples, dtype=float)
    nz = settings.n_zsteps
    stride = max(1, int(round(nz / max(n_z - 1, 1))))
    keep = set(range(0, nz + 1, stride)) | {nz}

    z0 = system.z_edges[0]
    rows = [(z0, np.eye(2 * n, dtype=complex))]
    if system.static:
        E = system.first_slice()
        Es = np.linalg.matrix_power(E, stride)
        K = rows[0][1]
        m = 0
        while m < nz:
            step = min(stride, nz - m)
            K = (Es if step == stride else np.linalg.matrix_power(E, step)) @ K
            m += step
            rows.append((system.z_edges[m], K))
    else:
        K = rows[0][1]
        for m, E in enumerate(system.slices(), start=1):
            K = E @ K
            if m in keep:
                rows.append((system.z_edges[m], K))

    w, dw = system.w, system.grid.spacing
    z_out = np.array([r[0] for r in rows])
    sig = np.empty((len(rows), t.size))
    idl = np.empty_like(sig)
    for row, (z, K) in enumerate(rows):
        loc = t - (z + L / 2) / vp
        phi = np.sqrt(dw / (2 * np.pi)) * np.exp(-1j * np.outer(loc, w))
        V, Wb = K[:n, n:], K[n:, :n]
        # the discrete spectrum repeats in time every 2 pi / dw; keep the copy around the pump
        alias = np.abs(loc) <= np.pi / dw
        sig[row] = np.sum(np.abs(phi @ V) ** 2, axis=1) * alias
        idl[row] = np.sum(np.abs(phi @ Wb.conj()) ** 2, axis=1) * alias
    loc = t[None, :] - (z_out[:, None] + L / 2) / vp
    pump_d = system.field.intensity(loc)
    vel = {"pump": vp, "signal": C_MMPS / crystal.group_index_signal,
           "idler": C_MMPS / crystal.group_index_idler}
    res = _from_stacked(rows[-1][1], system.grid, {}).residuals
    return DynamicsMap(z_out, t, {"pump": pump_d, "signal": sig, "idler": idl}, vel,
                       {"gain": pump.gain, "beta0_ps": walkoff_beta0(crystal),
                        "solver": system.describe(), "invariant_residuals": res})
