"""Threshold-detector statistics of zero-mean Gaussian states.

States are stored by their complex symmetric-ordered covariance
``sigma = <{xi, xi^dag}>/2`` in the basis ``xi = (a_1..a_N, a_1^dag..a_N^dag)``
(vacuum: I/2).  The Husimi covariance ``Q = sigma + I/2`` gives the
probability that a set of modes M is empty as ``1/sqrt(det Q_M)``; click
patterns follow by inclusion-exclusion over the clicked modes, which costs
2^N determinants and is meant for a handful of detectors.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import optimize

from . import io
from .errors import InputDataError, NumericalPrecisionError

MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Zero-mean N-mode Gaussian state."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=complex)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
            raise ValueError("covariance must be a square matrix of even dimension")
        if np.abs(s - s.conj().T).max() > 1e-9 * max(1.0, np.abs(s).max()):
            raise ValueError("covariance must be Hermitian")
        n = s.shape[0] // 2
        # <xi xi^dag> = sigma + Z/2 must be positive semidefinite
        Z = np.diag(np.r_[np.ones(n), -np.ones(n)])
        floor = np.linalg.eigvalsh(0.5 * (s + s.conj().T) + 0.5 * Z).min()
        if floor < -1e-9 * max(1.0, np.abs(s).max()):
            raise ValueError(f"covariance violates the uncertainty relation ({floor:.3g})")
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)

    @property
    def n_modes(self) -> int:
        return self.sigma.shape[0] // 2

    @property
    def husimi(self) -> np.ndarray:
        return self.sigma + 0.5 * np.eye(2 * self.n_modes)

    @classmethod
    def vacuum(cls, n_modes: int) -> "GaussianState":
        return cls(0.5 * np.eye(2 * n_modes))

    @classmethod
    def thermal(cls, nbar) -> "GaussianState":
        nbar = np.atleast_1d(np.asarray(nbar, dtype=float))
        return cls(np.diag(np.r_[nbar, nbar] + 0.5).astype(complex))

    def mean_photons(self) -> np.ndarray:
        n = self.n_modes
        return np.real(np.diag(self.sigma)[:n]) - 0.5

    def number_covariance(self) -> np.ndarray:
        """Cov(n_j, n_k) = |<a_k^dag a_j>|^2 + |<a_j a_k>|^2 (j != k), exact on the diagonal too."""
        n = self.n_modes
        s = self.sigma
        N = s[:n, :n] - 0.5 * np.eye(n)
        M = s[:n, n:]
        cov = np.abs(N) ** 2 + np.abs(M) ** 2
        # Var(n) = <n>^2 + <n> + |<a a>|^2 for a Gaussian mode
        cov[np.diag_indices(n)] += np.real(np.diag(N))
        return cov

    def transform(self, W: np.ndarray) -> "GaussianState":
        return GaussianState(W @ self.sigma @ W.conj().T)


def tmsv_state(eps: float) -> GaussianState:
    """Two-mode squeezed vacuum with squeezing ``eps`` (modes: signal, idler)."""
    if eps < 0:
        raise ValueError("squeezing must be non-negative")
    c, s = np.cosh(eps), np.sinh(eps)
    X = np.array([[0, 1], [1, 0]])
    S = np.block([[c * np.eye(2), s * X], [s * X, c * np.eye(2)]]).astype(complex)
    return GaussianState.vacuum(2).transform(S)


def apply_loss(state: GaussianState, eta) -> GaussianState:
    """Pure-loss channel with transmission ``eta`` (scalar or per mode)."""
    n = state.n_modes
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
    if np.any(eta < 0) or np.any(eta > 1):
        raise ValueError("transmission must lie in [0, 1]")
    t = np.sqrt(np.r_[eta, eta])
    sigma = t[:, None] * state.sigma * t[None, :] + 0.5 * np.diag(1 - t**2)
    return GaussianState(sigma)


def passive(state: GaussianState, U: np.ndarray) -> GaussianState:
    """Apply the interferometer a -> U a."""
    U = np.asarray(U, dtype=complex)
    Z = np.zeros_like(U)
    return state.transform(np.block([[U, Z], [Z, U.conj()]]))


def embed(state: GaussianState, n_modes: int) -> GaussianState:
    """Append vacuum modes."""
    n = state.n_modes
    extra = n_modes - n
    if extra < 0:
        raise ValueError("cannot embed into fewer modes")
    s = 0.5 * np.eye(2 * n_modes, dtype=complex)
    idx = np.r_[np.arange(n), n_modes + np.arange(n)]
    s[np.ix_(idx, idx)] = state.sigma
    return GaussianState(s)


def split_to_detectors(state: GaussianState) -> GaussianState:
    """Split every mode on a balanced beam splitter with a vacuum port.

    Mode k becomes detectors (2k, 2k+1); for two input modes the order is
    (signal_1, signal_2, idler_1, idler_2).
    """
    n = state.n_modes
    big = embed(state, 2 * n)
    U = np.zeros((2 * n, 2 * n))
    h = 1 / np.sqrt(2)
    # inputs: originals 0..n-1, ancillas n..2n-1
    for k in range(n):
        U[2 * k, k], U[2 * k, n + k] = h, h
        U[2 * k + 1, k], U[2 * k + 1, n + k] = h, -h
    return passive(big, U)


def vacuum_probability(state: GaussianState, modes) -> float:
    """Probability that all listed modes are empty."""
    modes = list(modes)
    if not modes:
        return 1.0
    n = state.n_modes
    idx = np.r_[modes, np.asarray(modes) + n]
    Q = state.husimi[np.ix_(idx, idx)]
    cond = np.linalg.cond(Q)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalPrecisionError(f"restricted Husimi covariance has condition number {cond:.3g}")
    sign, logdet = np.linalg.slogdet(Q)
    return float(np.exp(-0.5 * np.real(logdet)))


def _bits(pattern) -> tuple[int, ...]:
    if isinstance(pattern, str):
        if not pattern or set(pattern) - {"0", "1"}:
            raise ValueError(f"bad pattern {pattern!r}")
        return tuple(int(c) for c in pattern)
    return tuple(int(bool(b)) for b in pattern)


def pattern_probability(state: GaussianState, pattern) -> float:
    """Probability of the click pattern (1 = click) on threshold detectors."""
    bits = _bits(pattern)
    if len(bits) != state.n_modes:
        raise ValueError("pattern length must equal the number of modes")
    clicked = [k for k, b in enumerate(bits) if b]
    quiet = [k for k, b in enumerate(bits) if not b]
    p = 0.0
    for r in range(len(clicked) + 1):
        for sub in itertools.combinations(clicked, r):
            p += (-1) ** r * vacuum_probability(state, quiet + list(sub))
    return p


def all_pattern_probabilities(state: GaussianState) -> "ClickStats":
    """All 2^N pattern probabilities, sharing the 2^N vacuum determinants."""
    n = state.n_modes
    pv = {}
    for mask in range(1 << n):
        pv[mask] = vacuum_probability(state, [k for k in range(n) if mask >> (n - 1 - k) & 1])
    full = (1 << n) - 1
    probs = {}
    for mask in range(1 << n):
        # mask bit set = click; sum over subsets S of the clicked set
        clicked = mask
        p = 0.0
        sub = clicked
        while True:
            p += (-1) ** bin(sub).count("1") * pv[(full ^ clicked) | sub]
            if sub == 0:
                break
            sub = (sub - 1) & clicked
        probs[format(mask, f"0{n}b")] = p
    return ClickStats(probs)


@dataclass(frozen=True, eq=False)
class ClickStats:
    """Pattern probabilities or observed frequencies keyed by bit strings."""

    probabilities: dict
    shots: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = {}
        n = None
        for key, v in self.probabilities.items():
            b = _bits(key)
            if n is None:
                n = len(b)
            elif len(b) != n:
                raise ValueError("patterns of mixed length")
            v = float(v)
            if not np.isfinite(v) or v < -1e-12:
                raise ValueError(f"pattern {key}: invalid probability {v}")
            probs["".join(map(str, b))] = max(v, 0.0)
        tot = sum(probs.values())
        if abs(tot - 1) > 1e-9:
            raise ValueError(f"probabilities sum to {tot!r}, not 1")
        for mask in range(1 << n):
            probs.setdefault(format(mask, f"0{n}b"), 0.0)
        object.__setattr__(self, "probabilities", dict(sorted(probs.items())))

    @property
    def n_modes(self) -> int:
        return len(next(iter(self.probabilities)))

    def vector(self) -> np.ndarray:
        return np.array(list(self.probabilities.values()))

    def __getitem__(self, pattern) -> float:
        return self.probabilities["".join(map(str, _bits(pattern)))]

    @classmethod
    def from_counts(cls, counts: dict, metadata=None) -> "ClickStats":
        total = sum(counts.values())
        if total <= 0:
            raise ValueError("no shots recorded")
        return cls({k: c / total for k, c in counts.items()}, int(total), metadata or {})

    def counts(self) -> dict:
        if self.shots is None:
            raise ValueError("probabilities carry no shot count")
        return {k: int(round(v * self.shots)) for k, v in self.probabilities.items()}

    def save(self, path):
        return io.write_json(path, {"shots": self.shots, "patterns": self.probabilities,
                                    "metadata": self.metadata,
                                    "detector_order": "signal_1 signal_2 idler_1 idler_2"
                                    if self.n_modes == 4 else "mode order"})

    @classmethod
    def load(cls, path) -> "ClickStats":
        path = Path(path)
        if path.suffix.lower() == ".csv":
            return cls._load_csv(path)
        data = io.read_json(path)
        try:
            pats = data["patterns"]
            shots = data.get("shots")
            if shots is not None and all(float(v).is_integer() for v in pats.values()) \
                    and sum(pats.values()) == shots and shots > 1:
                return cls.from_counts({k: float(v) for k, v in pats.items()})
            return cls(pats, shots, data.get("metadata", {}))
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise InputDataError(f"bad click statistics ({exc})", path) from None

    @classmethod
    def _load_csv(cls, path) -> "ClickStats":
        counts = {}
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                if len(row) != 2:
                    raise InputDataError(f"expected 2 columns, found {len(row)}", path, lineno, 1)
                pat, cnt = row[0].strip(), row[1].strip()
                if pat == "pattern":
                    continue
                try:
                    _bits(pat)
                except ValueError:
                    raise InputDataError(f"bad pattern {pat!r}", path, lineno, 1) from None
                try:
                    c = float(cnt)
                except ValueError:
                    col = len(row[0]) + 2
                    raise InputDataError(f"not a number: {cnt!r}", path, lineno, col) from None
                if c < 0:
                    raise InputDataError("negative count", path, lineno, len(row[0]) + 2)
                counts[pat] = counts.get(pat, 0.0) + c
        try:
            return cls.from_counts(counts)
        except ValueError as exc:
            raise InputDataError(str(exc), path) from None


def sample_clicks(probabilities: ClickStats, shots: int, seed: int = 0) -> ClickStats:
    """Multinomial sample of ``shots`` patterns (counter-based RNG)."""
    rng = np.random.Generator(np.random.Philox(seed))
    p = probabilities.vector()
    counts = rng.multinomial(int(shots), p / p.sum())
    return ClickStats.from_counts(dict(zip(probabilities.probabilities, counts)),
                                  {"seed": int(seed)})


def detector_model(eps: float, eta) -> ClickStats:
    """Pattern probabilities for a lossy TMSV split onto four detectors."""
    return all_pattern_probabilities(split_to_detectors(apply_loss(tmsv_state(eps), eta)))


class GainEstimate(NamedTuple):
    eps: float
    residual: float
    degenerate: bool  # no clicks observed at all
    method: str


def estimate_gain(observed: ClickStats, eta, *, method: str = "lsq",
                  bounds=(0.0, 5.0), grid: int = 51) -> GainEstimate:
    """Fit the squeezing of a lossy TMSV to observed four-detector click frequencies.

    ``method="lsq"`` minimises the squared pattern residuals; ``"mle"`` the
    multinomial negative log-likelihood.  A coarse scan picks the bracket
    and a bounded Brent search refines it.
    """
    if method not in ("lsq", "mle"):
        raise ValueError("method must be 'lsq' or 'mle'")
    obs = observed.vector()
    if observed.n_modes != 4:
        raise ValueError("gain model expects four detectors")
    if obs[0] >= 1.0 - 1e-15:
        return GainEstimate(0.0, 0.0, True, method)

    def cost(eps):
        model = detector_model(float(eps), eta).vector()
        if method == "lsq":
            return float(np.sum((model - obs) ** 2))
        return float(-np.sum(obs * np.log(np.clip(model, 1e-300, None))))

    lo, hi = bounds
    xs = np.linspace(lo, hi, grid)
    vals = np.array([cost(x) for x in xs])
    k = int(np.argmin(vals))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
    res = optimize.minimize_scalar(cost, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-9})
    eps, val = (res.x, res.fun) if res.fun <= vals[k] else (xs[k], vals[k])
    return GainEstimate(float(eps), float(val), False, method)


class KlyshkoResult(NamedTuple):
    eta_a: float
    eta_b: float
    low_gain_valid: bool


def klyshko_efficiency(singles_a: float, singles_b: float, coincidences: float,
                       pulses: float | None = None) -> KlyshkoResult:
    """Heralding efficiencies eta_a = C/S_b and eta_b = C/S_a.

    With the number of ``pulses`` known, the estimate is flagged invalid when
    the inferred pairs per pulse S_a S_b / (C pulses) exceed 0.1.
    """
    if singles_a <= 0 or singles_b <= 0:
        raise ValueError("singles counts must be positive")
    if coincidences < 0:
        raise ValueError("coincidences must be non-negative")
    valid = True
    if pulses is not None and coincidences > 0:
        valid = singles_a * singles_b / (coincidences * pulses) <= 0.1
    return KlyshkoResult(coincidences / singles_b, coincidences / singles_a, valid)
