"""Delay and visibility extraction, and Schmidt diagnostics.

Two independent delay estimators are provided:

* ``extract_delay_phase`` fits the joint spectral phase of a (lab-frame)
  JSA along the anti-diagonal direction x = (ws - wi)/2, where a delay T
  appears as arg J = -T x + c(ws + wi).
* ``extract_delay_fft`` reads the fringe period of a coincidence histogram
  off the sideband of its 2-D Fourier transform, as done with measured data.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import io
from .errors import ExtractionError
from .interferometry import DetectionChain, Interferogram
from .jsa import JsaGrid


@dataclass(frozen=True)
class DelayEstimate:
    T: float  # ps
    uncertainty: float  # ps
    method: str  # "fft-sideband" or "phase-gradient"
    sideband_separation: float | None = None  # ps, fft method only
    visibility: float | None = None
    n_pixels: int | None = None

    def __post_init__(self):
        if not self.uncertainty >= 0:
            raise ValueError("uncertainty must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        return io.write_json(path, {**self.to_dict(), "units": {"T": "ps", "uncertainty": "ps",
                                                                 "sideband_separation": "ps"}})


def write_delay_table(path, rows):
    """Long-format (gain, T, uncertainty, method) table."""
    return io.write_csv(path, ((g, e.T, e.uncertainty, e.method) for g, e in rows),
                        ["units: T and uncertainty in ps"], ["gain", "T_ps", "uncertainty_ps",
                                                             "method"])


# phase-gradient route
def _main_lobe(a, floor):
    """Index range of the contiguous, monotonically decaying lobe around the maximum."""
    p = int(np.argmax(a))
    lo = p
    while lo > 0 and a[lo - 1] >= floor and a[lo - 1] <= a[lo]:
        lo -= 1
    hi = p
    while hi < a.size - 1 and a[hi + 1] >= floor and a[hi + 1] <= a[hi]:
        hi += 1
    return lo, hi


def phase_slope(jsa: JsaGrid, threshold: float = 1e-3, main_lobe: bool = True):
    """Pooled weighted slope of arg J against x = (ws - wi)/2.

    Each anti-diagonal (ws + wi = const) is unwrapped separately and gets its
    own intercept; weights are |J|^2.  Restricting each slice to its main
    lobe keeps the pi jumps at sinc zeros out of the fit.
    Returns ``(slope, standard_error, n_pixels)``.
    """
    if jsa.grid_s != jsa.grid_i:
        raise ValueError("phase fit needs identical signal and idler grids")
    A = jsa.amplitude
    a = np.abs(A)
    amax = a.max()
    if amax == 0:
        raise ExtractionError("JSA is identically zero; delay undefined")
    floor = threshold * amax
    w = jsa.ws
    n = w.size
    xs, ys, ws, gs = [], [], [], []
    for d in range(2 * n - 1):
        j = np.arange(max(0, d - n + 1), min(n, d + 1))
        k = d - j
        aa = a[j, k]
        if aa.max() < floor:
            continue
        if main_lobe:
            lo, hi = _main_lobe(aa, floor)
        else:
            sel = np.nonzero(aa >= floor)[0]
            lo, hi = sel[0], sel[-1]
        if hi - lo < 1:
            continue
        sl = slice(lo, hi + 1)
        jj, kk = j[sl], k[sl]
        xs.append(0.5 * (w[jj] - w[kk]))
        ys.append(np.unwrap(np.angle(A[jj, kk])))
        ws.append(aa[sl] ** 2)
        gs.append(np.full(hi - lo + 1, len(gs)))
    if not xs:
        raise ExtractionError("fewer than 10 pixels above threshold")
    X, Y, Wt, G = map(np.concatenate, (xs, ys, ws, gs))
    if X.size < 10:
        raise ExtractionError(f"only {X.size} pixels above threshold (need 10)")
    ng = len(xs)
    sw = np.bincount(G, Wt, ng)
    xc = X - (np.bincount(G, Wt * X, ng) / sw)[G]
    yc = Y - (np.bincount(G, Wt * Y, ng) / sw)[G]
    sxx = np.sum(Wt * xc**2)
    if sxx == 0:
        raise ExtractionError("no spread along the anti-diagonal")
    slope = np.sum(Wt * xc * yc) / sxx
    resid = yc - slope * xc
    dof = max(X.size - ng - 1, 1)
    var = np.sum(Wt * resid**2) / dof / sxx
    return float(slope), float(np.sqrt(var)), int(X.size)


def extract_delay_phase(jsa: JsaGrid, threshold: float = 1e-3,
                        main_lobe: bool = True) -> DelayEstimate:
    """Delay from the joint spectral phase of a lab-frame JSA.

    T > 0 means the signal photon exits later than the idler.
    """
    slope, err, npix = phase_slope(jsa, threshold, main_lobe)
    return DelayEstimate(-slope, err, "phase-gradient", n_pixels=npix)


# FFT-sideband route
class _Sideband(NamedTuple):
    delay: float
    step: float
    height: float
    floor: float


def _sideband(R, spacing, pad, min_delay, window):
    n1, n2 = R.shape
    if window:
        R = R * np.outer(np.hanning(n1), np.hanning(n2))
    npad = pad * max(n1, n2)
    F = np.abs(np.fft.fft2(R, s=(npad, npad)))
    t = 2 * np.pi * np.fft.fftfreq(npad, d=spacing)
    k = np.arange(npad)
    # fringes cos[d (w1 - w2)] sit at conjugate times (d, -d)
    line = F[k, (-k) % npad]
    delay = t
    step = delay[1] - delay[0]
    ok = np.nonzero((delay > min_delay) & (delay < 0.5 * delay.max()))[0]
    if ok.size < 3:
        raise ExtractionError("delay search range is empty; histogram too small")
    i = ok[np.argmax(line[ok])]
    a, b, c = line[i - 1], line[i], line[i + 1]
    den = a - 2 * b + c
    frac = 0.5 * (a - c) / den if den != 0 else 0.0
    # noise floor: median magnitude of the whole map away from both sidebands
    mask = np.ones_like(F, dtype=bool)
    r = 3 * pad
    for s in (1, -1):
        ci, cj = (s * i) % npad, (-s * i) % npad
        ii = (np.arange(ci - r, ci + r + 1)) % npad
        jj = (np.arange(cj - r, cj + r + 1)) % npad
        mask[np.ix_(ii, jj)] = False
    floor = float(np.median(F[mask]))
    return _Sideband(float(delay[i] + frac * step), float(step), float(b), floor)


def _fringe_cos(axis1, axis2, delay):
    return np.cos(delay * (axis1[:, None] - axis2[None, :]))


def _separable_envelope(H, cos=None, iters=30):
    """Alternating least squares for H ~ u v^T (1 - V cos) + b.

    Returns the envelope u v^T, V (0 when ``cos`` is None) and the uniform
    background b.
    """
    tot = H.sum()
    u = H.sum(axis=1) / np.sqrt(tot)
    v = H.sum(axis=0) / np.sqrt(tot)
    vis, b = 0.0, 0.0
    for _ in range(iters):
        m = 1.0 if cos is None else 1 - vis * cos
        G = H - b
        u = (G * m * v[None, :]).sum(1) / np.maximum((m**2 * (v**2)[None, :]).sum(1), 1e-300)
        v = (G * m * u[:, None]).sum(0) / np.maximum((m**2 * (u**2)[:, None]).sum(0), 1e-300)
        E = np.outer(u, v)
        if cos is not None:
            X = E * cos
            xx = np.sum(X * X)
            vis = float(-np.sum((G - E) * X) / xx) if xx > 0 else 0.0
            m = 1 - vis * cos
        b = float(np.mean(H - E * m))
    return np.outer(u, v), vis, b


def extract_delay_fft(histogram: Interferogram, chain: DetectionChain | None = None, *,
                      pad: int = 4, window: bool = False, min_delay: float | None = None,
                      rounds: int = 4, snr: float = 5.0) -> DelayEstimate:
    """Delay from the fringe sideband of the 2-D Fourier transform.

    The slowly varying envelope and a uniform background are removed before
    the transform: first a separable product plus constant, then the same
    refitted jointly with the fringe at the current delay estimate.  The sideband position along the
    anti-diagonal conjugate axis is refined by parabolic interpolation;
    the reported delay is |sideband| - T_BBO_offset and its uncertainty
    half a (zero-padded) conjugate-axis bin.
    """
    H = np.asarray(histogram.values, dtype=float)
    d1, d2 = histogram.spacing
    if abs(d1 - d2) > 1e-9 * d1:
        raise ExtractionError("histogram axes must share one bin width")
    tot = H.sum()
    if tot <= 0:
        raise ExtractionError("empty histogram")
    offset = chain.T_BBO_offset if chain is not None else 0.0
    if min_delay is None:
        # two unpadded conjugate bins keep the envelope residue out of the search
        min_delay = 2 * (2 * np.pi / (max(H.shape) * d1))
    E, _, b = _separable_envelope(H)
    sb = _sideband(H - E - b, d1, pad, min_delay, window)
    vis = None
    for _ in range(rounds):
        E, vis, b = _separable_envelope(H, _fringe_cos(histogram.axis1, histogram.axis2, sb.delay))
        sb = _sideband(H - E - b, d1, pad, min_delay, window)
    # numerically noiseless data has a floor at round-off level
    floor = max(sb.floor, 1e-9 * tot)
    if sb.height < snr * floor:
        raise ExtractionError(
            f"no fringe sideband above {snr:g}x the noise floor "
            f"(peak {sb.height:.3g}, floor {floor:.3g})")
    total = abs(sb.delay)
    return DelayEstimate(total - offset, 0.5 * sb.step, "fft-sideband",
                         sideband_separation=total, visibility=vis)


class VisibilityFit(NamedTuple):
    visibility: float
    uncertainty: float


def fit_visibility(histogram: Interferogram, T_fixed: float, chain: DetectionChain | None = None,
                   iters: int = 50) -> VisibilityFit:
    """Least-squares V in envelope * (1 - V cos[T (w1 - w2)]).

    ``T_fixed`` is the model delay; the chain's BBO offset is added to it.
    The separable envelope is fitted jointly, so no marginal model is needed.
    """
    H = np.asarray(histogram.values, dtype=float)
    offset = chain.T_BBO_offset if chain is not None else 0.0
    cos = _fringe_cos(histogram.axis1, histogram.axis2, T_fixed + offset)
    E, vis, b = _separable_envelope(H, cos, iters)
    X = E * cos
    resid = H - b - E * (1 - vis * cos)
    dof = max(H.size - H.shape[0] - H.shape[1] - 1, 1)
    xx = np.sum(X * X)
    err = float(np.sqrt(np.sum(resid**2) / dof / xx)) if xx > 0 else float("inf")
    return VisibilityFit(vis, err)


# Schmidt structure
class SchmidtDiagnostics(NamedTuple):
    schmidt_number: float
    weights: np.ndarray


def schmidt_diagnostics(jsa: JsaGrid) -> SchmidtDiagnostics:
    """Schmidt number K = 1/sum(lambda_k^2) from the SVD of the sampled JSA."""
    s = np.linalg.svd(jsa.amplitude * np.sqrt(jsa.area_element), compute_uv=False)
    p = s**2
    tot = p.sum()
    if tot == 0:
        raise ExtractionError("Schmidt decomposition of a zero JSA is undefined")
    lam = p / tot
    return SchmidtDiagnostics(float(1.0 / np.sum(lam**2)), lam)
