"""Spectrum decomposition: fit measured ADC spectra as response-folded
combinations of per-isotope deposit templates (pedestal, gain, two
resolution terms, and one non-negative amplitude per isotope), and
reconstruct the absolute ambient gamma flux from the fitted amplitudes.

The minimizer is derivative-free simplex with restarts; amplitudes are kept
non-negative through a softplus transform. The variance model is Neyman
chi-square with max(data, 1) guarding empty bins.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import erf

from .response import ResponseParams, Spectrum, fold

AMBIENT_ISOTOPES = ("K-40", "Pb-214", "Bi-214", "Ac-228", "Pb-212", "Bi-212",
                    "Tl-208")


class FitError(ValueError):
    pass


@dataclass
class FitProblem:
    """Data spectrum, templates, fit window (bin index range), and model."""

    data: Spectrum
    templates: dict                  # isotope -> energy-axis Spectrum
    window: tuple = None             # (lo_bin, hi_bin) half-open; None = all
    model: str = "full11"            # "full11" | "align2"
    fixed: ResponseParams = field(default_factory=ResponseParams)

    def __post_init__(self):
        if self.data.axis != "adc":
            raise FitError("data spectrum must be on the adc axis")
        if not self.data.live_time_s > 0:
            raise FitError("data live time must be > 0")
        if self.model not in ("full11", "align2"):
            raise FitError(f"unknown model {self.model!r}")
        if self.model == "full11" and not self.templates:
            raise FitError("full11 model needs at least one template")
        if self.model == "align2" and len(self.templates) != 1:
            raise FitError("align2 model fits exactly one template")
        if self.window is None:
            self.window = (0, len(self.data.contents))
        lo, hi = self.window
        if not 0 <= lo < hi <= len(self.data.contents):
            raise FitError("empty or out-of-range fit window")
        for name, t in self.templates.items():
            if t.axis != "energy":
                raise FitError(f"template {name!r} must be on the energy axis")

    @property
    def names(self):
        return list(self.templates)

    def n_free(self):
        return 4 + len(self.templates) if self.model == "full11" else 2

    def dof(self):
        lo, hi = self.window
        return (hi - lo) - self.n_free()


def _model_counts(problem, params, amplitudes):
    """Folded model on the data binning, scaled to the data live time.

    Templates sharing one energy grid are folded through a single erf
    matrix; stragglers fall back to per-template folds.
    """
    data = problem.data
    out = np.zeros(len(data.contents))
    groups = {}
    for name, t in problem.templates.items():
        a = amplitudes[name]
        if a == 0:
            continue
        key = (t.edges[0], t.edges[-1], len(t.edges))
        groups.setdefault(key, []).append((a * data.live_time_s / t.live_time_s, t))
    for _, members in groups.items():
        t0 = members[0][1]
        centers_adc = params.pedestal + params.gain * t0.centers
        sigma = params.gain * np.sqrt(
            params.sigma0 ** 2 + params.sigma1 ** 2 * t0.centers)
        sigma = np.maximum(sigma, 1e-12)
        cdf = 0.5 * (1 + erf((data.edges[None, :] - centers_adc[:, None])
                             / (sigma[:, None] * math.sqrt(2))))
        frac = np.diff(cdf, axis=1)
        combined = np.zeros(len(t0.contents))
        for scale, t in members:
            combined += scale * t.contents
        out += combined @ frac
    return out


def _unpack(problem, theta):
    if problem.model == "full11":
        p0, p1, s0, s1 = theta[:4]
        params = ResponseParams(pedestal=p0, gain=p1, sigma0=abs(s0),
                                sigma1=abs(s1))
        amps = {n: _softplus(u) for n, u in zip(problem.names, theta[4:])}
    else:
        params = ResponseParams(pedestal=problem.fixed.pedestal,
                                gain=theta[0],
                                sigma0=problem.fixed.sigma0,
                                sigma1=problem.fixed.sigma1)
        amps = {problem.names[0]: _softplus(theta[1])}
    return params, amps


def _softplus(u):
    # exact non-negativity transform, linear for large u
    return float(np.logaddexp(0.0, u))


def _softplus_inv(a):
    if a <= 0:
        return -30.0
    return float(a + np.log(-np.expm1(-a))) if a > 1e-10 else math.log(a)


def chi_square(problem, params, amplitudes):
    """Neyman chi-square over the fit window: sum (d - m)^2 / max(d, 1)."""
    if not params.gain > 0:
        raise FitError("gain must be > 0")
    if any(a < 0 for a in amplitudes.values()):
        raise FitError("amplitudes must be >= 0")
    m = _model_counts(problem, params, amplitudes)
    lo, hi = problem.window
    d = problem.data.contents[lo:hi]
    return float(np.sum((d - m[lo:hi]) ** 2 / np.maximum(d, 1.0)))


@dataclass
class FitResult:
    params: ResponseParams
    amplitudes: dict
    amplitude_errors: dict
    chi2: float
    dof: int
    covariance: np.ndarray
    converged: bool

    def chi2_per_dof(self):
        return self.chi2 / self.dof


def _objective(problem, theta):
    if problem.model == "full11":
        if theta[1] <= 0:
            return 1e30
    elif theta[0] <= 0:
        return 1e30
    params, amps = _unpack(problem, theta)
    m = _model_counts(problem, params, amps)
    lo, hi = problem.window
    d = problem.data.contents[lo:hi]
    return float(np.sum((d - m[lo:hi]) ** 2 / np.maximum(d, 1.0)))


def _pack_initial(problem, initial):
    params, amps = initial
    if problem.model == "full11":
        theta = [params.pedestal, params.gain, params.sigma0, params.sigma1]
        theta += [_softplus_inv(amps[n]) for n in problem.names]
    else:
        theta = [params.gain, _softplus_inv(amps[problem.names[0]])]
    return np.array(theta, dtype=float)


def fit(problem, initial, restarts=2, seed=0, maxiter=20000, xatol=1e-6,
        fatol=1e-4):
    """Minimize the windowed chi-square by Nelder-Mead simplex.

    `initial` is (ResponseParams, {isotope: amplitude}). Restart simplexes
    start from randomized perturbations of the best point so far; the lowest
    chi-square wins, ties resolved by restart order.
    """
    if problem.model == "full11" and not initial[0].gain > 0:
        raise FitError("initial gain must be > 0")
    rng = np.random.default_rng(seed)
    theta0 = _pack_initial(problem, initial)
    best = None
    for attempt in range(restarts + 1):
        start = theta0 if attempt == 0 else best.x * (
            1 + rng.normal(0, 0.02, len(theta0))) + rng.normal(0, 1e-3, len(theta0))
        res = minimize(lambda th: _objective(problem, th), start,
                       method="Nelder-Mead",
                       options={"maxiter": maxiter, "xatol": xatol,
                                "fatol": fatol, "adaptive": True})
        if best is None or res.fun < best.fun:
            best = res
    params, amps = _unpack(problem, best.x)
    cov, errs = _covariance(problem, best.x, params, amps)
    return FitResult(
        params=params, amplitudes=amps, amplitude_errors=errs,
        chi2=float(best.fun), dof=problem.dof(), covariance=cov,
        converged=bool(best.success),
    )


def _covariance(problem, theta, params, amps):
    """Approximate covariance: 2 * inverse finite-difference Hessian of
    chi-square in the physical (untransformed) parameter space."""
    names = problem.names
    if problem.model == "full11":
        x = np.array([params.pedestal, params.gain, params.sigma0,
                      params.sigma1] + [amps[n] for n in names])
        labels = ["pedestal", "gain", "sigma0", "sigma1"] + names
    else:
        x = np.array([params.gain, amps[names[0]]])
        labels = ["gain"] + names

    def f(v):
        if problem.model == "full11":
            p = ResponseParams(pedestal=v[0], gain=max(v[1], 1e-9),
                               sigma0=abs(v[2]), sigma1=abs(v[3]))
            a = {n: max(v[4 + i], 0.0) for i, n in enumerate(names)}
        else:
            p = ResponseParams(pedestal=problem.fixed.pedestal,
                               gain=max(v[0], 1e-9),
                               sigma0=problem.fixed.sigma0,
                               sigma1=problem.fixed.sigma1)
            a = {names[0]: max(v[1], 0.0)}
        return chi_square(problem, p, a)

    n = len(x)
    h = np.maximum(np.abs(x) * 1e-4, 1e-6)
    H = np.zeros((n, n))
    f0 = f(x)
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n); ei[i] = h[i]
            ej = np.zeros(n); ej[j] = h[j]
            if i == j:
                H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
            else:
                H[i, j] = H[j, i] = (
                    f(x + ei + ej) - f(x + ei - ej)
                    - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = 2.0 * np.linalg.pinv(H)
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.nan)
    errs = {}
    for i, lab in enumerate(labels):
        if lab in names:
            var = cov[i, i]
            errs[lab] = math.sqrt(var) if var > 0 else np.nan
    return cov, errs


@dataclass
class FluxEstimate:
    """Absolute ambient flux reconstructed from fitted amplitudes."""

    spectrum: Spectrum               # 1/cm^2/s/keV on the energy axis
    integral: float                  # 1/cm^2/s
    per_isotope: dict                # isotope -> integral contribution

    def __post_init__(self):
        if np.any(self.spectrum.contents < 0):
            raise FitError("flux must be non-negative")


def reconstruct_flux(result, template_fluxes):
    """Sum per-template generated flux spectra weighted by fit amplitudes.

    template_fluxes: isotope -> energy-axis Spectrum of the flux each
    template corresponds to at unit amplitude (1/cm^2/s/keV)."""
    missing = [n for n in result.amplitudes if n not in template_fluxes]
    if missing:
        raise FitError(f"missing template flux metadata for {missing}")
    first = template_fluxes[next(iter(result.amplitudes))]
    total = np.zeros(len(first.contents))
    per = {}
    for name, amp in result.amplitudes.items():
        tf = template_fluxes[name]
        contrib = amp * tf.contents
        total += contrib
        per[name] = float(np.sum(contrib * tf.widths))
    spec = Spectrum(first.edges, total, first.live_time_s, "energy")
    return FluxEstimate(spectrum=spec, integral=float(np.sum(total * spec.widths)),
                        per_isotope=per)
