"""Top Lyapunov exponents of dX = A X dt + B X dW.

Writing the solution in polar form (log r, theta) gives the pair of
scalar equations

    d log r = [q1(th) + (q4(th)^2 - q2(th)^2) / 2] dt + q2(th) dW
    d theta = [q3(th) - q2(th) q4(th)] dt + q4(th) dW

with the trigonometric coefficients

    q1 = a11 cos^2 + (a12 + a21) cos sin + a22 sin^2
    q2 = b11 cos^2 + (b12 + b21) cos sin + b22 sin^2
    q3 = a21 cos^2 + (a22 - a11) cos sin - a12 sin^2
    q4 = b21 cos^2 + (b22 - b11) cos sin - b12 sin^2
    q5 = -(b12 + b21) sin 2th - (b22 - b11) cos 2th

The exponent is the stationary average of the log r drift against the
angle density p(theta).  Three estimators are provided:

* ``lyapunov_fd``   -- backward-difference solve of the stationary
  angle equation on a uniform grid,
* ``closed_form_lyapunov`` -- exponential-form density available when
  B = [[alpha, -beta], [beta, alpha]],
* ``lyapunov_mc``   -- first-order Euler simulation of the polar pair.

``stability_sweep`` maps alpha to the exponent for the alpha-family
noise, brackets the zero crossings and reports the stable alpha-set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .integrate import RngStream, gaussian_pairs
from .models import Equilibrium, Mat2, ModelSpec
from .sde import LinearSDE, alpha_family, linearize

__all__ = [
    "DegeneratePhaseDiffusionError",
    "PhaseCoefficients",
    "PhaseDensity",
    "LyapunovEstimate",
    "SweepResult",
    "ClosedFormDensity",
    "phase_coefficients",
    "stationary_density_fd",
    "lyapunov_fd",
    "closed_form_density",
    "closed_form_lyapunov",
    "lyapunov_mc",
    "stability_sweep",
]

TWO_PI = 2.0 * math.pi


class DegeneratePhaseDiffusionError(ArithmeticError):
    """q4 vanishes somewhere on the grid; the stationary angle equation
    degenerates there.  Use the mc method for such noise matrices."""


@dataclass(frozen=True)
class PhaseCoefficients:
    """The five angle coefficients at one angle."""

    q1: float
    q2: float
    q3: float
    q4: float
    q5: float


def phase_coefficients(sys: LinearSDE, theta: float) -> PhaseCoefficients:
    a, b = sys.A, sys.B
    c, s = math.cos(theta), math.sin(theta)
    cc, ss, cs = c * c, s * s, c * s
    return PhaseCoefficients(
        q1=a.a11 * cc + (a.a12 + a.a21) * cs + a.a22 * ss,
        q2=b.a11 * cc + (b.a12 + b.a21) * cs + b.a22 * ss,
        q3=a.a21 * cc + (a.a22 - a.a11) * cs - a.a12 * ss,
        q4=b.a21 * cc + (b.a22 - b.a11) * cs - b.a12 * ss,
        q5=-(b.a12 + b.a21) * math.sin(2 * theta)
           - (b.a22 - b.a11) * math.cos(2 * theta),
    )


def _phase_grid(sys: LinearSDE, theta: np.ndarray):
    """Vectorized q1..q5 on an angle array."""
    a, b = sys.A, sys.B
    c, s = np.cos(theta), np.sin(theta)
    cc, ss, cs = c * c, s * s, c * s
    q1 = a.a11 * cc + (a.a12 + a.a21) * cs + a.a22 * ss
    q2 = b.a11 * cc + (b.a12 + b.a21) * cs + b.a22 * ss
    q3 = a.a21 * cc + (a.a22 - a.a11) * cs - a.a12 * ss
    q4 = b.a21 * cc + (b.a22 - b.a11) * cs - b.a12 * ss
    q5 = -(b.a12 + b.a21) * np.sin(2 * theta) - (b.a22 - b.a11) * np.cos(2 * theta)
    return q1, q2, q3, q4, q5


@dataclass
class PhaseDensity:
    """Discrete stationary angle density on a uniform grid.

    values holds p(0..n); the quadrature convention is
    sum(values[1:]) * step = 1 over the covered span.
    """

    n: int
    step: float
    span: float
    values: np.ndarray
    periodicity_defect: float
    min_q4_sq: float


@dataclass
class LyapunovEstimate:
    value: float
    method: str  # fd | closed | mc
    stderr: float = 0.0
    n: int = 0  # grid size or path count
    diagnostics: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    """Exponent along an alpha grid with refined zero crossings.

    sign_changes are bisection-refined brackets (lo, hi) of width at
    most the refinement tolerance with opposite-sign endpoints;
    stable_set lists the maximal alpha intervals with a non-positive
    exponent (an exact zero counts as stable).
    """

    alphas: np.ndarray
    lambdas: np.ndarray
    stderrs: np.ndarray
    method: str
    sign_changes: list
    stable_set: list
    failures: list


def stationary_density_fd(sys: LinearSDE, n: int = 10000, span: float = TWO_PI,
                          eps_q: float = 1e-12) -> PhaseDensity:
    """Stationary angle density by a backward-difference recurrence.

    Discretizing  q4^2/2 p' + (-q3 + q2 q4 + q4 q5) p = p0  with the
    backward difference gives

        p(i) = (2 h p0 + q4(i)^2 p(i-1)) / (2 h (-q3 + q2 q4 + q4 q5)(i) + q4(i)^2)

    The constant p0 is the stationary probability flux around the
    circle.  Seeding p(0) = 1 and solving the linear two-parameter
    family for the p0 that closes the circle (p(n) = p(0)) selects the
    periodic solution; the result is then rescaled to unit mass.  A
    constant-coefficient system (q2, q4 constant, q3 = q5 = 0) has zero
    flux and the recurrence reproduces the uniform density exactly.
    """
    if n < 2:
        raise ValueError("grid size n must be >= 2")
    if span <= 0:
        raise ValueError("span must be positive")
    h = span / n
    theta = h * np.arange(n + 1)
    q1, q2, q3, q4, q5 = _phase_grid(sys, theta)
    q4sq = q4 * q4
    min_q4_sq = float(q4sq.min())
    if min_q4_sq < eps_q:
        raise DegeneratePhaseDiffusionError(
            f"min q4^2 = {min_q4_sq:.3e} < {eps_q:.1e} on the grid; "
            "the angle diffusion degenerates there -- use the mc method")
    denom = 2.0 * h * (-q3 + q2 * q4 + q4 * q5) + q4sq
    if np.any(denom == 0):
        raise DegeneratePhaseDiffusionError("singular recurrence denominator")
    # homogeneous (flux 0) and unit-flux particular solutions
    ph = np.empty(n + 1)
    pp = np.empty(n + 1)
    ph[0] = 1.0
    pp[0] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n + 1):
            ph[i] = q4sq[i] * ph[i - 1] / denom[i]
            pp[i] = (2.0 * h + q4sq[i] * pp[i - 1]) / denom[i]
    if not (math.isfinite(ph[n]) and math.isfinite(pp[n])):
        raise DegeneratePhaseDiffusionError(
            "recurrence dynamic range overflows for this system; "
            "use the mc method")
    p0 = (ph[0] - ph[n]) / pp[n] if pp[n] != 0.0 else 0.0
    p = ph + p0 * pp
    mass = float(np.sum(p[1:]) * h)
    if not math.isfinite(mass) or mass <= 0:
        raise DegeneratePhaseDiffusionError(
            f"density mass {mass!r} not normalizable")
    p /= mass
    if p.min() < -1e-12 * p.max():
        raise DegeneratePhaseDiffusionError(
            "recurrence lost positivity; increase the grid size or use "
            "the mc method")
    return PhaseDensity(n=n, step=h, span=span, values=p,
                        periodicity_defect=float(abs(p[n] - p[0])),
                        min_q4_sq=min_q4_sq)


def lyapunov_fd(sys: LinearSDE, n: int = 10000, span: float = TWO_PI,
                eps_q: float = 1e-12) -> LyapunovEstimate:
    """Grid quadrature of the log r drift against the angle density:

        lambda = sum_i (q1(i) + (q4(i)^2 - q2(i)^2) / 2) p(i) h
    """
    dens = stationary_density_fd(sys, n=n, span=span, eps_q=eps_q)
    theta = dens.step * np.arange(n + 1)
    q1, q2, q3, q4, q5 = _phase_grid(sys, theta)
    integrand = q1 + 0.5 * (q4 * q4 - q2 * q2)
    value = float(np.sum(integrand[1:] * dens.values[1:]) * dens.step)
    return LyapunovEstimate(
        value=value, method="fd", stderr=0.0, n=n,
        diagnostics={"periodicity_defect": dens.periodicity_defect,
                     "min_q4_sq": dens.min_q4_sq, "span": span})


@dataclass
class ClosedFormDensity:
    """Exponential-form angle density for the alpha-family noise.

    p(theta) is proportional to exp(E(theta)) with

        E = ((a21 - a12 - alpha*beta) theta
             + (a11 - a22) cos(2 theta) / 2
             + (a21 - a12) sin(2 theta) / 2) / beta^2

    normalized to unit mass on [0, 2pi).  E is generally not
    2pi-periodic; periodicity_defect = |p(2pi)/p(0) - 1| flags how far
    from a true circle density the form is.  Prefer the fd or mc
    estimators when the defect is large.
    """

    A: Mat2
    alpha: float
    beta: float
    K: float
    periodicity_defect: float
    _e0: float
    _mass: float

    def _exponent(self, theta):
        a = self.A
        return ((a.a21 - a.a12 - self.alpha * self.beta) * theta
                + 0.5 * (a.a11 - a.a22) * np.cos(2.0 * theta)
                + 0.5 * (a.a21 - a.a12) * np.sin(2.0 * theta)) / self.beta ** 2

    def __call__(self, theta):
        return np.exp(self._exponent(theta) - self._e0) / self._mass


def closed_form_density(A: Mat2, alpha: float, beta: float) -> ClosedFormDensity:
    """Normalized exponential-form density; beta must be nonzero."""
    if beta == 0:
        raise ValueError("beta = 0: closed-form density undefined")
    shell = ClosedFormDensity(A=A, alpha=alpha, beta=beta, K=0.0,
                              periodicity_defect=0.0, _e0=0.0, _mass=1.0)
    probe = shell._exponent(np.linspace(0.0, TWO_PI, 513))
    e0 = float(probe.max())
    mass, err = quad(lambda t: math.exp(shell._exponent(t) - e0),
                     0.0, TWO_PI, epsabs=1e-10, epsrel=1e-10, limit=300)
    if mass <= 0 or not math.isfinite(mass):
        raise ValueError("closed-form density not normalizable")
    # K in p = (K / beta^2) exp(E): K = beta^2 / integral(exp E)
    k = beta ** 2 / (mass * math.exp(e0)) if e0 < 700 else 0.0
    drift = (A.a21 - A.a12 - alpha * beta) * TWO_PI / beta ** 2
    defect = abs(math.expm1(drift)) if drift < 700 else math.inf
    return ClosedFormDensity(A=A, alpha=alpha, beta=beta, K=k,
                             periodicity_defect=defect, _e0=e0, _mass=mass)


def closed_form_lyapunov(A: Mat2, alpha: float, beta: float) -> LyapunovEstimate:
    """Exponent from the exponential-form density:

        lambda = (a11 + a22 + beta^2 - alpha^2) / 2
                 + (a11 - a22) c2 / 2 + (a21 + a12) s2 / 2

    with c2, s2 the cos(2 theta) / sin(2 theta) averages under the
    density, computed by adaptive quadrature.
    """
    dens = closed_form_density(A, alpha, beta)
    c2, _ = quad(lambda t: math.cos(2 * t) * float(dens(t)), 0.0, TWO_PI,
                 epsabs=1e-10, epsrel=1e-10, limit=300)
    s2, _ = quad(lambda t: math.sin(2 * t) * float(dens(t)), 0.0, TWO_PI,
                 epsabs=1e-10, epsrel=1e-10, limit=300)
    value = (0.5 * (A.a11 + A.a22 + beta ** 2 - alpha ** 2)
             + 0.5 * (A.a11 - A.a22) * c2 + 0.5 * (A.a21 + A.a12) * s2)
    return LyapunovEstimate(
        value=float(value), method="closed", stderr=0.0, n=0,
        diagnostics={"periodicity_defect": dens.periodicity_defect,
                     "K": dens.K, "c2": c2, "s2": s2})


_MC_BLOCK = 8192


def lyapunov_mc(sys: LinearSDE, horizon: float = 200.0, dt: float = 1e-3,
                paths: int = 64, seed: int = 1, r0: float = 1.0,
                stream_base: int = 0) -> LyapunovEstimate:
    """Monte Carlo estimate from the polar pair.

    Each path integrates (log r, theta) with the first-order Euler
    scheme and one shared Wiener increment per step, starting from a
    uniform angle; the estimate is the path mean of log(r(T)/r(0)) / T
    with its standard error.  Path p draws from stream (seed,
    stream_base + p), so results do not depend on scheduling.  The
    estimate is invariant under scaling of r0 (the system is linear).
    """
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be > 0")
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if r0 <= 0:
        raise ValueError("r0 must be > 0")
    a, b = sys.A, sys.B
    # double-angle form of the coefficients: q = mid + ca*cos2th + sa*sin2th
    q1m, q1c, q1s = 0.5 * (a.a11 + a.a22), 0.5 * (a.a11 - a.a22), 0.5 * (a.a12 + a.a21)
    q2m, q2c, q2s = 0.5 * (b.a11 + b.a22), 0.5 * (b.a11 - b.a22), 0.5 * (b.a12 + b.a21)
    q3m, q3c, q3s = 0.5 * (a.a21 - a.a12), 0.5 * (a.a12 + a.a21), -0.5 * (a.a11 - a.a22)
    q4m, q4c, q4s = 0.5 * (b.a21 - b.a12), 0.5 * (b.a12 + b.a21), -0.5 * (b.a11 - b.a22)
    nsteps = int(round(horizon / dt))
    streams = [RngStream(seed, stream_base + p) for p in range(paths)]
    theta = np.array([TWO_PI * s.uniforms(1)[0] for s in streams])
    logr = np.zeros(paths)
    sdt = math.sqrt(dt)
    done = 0
    while done < nsteps:
        blen = min(_MC_BLOCK, nsteps - done)
        dw = np.empty((paths, blen))
        for p, st in enumerate(streams):
            dw[p] = gaussian_pairs(st, blen)
        dw *= sdt
        for k in range(blen):
            c2t = np.cos(2.0 * theta)
            s2t = np.sin(2.0 * theta)
            q1 = q1m + q1c * c2t + q1s * s2t
            q2 = q2m + q2c * c2t + q2s * s2t
            q3 = q3m + q3c * c2t + q3s * s2t
            q4 = q4m + q4c * c2t + q4s * s2t
            w = dw[:, k]
            logr += (q1 + 0.5 * (q4 * q4 - q2 * q2)) * dt + q2 * w
            theta += (q3 - q2 * q4) * dt + q4 * w
        done += blen
    per_path = logr / (nsteps * dt)
    value = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    return LyapunovEstimate(value=value, method="mc", stderr=stderr, n=paths,
                            diagnostics={"horizon": horizon, "dt": dt})


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & (1 << 64) - 1
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (1 << 64) - 1
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (1 << 64) - 1
    return z ^ (z >> 31)


def _refine_stream_base(alpha: float) -> int:
    """Stream id for off-grid evaluations, derived from the alpha bits."""
    bits = int(np.float64(alpha).view(np.uint64))
    return (1 << 63) | (_splitmix64(bits) >> 1)


def stability_sweep(model: ModelSpec, equilibrium: Equilibrium, beta: float,
                    alpha_grid, method: str = "fd", *,
                    grid_n: int = 10000, span: float = TWO_PI,
                    horizon: float = 200.0, dt: float = 1e-3,
                    paths: int = 64, seed: int = 1,
                    refine_tol: float = 1e-3) -> SweepResult:
    """Exponent along an alpha grid for B = [[alpha, -beta], [beta, alpha]].

    Zero crossings found on the grid are refined by bisection to
    brackets of width refine_tol; a per-point failure (degenerate angle
    diffusion, non-normalizable density) is recorded and the sweep
    continues.  For the mc method, grid point k draws from stream block
    (seed, k * 2^32) and refinement points derive their stream from the
    alpha bit pattern, so results are schedule-independent.
    """
    alphas = np.asarray(list(alpha_grid), dtype=float)
    if alphas.size and np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha_grid must be strictly increasing")
    if method not in ("fd", "closed", "mc"):
        raise ValueError(f"unknown method {method!r}")
    a_mat = linearize(model, alpha_family(0.0, beta), equilibrium).A

    def evaluate(alpha: float, stream_base: int) -> LyapunovEstimate:
        if method == "fd":
            return lyapunov_fd(LinearSDE(a_mat, alpha_family(alpha, beta)),
                               n=grid_n, span=span)
        if method == "closed":
            return closed_form_lyapunov(a_mat, alpha, beta)
        return lyapunov_mc(LinearSDE(a_mat, alpha_family(alpha, beta)),
                           horizon=horizon, dt=dt, paths=paths, seed=seed,
                           stream_base=stream_base)

    lambdas = np.full(alphas.size, np.nan)
    stderrs = np.zeros(alphas.size)
    failures = []
    for k, alpha in enumerate(alphas):
        try:
            est = evaluate(float(alpha), k << 32)
        except (DegeneratePhaseDiffusionError, ValueError, ArithmeticError) as exc:
            failures.append((float(alpha), str(exc)))
            continue
        lambdas[k] = est.value
        stderrs[k] = est.stderr

    def stable(lam: float) -> bool:
        return lam <= 0.0  # exact zero counts as stable

    sign_changes = []
    for k in range(1, alphas.size):
        lo, hi = float(alphas[k - 1]), float(alphas[k])
        llo, lhi = lambdas[k - 1], lambdas[k]
        if math.isnan(llo) or math.isnan(lhi) or stable(llo) == stable(lhi):
            continue
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            try:
                lmid = evaluate(mid, _refine_stream_base(mid)).value
            except (DegeneratePhaseDiffusionError, ValueError, ArithmeticError) as exc:
                failures.append((mid, str(exc)))
                break
            if stable(lmid) == stable(llo):
                lo, llo = mid, lmid
            else:
                hi, lhi = mid, lmid
        sign_changes.append((lo, hi))

    stable_set = _stable_intervals(alphas, lambdas, sign_changes)
    return SweepResult(alphas=alphas, lambdas=lambdas, stderrs=stderrs,
                       method=method, sign_changes=sign_changes,
                       stable_set=stable_set, failures=failures)


def _stable_intervals(alphas, lambdas, sign_changes) -> list:
    """Maximal alpha intervals with lambda <= 0, endpoints at refined
    crossings (bracket midpoints) or the grid edges."""
    finite = [(float(a), float(l)) for a, l in zip(alphas, lambdas)
              if not math.isnan(l)]
    if not finite:
        return []
    crossings = [0.5 * (lo + hi) for lo, hi in sign_changes]
    out = []
    start: Optional[float] = finite[0][0] if finite[0][1] <= 0 else None
    ci = 0
    for (a_prev, l_prev), (a_cur, l_cur) in zip(finite, finite[1:]):
        if (l_prev <= 0) == (l_cur <= 0):
            continue
        cross = None
        if ci < len(crossings) and a_prev <= crossings[ci] <= a_cur:
            cross = crossings[ci]
            ci += 1
        else:  # crossing skipped by a failed refinement: fall back to midpoint
            cross = 0.5 * (a_prev + a_cur)
        if l_prev <= 0:  # leaving the stable set
            out.append((start, cross))
            start = None
        else:            # entering the stable set
            start = cross
    if start is not None:
        out.append((start, finite[-1][0]))
    return out
