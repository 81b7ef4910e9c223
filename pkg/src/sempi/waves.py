"""Linear wave kinematics, the Gaussian pseudo-impulse and damping-zone profiles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, ParameterError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Environment:
    depth: float
    g: float = 9.81
    rho: float = 1000.0

    def __post_init__(self):
        for name in ("depth", "g", "rho"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive, got {v}")

    @property
    def h(self):
        return self.depth

    @property
    def u_max(self):
        """Shallow-water celerity, the fastest linear wave speed."""
        return float(np.sqrt(self.g * self.depth))


# ---------------------------------------------------------------------------
# dispersion
# ---------------------------------------------------------------------------

def _dispersion_scalar(w, g, h):
    if w == 0.0:
        return 0.0
    target = w * w
    f = lambda k: g * k * np.tanh(k * h) - target
    # deep and shallow asymptotes bracket the root
    k_deep = target / g
    k_shallow = w / np.sqrt(g * h)
    lo, hi = min(k_deep, k_shallow), max(k_deep, k_shallow)
    lo *= 0.5
    hi *= 2.0
    while f(hi) < 0:
        hi *= 2
    k = max(k_deep, k_shallow) if f(max(k_deep, k_shallow)) > 0 else hi
    for _ in range(100):
        t = np.tanh(k * h)
        fk = g * k * t - target
        if fk > 0:
            hi = min(hi, k)
        else:
            lo = max(lo, k)
        dk = g * (t + k * h * (1 - t * t))
        k_new = k - fk / dk
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) <= 1e-15 * k:
            k = k_new
            break
        k = k_new
    return float(k)


def solve_dispersion(omega, env: Environment):
    """Wavenumber ``k > 0`` with ``omega^2 = g k tanh(k h)`` (array or scalar)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ParameterError("frequencies must be non-negative")
    out = np.vectorize(lambda x: _dispersion_scalar(float(x), env.g, env.depth))(w)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Gaussian pseudo-impulse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoImpulse:
    """Unit-height Gaussian ``exp(-2 pi^2 s^2 (t - t0)^2)`` scaled by ``amplitude``."""
    s: float
    eps: float = 1e-8
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ParameterError("impulse width parameter s must be positive")
        if not 0 < self.eps < 1:
            raise ParameterError("cutoff eps must lie in (0, 1)")

    @property
    def t0(self):
        return float(np.sqrt(np.log(self.eps) / (-2.0 * np.pi ** 2 * self.s ** 2)))

    @property
    def peak_frequency(self):
        """Frequency maximizing the velocity spectrum ``|omega ghat|``."""
        return TWO_PI * self.s


def gaussian_impulse(pi: PseudoImpulse, t):
    t = np.asarray(t, dtype=float)
    return pi.amplitude * np.exp(-2.0 * np.pi ** 2 * pi.s ** 2 * (t - pi.t0) ** 2)


def gaussian_velocity(pi: PseudoImpulse, t):
    t = np.asarray(t, dtype=float)
    return -4.0 * np.pi ** 2 * pi.s ** 2 * (t - pi.t0) * gaussian_impulse(pi, t)


def gaussian_acceleration(pi: PseudoImpulse, t):
    t = np.asarray(t, dtype=float)
    a = 4.0 * np.pi ** 2 * pi.s ** 2
    return (a * a * (t - pi.t0) ** 2 - a) * gaussian_impulse(pi, t)


def gaussian_spectrum(pi: PseudoImpulse, omega):
    """Analytic transform ``int g(t) exp(-i omega t) dt``."""
    w = np.asarray(omega, dtype=float)
    s = pi.s
    mag = pi.amplitude / (s * np.sqrt(TWO_PI)) * np.exp(-w ** 2 / (8.0 * np.pi ** 2 * s ** 2))
    return mag * np.exp(-1j * w * pi.t0)


def omega_limit(pi: PseudoImpulse, kind="velocity", fraction=0.1):
    """Frequency band where the forcing spectrum exceeds ``fraction`` of its peak.

    ``kind='velocity'`` uses ``|omega ghat(omega)|`` (radiation forcing);
    ``kind='elevation'`` uses ``|ghat(omega)|`` for omega > 0 (diffraction).
    """
    a = 8.0 * np.pi ** 2 * pi.s ** 2
    if kind == "velocity":
        ws = pi.peak_frequency
        rel = lambda w: (w / ws) * np.exp(-(w * w - ws * ws) / a) - fraction
        lo = brentq(rel, 1e-300, ws, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        hi_b = ws
        while rel(hi_b) > 0:
            hi_b *= 2
        hi = brentq(rel, ws, hi_b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        return float(lo), float(hi)
    if kind == "elevation":
        return 0.0, float(np.sqrt(a * np.log(1.0 / fraction)))
    raise ParameterError(f"unknown spectrum kind {kind!r}")


@dataclass(frozen=True)
class ImpulseDiagnostic:
    s: float
    t0: float
    omega_limit: tuple
    shortest_wavelength: float
    nodes_per_wavelength: float | None


def impulse_diagnostic(pi: PseudoImpulse, env: Environment, dx_min=None, kind="velocity"):
    """Shortest wavelength carried at 10% spectral energy (and its resolution)."""
    band = omega_limit(pi, kind)
    k = solve_dispersion(band[1], env)
    lam = TWO_PI / k
    return ImpulseDiagnostic(pi.s, pi.t0, band, float(lam),
                             None if dx_min is None else float(lam / dx_min))


# ---------------------------------------------------------------------------
# incident waves
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IncidentWaveSpec:
    beta: float
    omegas: np.ndarray
    ks: np.ndarray = field(default=None)

    @classmethod
    def build(cls, beta, omegas, env: Environment):
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        return cls(normalize_heading(beta), w, np.atleast_1d(solve_dispersion(w, env)))


def normalize_heading(beta):
    """Heading reduced to [0, 2pi), rounded so that beta and beta + 2pi coincide bitwise."""
    b = float(np.round(np.mod(float(beta), TWO_PI), 12))
    return 0.0 if b >= TWO_PI else b


def depth_factors(k, z, h):
    """``cosh(k(z+h))/cosh(kh)`` and ``sinh(k(z+h))/cosh(kh)``, overflow-safe."""
    k = np.asarray(k, dtype=float)
    z = np.asarray(z, dtype=float)
    e1 = np.exp(k * z)
    den = 1 + np.exp(-2 * k * h)
    # expm1 keeps the sinh ratio accurate as k -> 0
    d = np.expm1(-2 * k * (z + h))
    return e1 * (2 + d) / den, -e1 * d / den


def _phase(k, beta, x, y, block):
    """Horizontal phase factor and its (x, y) gradient."""
    if block is None or block == "Full":
        a = x * np.cos(beta) + y * np.sin(beta)
        E = np.exp(-1j * k * a)
        return E, -1j * k * np.cos(beta) * E, -1j * k * np.sin(beta) * E
    from .symmetry import decomposed_phase_gradient
    return decomposed_phase_gradient(block, k, beta, x, y)


def incident_fields(spec: IncidentWaveSpec, env: Environment, points, m, block=None):
    """Complex ``Psi``, ``grad Psi`` (n, 3) and unit-amplitude pressure ``p0`` at points.

    ``block`` selects a symmetry component of the horizontal phase
    (``'SS'``, ``'SA'``, ``'AS'``, ``'AA'``, ``'S'``/``'A'`` variants) in
    place of ``exp(-i k alpha)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = env.depth
    z = pts[:, 2]
    tol = 1e-9 * max(h, 1.0)
    if np.any(z > tol) or np.any(z < -h - tol):
        raise DomainError("incident field evaluated outside -h <= z <= 0")
    w = float(spec.omegas[m])
    k = float(spec.ks[m])
    C, S = depth_factors(k, z, h)
    E, Ex, Ey = _phase(k, spec.beta, pts[:, 0], pts[:, 1], block)
    amp = 1j * env.g / w
    Psi = amp * C * E
    grad = np.column_stack([amp * C * Ex, amp * C * Ey, amp * k * S * E])
    p0 = env.rho * env.g * C * E
    return Psi, grad, p0


# ---------------------------------------------------------------------------
# damping zones
# ---------------------------------------------------------------------------

ZONE_KINDS = ("x", "y", "radial", "rect")


@dataclass(frozen=True)
class DampingZone:
    """Smooth bump of peak 2*pi over ``start <= d <= end``.

    ``d`` is |x| (kind 'x'), |y| ('y'), sqrt(x^2+y^2) ('radial') or
    max(|x| - ax, |y| - ay) + start ('rect', a rectangular frame whose inner
    edge sits at |x| = ax = start_x, |y| = ay = start_y).
    """
    kind: str
    start: float
    end: float
    start_y: float | None = None      # only for kind 'rect'
    peak: float = TWO_PI
    pressure_scale: float = 1.0
    velocity_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ZONE_KINDS:
            raise ParameterError(f"unknown damping zone kind {self.kind!r}")
        if not self.end > self.start >= 0:
            raise ParameterError("damping zone needs 0 <= start < end")

    def coordinate(self, xy):
        xy = np.atleast_2d(xy)
        x, y = np.abs(xy[:, 0]), np.abs(xy[:, 1])
        if self.kind == "x":
            return x
        if self.kind == "y":
            return y
        if self.kind == "radial":
            return np.hypot(x, y)
        sy = self.start if self.start_y is None else self.start_y
        return np.maximum(x - self.start, y - sy) + self.start

    def xi(self, xy):
        return (self.coordinate(xy) - self.start) / (self.end - self.start)


def bump(xi, peak=TWO_PI):
    """``peak * exp(1 - 1/(1 - (2 xi - 1)^2))`` on (0, 1), zero elsewhere."""
    xi = np.asarray(xi, dtype=float)
    u = 2 * xi - 1
    out = np.zeros_like(xi)
    inside = np.abs(u) < 1
    out[inside] = peak * np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


def damping_profiles(zone: DampingZone, points, bounds=None):
    """Pressure and velocity damping coefficients ``(c_p, c_v)`` at free-surface points.

    ``bounds`` (xmin, xmax, ymin, ymax) of the free surface defaults to the
    bounding box of ``points``; a zone starting beyond it is rejected.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    if bounds is None:
        bounds = (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())
    xmin, xmax, ymin, ymax = bounds
    reach = {"x": max(abs(xmin), abs(xmax)), "y": max(abs(ymin), abs(ymax)),
             "radial": np.hypot(max(abs(xmin), abs(xmax)), max(abs(ymin), abs(ymax))),
             "rect": max(abs(xmin), abs(xmax), abs(ymin), abs(ymax))}[zone.kind]
    if zone.start >= reach:
        raise ParameterError("damping zone lies outside the free surface")
    c = bump(zone.xi(pts), zone.peak)
    return zone.pressure_scale * c, zone.velocity_scale * c


def combined_profiles(zones, points, bounds=None):
    cp = np.zeros(len(np.atleast_2d(points)))
    cv = np.zeros_like(cp)
    for z in zones:
        a, b = damping_profiles(z, points, bounds)
        cp = np.maximum(cp, a)
        cv = np.maximum(cv, b)
    return cp, cv
