"""Frequency-domain hydrodynamic coefficients from recorded time series."""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionGuardError, ParameterError, TruncationWarning
from .symmetry import decomposed_phase, recombine_forces
from .waves import (Environment, IncidentWaveSpec, PseudoImpulse, depth_factors, omega_limit)

# one-sided fourth-order stencils for f'(x0) from f(x0 .. x0+4h)
_FWD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FWD1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0     # at x1 using x0..x4


def fd4_derivative(series, dt):
    """Fourth-order finite-difference derivative of a uniformly sampled series (last axis)."""
    f = np.asarray(series, dtype=float)
    n = f.shape[-1]
    if n < 5:
        raise ParameterError("fourth-order differences need at least 5 samples")
    if not dt > 0:
        raise ParameterError("sample spacing must be positive")
    d = np.empty_like(f)
    d[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1] - f[..., 4:]) / 12.0
    d[..., 0] = f[..., :5] @ _FWD
    d[..., 1] = f[..., :5] @ _FWD1
    d[..., -1] = -(f[..., -5:][..., ::-1] @ _FWD)
    d[..., -2] = -(f[..., -5:][..., ::-1] @ _FWD1)
    return d / dt


def padded_length(n, factor=8):
    return 1 << int(np.ceil(np.log2(max(factor * n, 2))))


def spectrum(series, dt, omegas=None, times=None, check_decay=True, taper=None):
    """Continuous-transform approximation ``sum f_n exp(-i w t_n) dt``.

    Without ``omegas`` the zero-padded FFT grid (power of two >= 8x the
    length) is returned as ``(w, values)``.  With ``omegas`` the transform is
    evaluated exactly at the requested frequencies, i.e. trigonometric
    interpolation of the padded grid.  ``times`` (optional) must be uniform
    with spacing ``dt``; ``taper`` applies a Tukey window of that fraction.
    """
    f = np.asarray(series, dtype=float)
    n = f.shape[-1]
    if times is not None:
        t = np.asarray(times, dtype=float)
        if len(t) != n or not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
            raise ParameterError("spectrum needs uniformly sampled data")
        t_start = float(t[0])
    else:
        t_start = 0.0
    if not dt > 0:
        raise ParameterError("sample spacing must be positive")
    if check_decay:
        peak = np.abs(f).max()
        if peak > 0 and max(abs(f[..., 0]).max(), abs(f[..., -1]).max()) > 1e-3 * peak:
            warnings.warn(TruncationWarning("series not decayed at its ends",
                                            float(abs(f[..., -1]).max() / peak)), stacklevel=2)
    if taper:
        from scipy.signal.windows import tukey
        f = f * tukey(n, taper)
    if omegas is None:
        N = padded_length(n)
        w = 2 * np.pi * np.fft.rfftfreq(N, dt)
        vals = np.fft.rfft(f, N, axis=-1) * dt * np.exp(-1j * w * t_start)
        return w, vals
    w = np.asarray(omegas, dtype=float)
    tn = t_start + dt * np.arange(n)
    out = np.empty(f.shape[:-1] + w.shape, dtype=complex)
    for s0 in range(0, len(w), 64):
        ws = w[s0:s0 + 64]
        out[..., s0:s0 + 64] = (f @ np.exp(-1j * np.outer(tn, ws))) * dt
    return out


def omega_grid(pi: PseudoImpulse, kind="velocity", n=400):
    """Uniform grid spanning the impulse band (zero excluded)."""
    lo, hi = omega_limit(pi, kind)
    if lo <= 0:
        return np.linspace(hi / n, hi, n)
    return np.linspace(lo, hi, n)


def _guarded_ratio(num, den):
    den = np.asarray(den)
    peak = np.abs(den).max()
    if peak == 0 or np.any(np.abs(den) < 1e-12 * peak):
        raise DivisionGuardError("input spectrum vanishes on the frequency grid")
    return np.asarray(num) / den


def added_mass_damping(force, x, dt, omegas):
    """``(a, b)`` from ``omega^2 a - i omega b = F{force} / F{x}``."""
    w = np.asarray(omegas, dtype=float)
    if np.any(w <= 0):
        raise ParameterError("added mass and damping need positive frequencies")
    ratio = _guarded_ratio(spectrum(force, dt, w), spectrum(x, dt, w, check_decay=False))
    return ratio.real / w ** 2, -ratio.imag / w


def excitation_ratio(force, zeta, dt, omegas):
    """``F{force} / F{zeta}`` (scattered excitation per unit wave amplitude)."""
    w = np.asarray(omegas, dtype=float)
    return _guarded_ratio(spectrum(force, dt, w), spectrum(zeta, dt, w, check_decay=False))


def radiation_coefficients(records: dict, omegas):
    """``{(j, k): (a, b)}`` from radiation records keyed by mode k."""
    out = {}
    for k, rec in records.items():
        for j in rec.loads:
            if rec.factors[j] == 0.0:
                continue
            out[(j, k)] = added_mass_damping(rec.force(j), rec.input_series, rec.dt, omegas)
    return out


def excitation_forces(records: dict, omegas, planes=(), modes=None, parity=None):
    """Scattered excitation ``X_s[j]`` from per-block diffraction records.

    ``records`` maps block label -> BodyRecord.  Forces are taken from the
    block matching each mode's parity (see :func:`symmetry.recombine_forces`);
    the record's mirror factor is undone first so the routing applies it once.
    """
    per_block = {}
    for label, rec in records.items():
        per_block[label] = {}
        for j in rec.loads:
            per_block[label][j] = excitation_ratio(
                -rec.rho * _fd(rec.loads[j], rec.dt), rec.input_series, rec.dt, omegas)
    if modes is None:
        modes = sorted({j for r in records.values() for j in r.loads})
    return recombine_forces(per_block, planes, modes, parity)


def _fd(L, dt):
    return fd4_derivative(L, dt)


def froude_krylov(setup, omegas, beta, planes=None, modes=None, block_for=None):
    """Incident-pressure force ``X_0[j] = int p0 n_j`` per unit amplitude.

    Integrated over the computational body surface with the block phase
    matching each mode's parity and multiplied by the mirror-image count.
    """
    from .symmetry import block_for_mode, diffraction_blocks
    env: Environment = setup.env
    planes = setup.symmetry.planes if planes is None else planes
    modes = sorted(setup.modes) if modes is None else modes
    spec = IncidentWaveSpec.build(beta, omegas, env)
    blocks = diffraction_blocks(planes)
    out = {}
    for j in modes:
        op, nj = setup.mode_normal(j)
        blk = block_for_mode(j, planes, setup._parity(), blocks)
        z = np.minimum(op.points[:, 2], 0.0)
        vals = np.empty(len(spec.omegas), dtype=complex)
        for m, k in enumerate(spec.ks):
            C, _ = depth_factors(k, z, env.depth)
            E = decomposed_phase(blk, k, spec.beta, op.points)
            p0 = env.rho * env.g * C * E
            vals[m] = op.integrate(p0 * nj)
        out[j] = (2 ** len(planes)) * vals
    return out


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NondimSpec:
    L: float
    g: float = 9.81
    rho: float = 1000.0

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError("length scale must be positive")


def _is_rot(j):
    return 4 <= j <= 6


def mass_exponent(j, k):
    """3 for translation pairs, 5 for rotation pairs, 4 for mixed (generalized modes count as translations)."""
    return 3 + int(_is_rot(j)) + int(_is_rot(k))


def force_exponent(j):
    return 3 if _is_rot(j) else 2


@dataclass
class HydroResult:
    omegas: np.ndarray
    a: dict = field(default_factory=dict)          # (j, k) -> array
    b: dict = field(default_factory=dict)
    Xs: dict = field(default_factory=dict)         # j -> complex array
    X0: dict = field(default_factory=dict)
    a_inf: dict = field(default_factory=dict)      # (j, k) -> float
    meta: dict = field(default_factory=dict)

    @property
    def XD(self):
        return {j: self.X0.get(j, 0) + self.Xs[j] for j in self.Xs}

    def restrict(self, lo, hi):
        m = (self.omegas >= lo) & (self.omegas <= hi)
        pick = lambda d: {key: v[m] for key, v in d.items()}
        return HydroResult(self.omegas[m], pick(self.a), pick(self.b), pick(self.Xs),
                           pick(self.X0), dict(self.a_inf), dict(self.meta))

    def columns(self, g=9.81, L=None):
        cols = [("omega_bar" if "nondim" in self.meta else "omega", self.omegas)]
        if L is not None and "nondim" not in self.meta:
            cols.append(("omega_bar", self.omegas * np.sqrt(L / g)))
        for (j, k) in sorted(self.a):
            cols.append((f"a_{j}{k}", self.a[(j, k)]))
        for (j, k) in sorted(self.b):
            cols.append((f"b_{j}{k}", self.b[(j, k)]))
        for j in sorted(self.Xs):
            xd = self.X0.get(j, 0) + self.Xs[j]
            cols += [(f"ReXs_{j}", self.Xs[j].real), (f"ImXs_{j}", self.Xs[j].imag)]
            if j in self.X0:
                cols += [(f"ReX0_{j}", self.X0[j].real), (f"ImX0_{j}", self.X0[j].imag)]
            cols += [(f"ReX_{j}", np.real(xd)), (f"ImX_{j}", np.imag(xd))]
        return cols

    def to_csv(self, path=None, g=9.81, L=None):
        cols = self.columns(g, L)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c[0] for c in cols])
        for i in range(len(self.omegas)):
            w.writerow([format(float(c[1][i]), ".17g") for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def a_inf_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "k", "a_inf"])
        for (j, k), v in sorted(self.a_inf.items()):
            w.writerow([j, k, format(v, ".17g")])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_jsonl(self, path=None, g=9.81, L=None):
        """Plot data: one JSON object per series (name, x, y)."""
        cols = self.columns(g, L)
        lines = [json.dumps({"series": name, "x": "omega", "values": [float(v) for v in vals]})
                 for name, vals in cols]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def nondimensionalize(res: HydroResult, spec: NondimSpec) -> HydroResult:
    rho, L, g = spec.rho, spec.L, spec.g
    w = res.omegas
    a = {jk: v / (rho * L ** mass_exponent(*jk)) for jk, v in res.a.items()}
    b = {jk: v / (rho * L ** mass_exponent(*jk) * w) for jk, v in res.b.items()}
    Xs = {j: v / (rho * g * L ** force_exponent(j)) for j, v in res.Xs.items()}
    X0 = {j: v / (rho * g * L ** force_exponent(j)) for j, v in res.X0.items()}
    ai = {jk: v / (rho * L ** mass_exponent(*jk)) for jk, v in res.a_inf.items()}
    meta = dict(res.meta, nondim=dict(L=L, g=g, rho=rho))
    return HydroResult(w * np.sqrt(L / g), a, b, Xs, X0, ai, meta)
