"""Symmetry-plane bookkeeping for radiation and decomposed diffraction problems.

Plane names: ``'x'`` is the plane ``y = 0`` (tag ``symx``), ``'y'`` is the
plane ``x = 0`` (tag ``symy``).  A flag ``theta = 1`` means a homogeneous
Neumann condition on the plane (even field), ``theta = 0`` a homogeneous
Dirichlet condition (odd field).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ParityError, SchedulingError, SpectralInputError

PLANES = ("x", "y")
PLANE_TAGS = {"x": "symx", "y": "symy"}

# rigid-body modes 1..6: surge, sway, heave, roll, pitch, yaw
_RADIATION_THETA = {"x": (1, 0, 1, 0, 1, 0), "y": (0, 1, 1, 1, 0, 0)}

# (theta_x, theta_y) per two-plane diffraction block
_TWO_PLANE_BLOCKS = {"SS": (1, 1), "SA": (0, 1), "AS": (1, 0), "AA": (0, 0)}


def _check_planes(planes):
    planes = tuple(sorted(set(planes)))
    for p in planes:
        if p not in PLANES:
            raise ParameterError(f"unknown symmetry plane {p!r}")
    return planes


@dataclass(frozen=True)
class SymmetryConfig:
    planes: tuple = ()
    n_modes: int = 0
    parity: dict | None = None      # generalized mode k -> {'x': 'even'|'odd', 'y': ...}

    def __post_init__(self):
        object.__setattr__(self, "planes", _check_planes(self.planes))
        if self.n_modes < 0:
            raise ParameterError("generalized mode count must be >= 0")

    @property
    def multiplicity(self):
        """Number of mirror images of the computational domain."""
        return 2 ** len(self.planes)

    def check_mesh(self, mesh):
        for p in self.planes:
            if not mesh.has_tag(PLANE_TAGS[p]):
                raise ParameterError(f"symmetry plane {p} declared but mesh has no "
                                     f"{PLANE_TAGS[p]} boundary")


@dataclass(frozen=True)
class SymmetryBlock:
    label: str
    theta_x: int | None = None
    theta_y: int | None = None
    plane: str | None = None        # for the one-plane S/A blocks

    def flags(self):
        out = {}
        if self.theta_x is not None:
            out["x"] = self.theta_x
        if self.theta_y is not None:
            out["y"] = self.theta_y
        return out

    def dirichlet_planes(self):
        return tuple(p for p, th in self.flags().items() if th == 0)


def radiation_flags(k: int, plane: str, parity: dict | None = None) -> int:
    """Neumann (1) / Dirichlet (0) flag on ``plane`` for radiation mode ``k``."""
    if plane not in PLANES:
        raise ParameterError(f"unknown symmetry plane {plane!r}")
    if 1 <= k <= 6:
        return _RADIATION_THETA[plane][k - 1]
    if k < 1:
        raise ParameterError(f"mode index must be >= 1, got {k}")
    decl = (parity or {}).get(k) if parity and k in parity else parity
    if not isinstance(decl, dict) or plane not in decl:
        raise ParityError(f"generalized mode {k} needs a parity declaration for plane {plane}")
    val = str(decl[plane]).lower()
    if val in ("even", "s", "symmetric", "1"):
        return 1
    if val in ("odd", "a", "antisymmetric", "0"):
        return 0
    raise ParityError(f"bad parity {decl[plane]!r} for mode {k}")


def diffraction_blocks(planes) -> list:
    planes = _check_planes(planes)
    if len(planes) == 2:
        return [SymmetryBlock(lbl, tx, ty) for lbl, (tx, ty) in _TWO_PLANE_BLOCKS.items()]
    if len(planes) == 1:
        p = planes[0]
        key = "theta_x" if p == "x" else "theta_y"
        return [SymmetryBlock("S", plane=p, **{key: 1}), SymmetryBlock("A", plane=p, **{key: 0})]
    return [SymmetryBlock("Full")]


def block_for_flags(blocks, flags: dict) -> SymmetryBlock:
    for b in blocks:
        if b.flags() == flags:
            return b
    raise SchedulingError(f"no block matches symmetry flags {flags}")


def mode_flags(k, planes, parity=None) -> dict:
    return {p: radiation_flags(k, p, parity) for p in _check_planes(planes)}


# ---------------------------------------------------------------------------
# decomposed incident phase
# ---------------------------------------------------------------------------

def _as_label(block):
    return block.label if isinstance(block, SymmetryBlock) else str(block)


def _plane_of(block):
    if isinstance(block, SymmetryBlock):
        return block.plane
    return None


def decomposed_phase_gradient(block, k, beta, x, y, plane=None):
    """Block phase factor ``E`` and its derivatives ``(dE/dx, dE/dy)``."""
    lbl = _as_label(block)
    plane = plane or _plane_of(block)
    c, s = np.cos(beta), np.sin(beta)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ax, ay = k * x * c, k * y * s
    cx, sx, cy, sy = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)
    kc, ks = k * c, k * s
    if lbl == "Full":
        E = np.exp(-1j * (ax + ay))
        return E, -1j * kc * E, -1j * ks * E
    if lbl == "SS":
        return (cx * cy + 0j, -kc * sx * cy + 0j, -ks * cx * sy + 0j)
    if lbl == "SA":
        return (-1j * cx * sy, 1j * kc * sx * sy, -1j * ks * cx * cy)
    if lbl == "AS":
        return (-1j * sx * cy, -1j * kc * cx * cy, 1j * ks * sx * sy)
    if lbl == "AA":
        return (-sx * sy + 0j, -kc * cx * sy + 0j, -ks * sx * cy + 0j)
    if lbl in ("S", "A"):
        if plane == "x":      # reflection y -> -y
            ex = np.exp(-1j * ax)
            if lbl == "S":
                return ex * cy, -1j * kc * ex * cy, -ks * ex * sy
            return -1j * ex * sy, -kc * ex * sy, -1j * ks * ex * cy
        if plane == "y":      # reflection x -> -x
            ey = np.exp(-1j * ay)
            if lbl == "S":
                return cx * ey, -kc * sx * ey, -1j * ks * cx * ey
            return -1j * sx * ey, -1j * kc * cx * ey, -ks * sx * ey
        raise ParameterError("one-plane block needs its plane ('x' or 'y')")
    raise ParameterError(f"unknown block label {lbl!r}")


def decomposed_phase(block, k, beta, points, plane=None):
    """Spatial factor replacing ``exp(-i k (x cos b + y sin b))`` for one block."""
    pts = np.atleast_2d(points)
    return decomposed_phase_gradient(block, k, beta, pts[:, 0], pts[:, 1], plane)[0]


# ---------------------------------------------------------------------------
# body forcing synthesis
# ---------------------------------------------------------------------------

def inverse_transform(omegas, spectrum, times, chunk=256):
    """``(1/2pi) int X(w) exp(i w t) dw`` on a uniform frequency grid.

    ``omegas`` is either one-sided (``w_m = m dw``, m >= 0, Hermitian extension
    implied) or two-sided symmetric (checked for conjugate symmetry).  The
    last axis of ``spectrum`` runs over frequency.  Returns real values with
    shape ``spectrum.shape[:-1] + (len(times),)``.
    """
    w = np.asarray(omegas, dtype=float)
    X = np.asarray(spectrum, dtype=complex)
    t = np.asarray(times, dtype=float)
    if len(w) < 2:
        raise SpectralInputError("need at least two frequencies")
    dw = w[1] - w[0]
    if not np.allclose(np.diff(w), dw, rtol=1e-9, atol=0):
        raise SpectralInputError("frequency grid must be uniform")
    if w[0] < -1e-12 * abs(dw):
        # two-sided grid: require conjugate symmetry
        if not np.allclose(w, -w[::-1], rtol=0, atol=1e-9 * abs(dw)):
            raise SpectralInputError("two-sided grid must be symmetric about zero")
        scale = np.abs(X).max() or 1.0
        if np.abs(X - np.conj(X[..., ::-1])).max() > 1e-10 * scale:
            raise SpectralInputError("spectrum is not conjugate-symmetric")
        weights = np.full(len(w), dw / (2 * np.pi))
        out = np.empty(X.shape[:-1] + (len(t),))
        imag_max = 0.0
        for s0 in range(0, len(t), chunk):
            tt = t[s0:s0 + chunk]
            val = (X * weights) @ np.exp(1j * np.outer(w, tt))
            imag_max = max(imag_max, float(np.abs(val.imag).max(initial=0)))
            out[..., s0:s0 + chunk] = val.real
        ref = float(np.abs(out).max(initial=0)) or 1.0
        if imag_max > 1e-10 * ref:
            raise SpectralInputError(f"transform not real (imaginary residue {imag_max:.2e})")
        return out
    if abs(w[0]) > 1e-12 * abs(dw) and abs(w[0] - dw) > 1e-9 * abs(dw):
        raise SpectralInputError("one-sided grid must start at 0 (or one step)")
    weights = np.full(len(w), dw / np.pi)
    if abs(w[0]) <= 1e-12 * abs(dw):
        weights[0] *= 0.5
        if np.abs(X[..., 0].imag).max(initial=0) > 1e-10 * (np.abs(X).max() or 1.0):
            raise SpectralInputError("zero-frequency value of a real signal must be real")
    out = np.empty(X.shape[:-1] + (len(t),))
    for s0 in range(0, len(t), chunk):
        tt = t[s0:s0 + chunk]
        out[..., s0:s0 + chunk] = ((X * weights) @ np.exp(1j * np.outer(w, tt))).real
    return out


def fft_synthesis(spectrum, dw, n_fft):
    """Fast version of :func:`inverse_transform` on the grid ``t_n = 2 pi n / (n_fft dw)``.

    ``spectrum`` is one-sided on ``w_m = m dw`` (m = 0 .. M-1, M <= n_fft // 2)
    with the Hermitian extension implied; the result has ``n_fft`` samples
    along the last axis and is periodic with period ``2 pi / dw``.
    """
    X = np.asarray(spectrum, dtype=complex)
    M = X.shape[-1]
    if M > n_fft // 2:
        raise SpectralInputError("spectrum longer than half the transform size")
    if np.abs(X[..., 0].imag).max(initial=0) > 1e-10 * (np.abs(X).max() or 1.0):
        raise SpectralInputError("zero-frequency value of a real signal must be real")
    Y = np.zeros(X.shape[:-1] + (n_fft // 2 + 1,), dtype=complex)
    Y[..., :M] = X
    Y[..., 0] = Y[..., 0].real
    return dw * n_fft / (2 * np.pi) * np.fft.irfft(Y, n_fft, axis=-1)


def decomposed_body_bc(block, grad_psi, zeta_spectrum, normals, omegas, times):
    """Neumann data ``-n . F^{-1}[grad Psi^i  F{zeta}]`` per body point and time.

    ``grad_psi`` has shape (n_omega, n_points, 3) and must be built from this
    block's phase only; ``zeta_spectrum`` has shape (n_omega,).
    Returns an array (n_points, n_times).
    """
    G = np.asarray(grad_psi, dtype=complex)
    n = np.asarray(normals, dtype=float)
    Z = np.asarray(zeta_spectrum, dtype=complex)
    dn = np.einsum("mpa,pa->pm", G, n) * Z[None, :]
    return -inverse_transform(omegas, dn, times)


# ---------------------------------------------------------------------------
# force routing
# ---------------------------------------------------------------------------

def block_for_mode(j, planes, parity=None, blocks=None) -> SymmetryBlock:
    planes = _check_planes(planes)
    blocks = blocks if blocks is not None else diffraction_blocks(planes)
    if not planes:
        return blocks[0]
    return block_for_flags(blocks, mode_flags(j, planes, parity))


def recombine_forces(block_results: dict, planes, modes, parity=None):
    """Full-body excitation force per mode from per-block computational-domain forces.

    ``block_results`` maps block label -> {j: force array} for the forces
    integrated over the computational (reduced) body surface.  The mode
    parity selects the single contributing block; the mirror images multiply
    the reduced-domain integral by ``2**len(planes)``.
    """
    planes = _check_planes(planes)
    factor = 2 ** len(planes)
    out = {}
    for j in modes:
        blk = block_for_mode(j, planes, parity)
        if blk.label not in block_results:
            raise SchedulingError(f"force {j} needs block {blk.label}, which was not solved")
        forces = block_results[blk.label]
        if j not in forces:
            raise SchedulingError(f"block {blk.label} has no force for mode {j}")
        out[j] = factor * np.asarray(forces[j])
    return out


def schedule(planes, modes, parity=None):
    """Blocks needed to produce forces for ``modes`` (fails before any solve)."""
    needed = []
    for j in modes:
        b = block_for_mode(j, planes, parity)
        if b not in needed:
            needed.append(b)
    return needed
