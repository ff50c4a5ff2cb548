"""Optically probed effective mass from sampled mode shapes.

A :class:`ModeShape` stores the displacement field (u, v, w) at the
centres of a uniform rectilinear grid of cells; cells outside the body hold
NaN. The mirror surface is the layer of cells nearest z = 0 and the beam
coordinates are measured on that surface.
"""
from __future__ import annotations

from dataclasses import dataclass
import io
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CoverageError, DarkModeError

GRID_MAGIC = "pulsemech-mode-grid 1"


def _check_axis(name: str, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1 or not np.all(np.isfinite(a)):
        raise ValueError(f"axis {name} must be a non-empty finite 1-D array")
    if a.size > 1:
        d = np.diff(a)
        if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError(f"axis {name} must be uniformly increasing")
    return a


@dataclass(frozen=True, eq=False)
class ModeShape:
    """Sampled displacement field of one vibrational mode.

    ``spacing`` gives the cell size along each axis; it is taken from the
    axes when they have more than one sample and must be supplied otherwise.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    density: float
    frequency: float = 0.0
    label: str = ""
    spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        axes = [_check_axis(n, a) for n, a in zip("xyz", (self.x, self.y, self.z))]
        shape = tuple(a.size for a in axes)
        fields = []
        for n in "uvw":
            f = np.asarray(getattr(self, n), dtype=float)
            if f.shape != shape:
                raise ValueError(f"{n} has shape {f.shape}, expected {shape}")
            fields.append(f)
        mask = np.isfinite(fields[2])
        for f in fields:
            if not np.array_equal(np.isfinite(f), mask) or np.any(np.isinf(f)):
                raise ValueError("displacements must be finite inside the body and NaN outside")
        if not mask.any():
            raise ValueError("mode shape has no cells inside the body")
        if not self.density > 0:
            raise ValueError("density must be positive")
        spacing = list(self.spacing) if self.spacing is not None else [None] * 3
        for i, a in enumerate(axes):
            if a.size > 1:
                spacing[i] = float(a[1] - a[0])
            elif spacing[i] is None or not spacing[i] > 0:
                raise ValueError("spacing is required for single-sample axes")
        for n, a in zip("xyz", axes):
            object.__setattr__(self, n, a)
        for n, f in zip("uvw", fields):
            object.__setattr__(self, n, f)
        object.__setattr__(self, "spacing", tuple(float(s) for s in spacing))

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.w)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def scaled(self, factor: float) -> "ModeShape":
        return ModeShape(self.x, self.y, self.z, factor * self.u, factor * self.v, factor * self.w,
                         self.density, self.frequency, self.label, self.spacing)


@dataclass(frozen=True)
class BeamProfile:
    """Gaussian intensity profile; ``r0`` is the intensity standard deviation (m)."""

    r0: float = 10.6e-6 / 4
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")


def total_mass(mode: ModeShape) -> float:
    return mode.density * mode.cell_volume * int(mode.mask.sum())


def optical_overlap(mode: ModeShape, beam: BeamProfile) -> float:
    """Beam-weighted out-of-plane displacement on the mirror surface.

    The Gaussian is evaluated at the cell centres of the surface layer and
    normalized by its own discrete sum, so a uniform displacement is
    returned exactly. Cells outside the body reflect nothing and count as
    zero displacement. The grid must extend at least 4 r0 beyond the beam
    centre in x and y.
    """
    cx, cy = beam.center
    reach = 4 * beam.r0
    dx, dy, _ = mode.spacing
    lo_x, hi_x = mode.x[0] - dx / 2, mode.x[-1] + dx / 2
    lo_y, hi_y = mode.y[0] - dy / 2, mode.y[-1] + dy / 2
    if cx - reach < lo_x or cx + reach > hi_x or cy - reach < lo_y or cy + reach > hi_y:
        raise CoverageError(
            "grid does not cover the beam out to 4 r0",
            details={"center": (cx, cy), "r0": beam.r0, "x": (lo_x, hi_x), "y": (lo_y, hi_y)},
        )
    k = int(np.argmin(np.abs(mode.z)))
    surface = np.nan_to_num(mode.w[:, :, k], nan=0.0)
    gx = np.exp(-((mode.x - cx) ** 2) / (2 * beam.r0 ** 2))
    gy = np.exp(-((mode.y - cy) ** 2) / (2 * beam.r0 ** 2))
    if gx.sum() == 0 or gy.sum() == 0:
        raise CoverageError("beam is narrower than the grid can resolve",
                            details={"r0": beam.r0, "spacing": mode.spacing[:2]})
    return float(gx @ surface @ gy / (gx.sum() * gy.sum()))


def effective_mass(mode: ModeShape, beam: BeamProfile) -> float:
    """rho * integral(u^2 + v^2 + w^2) dV / D^2."""
    D = optical_overlap(mode, beam)
    m = mode.mask
    energy = float(np.sum(mode.u[m] ** 2 + mode.v[m] ** 2 + mode.w[m] ** 2))
    scale = float(np.max(np.abs(mode.w[m])))
    if scale == 0 or abs(D) <= 1e-12 * scale:
        raise DarkModeError("mode has no displacement under the beam", details={"D": D})
    return mode.density * mode.cell_volume * energy / D ** 2


def rms_contributions(modes: Sequence[tuple[float, float]], T: float | None = None) -> np.ndarray:
    """Thermal RMS amplitude of each mode relative to the first.

    ``modes`` holds ``(m_eff, frequency)`` pairs. By equipartition the RMS
    amplitude is sqrt(k_B T / (m_eff omega^2)); the temperature cancels in
    the ratio and is accepted only for interface symmetry.
    """
    arr = np.asarray(modes, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ValueError("modes must be a non-empty list of (m_eff, frequency)")
    if np.any(arr <= 0):
        raise ValueError("masses and frequencies must be positive")
    stiffness = arr[:, 0] * arr[:, 1] ** 2
    return np.sqrt(stiffness[0] / stiffness)


def _centres(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(int(round((hi - lo) / step)), 1)
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def cantilever_mode(
    *,
    total_length: float = 1.45e-3,
    arm_width: float = 4.125e-6,
    head_diameter: float = 98.25e-6,
    thickness: float = 6.88e-6,
    density: float = 4476.0,
    head: str = "circle",
    cells_across_arm: int = 8,
    dx: float = 2e-6,
    nz: int = 4,
    frequency: float = 984.3,
) -> ModeShape:
    """Fundamental out-of-plane shape of a uniform arm carrying a heavy head.

    The arm deflects like a cantilever loaded at its tip,
    w = (3 s^2 - s^3) / 2 with s the distance from the clamp over the arm
    length; the head moves rigidly with the arm tip (displacement and
    slope). Bending rotation adds u = -(z - z_mid) dw/dx. The origin is the
    head centre on the mirror surface (z = 0), the body occupies
    z in [-thickness, 0] and the clamp is at negative x.
    """
    R = head_diameter / 2
    L = total_length - head_diameter
    if L <= 0:
        raise ValueError("head is longer than the cantilever")
    dy = arm_width / cells_across_arm
    half_y = dy * math.ceil(R / dy)
    x = _centres(-R - L, R, dx)
    y = _centres(-half_y, half_y, dy)
    z = _centres(-thickness, 0.0, thickness / nz)
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    s = np.clip((X + R + L) / L, 0.0, None)
    in_arm = (X < -R) & (np.abs(Y) < arm_width / 2)
    if head == "circle":
        in_head = X ** 2 + Y ** 2 <= R ** 2
    elif head == "square":
        in_head = (np.abs(X) <= R) & (np.abs(Y) <= R)
    else:
        raise ValueError(f"unknown head shape {head!r}")
    body = in_arm | in_head
    w_arm = 0.5 * (3 * s ** 2 - s ** 3)
    dw_arm = 1.5 * (2 * s - s ** 2) / L
    w_head = 1.0 + 1.5 * (X + R) / L
    w = np.where(in_arm, w_arm, w_head)
    slope = np.where(in_arm, dw_arm, 1.5 / L)
    u = -(Z + thickness / 2) * slope
    nan = np.full_like(w, np.nan)
    return ModeShape(x, y, z, np.where(body, u, nan), np.where(body, 0.0, nan),
                     np.where(body, w, nan), density, frequency, "fundamental")


# ---------------------------------------------------------------------------
# Text grid files


def write_grid(mode: ModeShape, path) -> None:
    """Write ``mode`` in the text grid format documented in docs/grid-format.md."""
    buf = io.StringIO()
    buf.write(GRID_MAGIC + "\n")
    for name, a, d in zip("xyz", (mode.x, mode.y, mode.z), mode.spacing):
        buf.write(f"axis {name} {a.size} {float(a[0])!r} {float(d)!r}\n")
    buf.write(f"density {float(mode.density)!r}\n")
    buf.write(f"frequency {float(mode.frequency)!r}\n")
    buf.write(f"label {mode.label}\n")
    buf.write("data\n")
    data = np.column_stack([mode.u.ravel(), mode.v.ravel(), mode.w.ravel()])
    np.savetxt(buf, data, fmt="%.17g")
    Path(path).write_text(buf.getvalue(), encoding="ascii")


def read_grid(path) -> ModeShape:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0].strip() != GRID_MAGIC:
        raise ValueError(f"{path}: not a mode grid file")
    axes, spacing, meta = {}, {}, {}
    i = 1
    while i < len(lines) and lines[i].strip() != "data":
        parts = lines[i].split(maxsplit=1)
        if parts[0] == "axis":
            name, n, start, step = parts[1].split()
            axes[name] = float(start) + float(step) * np.arange(int(n))
            spacing[name] = float(step)
        elif parts[0] in ("density", "frequency"):
            meta[parts[0]] = float(parts[1])
        elif parts[0] == "label":
            meta["label"] = parts[1] if len(parts) > 1 else ""
        else:
            raise ValueError(f"{path}: unknown header field {parts[0]!r}")
        i += 1
    if set(axes) != set("xyz") or "density" not in meta:
        raise ValueError(f"{path}: incomplete header")
    shape = tuple(axes[n].size for n in "xyz")
    data = np.loadtxt(lines[i + 1:], ndmin=2) if i + 1 < len(lines) else np.empty((0, 3))
    if data.shape != (int(np.prod(shape)), 3):
        raise ValueError(f"{path}: expected {np.prod(shape)} rows of 3 values, got {data.shape}")
    u, v, w = (data[:, k].reshape(shape) for k in range(3))
    return ModeShape(axes["x"], axes["y"], axes["z"], u, v, w, meta["density"],
                     meta.get("frequency", 0.0), meta.get("label", ""),
                     tuple(spacing[n] for n in "xyz"))
