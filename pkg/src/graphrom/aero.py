"""Force and moment coefficients from surface Cp and skin-friction fields.

Each cell carries the traction ``-cp * n + cf`` evaluated from the average
of its three node values.  Summing ``traction * area / S_ref`` gives the
force coefficient vector, which is split into wind axes by the angle of
attack in the x-z plane.  The pitching moment is taken about ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SurfaceMesh

__all__ = [
    "AeroReference",
    "Coefficients",
    "integrate_coefficients",
    "moment_reference",
    "coefficient_weights",
    "wind_axes",
]


@dataclass(frozen=True)
class AeroReference:
    """Reference chord (m), area (m^2), moment point and angle of attack (deg)."""

    chord: float
    area: float
    moment_point: tuple = (0.0, 0.0, 0.0)
    aoa: float = 0.0

    def __post_init__(self):
        if not self.chord > 0:
            raise ValueError(f"reference chord must be positive, got {self.chord}")
        if not self.area > 0:
            raise ValueError(f"reference area must be positive, got {self.area}")
        if len(self.moment_point) != 3:
            raise ValueError("moment point must have three coordinates")

    def with_aoa(self, aoa) -> "AeroReference":
        return AeroReference(self.chord, self.area, tuple(self.moment_point), float(aoa))


@dataclass(frozen=True)
class Coefficients:
    CL: float
    CD: float
    CMy: float
    CY: float = 0.0

    def as_tuple(self):
        return (self.CL, self.CD, self.CMy)


def wind_axes(aoa):
    """Unit drag and lift directions for an angle of attack in degrees."""
    a = np.radians(aoa)
    drag = np.array([np.cos(a), 0.0, np.sin(a)])
    lift = np.array([-np.sin(a), 0.0, np.cos(a)])
    return drag, lift


def _check_fields(mesh, cp, cf):
    cp = np.asarray(cp, dtype=np.float64)
    cf = np.asarray(cf, dtype=np.float64)
    if cp.shape != (mesh.n_nodes,):
        raise ValueError(f"cp must have shape ({mesh.n_nodes},), got {cp.shape}")
    if cf.shape != (mesh.n_nodes, 3):
        raise ValueError(f"cf must have shape ({mesh.n_nodes}, 3), got {cf.shape}")
    return cp, cf


def integrate_coefficients(mesh: SurfaceMesh, cp, cf, ref: AeroReference) -> Coefficients:
    """Integrate node fields ``cp`` (n,) and ``cf`` (n, 3) over ``mesh``."""
    cp, cf = _check_fields(mesh, cp, cf)
    cells = mesh.cells
    cp_c = cp[cells].mean(axis=1)
    cf_c = cf[cells].mean(axis=1)
    traction = -cp_c[:, None] * mesh.cell_normals + cf_c
    dA = mesh.cell_areas[:, None] / ref.area
    force = (traction * dA).sum(axis=0)
    r = mesh.cell_centroids - np.asarray(ref.moment_point, dtype=np.float64)
    moment_y = r[:, 2] * traction[:, 0] - r[:, 0] * traction[:, 2]
    cmy = float((moment_y * dA[:, 0]).sum() / ref.chord)
    drag, lift = wind_axes(ref.aoa)
    return Coefficients(float(force @ lift), float(force @ drag), cmy, float(force[1]))


def coefficient_weights(mesh: SurfaceMesh, ref: AeroReference) -> dict:
    """Per-node linear weights of each coefficient.

    Returns ``{"CL", "CD", "CMy"}`` -> (n, 4) arrays ``w`` such that the
    coefficient equals ``sum(w * fields)`` with fields ordered
    ``(cp, cfx, cfy, cfz)``.
    """
    n_hat = mesh.cell_normals
    dA = mesh.cell_areas / ref.area
    r = mesh.cell_centroids - np.asarray(ref.moment_point, dtype=np.float64)
    drag, lift = wind_axes(ref.aoa)
    # per-cell weights on the averaged (cp, cf) values
    per_cell = {}
    for key, d in (("CL", lift), ("CD", drag)):
        w = np.empty((mesh.n_cells, 4))
        w[:, 0] = -(n_hat @ d)
        w[:, 1:] = d
        per_cell[key] = w * dA[:, None]
    w = np.zeros((mesh.n_cells, 4))
    w[:, 0] = -(r[:, 2] * n_hat[:, 0] - r[:, 0] * n_hat[:, 2])
    w[:, 1] = r[:, 2]
    w[:, 3] = -r[:, 0]
    per_cell["CMy"] = w * (dA / ref.chord)[:, None]
    out = {}
    idx = mesh.cells.ravel()
    for key, w in per_cell.items():
        node = np.zeros((mesh.n_nodes, 4))
        np.add.at(node, idx, np.repeat(w / 3.0, 3, axis=0))
        out[key] = node
    return out


def moment_reference(nodes, fraction, chord, span_y=None, tol=None) -> np.ndarray:
    """Point ``fraction * chord`` aft of the leading edge at a span station.

    The station defaults to the root (smallest ``y``).  Nodes within ``tol``
    of it (default 1e-6 of the span extent) define the leading edge as their
    smallest ``x``; ``z`` is taken from that leading-edge node.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"chord fraction must lie in [0, 1], got {fraction}")
    if not chord > 0:
        raise ValueError("chord must be positive")
    nodes = np.asarray(nodes, dtype=np.float64)
    y = nodes[:, 1]
    station = y.min() if span_y is None else float(span_y)
    tol = 1e-6 * max(np.ptp(y), 1.0) if tol is None else tol
    near = np.abs(y - station) <= tol
    if not near.any():
        near = np.abs(y - station) == np.abs(y - station).min()
    cand = np.flatnonzero(near)
    le = cand[np.argmin(nodes[cand, 0])]
    return np.array([nodes[le, 0] + fraction * chord, station, nodes[le, 2]])
