"""Design of experiments and synthetic shock-bearing surface fields.

The synthetic case is a swept, tapered, cambered plate triangulated on a
structured (chord x span) lattice with leading/trailing-edge clustering.
Its pressure field carries a tanh pseudo-shock whose chordwise position
moves with Mach number and angle of attack; skin friction follows the
chordwise surface tangent and dips across the front.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .mesh import SurfaceMesh

__all__ = [
    "CHANNELS",
    "Doe",
    "FlowSample",
    "SyntheticCase",
    "lhs_sample",
    "split",
    "build_mesh",
    "generate_case",
    "shock_position",
    "cp_analytic_gradient",
    "shock_cells",
    "shock_offsets",
]

CHANNELS = ("Cp", "Cfx", "Cfy", "Cfz")


@dataclass(frozen=True)
class Doe:
    aoa_range: tuple = (0.0, 5.0)
    mach_range: tuple = (0.70, 0.84)
    n_samples: int = 70
    counts: tuple | None = (40, 15, 15)
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {self.fractions}")
        if self.counts is not None and sum(self.counts) != self.n_samples:
            raise ValueError(f"split counts {self.counts} do not add up to {self.n_samples}")
        for lo, hi in (self.aoa_range, self.mach_range):
            if not lo < hi:
                raise ValueError("parameter ranges must be increasing")


@dataclass(frozen=True)
class FlowSample:
    aoa: float
    mach: float
    targets: np.ndarray = field(repr=False)


def lhs_sample(doe: Doe) -> np.ndarray:
    """``(n, 2)`` array of ``(aoa, mach)`` from a seeded Latin hypercube."""
    unit = qmc.LatinHypercube(d=2, seed=np.random.default_rng(doe.seed)).random(doe.n_samples)
    lo = np.array([doe.aoa_range[0], doe.mach_range[0]])
    hi = np.array([doe.aoa_range[1], doe.mach_range[1]])
    return lo + unit * (hi - lo)


def split(n, *, counts=None, fractions=(0.6, 0.2, 0.2), seed=0) -> dict:
    """Disjoint train/val/test index arrays (each sorted).

    Explicit ``counts`` win; otherwise sizes come from ``fractions`` with
    round-half-even and the remainder assigned to the test split.
    """
    if counts is None:
        if abs(sum(fractions) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {fractions}")
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        counts = (n_train, n_val, n - n_train - n_val)
    if sum(counts) != n or min(counts) < 0:
        raise ValueError(f"split counts {counts} do not partition {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return {
        "train": np.sort(perm[:a]),
        "val": np.sort(perm[a:b]),
        "test": np.sort(perm[b:]),
    }


@dataclass(frozen=True)
class SyntheticCase:
    """Procedural wing-like plate and its analytic field law.

    The shock sits at chord fraction
    ``x_s = shock_base + shock_mach * (M - 0.70) + shock_aoa * AoA - shock_span * eta``
    and has half-width ``delta`` (chord fraction).
    """

    n_chord: int = 36
    n_span: int = 25
    root_chord: float = 1.0
    taper: float = 0.6
    semi_span: float = 1.5
    sweep_deg: float = 20.0
    camber: float = 0.03
    clustering: float = 0.5
    delta: float = 0.05
    shock_base: float = 0.25
    shock_mach: float = 2.0
    shock_aoa: float = 0.02
    shock_span: float = 0.08
    load_scale: float = 1.0

    def __post_init__(self):
        if self.n_chord < 3 or self.n_span < 2:
            raise ValueError("mesh needs at least 3 chordwise and 2 spanwise stations")
        if not 0.0 <= self.clustering <= 1.0:
            raise ValueError("clustering must lie in [0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def n_nodes(self) -> int:
        return self.n_chord * self.n_span

    @property
    def mean_chord(self) -> float:
        return self.root_chord * (1.0 + self.taper) / 2.0

    @property
    def planform_area(self) -> float:
        return self.mean_chord * self.semi_span

    def chord_fractions(self) -> np.ndarray:
        s = np.linspace(0.0, 1.0, self.n_chord)
        b = self.clustering
        return (1.0 - b) * s + b * 0.5 * (1.0 - np.cos(np.pi * s))

    def span_fractions(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_span)

    def to_dict(self) -> dict:
        return asdict(self)


def _surface(case: SyntheticCase, xi, eta):
    tan_sweep = np.tan(np.radians(case.sweep_deg))
    chord = case.root_chord * (1.0 - (1.0 - case.taper) * eta)
    x = eta * case.semi_span * tan_sweep + chord * xi
    y = case.semi_span * eta
    z = case.camber * chord * 4.0 * xi * (1.0 - xi)
    return np.stack([x, y, z], axis=-1), chord


@functools.lru_cache(maxsize=16)
def _mesh_cached(case: SyntheticCase):
    xi = case.chord_fractions()
    eta = case.span_fractions()
    XI, ETA = np.meshgrid(xi, eta)  # (n_span, n_chord); node id = j * n_chord + i
    nodes, _ = _surface(case, XI.ravel(), ETA.ravel())
    nc = case.n_chord
    cells = []
    for j in range(case.n_span - 1):
        for i in range(nc - 1):
            a = j * nc + i
            b, c, d = a + 1, a + nc + 1, a + nc
            cells.append((a, b, c))
            cells.append((a, c, d))
    return SurfaceMesh(nodes, np.array(cells, dtype=np.int64)), XI.ravel(), ETA.ravel()


def build_mesh(case: SyntheticCase) -> SurfaceMesh:
    return _mesh_cached(case)[0]


def node_parameters(case: SyntheticCase):
    """``(xi, eta)`` chord and span fractions of every node."""
    _, xi, eta = _mesh_cached(case)
    return xi, eta


def shock_position(case: SyntheticCase, aoa, mach, eta=0.0):
    """Chord fraction of the pseudo-shock front."""
    return (case.shock_base + case.shock_mach * (mach - 0.70)
            + case.shock_aoa * aoa - case.shock_span * np.asarray(eta))


def _cp(case, xi, eta, aoa, mach):
    base = -(0.55 + 0.06 * aoa) * (1.0 - 0.2 * eta**2)
    amp = (0.25 + 0.05 * aoa + 1.5 * (mach - 0.70)) * (1.0 - 0.3 * eta**2)
    arg = (xi - shock_position(case, aoa, mach, eta)) / case.delta
    return case.load_scale * (base + amp * np.tanh(arg)), base, amp, arg


def cp_analytic_gradient(case: SyntheticCase, aoa, mach) -> np.ndarray:
    """Exact spatial gradient of the synthetic Cp at every node, shape (n, 3).

    Computed from the chain rule through the surface parametrization; the
    result lies in the tangent plane.
    """
    xi, eta = node_parameters(case)
    h = 1e-6
    # parametric derivatives of Cp are exact closed forms; surface Jacobian by
    # central differences of the (polynomial) parametrization
    _, base, amp, arg = _cp(case, xi, eta, aoa, mach)
    sech2 = 1.0 / np.cosh(arg) ** 2
    dcp_dxi = case.load_scale * amp * sech2 / case.delta
    dbase = -(0.55 + 0.06 * aoa) * (-0.4 * eta)
    damp = (0.25 + 0.05 * aoa + 1.5 * (mach - 0.70)) * (-0.6 * eta)
    dcp_deta = case.load_scale * (
        dbase + damp * np.tanh(arg) + amp * sech2 * case.shock_span / case.delta
    )
    r_xi = (_surface(case, xi + h, eta)[0] - _surface(case, xi - h, eta)[0]) / (2 * h)
    r_eta = (_surface(case, xi, eta + h)[0] - _surface(case, xi, eta - h)[0]) / (2 * h)
    # gradient g in the tangent plane: g . r_xi = dcp_dxi, g . r_eta = dcp_deta
    J = np.stack([r_xi, r_eta], axis=1)  # (n, 2, 3)
    rhs = np.stack([dcp_dxi, dcp_deta], axis=1)
    return np.einsum("nij,nj->ni", np.linalg.pinv(J), rhs)


def generate_case(case: SyntheticCase, aoa, mach):
    """Mesh and analytic target fields ``(Cp, Cfx, Cfy, Cfz)`` for one condition."""
    mesh, xi, eta = _mesh_cached(case)
    cp, _, _, arg = _cp(case, xi, eta, aoa, mach)
    tan_sweep = np.tan(np.radians(case.sweep_deg))
    chord = case.root_chord * (1.0 - (1.0 - case.taper) * eta)
    dz_dxi = case.camber * chord * 4.0 * (1.0 - 2.0 * xi)
    tangent = np.stack([chord, np.zeros_like(xi), dz_dxi], axis=1)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    sech2 = 1.0 / np.cosh(arg) ** 2
    cf_mag = (3e-3 + 2e-3 * (1.0 - xi)) * (1.0 - 0.6 * sech2) * (1.0 - 0.2 * eta)
    cf_mag *= 1.0 + 0.5 * (mach - 0.70) + 0.02 * aoa
    cf = cf_mag[:, None] * (tangent + np.array([0.0, 0.15 + 0.05 * tan_sweep, 0.0]))
    targets = np.column_stack([cp, cf])
    targets.setflags(write=False)
    return mesh, FlowSample(float(aoa), float(mach), targets)


def shock_cells(case: SyntheticCase, cp) -> np.ndarray:
    """Chordwise cell index of ``argmax |dCp/dx|`` at every span station."""
    mesh, _, _ = _mesh_cached(case)
    cp = np.asarray(cp, dtype=np.float64).reshape(case.n_span, case.n_chord)
    x = mesh.nodes[:, 0].reshape(case.n_span, case.n_chord)
    slope = np.abs(np.diff(cp, axis=1) / np.diff(x, axis=1))
    return np.argmax(slope, axis=1)


def shock_offsets(case: SyntheticCase, cp_pred, cp_true) -> np.ndarray:
    """Per-station distance, in cells, between predicted and true fronts."""
    return np.abs(shock_cells(case, cp_pred) - shock_cells(case, cp_true))
