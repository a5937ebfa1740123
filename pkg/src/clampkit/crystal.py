"""Lattice geometry, periodic neighbor search and crystal graph construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .elements import Z_MAX

MAX_IMAGE_CELLS = 1_000_000
_CHUNK = 2_000_000  # distance entries evaluated per block of centers


class DegenerateCellError(ValueError):
    pass


# cos() of exact angles carries rounding, so a flat cell such as (120, 120, 120)
# evaluates to ~1e-16 instead of 0; anything this small is treated as flat.
VOLUME_FACTOR_TOL = 1e-10


def _volume_factor(alpha: float, beta: float, gamma: float) -> float:
    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg


def lattice_matrix(a, b, c, alpha, beta, gamma) -> np.ndarray:
    """Row-vector basis: a along x, b in the xy plane."""
    if min(a, b, c) <= 0:
        raise DegenerateCellError(f"non-positive cell length in {(a, b, c)}")
    if not all(0.0 < x < 180.0 for x in (alpha, beta, gamma)):
        raise DegenerateCellError(f"cell angles must lie in (0, 180): {(alpha, beta, gamma)}")
    vf = _volume_factor(alpha, beta, gamma)
    if vf <= VOLUME_FACTOR_TOL:
        raise DegenerateCellError(f"degenerate cell angles {(alpha, beta, gamma)}")
    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    sg = math.sin(math.radians(gamma))
    return np.array([
        [a, 0.0, 0.0],
        [b * cg, b * sg, 0.0],
        [c * cb, c * (ca - cb * cg) / sg, c * math.sqrt(vf) / sg],
    ])


@dataclass(frozen=True)
class Lattice:
    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix",
                           lattice_matrix(self.a, self.b, self.c, self.alpha, self.beta, self.gamma))

    @property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.matrix)))

    @property
    def parameters(self) -> tuple:
        return (self.a, self.b, self.c, self.alpha, self.beta, self.gamma)

    def perpendicular_widths(self) -> np.ndarray:
        """Distance between opposite faces along each axis (volume / face area)."""
        m = self.matrix
        areas = np.array([np.linalg.norm(np.cross(m[1], m[2])),
                          np.linalg.norm(np.cross(m[2], m[0])),
                          np.linalg.norm(np.cross(m[0], m[1]))])
        return self.volume / areas

    def frac_to_cart(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=np.float64) @ self.matrix


def frac_to_cart(lattice: Lattice, frac) -> np.ndarray:
    return lattice.frac_to_cart(frac)


def wrap_frac(frac: np.ndarray) -> np.ndarray:
    """Reduce fractional coordinates into [0, 1)."""
    w = np.mod(frac, 1.0)
    w[w >= 1.0] = 0.0
    return w + 0.0  # drop negative zeros


@dataclass
class CrystalStructure:
    lattice: Lattice
    elements: np.ndarray      # (N,) atomic numbers
    frac: np.ndarray          # (N, 3) in [0, 1)
    occupancy: np.ndarray     # (N,)
    labels: list[str] | None = None

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1)
        self.frac = np.asarray(self.frac, dtype=np.float64).reshape(-1, 3)
        n = len(self.elements)
        if self.occupancy is None:
            self.occupancy = np.ones(n)
        self.occupancy = np.asarray(self.occupancy, dtype=np.float64).reshape(-1)
        if n == 0:
            raise ValueError("structure has no sites")
        if self.frac.shape[0] != n or self.occupancy.shape[0] != n:
            raise ValueError("elements, coordinates and occupancies differ in length")
        if self.elements.min() < 1 or self.elements.max() > Z_MAX:
            raise ValueError("atomic numbers must lie in 1..103")
        if np.any(self.frac < 0) or np.any(self.frac >= 1):
            raise ValueError("fractional coordinates must lie in [0, 1)")
        if np.any(self.occupancy <= 0) or np.any(self.occupancy > 1):
            raise ValueError("occupancy must lie in (0, 1]")

    def __len__(self):
        return len(self.elements)

    @property
    def cart(self) -> np.ndarray:
        return self.frac @ self.lattice.matrix

    @property
    def partial_occupancy(self) -> bool:
        return bool(np.any(self.occupancy < 1.0))

    @property
    def sites(self):
        return list(zip(self.elements.tolist(), self.frac, self.occupancy.tolist()))


# ---------------------------------------------------------------------------
# neighbor search


@dataclass(frozen=True)
class NeighborEdge:
    i: int
    j: int
    image: tuple[int, int, int]
    distance: float


@dataclass
class NeighborArrays:
    """Flat edge arrays, grouped by center and sorted within each center."""
    center: np.ndarray    # (E,)
    neighbor: np.ndarray  # (E,)
    image: np.ndarray     # (E, 3) int
    distance: np.ndarray  # (E,)

    def __len__(self):
        return len(self.center)


def image_shell(lattice: Lattice, cutoff: float) -> np.ndarray:
    """All integer cell shifts with |n_k| <= ceil(cutoff / w_k)."""
    bounds = np.ceil(cutoff / lattice.perpendicular_widths()).astype(np.int64)
    count = int(np.prod(2 * bounds + 1))
    if count > MAX_IMAGE_CELLS:
        raise ValueError(f"image enumeration needs {count} cells (> {MAX_IMAGE_CELLS}); cell too thin")
    axes = [np.arange(-n, n + 1) for n in bounds]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def neighbor_arrays(structure: CrystalStructure, cutoff: float,
                    max_neighbors: int | None = None) -> NeighborArrays:
    """Exact periodic neighbors within ``cutoff``.

    Per center, edges are ordered by (distance, neighbor index, image) and cut
    to ``max_neighbors`` (``None`` keeps all).
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if max_neighbors is not None and max_neighbors < 1:
        raise ValueError("max_neighbors must be >= 1")
    shifts = image_shell(structure.lattice, cutoff)
    cart = structure.cart
    shift_cart = shifts @ structure.lattice.matrix
    n = len(cart)
    # targets[j, m] = cart_j + shift_m
    targets = cart[:, None, :] + shift_cart[None, :, :]
    block = max(1, _CHUNK // max(1, targets.shape[0] * targets.shape[1]))
    parts = []
    for lo in range(0, n, block):
        delta = targets[None] - cart[lo:lo + block, None, None, :]
        dist = np.sqrt((delta * delta).sum(axis=-1))
        bi, bj, bm = np.nonzero((dist > 0) & (dist <= cutoff))
        parts.append((bi + lo, bj, bm, dist[bi, bj, bm]))
    ii = np.concatenate([p[0] for p in parts])
    jj = np.concatenate([p[1] for p in parts])
    d = np.concatenate([p[3] for p in parts])
    img = shifts[np.concatenate([p[2] for p in parts])]
    order = np.lexsort((img[:, 2], img[:, 1], img[:, 0], jj, d, ii))
    ii, jj, img, d = ii[order], jj[order], img[order], d[order]
    if max_neighbors is not None and len(ii):
        starts = np.searchsorted(ii, ii, side="left")
        keep = (np.arange(len(ii)) - starts) < max_neighbors
        ii, jj, img, d = ii[keep], jj[keep], img[keep], d[keep]
    return NeighborArrays(ii.astype(np.int64), jj.astype(np.int64), img.astype(np.int64), d)


def neighbor_list(structure: CrystalStructure, cutoff: float,
                  max_neighbors: int | None = None) -> list[list[NeighborEdge]]:
    arr = neighbor_arrays(structure, cutoff, max_neighbors)
    out: list[list[NeighborEdge]] = [[] for _ in range(len(structure))]
    for i, j, img, d in zip(arr.center.tolist(), arr.neighbor.tolist(), arr.image.tolist(), arr.distance.tolist()):
        out[i].append(NeighborEdge(i, j, tuple(img), d))
    return out


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class GaussianConfig:
    dmin: float = 0.0
    dmax: float = 8.0
    step: float = 0.2
    var: float | None = None  # default: step ** 2

    def __post_init__(self):
        if not self.dmin < self.dmax:
            raise ValueError("gaussian dmin must be below dmax")
        if self.step <= 0:
            raise ValueError("gaussian step must be positive")
        if self.var is not None and self.var <= 0:
            raise ValueError("gaussian var must be positive")

    @property
    def variance(self) -> float:
        return self.step ** 2 if self.var is None else self.var

    @property
    def centers(self) -> np.ndarray:
        k = int(math.floor((self.dmax - self.dmin) / self.step + 1e-9)) + 1
        return self.dmin + self.step * np.arange(k)

    @property
    def width(self) -> int:
        return len(self.centers)


def gaussian_expand(d, dmin: float = 0.0, dmax: float = 8.0, step: float = 0.2,
                    var: float | None = None) -> np.ndarray:
    """exp(-(d - mu_k)^2 / var) on the grid mu_k = dmin + k*step; vectorised over d."""
    g = GaussianConfig(dmin, dmax, step, var)
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-((d[..., None] - g.centers) ** 2) / g.variance)


@dataclass
class CrystalGraph:
    node_elements: np.ndarray   # (N,)
    src: np.ndarray             # (E,)
    dst: np.ndarray             # (E,)
    edge_features: np.ndarray   # (E, K)
    distances: np.ndarray       # (E,)
    images: np.ndarray          # (E, 3)

    @property
    def num_nodes(self) -> int:
        return len(self.node_elements)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def to_json(self) -> str:
        """Debug dump: {"nodes": [Z...], "edges": [[src, dst, [image], distance], ...]}."""
        return json.dumps({
            "nodes": self.node_elements.tolist(),
            "edges": [[int(s), int(t), list(map(int, im)), float(d)]
                      for s, t, im, d in zip(self.src, self.dst, self.images, self.distances)],
        })


def build_graph(structure: CrystalStructure, cutoff: float = 8.0, max_neighbors: int = 12,
                gaussian: GaussianConfig = GaussianConfig()) -> CrystalGraph:
    nb = neighbor_arrays(structure, cutoff, max_neighbors)
    feats = np.exp(-((nb.distance[:, None] - gaussian.centers) ** 2) / gaussian.variance)
    return CrystalGraph(structure.elements.copy(), nb.center, nb.neighbor,
                        feats.reshape(len(nb), gaussian.width), nb.distance, nb.image)

