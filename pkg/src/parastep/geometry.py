"""Parabolic mesh geometry.

Space-time points carry the parabolic distance d((x,t),(y,s)) =
(|x-y|^2 + |s-t|)^(1/2); meshes live on the lattice hZ^n x h^2 Z.  A node is
addressed by its global integer index (k_1, ..., k_n, m) with position
x_i = k_i*h and t = m*h^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import GridError

__all__ = [
    "ParabolicPoint",
    "Cylinder",
    "KBox",
    "MeshSpec",
    "MeshFunction",
    "parabolic_distance",
    "euclidean_distance",
    "classify_mesh_points",
    "cylinder_nodes",
    "discrete_holder_norm",
]

# Relative slack used when deciding lattice membership / region containment,
# so that exact rational grids are classified exactly.
_FP_SLACK = 1e-9


@dataclass(frozen=True)
class ParabolicPoint:
    """A point (x, t) in R^n x R."""

    x: tuple[float, ...]
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(c) for c in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.x + (self.t,), dtype=float)


def _coerce_point(p) -> ParabolicPoint:
    if isinstance(p, ParabolicPoint):
        return p
    x, t = p
    return ParabolicPoint(tuple(np.atleast_1d(np.asarray(x, dtype=float))), float(t))


def parabolic_distance(p, q) -> float:
    """d((x,t),(y,s)) = (|x-y|^2 + |s-t|)^(1/2)."""
    p, q = _coerce_point(p), _coerce_point(q)
    if p.n != q.n:
        raise GridError(f"dimension mismatch: {p.n} vs {q.n}")
    dx = np.subtract(p.x, q.x)
    return math.sqrt(float(dx @ dx) + abs(p.t - q.t))


def euclidean_distance(p, q) -> float:
    """d_e((x,t),(y,s)) = (|x-y|^2 + |s-t|^2)^(1/2)."""
    p, q = _coerce_point(p), _coerce_point(q)
    if p.n != q.n:
        raise GridError(f"dimension mismatch: {p.n} vs {q.n}")
    dx = np.subtract(p.x, q.x)
    return math.sqrt(float(dx @ dx) + (p.t - q.t) ** 2)


@dataclass(frozen=True)
class Cylinder:
    """Open-ball cylinder B_r(x) x (t, t+r^2] (forward) or B_r(x) x (t-r^2, t] (backward).

    Space is the open ball |y-x| < r; time is half-open with the endpoint at
    the center's time excluded (forward) / included (backward) exactly as the
    orientation convention states: backward includes its top time, forward
    includes its far (later) time.
    """

    center: ParabolicPoint
    radius: float
    orientation: str = "backward"

    def __post_init__(self):
        object.__setattr__(self, "center", _coerce_point(self.center))
        if self.radius <= 0:
            raise GridError(f"cylinder radius must be positive, got {self.radius}")
        if self.orientation not in ("forward", "backward"):
            raise GridError(f"orientation must be 'forward' or 'backward', got {self.orientation!r}")

    def contains(self, p) -> bool:
        p = _coerce_point(p)
        dx = np.subtract(p.x, self.center.x)
        if float(dx @ dx) >= self.radius**2:
            return False
        dt = p.t - self.center.t
        r2 = self.radius**2
        if self.orientation == "backward":
            return -r2 < dt <= 0.0
        return 0.0 < dt <= r2

    def time_interval(self) -> tuple[float, float]:
        """Half-open time interval (a, b] covered by the cylinder."""
        t0 = self.center.t
        if self.orientation == "backward":
            return (t0 - self.radius**2, t0)
        return (t0, t0 + self.radius**2)


@dataclass(frozen=True)
class KBox:
    """The calibrated box K_r(x,t) = [x +- r/(9 sqrt n)]^n x (t, t + r^2/(81 n)].

    Closed in space, half-open (bottom excluded, top included) in time.
    """

    center: ParabolicPoint
    r: float

    def __post_init__(self):
        object.__setattr__(self, "center", _coerce_point(self.center))
        if self.r <= 0:
            raise GridError(f"K-box scale must be positive, got {self.r}")

    @property
    def half_width(self) -> float:
        return self.r / (9.0 * math.sqrt(self.center.n))

    @property
    def height(self) -> float:
        return self.r**2 / (81.0 * self.center.n)

    def contains(self, p) -> bool:
        p = _coerce_point(p)
        w = self.half_width
        for a, b in zip(p.x, self.center.x):
            if abs(a - b) > w:
                return False
        dt = p.t - self.center.t
        return 0.0 < dt <= self.height


class MeshSpec:
    """Mesh over (open box) x (0, T] drawn from the lattice hZ^n x h^2 Z.

    Parameters
    ----------
    h : float
        Spatial step; the time step is tau = h^2.
    bounds : sequence of (lo, hi)
        The spatial domain, an axis-aligned open box.
    T : float
        Final time.  Rounded down to a multiple of h^2 if it is not one.
    N : int
        Stencil reach: directions satisfy 0 < |y| < N*h, and nodes within
        parabolic distance N*h of the parabolic boundary form the boundary band.
    """

    def __init__(self, h: float, bounds: Sequence[Sequence[float]], T: float, N: int = 2):
        h = float(h)
        T = float(T)
        if h <= 0:
            raise GridError(f"h must be positive, got {h}")
        if int(N) != N or N < 2:
            raise GridError(f"N must be an integer >= 2, got {N}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if not bounds:
            raise GridError("bounds must be non-empty")
        for lo, hi in bounds:
            if not hi > lo:
                raise GridError(f"invalid bounds ({lo}, {hi})")
        min_side = min(hi - lo for lo, hi in bounds)
        if not N * h < min_side:
            raise GridError(
                f"stencil reach N*h = {N * h} must be smaller than the smallest "
                f"domain side {min_side}"
            )
        self.h = h
        self.tau = h * h
        self.bounds = bounds
        self.N = int(N)
        self.n = len(bounds)
        # Global index ranges: k with lo < k*h < hi, and time levels 1..levels.
        self.k_min = tuple(int(math.floor(lo / h + _FP_SLACK)) + 1 for lo, _ in bounds)
        self.k_max = tuple(int(math.ceil(hi / h - _FP_SLACK)) - 1 for _, hi in bounds)
        for (lo, hi), klo, khi in zip(bounds, self.k_min, self.k_max):
            if khi < klo:
                raise GridError(f"no lattice nodes inside ({lo}, {hi}) at h={h}")
        self.levels = int(math.floor(T / self.tau + _FP_SLACK))
        if self.levels < 1:
            raise GridError(f"T={T} admits no time level at tau={self.tau}")
        self.T = self.levels * self.tau  # effective final time
        self.T_requested = T
        self.spatial_shape = tuple(khi - klo + 1 for klo, khi in zip(self.k_min, self.k_max))
        self.shape = (self.levels,) + self.spatial_shape
        self._classification = None

    # -- coordinates ---------------------------------------------------------

    def axis_coords(self, axis: int) -> np.ndarray:
        """Positions k*h of the in-domain lattice columns along one axis."""
        return self.h * np.arange(self.k_min[axis], self.k_max[axis] + 1)

    def times(self) -> np.ndarray:
        """Time levels m*h^2, m = 1..levels."""
        return self.tau * np.arange(1, self.levels + 1)

    def node_point(self, index: Sequence[int]) -> ParabolicPoint:
        index = tuple(int(i) for i in index)
        if len(index) != self.n + 1:
            raise GridError(f"index must have {self.n + 1} entries, got {index}")
        return ParabolicPoint(tuple(k * self.h for k in index[:-1]), index[-1] * self.tau)

    def contains_index(self, index: Sequence[int]) -> bool:
        index = tuple(int(i) for i in index)
        if len(index) != self.n + 1:
            return False
        for k, klo, khi in zip(index[:-1], self.k_min, self.k_max):
            if not klo <= k <= khi:
                return False
        return 1 <= index[-1] <= self.levels

    def offset(self, index: Sequence[int]) -> tuple[int, ...]:
        """Array offset (time-major) of a global node index."""
        if not self.contains_index(index):
            raise GridError(f"node {tuple(index)} is not in the mesh")
        index = tuple(int(i) for i in index)
        return (index[-1] - 1,) + tuple(k - klo for k, klo in zip(index[:-1], self.k_min))

    def index_from_offset(self, offset: Sequence[int]) -> tuple[int, ...]:
        offset = tuple(int(i) for i in offset)
        return tuple(o + klo for o, klo in zip(offset[1:], self.k_min)) + (offset[0] + 1,)

    def node_indices(self) -> Iterator[tuple[int, ...]]:
        """Iterate all node indices (k_1..k_n, m), time-major."""
        for off in np.ndindex(self.shape):
            yield self.index_from_offset(off)

    def node_count(self) -> int:
        return int(np.prod(self.shape))

    # -- boundary distances ---------------------------------------------------

    def lateral_distance(self) -> np.ndarray:
        """Euclidean distance of each spatial column to the box boundary."""
        per_axis = []
        for a in range(self.n):
            xs = self.axis_coords(a)
            lo, hi = self.bounds[a]
            per_axis.append(np.minimum(xs - lo, hi - xs))
        grids = np.meshgrid(*per_axis, indexing="ij")
        return np.minimum.reduce(grids)

    def parabolic_boundary_distance(self) -> np.ndarray:
        """Parabolic distance d(p, parabolic boundary), shape (levels, *spatial)."""
        lat = self.lateral_distance()
        t = self.times().reshape((-1,) + (1,) * self.n)
        return np.minimum(np.sqrt(t), lat)

    def euclidean_boundary_distance(self) -> np.ndarray:
        """Euclidean distance d_e(p, parabolic boundary), shape (levels, *spatial)."""
        lat = self.lateral_distance()
        t = self.times().reshape((-1,) + (1,) * self.n)
        return np.minimum(t, lat)

    def parabolic_diameter(self) -> float:
        """sup of the parabolic distance over the closed space-time domain."""
        diag2 = sum((hi - lo) ** 2 for lo, hi in self.bounds)
        return math.sqrt(diag2 + self.T)

    def classification(self) -> "MeshClassification":
        """Cached interior/boundary masks (see classify_mesh_points)."""
        if self._classification is None:
            self._classification = classify_mesh_points(self)
        return self._classification

    # -- misc -----------------------------------------------------------------

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MeshSpec)
            and self.h == other.h
            and self.bounds == other.bounds
            and self.levels == other.levels
            and self.N == other.N
        )

    def __hash__(self):
        return hash((self.h, self.bounds, self.levels, self.N))

    def __repr__(self):
        return (
            f"MeshSpec(h={self.h}, bounds={self.bounds}, T={self.T}, N={self.N}, "
            f"shape={self.shape})"
        )


@dataclass(frozen=True)
class MeshClassification:
    """Boolean masks over the mesh array, time-major."""

    interior: np.ndarray
    boundary: np.ndarray


def classify_mesh_points(spec: MeshSpec) -> MeshClassification:
    """Split mesh nodes into the interior set and the boundary band.

    A node is interior iff its parabolic distance to the parabolic boundary of
    the space-time domain is >= N*h; equivalently t >= (N*h)^2 and the lateral
    distance to the box boundary is >= N*h.  Everything else is boundary band.
    """
    lat = spec.lateral_distance()
    slack = _FP_SLACK * spec.h
    lat_ok = lat >= spec.N * spec.h - slack
    m = np.arange(1, spec.levels + 1).reshape((-1,) + (1,) * spec.n)
    time_ok = m >= spec.N**2  # t = m*h^2 >= (N*h)^2, exact in integers
    interior = np.logical_and(time_ok, lat_ok)
    return MeshClassification(interior=interior, boundary=~interior)


def cylinder_nodes(spec: MeshSpec, region: Cylinder | KBox) -> list[tuple[int, ...]]:
    """Mesh node indices lying inside a cylinder or K-box.

    The containment convention is the region's own: open spatial ball /
    closed spatial box, half-open time interval.
    """
    if isinstance(region, Cylinder):
        half = region.radius
        a, b = region.time_interval()
    elif isinstance(region, KBox):
        half = region.half_width
        a, b = region.center.t, region.center.t + region.height
    else:
        raise GridError(f"unsupported region type {type(region).__name__}")
    if region.center.n != spec.n:
        raise GridError(f"region dimension {region.center.n} != mesh dimension {spec.n}")

    h, tau = spec.h, spec.tau
    slack = _FP_SLACK * h
    # Candidate index window (then exact filtering).
    k_ranges = []
    for a_ax in range(spec.n):
        c = region.center.x[a_ax]
        klo = max(spec.k_min[a_ax], int(math.ceil((c - half - slack) / h)))
        khi = min(spec.k_max[a_ax], int(math.floor((c + half + slack) / h)))
        if khi < klo:
            return []
        k_ranges.append(np.arange(klo, khi + 1))
    m_lo = max(1, int(math.floor(a / tau + _FP_SLACK)) + 1)  # m*tau > a, bottom-exact out
    m_hi = min(spec.levels, int(math.floor(b / tau + _FP_SLACK)))  # m*tau <= b
    if m_hi < m_lo:
        return []

    grids = np.meshgrid(*k_ranges, indexing="ij")
    pos = [g * h for g in grids]
    if isinstance(region, Cylinder):
        d2 = sum((p - c) ** 2 for p, c in zip(pos, region.center.x))
        # Open ball; the slack keeps nodes exactly at distance r out even
        # when the squared distance lands a few ulps below r^2.
        keep = d2 < half**2 - slack * half
    else:
        keep = np.ones_like(grids[0], dtype=bool)
        for p, c in zip(pos, region.center.x):
            keep &= np.abs(p - c) <= half + slack
    spatial = [tuple(int(g[tuple(idx)]) for g in grids) for idx in np.argwhere(keep)]

    out = []
    for m in range(m_lo, m_hi + 1):
        out.extend(ks + (m,) for ks in spatial)
    return out


class MeshFunction:
    """Real-valued function on the nodes of a mesh, stored time-major.

    ``values[m-1, k_1-k_min_1, ..., k_n-k_min_n]`` holds the value at node
    ``(k_1, ..., k_n, m)``.
    """

    def __init__(self, spec: MeshSpec, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != spec.shape:
            raise GridError(f"values shape {values.shape} != mesh shape {spec.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("mesh function values must be finite")
        self.spec = spec
        self.values = values

    @classmethod
    def from_callable(cls, spec: MeshSpec, f: Callable) -> "MeshFunction":
        """Sample ``f(x, t)`` (x an n-vector) on every node."""
        axes = [spec.axis_coords(a) for a in range(spec.n)]
        grids = np.meshgrid(spec.times(), *axes, indexing="ij")
        t = grids[0]
        x = np.stack(grids[1:], axis=-1)
        vals = np.asarray(f(x, t), dtype=float)
        if vals.shape != spec.shape:
            vals = np.broadcast_to(vals, spec.shape).copy()
        return cls(spec, vals)

    def value(self, index: Sequence[int]) -> float:
        return float(self.values[self.spec.offset(index)])

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def copy(self) -> "MeshFunction":
        return MeshFunction(self.spec, self.values.copy())

    # -- serialization --------------------------------------------------------
    #
    # Text format: one header line "n h N lo_1 hi_1 ... lo_n hi_n T", then one
    # line "k_1 ... k_n m value" per node.  Floats are round-trip reprs so a
    # write/read cycle is exact.

    def write_text(self, path) -> None:
        spec = self.spec
        head = [str(spec.n), repr(spec.h), str(spec.N)]
        for lo, hi in spec.bounds:
            head += [repr(lo), repr(hi)]
        head.append(repr(spec.T))
        lines = [" ".join(head)]
        for idx in spec.node_indices():
            lines.append(" ".join(map(str, idx)) + " " + repr(self.value(idx)))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read_text(cls, path) -> "MeshFunction":
        with open(path) as fh:
            raw = [ln.strip() for ln in fh if ln.strip()]
        if not raw:
            raise GridError(f"{path}: empty mesh-function file")
        head = raw[0].split()
        try:
            n = int(head[0])
            h = float(head[1])
            N = int(head[2])
            if len(head) != 3 + 2 * n + 1:
                raise IndexError
            bounds = [(float(head[3 + 2 * a]), float(head[4 + 2 * a])) for a in range(n)]
            T = float(head[3 + 2 * n])
        except (IndexError, ValueError) as exc:
            raise GridError(f"{path}: malformed header {raw[0]!r}") from exc
        spec = MeshSpec(h, bounds, T, N)
        vals = np.full(spec.shape, np.nan)
        if len(raw) - 1 != spec.node_count():
            raise GridError(
                f"{path}: expected {spec.node_count()} node lines, got {len(raw) - 1}"
            )
        for ln in raw[1:]:
            parts = ln.split()
            if len(parts) != n + 2:
                raise GridError(f"{path}: malformed node line {ln!r}")
            idx = tuple(int(p) for p in parts[:-1])
            if not spec.contains_index(idx):
                raise GridError(f"{path}: node {idx} outside the declared mesh")
            vals[spec.offset(idx)] = float(parts[-1])
        if np.isnan(vals).any():
            raise GridError(f"{path}: some mesh nodes missing from file")
        return cls(spec, vals)

    def to_dict(self) -> dict:
        """Structured export mirroring the text format."""
        return {
            "n": self.spec.n,
            "h": self.spec.h,
            "N": self.spec.N,
            "bounds": [list(b) for b in self.spec.bounds],
            "T": self.spec.T,
            "nodes": [
                {"index": list(idx), "value": self.value(idx)}
                for idx in self.spec.node_indices()
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MeshFunction":
        spec = MeshSpec(payload["h"], payload["bounds"], payload["T"], payload["N"])
        vals = np.full(spec.shape, np.nan)
        for node in payload["nodes"]:
            vals[spec.offset(tuple(node["index"]))] = float(node["value"])
        if np.isnan(vals).any():
            raise GridError("structured payload misses mesh nodes")
        return cls(spec, vals)


def _pair_max_ratio(pts: np.ndarray, vals: np.ndarray, eta: float, block: int = 2048) -> float:
    """max over node pairs of |u(p)-u(q)| / d(p,q)^eta, blockwise O(N^2)."""
    best = 0.0
    npts = pts.shape[0]
    for i0 in range(0, npts, block):
        P = pts[i0 : i0 + block]
        V = vals[i0 : i0 + block]
        for j0 in range(i0, npts, block):
            Q = pts[j0 : j0 + block]
            W = vals[j0 : j0 + block]
            dx2 = ((P[:, None, :-1] - Q[None, :, :-1]) ** 2).sum(axis=-1)
            d = np.sqrt(dx2 + np.abs(P[:, None, -1] - Q[None, :, -1]))
            dv = np.abs(V[:, None] - W[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(d > 0, dv / d**eta, 0.0)
            m = float(r.max(initial=0.0))
            if m > best:
                best = m
    return best


def discrete_holder_norm(
    u: MeshFunction,
    eta: float,
    region: np.ndarray | None = None,
    pairs: str = "all",
) -> dict:
    """Discrete parabolic C^{0,eta} seminorm/norm of a mesh function.

    Parameters
    ----------
    u : MeshFunction
    eta : float in (0, 1]
    region : optional boolean mask over ``u.values`` restricting the node set.
    pairs : 'all' for the full seminorm, 'time' to compare only nodes sharing
        a spatial column (the time-direction seminorm |u(x,t)-u(x,s)|/|t-s|^eta).

    Returns
    -------
    dict with keys ``seminorm``, ``sup`` and ``norm`` (= seminorm + sup).
    """
    if not 0 < eta <= 1:
        raise GridError(f"eta must lie in (0, 1], got {eta}")
    spec = u.spec
    if region is None:
        region = np.ones(spec.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != spec.shape:
        raise GridError("region mask shape mismatch")
    if not region.any():
        raise GridError("empty region")
    sup = float(np.max(np.abs(u.values[region])))

    if pairs == "time":
        # Pairs share the spatial column; d = |t-s|^(1/2).
        best = 0.0
        times = spec.times()
        vals = u.values.reshape(spec.levels, -1)
        mask = region.reshape(spec.levels, -1)
        for i in range(spec.levels):
            for j in range(i + 1, spec.levels):
                both = mask[i] & mask[j]
                if not both.any():
                    continue
                dv = np.abs(vals[i, both] - vals[j, both])
                d = (times[j] - times[i]) ** (eta / 2.0)
                best = max(best, float(dv.max()) / d)
        semi = best
    elif pairs == "all":
        offs = np.argwhere(region)
        pts = np.empty((offs.shape[0], spec.n + 1))
        for a in range(spec.n):
            pts[:, a] = (offs[:, a + 1] + spec.k_min[a]) * spec.h
        pts[:, -1] = offs[:, 0] * spec.tau + spec.tau
        vals = u.values[region]
        semi = _pair_max_ratio(pts, vals, eta)
    else:
        raise GridError(f"pairs must be 'all' or 'time', got {pairs!r}")
    return {"seminorm": semi, "sup": sup, "norm": semi + sup}
