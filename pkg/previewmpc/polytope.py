import logging
import typing as tp
from pathlib import Path

import numpy as np

from previewmpc import types
from previewmpc.errors import ConfigError, DimensionError
from previewmpc.solvers import LpProblem, QpProblem, Status, solve_lp, solve_qp
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

SET_TOL = 1e-9
ZERO_ROW_TOL = 1e-12
DUPLICATE_TOL = 1e-12


class HPolytope(TreeObject):
    """
    Convex set `{x : Hx ≤ g}` in halfspace representation.

    Rows are normalized to unit Euclidean norm on construction so the absolute
    set tolerance `1e-9` is meaningful on support values. All-zero rows are
    dropped when `g ≥ 0` and make the set empty otherwise. Emptiness is decided
    by an LP feasibility solve and stored in the `empty` flag, empty sets are
    regular values.
    """

    H: types.Matrix[np.ndarray]
    g: types.Vector[np.ndarray]
    dim: int
    empty: bool

    def __init__(self, H: tp.Any, g: tp.Any, dim: tp.Optional[int] = None):
        """
        Arguments:
            H: p×d constraint matrix.
            g: p-vector of right hand sides.
            dim: ambient dimension, required only when `p = 0`.
        """
        super().__init__()

        g = types.as_vector(g, "g")
        H = np.asarray(H, dtype=np.float64)

        if H.size == 0:
            if dim is None:
                raise DimensionError(
                    "'dim' is required to build a polytope without constraints"
                )
            H = H.reshape(g.shape[0], dim)
        elif H.ndim == 1 and dim is not None:
            H = H.reshape(g.shape[0], dim)

        if H.ndim != 2 or H.shape[0] != g.shape[0]:
            raise DimensionError(
                f"'H' must be a {g.shape[0]}×d matrix to match 'g', got shape {H.shape}"
            )
        if dim is not None and H.shape[1] != dim:
            raise DimensionError(f"'H' must have {dim} columns, got {H.shape[1]}")

        norms = np.linalg.norm(H, axis=1)
        zero = norms <= ZERO_ROW_TOL
        infeasible_row = bool(np.any(g[zero] < -SET_TOL))

        H = H[~zero] / norms[~zero, None]
        g = g[~zero] / norms[~zero]

        self.H = H
        self.g = g
        self.dim = H.shape[1]
        self.empty = infeasible_row or not _is_feasible(H, g)

    # ------------------------
    # constructors
    # ------------------------
    @classmethod
    def box(cls, lo: tp.Any, hi: tp.Any) -> "HPolytope":
        """Axis aligned box `lo ≤ x ≤ hi`."""
        lo = types.as_vector(lo, "lo")
        hi = types.as_vector(hi, "hi", size=lo.shape[0])
        eye = np.eye(lo.shape[0])

        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def whole_space(cls, dim: int) -> "HPolytope":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    @classmethod
    def from_config(
        cls, config: tp.Mapping[str, tp.Any], name: str = "set"
    ) -> "HPolytope":
        """
        Builds a polytope from either `{"H": [[...]], "g": [...]}` or
        `{"box": {"lo": [...], "hi": [...]}}`.
        """
        if not isinstance(config, tp.Mapping):
            raise ConfigError(f"'{name}' must be a mapping, got {type(config).__name__}")

        if "box" in config:
            box = config["box"]
            if not isinstance(box, tp.Mapping) or "lo" not in box or "hi" not in box:
                raise ConfigError(f"'{name}.box' must define 'lo' and 'hi'")
            return cls.box(box["lo"], box["hi"])

        if "H" in config and "g" in config:
            return cls(config["H"], config["g"], dim=config.get("dim", None))

        raise ConfigError(f"'{name}' must define either 'H' and 'g' or 'box'")

    def to_config(self) -> tp.Dict[str, tp.Any]:
        return {"H": self.H.tolist(), "g": self.g.tolist()}

    def replace(self, **fields: tp.Any) -> "HPolytope":
        """Rebuilds the polytope with new `H` and/or `g`, rows are normalized and
        `empty` is recomputed."""
        unknown = sorted(set(fields) - {"H", "g"})
        if unknown:
            raise AttributeError(f"HPolytope fields {unknown} cannot be replaced, only 'H' and 'g'")

        return HPolytope(fields.get("H", self.H), fields.get("g", self.g), dim=self.dim)

    # ------------------------
    # queries
    # ------------------------
    @property
    def n_constraints(self) -> int:
        return self.g.shape[0]

    def support(self, direction: tp.Any) -> float:
        """
        Returns `max_{x ∈ set} directionᵀx`, `+inf` along unbounded directions
        and `-inf` for empty sets.
        """
        return support(self, direction).value

    def contains_point(self, x: tp.Any, tol: float = SET_TOL) -> bool:
        x = types.as_vector(x, "x", size=self.dim)
        return not self.empty and bool(np.all(self.H @ x <= self.g + tol))

    def violation(self, x: tp.Any) -> float:
        """Largest constraint violation `max(Hx - g)` of a point, negative inside."""
        x = types.as_vector(x, "x", size=self.dim)
        return float((self.H @ x - self.g).max(initial=-np.inf))

    def bounding_box(self) -> tp.Tuple[np.ndarray, np.ndarray]:
        """Returns `(lo, hi)` from the support values along `±eᵢ`."""
        eye = np.eye(self.dim)
        hi = np.array([self.support(e) for e in eye])
        lo = np.array([-self.support(-e) for e in eye])
        return lo, hi

    def boundary_points(self, resolution_deg: float = 1.0) -> np.ndarray:
        """
        Samples the boundary of a bounded 2-D set by a ray sweep around its
        Chebyshev center.

        Arguments:
            resolution_deg: angle between consecutive rays.

        Returns:
            An array of shape `(n_rays, 2)`.
        """
        if self.dim != 2:
            raise DimensionError(f"boundary sweep needs a 2-D set, got dim {self.dim}")
        if self.empty:
            return np.zeros((0, 2))

        center = chebyshev_center(self)
        angles = np.deg2rad(np.arange(0.0, 360.0, resolution_deg))
        rays = np.stack([np.cos(angles), np.sin(angles)], axis=1)

        slack = self.g - self.H @ center
        points = []

        for ray in rays:
            rate = self.H @ ray
            blocking = rate > ZERO_ROW_TOL

            if not np.any(blocking):
                raise ConfigError("boundary sweep needs a bounded set")

            radius = np.min(slack[blocking] / rate[blocking])
            points.append(center + radius * ray)

        return np.asarray(points)

    def write_boundary_csv(self, path: tp.Union[str, Path], resolution_deg: float = 1.0) -> Path:
        """Writes `boundary_points` as a `x_1,x_2` CSV file for plotting."""
        path = Path(path)
        points = self.boundary_points(resolution_deg)

        np.savetxt(path, points, delimiter=",", header="x_1,x_2", comments="", fmt="%.12g")

        return path


class SupportResult(TreeObject):
    point: types.Vector[np.ndarray]

    value: float
    status: Status
    kkt_residual: float

    def __init__(self, value: float, point: np.ndarray, status: Status, kkt_residual: float):
        super().__init__()
        self.value = value
        self.point = point
        self.status = status
        self.kkt_residual = kkt_residual


def support(set: HPolytope, direction: tp.Any) -> SupportResult:
    """
    Evaluates the support function `max_{x ∈ set} directionᵀx` with the LP
    kernel.

    Arguments:
        set: the polytope.
        direction: a d-vector.

    Returns:
        A `SupportResult` holding the value, the maximizer and the LP status.
        Unbounded directions give `+inf` and `UNBOUNDED`, empty sets give `-inf`
        and `INFEASIBLE`.
    """
    direction = types.as_vector(direction, "direction", size=set.dim)

    if set.empty:
        return SupportResult(-np.inf, np.full(set.dim, np.nan), Status.INFEASIBLE, np.inf)

    result = solve_lp(LpProblem(direction, set.H, set.g))

    return SupportResult(
        value=result.value,
        point=result.x,
        status=result.status,
        kkt_residual=result.kkt_residual,
    )


def pontryagin_difference(
    set: HPolytope, sub: HPolytope, map: tp.Optional[tp.Any] = None
) -> HPolytope:
    """
    Computes `set ⊖ map·sub = {x : x + map·w ∈ set for all w ∈ sub}`.

    Every row is tightened by the support of `sub` along `mapᵀHᵢᵀ`, the
    result is not reduced and may be empty.

    Arguments:
        set: the d-dimensional set to erode.
        sub: the e-dimensional eroding set, must be nonempty.
        map: d×e matrix, identity by default.
    """
    if sub.empty:
        raise ConfigError("the eroding set of a Pontryagin difference must be nonempty")

    if map is None:
        map = np.eye(set.dim)

    map = types.as_matrix(map, "map", shape=(set.dim, sub.dim))
    directions = set.H @ map

    tightening = np.array([sub.support(direction) for direction in directions])

    if np.any(~np.isfinite(tightening)):
        # an unbounded eroding set swallows every bounded direction
        return HPolytope(np.zeros((1, set.dim)), np.array([-1.0]), dim=set.dim)

    return HPolytope(set.H, set.g - tightening, dim=set.dim)


def intersect(a: HPolytope, b: HPolytope) -> HPolytope:
    if a.dim != b.dim:
        raise DimensionError(f"cannot intersect sets of dimension {a.dim} and {b.dim}")

    stacked = HPolytope(np.vstack([a.H, b.H]), np.concatenate([a.g, b.g]), dim=a.dim)

    return remove_redundancy(stacked)


def affine_preimage(set: HPolytope, M: tp.Any) -> HPolytope:
    """
    Returns `{x : Mx ∈ set} = {x : (HM)x ≤ g}` for a k×d matrix `M`, the
    constraints are not reduced.
    """
    M = np.asarray(M, dtype=np.float64)

    if M.ndim != 2 or M.shape[0] != set.dim:
        raise DimensionError(f"'M' must have {set.dim} rows, got shape {M.shape}")

    return HPolytope(set.H @ M, set.g, dim=M.shape[1])


def remove_redundancy(set: HPolytope) -> HPolytope:
    """
    Drops every constraint implied by the remaining ones.

    Duplicated rows are merged first, keeping the tightest right hand side.
    Each remaining row `i` is then tested with an LP over the currently kept
    rows without `i`; it is redundant when that support along `Hᵢ` does not
    exceed `gᵢ + 1e-9`. Empty sets are returned unchanged.
    """
    if set.empty or set.n_constraints == 0:
        return set

    H, g = _merge_duplicates(set.H, set.g)
    keep = np.ones(g.shape[0], dtype=bool)

    for i in range(g.shape[0]):
        others = keep.copy()
        others[i] = False

        if not np.any(others):
            continue

        result = solve_lp(LpProblem(H[i], H[others], g[others]))

        if result.status == Status.OPTIMAL and result.value <= g[i] + SET_TOL:
            keep[i] = False

    logger.debug("redundancy removal kept %d of %d rows", int(keep.sum()), set.n_constraints)

    return HPolytope(H[keep], g[keep], dim=set.dim)


def contains(a: HPolytope, b: HPolytope) -> bool:
    """
    Returns `True` iff `b ⊆ a`, checked row by row as
    `support(b, Hᵢ) ≤ gᵢ + 1e-9` for every row of `a`.
    """
    if a.dim != b.dim:
        raise DimensionError(f"cannot compare sets of dimension {a.dim} and {b.dim}")

    if b.empty:
        return True
    if a.empty:
        return False

    return all(b.support(h) <= gi + SET_TOL for h, gi in zip(a.H, a.g))


def is_bounded(set: HPolytope) -> bool:
    """Bounded iff the support is finite along `±eᵢ` for every axis."""
    if set.empty:
        return True

    lo, hi = set.bounding_box()
    return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))


def chebyshev_center(set: HPolytope) -> np.ndarray:
    """Center of the largest ball inside the set, `max r s.t. Hx + r ≤ g`."""
    d = set.dim
    c = np.concatenate([np.zeros(d), [1.0]])
    H = np.vstack(
        [
            np.hstack([set.H, np.ones((set.n_constraints, 1))]),
            np.concatenate([np.zeros(d), [-1.0]]),
        ]
    )
    g = np.concatenate([set.g, [0.0]])

    result = solve_lp(LpProblem(c, H, g))

    if result.status != Status.OPTIMAL:
        raise ConfigError(f"no Chebyshev center, LP status '{result.status}'")

    return result.x[:d]


def project_point(set: HPolytope, x: tp.Any) -> np.ndarray:
    """Euclidean projection of `x` onto a nonempty set, solved as a QP."""
    x = types.as_vector(x, "x", size=set.dim)

    if set.empty:
        raise ConfigError("cannot project onto an empty set")

    if set.contains_point(x, tol=0.0):
        return x

    result = solve_qp(QpProblem(np.eye(set.dim), -x, set.H, set.g))

    if result.status != Status.OPTIMAL:
        raise ConfigError(f"projection failed with status '{result.status}'")

    return result.u


# --------------------------------------------------
# utils
# --------------------------------------------------


def _is_feasible(H: np.ndarray, g: np.ndarray) -> bool:
    if g.shape[0] == 0:
        return True

    result = solve_lp(LpProblem(np.zeros(H.shape[1]), H, g))
    return result.status == Status.OPTIMAL


def _merge_duplicates(H: np.ndarray, g: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
    rows: tp.List[int] = []

    for i in range(g.shape[0]):
        for k, j in enumerate(rows):
            if np.abs(H[i] - H[j]).max() <= DUPLICATE_TOL:
                if g[i] < g[j]:
                    rows[k] = i
                break
        else:
            rows.append(i)

    index = np.asarray(rows, dtype=int)
    return H[index], g[index]
