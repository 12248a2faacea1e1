"""Small dense linear algebra used throughout the package.

Covers minimum-norm and ridge least squares, orthonormal subspace
bookkeeping, cofactor directions, and linear optimisation over a
Euclidean ball intersected with two-sided slabs ``lower <= g^T theta <= upper``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

SV_CUTOFF = 1e-10
MEMBERSHIP_TOL = 1e-8
DEDUP_TOL = 1e-10
_ORTHO_TOL = 1e-9


class Infeasible(RuntimeError):
    """Raised when a constraint set has no feasible point."""


def _as_2d(features, d: int | None = None) -> np.ndarray:
    arr = np.asarray(features, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, d if d is not None else (arr.shape[-1] if arr.ndim == 2 else 0))
    if arr.ndim != 2:
        raise ValueError(f"features must be a 2-d array, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def min_norm_lstsq(features, targets, sv_cutoff: float = SV_CUTOFF, weights=None) -> np.ndarray:
    """Return ``pinv(Phi^T W Phi) Phi^T W y``.

    Singular values of the Gram matrix below ``sv_cutoff * sigma_max`` are
    treated as zero. ``weights`` are nonnegative row multiplicities; passing
    integer counts is equivalent to repeating rows.
    """
    phi = _as_2d(features)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if phi.shape[0] != y.shape[0]:
        raise ValueError(f"{phi.shape[0]} feature rows but {y.shape[0]} targets")
    if phi.shape[0] < 1:
        raise ValueError("need at least one row")
    if sv_cutoff <= 0:
        raise ValueError("sv_cutoff must be positive")
    if weights is not None:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != y.shape[0] or np.any(w < 0):
            raise ValueError("weights must be nonnegative with one entry per row")
        root = np.sqrt(w)
        phi = phi * root[:, None]
        y = y * root
    # SVD of the (weighted) design: its squared singular values are those of the Gram matrix.
    u, s, vt = np.linalg.svd(phi, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(phi.shape[1])
    keep = s**2 > sv_cutoff * s[0] ** 2
    coef = (u[:, keep].T @ y) / s[keep]
    return vt[keep].T @ coef


def ridge_regression(features, targets, lam: float, d: int | None = None) -> np.ndarray:
    """Return ``(lam I + Phi^T Phi)^{-1} Phi^T y``; zero when there is no data."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    phi = _as_2d(features, d)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if phi.shape[0] != y.shape[0]:
        raise ValueError(f"{phi.shape[0]} feature rows but {y.shape[0]} targets")
    dim = phi.shape[1]
    gram = lam * np.eye(dim) + phi.T @ phi
    return np.linalg.solve(gram, phi.T @ y)


# ---------------------------------------------------------------------------
# Subspaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of R^d stored as an orthonormal basis (rows)."""

    basis: np.ndarray
    ambient_dim: int

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float).reshape(-1, self.ambient_dim)
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @classmethod
    def zero(cls, d: int) -> "Subspace":
        return cls(np.zeros((0, d)), d)

    @classmethod
    def full(cls, d: int) -> "Subspace":
        return cls(np.eye(d), d)


def orthonormal_basis(vectors, tol: float = MEMBERSHIP_TOL, d: int | None = None) -> Subspace:
    """Orthonormal basis of ``span(vectors)`` by modified Gram-Schmidt.

    A vector whose residual after projection is at most ``tol * max(1, |v|)``
    is considered dependent and dropped.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    vecs = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
    if d is None:
        if not vecs:
            raise ValueError("ambient dimension needed for an empty vector list")
        d = vecs[0].shape[0]
    basis: list[np.ndarray] = []
    for v in vecs:
        r = v.copy()
        for _ in range(2):  # re-orthogonalise once for stability
            for b in basis:
                r -= (b @ r) * b
        if np.linalg.norm(r) > tol * max(1.0, np.linalg.norm(v)):
            basis.append(r / np.linalg.norm(r))
    return Subspace(np.array(basis).reshape(-1, d), d)


def orthogonal_complement_basis(s: Subspace) -> Subspace:
    """Orthonormal basis of the orthogonal complement of ``s``."""
    d = s.ambient_dim
    k = s.dim
    if k == 0:
        return Subspace.full(d)
    if k == d:
        return Subspace.zero(d)
    # Left singular vectors beyond rank k span the complement.
    u, _, _ = np.linalg.svd(s.basis.T, full_matrices=True)
    comp = u[:, k:].T
    # Clean against s to remove round-off leakage.
    comp = comp - (comp @ s.basis.T) @ s.basis
    q, _ = np.linalg.qr(comp.T)
    return Subspace(q.T[: d - k], d)


def project_complement(s: Subspace, v) -> np.ndarray:
    """Component of ``v`` orthogonal to ``s``."""
    v = np.asarray(v, dtype=float)
    if s.dim == 0:
        return v.copy()
    out = v - (s.basis @ v) @ s.basis
    # Second pass keeps the result orthogonal to working precision.
    return out - (s.basis @ out) @ s.basis


def subspace_contains(s: Subspace, v, tol: float = MEMBERSHIP_TOL) -> bool:
    """True when ``|proj_perp(v)| <= tol * max(1, |v|)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.asarray(v, dtype=float)
    return bool(np.linalg.norm(project_complement(s, v)) <= tol * max(1.0, np.linalg.norm(v)))


def span_extend(s: Subspace, v, tol: float = MEMBERSHIP_TOL) -> Subspace:
    """Span of ``s`` together with ``v`` (unchanged when ``v`` is already inside)."""
    v = np.asarray(v, dtype=float)
    if subspace_contains(s, v, tol):
        return s
    r = project_complement(s, v)
    return Subspace(np.vstack([s.basis, r / np.linalg.norm(r)]), s.ambient_dim)


# ---------------------------------------------------------------------------
# Determinants
# ---------------------------------------------------------------------------


def cofactor_direction(W, i: int) -> np.ndarray:
    """Vector whose j-th entry is ``det(W with column i replaced by e_j)``.

    ``i`` is a zero-based column index. For any ``v``, the inner product with
    the result equals ``det(W with column i replaced by v)``.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    if W.shape != (d, d):
        raise ValueError("W must be square")
    if not 0 <= i < d:
        raise ValueError(f"column index {i} out of range for d={d}")
    out = np.empty(d)
    M = W.copy()
    for j in range(d):
        M[:, i] = 0.0
        M[j, i] = 1.0
        out[j] = np.linalg.det(M)
    return out


def hyperplane_normal(W, i: int, rank_tol: float = 1e-12) -> np.ndarray | None:
    """Unit vector along ``cofactor_direction(W, i)``, computed without determinants.

    Returns ``None`` when the columns other than ``i`` are (numerically)
    linearly dependent, i.e. the cofactor direction vanishes.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    if d == 1:
        return np.ones(1)
    others = np.delete(W, i, axis=1)
    u, s, _ = np.linalg.svd(others, full_matrices=True)
    if s[0] == 0.0 or s[-1] <= rank_tol * s[0]:
        return None
    n = u[:, -1]
    M = W.copy()
    M[:, i] = n
    sign, _ = np.linalg.slogdet(M)
    return n if sign >= 0 else -n


# ---------------------------------------------------------------------------
# Ball plus slabs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """``{theta : |theta| <= norm_bound, lower_k <= g_k^T theta <= upper_k}``.

    Instances are immutable; :meth:`intersect` returns a new set (or ``self``
    when nothing changes). LP results are memoised per instance.
    """

    dim: int
    norm_bound: float
    normals: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.norm_bound > 0:
            raise ValueError("norm_bound must be positive")
        g = np.zeros((0, self.dim)) if self.normals is None else np.asarray(self.normals, dtype=float).reshape(-1, self.dim)
        lo = np.zeros(0) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.zeros(0) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if not (g.shape[0] == lo.shape[0] == hi.shape[0]):
            raise ValueError("normals, lower and upper must have matching lengths")
        if np.any(lo > hi):
            raise Infeasible("a stored slab has lower > upper")
        for a in (g, lo, hi):
            a.setflags(write=False)
        object.__setattr__(self, "normals", g)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float, float]]:
        return [(self.normals[k], float(self.lower[k]), float(self.upper[k])) for k in range(len(self.lower))]

    def intersect(self, g, lower: float, upper: float, dedup_tol: float = DEDUP_TOL) -> "ConstraintSet":
        """Add ``lower <= g^T theta <= upper``, merging with a parallel stored slab."""
        g = np.asarray(g, dtype=float).reshape(self.dim)
        lower, upper = float(lower), float(upper)
        for k in range(self.normals.shape[0]):
            for sign in (1.0, -1.0):
                if np.max(np.abs(self.normals[k] - sign * g)) <= dedup_tol:
                    lo, hi = (lower, upper) if sign > 0 else (-upper, -lower)
                    new_lo = max(self.lower[k], lo)
                    new_hi = min(self.upper[k], hi)
                    if new_lo == self.lower[k] and new_hi == self.upper[k]:
                        return self
                    if new_lo > new_hi:
                        raise Infeasible(f"slab {k} became empty: [{new_lo}, {new_hi}]")
                    lo_arr = self.lower.copy()
                    hi_arr = self.upper.copy()
                    lo_arr[k], hi_arr[k] = new_lo, new_hi
                    return ConstraintSet(self.dim, self.norm_bound, self.normals, lo_arr, hi_arr)
        if lower > upper:
            raise Infeasible("new slab has lower > upper")
        return ConstraintSet(
            self.dim,
            self.norm_bound,
            np.vstack([self.normals, g]),
            np.append(self.lower, lower),
            np.append(self.upper, upper),
        )

    def contains(self, theta, slack: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        if np.linalg.norm(theta) > self.norm_bound + slack:
            return False
        v = self.normals @ theta
        return bool(np.all(v >= self.lower - slack) and np.all(v <= self.upper + slack))

    # -- structure -----------------------------------------------------------

    def _orthonormal(self) -> bool:
        """True when the slab normals are unit length and pairwise orthogonal."""
        key = ("ortho",)
        if key not in self._cache:
            g = self.normals
            ok = g.shape[0] <= self.dim and np.allclose(g @ g.T, np.eye(g.shape[0]), atol=_ORTHO_TOL, rtol=0)
            self._cache[key] = bool(ok)
        return self._cache[key]


def _clip_origin(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.clip(0.0, lo, hi)


def _lp_max_box(c: ConstraintSet, obj: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact LP when the slab normals are orthonormal.

    In slab coordinates ``y = G theta`` the region is a box times a ball and
    the maximiser is ``y(t) = clip(t c_G, lo, hi)``, ``theta_perp = t c_perp``
    for the largest ``t`` keeping the norm within the bound.
    """
    G, lo, hi, R = c.normals, c.lower, c.upper, c.norm_bound
    cg = G @ obj
    cperp = obj - G.T @ cg
    nperp2 = float(cperp @ cperp)
    y0 = _clip_origin(lo, hi)
    base2 = float(y0 @ y0)
    if base2 > R * R * (1 + 1e-12):
        raise Infeasible("slabs do not meet the ball")

    def norm2(t):
        y = np.clip(t * cg, lo, hi)
        return float(y @ y) + t * t * nperp2, y

    # Breakpoints where a coordinate enters or leaves its interval.
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.concatenate([lo / cg, hi / cg])
    bps = np.unique(bps[np.isfinite(bps) & (bps > 0)])
    if nperp2 == 0.0 and not np.any(cg != 0):
        return 0.0, G.T @ y0

    prev_t = 0.0
    for t_b in list(bps) + [np.inf]:
        if np.isfinite(t_b):
            n2, _ = norm2(t_b)
            if n2 < R * R:
                prev_t = t_b
                continue
        # Solution lies in (prev_t, t_b]; inside the segment norm^2 = alpha t^2 + beta.
        t_mid = prev_t + 1.0 if not np.isfinite(t_b) else 0.5 * (prev_t + t_b)
        y_mid = t_mid * cg
        free = (y_mid > lo) & (y_mid < hi)
        alpha = float(np.sum(cg[free] ** 2)) + nperp2
        y_fixed = np.clip(y_mid, lo, hi)
        beta = float(np.sum(y_fixed[~free] ** 2))
        if alpha <= 0.0:
            t = prev_t if np.isfinite(t_b) else np.inf
            if not np.isfinite(t):
                y = np.where(cg > 0, hi, np.where(cg < 0, lo, y0))
                theta = G.T @ y
                return float(cg @ y), theta
        else:
            t = np.sqrt(max(R * R - beta, 0.0) / alpha)
            if np.isfinite(t_b):
                t = min(max(t, prev_t), t_b)
        y = np.clip(t * cg, lo, hi)
        theta = G.T @ y + t * cperp
        return float(cg @ y) + t * nperp2, theta
    raise AssertionError("unreachable")


def _lp_max_general(c: ConstraintSet, obj: np.ndarray) -> tuple[float, np.ndarray]:
    G, lo, hi, R = c.normals, c.lower, c.upper, c.norm_bound
    cons = [{"type": "ineq", "fun": lambda th: R * R - th @ th, "jac": lambda th: -2 * th}]
    if G.shape[0]:
        cons.append({"type": "ineq", "fun": lambda th: G @ th - lo, "jac": lambda th: G})
        cons.append({"type": "ineq", "fun": lambda th: hi - G @ th, "jac": lambda th: -G})
    x0 = _feasible_point(c)
    res = minimize(
        lambda th: -obj @ th,
        x0,
        jac=lambda th: -obj,
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-13, "maxiter": 500},
    )
    theta = res.x
    if not c.contains(theta, slack=1e-7):
        raise Infeasible(f"general LP failed: {res.message}")
    return float(obj @ theta), theta


def _feasible_point(c: ConstraintSet) -> np.ndarray:
    """Minimum-norm point of the slabs (Dykstra's alternating projections)."""
    G, lo, hi = c.normals, c.lower, c.upper
    if G.shape[0] == 0:
        return np.zeros(c.dim)
    norms2 = np.einsum("ij,ij->i", G, G)
    x = np.zeros(c.dim)
    incr = np.zeros((G.shape[0], c.dim))
    for _ in range(10_000):
        x_old = x
        for k in range(G.shape[0]):
            z = x + incr[k]
            v = G[k] @ z
            tgt = min(max(v, lo[k]), hi[k])
            x_new = z + (tgt - v) / norms2[k] * G[k] if norms2[k] > 0 else z
            incr[k] = z - x_new
            x = x_new
        if np.max(np.abs(x - x_old)) < 1e-13:
            break
    if np.linalg.norm(x) > c.norm_bound * (1 + 1e-9) or not c.contains(x, slack=1e-7):
        raise Infeasible("slabs do not meet the ball")
    return x


def lp_max_linear(c: ConstraintSet, objective) -> tuple[float, np.ndarray]:
    """Maximise ``objective^T theta`` over ``c``. Returns ``(value, argmax)``.

    Exact (closed form) when the slab normals are orthonormal; otherwise an
    SLSQP solve seeded from a Dykstra feasible point.
    """
    obj = np.asarray(objective, dtype=float).reshape(c.dim)
    key = ("max", obj.tobytes())
    hit = c._cache.get(key)
    if hit is not None:
        return hit
    out = _lp_max_box(c, obj) if c._orthonormal() else _lp_max_general(c, obj)
    c._cache[key] = out
    return out


def lp_min_linear(c: ConstraintSet, objective) -> float:
    """Minimum of ``objective^T theta`` over ``c``."""
    return -lp_max_linear(c, -np.asarray(objective, dtype=float))[0]


def _minmax_structure(c: ConstraintSet, objs: np.ndarray):
    """Map each objective to (coordinate, scale) in an orthonormal frame.

    Coordinates ``0..k-1`` are the slab normals; further coordinates are new
    orthonormal directions. Returns ``None`` if the objectives are not
    parallel-or-orthogonal to the slabs and to each other.
    """
    G = c.normals
    extra: list[np.ndarray] = []
    coords = []
    for phi in objs:
        nrm = np.linalg.norm(phi)
        if nrm == 0.0:
            coords.append((-1, 0.0))
            continue
        proj = G @ phi
        big = np.flatnonzero(np.abs(proj) > _ORTHO_TOL * max(1.0, nrm))
        if big.size == 1 and abs(abs(proj[big[0]]) - nrm) <= _ORTHO_TOL * max(1.0, nrm):
            coords.append((int(big[0]), float(proj[big[0]])))
            continue
        if big.size:
            return None
        u = phi / nrm
        for j, e in enumerate(extra):
            ip = float(e @ u)
            if abs(abs(ip) - 1.0) <= _ORTHO_TOL:
                coords.append((G.shape[0] + j, nrm * np.sign(ip)))
                break
            if abs(ip) > _ORTHO_TOL:
                return None
        else:
            extra.append(u)
            coords.append((G.shape[0] + len(extra) - 1, nrm))
    return coords, len(extra)


def lp_min_max(c: ConstraintSet, objectives) -> float:
    """``min over theta in c of max_k objectives[k]^T theta``.

    Solved by bisection on the level ``t``: the level is attainable iff the
    minimum-norm point of the slabs tightened by ``objectives @ theta <= t`` lies
    in the ball. Falls back to SLSQP when the geometry is not axis-aligned.
    """
    objs = np.asarray(objectives, dtype=float).reshape(-1, c.dim)
    key = ("minmax", objs.tobytes())
    hit = c._cache.get(key)
    if hit is not None:
        return hit
    struct = _minmax_structure(c, objs) if c._orthonormal() else None
    if struct is None:
        val = _min_max_general(c, objs)
    else:
        val = _min_max_box(c, objs, *struct)
    c._cache[key] = val
    return val


def _min_max_box(c: ConstraintSet, objs, coords, n_extra) -> float:
    lo0 = np.concatenate([c.lower, np.full(n_extra, -np.inf)])
    hi0 = np.concatenate([c.upper, np.full(n_extra, np.inf)])
    R2 = c.norm_bound**2
    if float(np.sum(_clip_origin(c.lower, c.upper) ** 2)) > R2 * (1 + 1e-12):
        raise Infeasible("slabs do not meet the ball")
    idx = np.array([j for j, _ in coords])
    scale = np.array([s for _, s in coords])
    has_zero = bool(np.any(idx < 0))
    pos = (idx >= 0) & (scale > 0)
    neg = (idx >= 0) & (scale < 0)

    def feasible(t: float) -> bool:
        if has_zero and t < 0:
            return False
        lo = lo0.copy()
        hi = hi0.copy()
        if np.any(pos):
            np.minimum.at(hi, idx[pos], t / scale[pos])
        if np.any(neg):
            np.maximum.at(lo, idx[neg], t / scale[neg])
        if np.any(lo > hi):
            return False
        return float(np.sum(np.clip(0.0, lo, hi) ** 2)) <= R2

    bound = c.norm_bound * float(np.max(np.linalg.norm(objs, axis=1))) if len(objs) else 0.0
    lo_t, hi_t = -bound - 1.0, bound + 1.0
    if not feasible(hi_t):
        raise Infeasible("min-max level search found no feasible level")
    for _ in range(200):
        mid = 0.5 * (lo_t + hi_t)
        if mid == lo_t or mid == hi_t:
            break
        if feasible(mid):
            hi_t = mid
        else:
            lo_t = mid
    return hi_t


def _min_max_general(c: ConstraintSet, objs: np.ndarray) -> float:
    G, lo, hi, R = c.normals, c.lower, c.upper, c.norm_bound
    d = c.dim
    x0 = np.append(_feasible_point(c), 0.0)
    x0[-1] = float(np.max(objs @ x0[:d])) if len(objs) else 0.0
    cons = [
        {"type": "ineq", "fun": lambda x: R * R - x[:d] @ x[:d]},
        {"type": "ineq", "fun": lambda x: x[-1] - objs @ x[:d]},
    ]
    if G.shape[0]:
        cons.append({"type": "ineq", "fun": lambda x: G @ x[:d] - lo})
        cons.append({"type": "ineq", "fun": lambda x: hi - G @ x[:d]})
    res = minimize(lambda x: x[-1], x0, jac=lambda x: np.eye(d + 1)[-1], constraints=cons, method="SLSQP",
                   options={"ftol": 1e-13, "maxiter": 500})
    theta = res.x[:d]
    if not c.contains(theta, slack=1e-7):
        raise Infeasible(f"general min-max failed: {res.message}")
    return float(np.max(objs @ theta))
