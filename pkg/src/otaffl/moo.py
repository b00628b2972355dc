"""Multi-objective primitives: scalarization, (modified) Chebyshev weights,
simplex/box projections and a Pareto-stationarity diagnostic.

Weight vectors are plain 1-d float64 numpy arrays lying on the probability
simplex; :func:`check_weights` validates them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericFailureError

SIMPLEX_ATOL = 1e-9

DYKSTRA_MAX_ITERS = 10_000
DYKSTRA_TOL = 1e-10

FW_MAX_ITERS = 5_000
FW_TOL = 1e-6


def _as_finite_vector(values, name="values"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return arr


def check_weights(weights, atol=SIMPLEX_ATOL):
    """Return ``weights`` as an array after checking it lies on the simplex."""
    w = _as_finite_vector(weights, "weights")
    if np.any(w < 0):
        raise InvalidInputError(f"weights must be non-negative, got min {w.min()!r}")
    if abs(w.sum() - 1.0) > atol:
        raise InvalidInputError(f"weights must sum to 1, got {w.sum()!r}")
    return w


@dataclass(frozen=True)
class ChebyshevConfig:
    """Parameters of the box-constrained Chebyshev inner problem.

    Attributes:
        epsilon: radius of the infinity-norm ball around ``lambda_avg``.
        zeta: reference point subtracted from the objectives.
        lambda_avg: dataset-size weights at the centre of the ball.
    """

    epsilon: float
    zeta: np.ndarray
    lambda_avg: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise InvalidInputError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")
        lam = check_weights(self.lambda_avg)
        zeta = _as_finite_vector(np.broadcast_to(np.asarray(self.zeta, dtype=np.float64), lam.shape), "zeta")
        object.__setattr__(self, "lambda_avg", lam)
        object.__setattr__(self, "zeta", np.array(zeta))

    @property
    def lower(self):
        return np.maximum(0.0, self.lambda_avg - self.epsilon)

    @property
    def upper(self):
        return np.minimum(1.0, self.lambda_avg + self.epsilon)


def compute_lambda_avg(dataset_sizes):
    """FedAvg weights, proportional to local dataset sizes."""
    sizes = np.asarray(dataset_sizes)
    if sizes.ndim != 1 or sizes.size == 0:
        raise InvalidInputError("dataset_sizes must be a non-empty 1-d vector")
    if not np.issubdtype(sizes.dtype, np.integer):
        if not np.all(np.isfinite(sizes)) or np.any(sizes != np.round(sizes)):
            raise InvalidInputError("dataset_sizes must be integers")
    if np.any(sizes < 1):
        raise InvalidInputError("every dataset size must be at least 1")
    sizes = sizes.astype(np.float64)
    return sizes / sizes.sum()


def linear_scalarize(objectives, weights):
    f = _as_finite_vector(objectives, "objectives")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != f.shape:
        raise InvalidInputError(f"length mismatch: {f.size} objectives vs {w.size} weights")
    return float(f @ w)


def inner_objective(weights, objectives, zeta):
    """Value of ``weights . (objectives - zeta)``."""
    return float(np.asarray(weights) @ (np.asarray(objectives, dtype=np.float64) - zeta))


def solve_inner_weights(objectives, cfg):
    """Exact maximizer of ``lam . (f - zeta)`` over the simplex intersected with
    the box ``|lam - lambda_avg|_inf <= epsilon``.

    Greedy fractional allocation: start every client at its lower bound and
    hand out the remaining mass in descending order of ``f - zeta``, ties going
    to the lower client index.
    """
    f = _as_finite_vector(objectives, "objectives")
    if f.shape != cfg.lambda_avg.shape:
        raise InvalidInputError(f"length mismatch: {f.size} objectives vs {cfg.lambda_avg.size} weights")
    if cfg.epsilon == 0.0:
        return cfg.lambda_avg.copy()

    lower, upper = cfg.lower, cfg.upper
    lam = lower.copy()
    residual = 1.0 - lower.sum()
    # stable sort on the negated scores keeps ascending index order among ties
    order = np.argsort(-(f - cfg.zeta), kind="stable")
    for k in order:
        if residual <= 0.0:
            break
        add = min(upper[k] - lower[k], residual)
        lam[k] += add
        residual -= add
    return lam


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = _as_finite_vector(v, "v")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_box(v, lower, upper):
    return np.clip(v, lower, upper)


def project_simplex_box(v, lower, upper, max_iters=DYKSTRA_MAX_ITERS, tol=DYKSTRA_TOL):
    """Projection onto ``simplex ∩ [lower, upper]`` by Dykstra's algorithm.

    Raises:
        NumericFailureError: if the iterates have not settled within
            ``max_iters`` cycles; ``residual`` holds the last residual.
    """
    x = _as_finite_vector(v, "v").copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    residual = np.inf
    for _ in range(max_iters):
        y = project_box(x + p, lower, upper)
        p = x + p - y
        x_new = project_simplex(y + q)
        q = y + q - x_new
        residual = max(np.max(np.abs(x_new - y)), np.max(np.abs(x_new - x)))
        x = x_new
        if residual <= tol:
            return x
    raise NumericFailureError(
        f"Dykstra projection did not converge in {max_iters} iterations (residual {residual:.3e})",
        residual=residual,
    )


def solve_inner_weights_pocs(objectives, cfg, step=1.0, iters=1000):
    """Projected gradient ascent for the inner problem.

    Each step ``lam <- P(lam + step * (f - zeta))`` projects onto the
    simplex/box intersection with :func:`project_simplex_box`. Iteration stops
    early once the iterate stops moving.
    """
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step!r}")
    if iters < 1:
        raise InvalidInputError(f"iters must be a positive integer, got {iters!r}")
    f = _as_finite_vector(objectives, "objectives")
    if f.shape != cfg.lambda_avg.shape:
        raise InvalidInputError(f"length mismatch: {f.size} objectives vs {cfg.lambda_avg.size} weights")
    direction = f - cfg.zeta
    lower, upper = cfg.lower, cfg.upper
    lam = cfg.lambda_avg.copy()
    for _ in range(iters):
        nxt = project_simplex_box(lam + step * direction, lower, upper)
        if np.max(np.abs(nxt - lam)) <= DYKSTRA_TOL:
            return nxt
        lam = nxt
    return lam


def _affine_min_norm(points):
    """Weights summing to one that minimize the norm over the affine hull."""
    n = points.shape[0]
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = points @ points.T
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n]


def pareto_stationarity_gap(gradients, max_iters=FW_MAX_ITERS, tol=FW_TOL):
    """Minimum norm of a convex combination of ``gradients``.

    Fully-corrective Frank-Wolfe (Wolfe's min-norm-point scheme): each major
    iteration adds the Frank-Wolfe vertex to the active set, then re-solves
    exactly over the convex hull of the active set. Near-collinear gradients
    make plain Frank-Wolfe crawl; the corrective step avoids that.

    Returns:
        ``(gap, witness)`` where ``gap = |sum_k witness_k g_k|``.
    """
    try:
        G = np.asarray(gradients, dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"gradients must share one dimension: {exc}") from None
    if G.ndim != 2 or G.shape[0] == 0:
        raise InvalidInputError(f"gradients must be a non-empty list of equal-length vectors, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise InvalidInputError("gradients contain NaN or infinite entries")

    K = G.shape[0]
    scale = max(float(np.max(np.sum(G * G, axis=1))), 1e-300)
    first = int(np.argmin(np.sum(G * G, axis=1)))
    active = [first]
    weights = np.array([1.0])
    x = G[first].copy()
    for _ in range(max_iters):
        scores = G @ x
        j = int(np.argmin(scores))
        if x @ x - scores[j] <= tol * tol * scale or j in active:
            break
        active.append(j)
        weights = np.append(weights, 0.0)
        while True:
            alpha = _affine_min_norm(G[active])
            if np.all(alpha > 0):
                weights = alpha
                break
            neg = alpha <= 0
            ratio = weights[neg] / (weights[neg] - alpha[neg])
            theta = float(np.min(ratio))
            weights = weights + theta * (alpha - weights)
            keep = weights > 1e-15
            keep[np.flatnonzero(neg)[np.argmin(ratio)]] = False
            active = [a for a, k in zip(active, keep) if k]
            weights = weights[keep]
            weights /= weights.sum()
        x = weights @ G[active]

    lam = np.zeros(K)
    lam[active] = weights
    lam /= lam.sum()
    return float(np.linalg.norm(lam @ G)), lam
