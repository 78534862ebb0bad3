"""Lag features, scaling, and four from-scratch regressors behind one interface.

Every model maps a k-dimensional lag vector (most recent value first) to the
next load value. Training happens in z-scored units; :class:`FittedRegressor`
owns the scaler so callers only ever see MW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

STD_FLOOR = 1e-12
RIDGE_JITTER = 1e-8

REGRESSOR_KINDS = ("svr", "linear", "tree", "forest", "persistence")


@dataclass(frozen=True)
class LagMatrix:
    """Supervised view of a window: row i is [x(t-1), ..., x(t-k)] with
    target x(t), most recent lag first."""

    X: np.ndarray
    y: np.ndarray
    k: int
    row_times: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != self.k:
            raise ValueError("X must have exactly k columns")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("lag matrix entries must be finite")

    @property
    def n_rows(self) -> int:
        return int(self.y.size)


def make_lag_matrix(window, k: int) -> LagMatrix:
    """Build the lag matrix of a contiguous window of values."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("window must be a 1-d sequence")
    if not 1 <= k < w.size:
        raise ValueError(f"window of {w.size} values cannot produce k={k} lags")
    rows = w.size - k
    idx = (k - 1 - np.arange(k))[None, :] + np.arange(rows)[:, None]
    return LagMatrix(w[idx], w[k:].copy(), k, np.arange(k, w.size))


@dataclass(frozen=True)
class Scaler:
    """Per-column z-score parameters: k feature columns plus the target.

    Standard deviations are population (ddof=0) and floored at 1e-12 so a
    constant column maps to all-zeros instead of dividing by zero.
    """

    means: np.ndarray
    stds: np.ndarray

    def scale_features(self, x: np.ndarray) -> np.ndarray:
        return (x - self.means[:-1]) / self.stds[:-1]

    def scale_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.means[-1]) / self.stds[-1]

    def unscale_target(self, value: float) -> float:
        return float(value * self.stds[-1] + self.means[-1])


def fit_scaler(m: LagMatrix) -> Scaler:
    cols = np.column_stack([m.X, m.y])
    means = cols.mean(axis=0)
    stds = np.maximum(cols.std(axis=0), STD_FLOOR)
    return Scaler(means, stds)


def scale_lag_matrix(m: LagMatrix, scaler: Scaler) -> LagMatrix:
    return LagMatrix(
        scaler.scale_features(m.X), scaler.scale_targets(m.y), m.k, m.row_times
    )


def rbf_kernel(a, b, gamma: float) -> float:
    """exp(-gamma * ||a - b||^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("kernel arguments must have equal dimension")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def _rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


# ---------------------------------------------------------------------------
# epsilon-SVR via sequential minimal optimization
# ---------------------------------------------------------------------------


@njit(cache=True)
def _smo_solve(K, y, C, eps, tol, max_iter):  # pragma: no cover - jitted
    """Maximal-violating-pair SMO on the 2n-variable epsilon-SVR dual.

    Variables are z = [alpha; alpha_star] in [0, C]^(2n) with
    sum(alpha - alpha_star) = 0. Block signs s = (+1, -1) make the selection
    values -s_t * grad_t equal to (E_t - eps) on the alpha block and
    (E_t + eps) on the alpha_star block, with E = y - K @ beta.
    Returns (beta, bias, iterations, converged).
    """
    n = y.shape[0]
    a = np.zeros(2 * n)
    u = np.zeros(n)  # K @ beta
    it = 0
    converged = False
    while it < max_iter:
        m_val = -1e300
        m_idx = -1
        big_val = 1e300
        big_idx = -1
        for t in range(n):
            e = y[t] - u[t]
            v1 = e - eps
            v2 = e + eps
            if a[t] < C and v1 > m_val:
                m_val = v1
                m_idx = t
            if a[n + t] > 0.0 and v2 > m_val:
                m_val = v2
                m_idx = n + t
            if a[t] > 0.0 and v1 < big_val:
                big_val = v1
                big_idx = t
            if a[n + t] < C and v2 < big_val:
                big_val = v2
                big_idx = n + t
        if m_idx < 0 or big_idx < 0 or m_val - big_val < tol:
            converged = True
            break

        i = m_idx
        j = big_idx
        si = 1.0 if i < n else -1.0
        sj = 1.0 if j < n else -1.0
        bi = i if i < n else i - n
        bj = j if j < n else j - n

        quad = K[bi, bi] + K[bj, bj] - 2.0 * si * sj * K[bi, bj]
        if quad < 1e-12:
            quad = 1e-12
        step = (m_val - big_val) / quad
        cap_i = (C - a[i]) if si > 0 else a[i]
        cap_j = a[j] if sj > 0 else (C - a[j])
        if step > cap_i:
            step = cap_i
        if step > cap_j:
            step = cap_j

        old_i = a[i]
        old_j = a[j]
        a[i] = old_i + si * step
        a[j] = old_j - sj * step
        # Snap onto a bound that was hit exactly, avoiding float residue.
        if step == cap_i:
            a[i] = C if si > 0 else 0.0
        if step == cap_j:
            a[j] = 0.0 if sj > 0 else C
        d_i = a[i] - old_i
        d_j = a[j] - old_j
        dbeta_i = d_i if i < n else -d_i
        dbeta_j = d_j if j < n else -d_j
        for r in range(n):
            u[r] += K[bi, r] * dbeta_i + K[bj, r] * dbeta_j
        it += 1

    # Canonical form: alpha_i * alpha_star_i = 0 (never both active).
    for t in range(n):
        shift = min(a[t], a[n + t])
        if shift > 0.0:
            a[t] -= shift
            a[n + t] -= shift

    # Bias from unbounded support vectors, else the midpoint of the KKT gap.
    b_sum = 0.0
    b_cnt = 0
    m_val = -1e300
    big_val = 1e300
    for t in range(n):
        e = y[t] - u[t]
        v1 = e - eps
        v2 = e + eps
        if 0.0 < a[t] < C:
            b_sum += v1
            b_cnt += 1
        if 0.0 < a[n + t] < C:
            b_sum += v2
            b_cnt += 1
        if a[t] < C and v1 > m_val:
            m_val = v1
        if a[n + t] > 0.0 and v2 > m_val:
            m_val = v2
        if a[t] > 0.0 and v1 < big_val:
            big_val = v1
        if a[n + t] < C and v2 < big_val:
            big_val = v2
    if b_cnt > 0:
        bias = b_sum / b_cnt
    else:
        bias = 0.5 * (m_val + big_val)

    beta = a[:n] - a[n:]
    return beta, bias, it, converged


def svr_dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, eps: float):
    """epsilon-SVR dual value of a coefficient vector:
    ``-0.5 * beta' K beta - eps * sum|beta| + y' beta``."""
    return float(-0.5 * beta @ K @ beta - eps * np.abs(beta).sum() + y @ beta)


@dataclass(frozen=True)
class SvrModel:
    """Fitted epsilon-SVR with RBF kernel, in scaled units."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i - alpha_i* per support vector
    bias: float
    gamma: float
    C: float
    epsilon: float
    converged: bool
    n_iter: int

    def raw_predict(self, z: np.ndarray) -> float:
        if self.dual_coefs.size == 0:
            return float(self.bias)
        d = self.support_vectors - z[None, :]
        k = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        return float(self.dual_coefs @ k + self.bias)


def fit_svr_smo(
    m: LagMatrix,
    C: float = 1.0,
    epsilon: float = 0.01,
    gamma: float | None = None,
    tol: float = 1e-3,
    max_passes: int = 200,
) -> SvrModel:
    """Solve the epsilon-SVR dual on an already-scaled lag matrix by SMO.

    One "pass" is ``n_rows`` pairwise updates; the solver stops as soon as no
    KKT violation exceeds ``tol``. Hitting the iteration budget is non-fatal:
    the best iterate is returned with ``converged=False``.
    """
    if m.n_rows < 2:
        raise ValueError("SVR needs at least 2 training rows")
    if C <= 0 or epsilon < 0:
        raise ValueError("require C > 0 and epsilon >= 0")
    if gamma is None:
        gamma = 1.0 / m.k
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if tol <= 0 or max_passes < 1:
        raise ValueError("require tol > 0 and max_passes >= 1")
    K = _rbf_matrix(m.X, m.X, gamma)
    max_iter = int(max_passes) * max(m.n_rows, 10)
    beta, bias, n_iter, converged = _smo_solve(
        K, m.y, float(C), float(epsilon), float(tol), max_iter
    )
    sv = np.abs(beta) > 0.0
    return SvrModel(
        m.X[sv].copy(),
        beta[sv].copy(),
        float(bias),
        float(gamma),
        float(C),
        float(epsilon),
        bool(converged),
        int(n_iter),
    )


# ---------------------------------------------------------------------------
# ordinary least squares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float

    def raw_predict(self, z: np.ndarray) -> float:
        return float(z @ self.weights + self.intercept)


def fit_linear(m: LagMatrix) -> LinearModel:
    """Least squares via the normal equations with a tiny ridge jitter on the
    diagonal, so rank-deficient windows (constant columns) stay solvable."""
    if m.n_rows < m.k + 1:
        raise ValueError(f"need at least k+1={m.k + 1} rows, got {m.n_rows}")
    X = np.column_stack([m.X, np.ones(m.n_rows)])
    A = X.T @ X + RIDGE_JITTER * np.eye(m.k + 1)
    coef = np.linalg.solve(A, X.T @ m.y)
    return LinearModel(coef[:-1].copy(), float(coef[-1]))


# ---------------------------------------------------------------------------
# CART regression tree and random forest
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tree_walk(feature, threshold, left, right, value, z, root):  # pragma: no cover
    node = root
    while feature[node] >= 0:
        if z[feature[node]] < threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return value[node]


@dataclass(frozen=True)
class TreeModel:
    """CART regression tree in flat-array form (-1 feature marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int
    min_leaf: int

    def raw_predict(self, z: np.ndarray) -> float:
        return float(
            _tree_walk(
                self.feature, self.threshold, self.left, self.right, self.value, z, 0
            )
        )

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
            else:
                out = max(out, int(depths[node]))
        return out


def _best_split(X, y, feat_ids, min_leaf):
    """Greedy SSE-minimizing split over candidate features and the midpoints
    of consecutive distinct sorted values. Ties break toward the lowest
    feature index, then the lowest threshold."""
    n = y.size
    best = None  # (sse, feature, threshold)
    for f in feat_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        c1 = np.cumsum(ys)
        c2 = np.cumsum(ys * ys)
        p = np.arange(min_leaf, n - min_leaf + 1)
        if p.size == 0:
            continue
        valid = xs[p - 1] < xs[p]
        if not np.any(valid):
            continue
        left1 = c1[p - 1]
        left2 = c2[p - 1]
        sse_left = left2 - left1 * left1 / p
        right1 = c1[-1] - left1
        sse = sse_left + (c2[-1] - left2) - right1 * right1 / (n - p)
        sse = np.where(valid, sse, np.inf)
        ip = int(np.argmin(sse))  # first minimum = lowest threshold
        if best is None or sse[ip] < best[0]:
            best = (float(sse[ip]), int(f), float(0.5 * (xs[p[ip] - 1] + xs[p[ip]])))
    return best


class _TreeBuilder:
    def __init__(self, X, y, max_depth, min_leaf, mtry, rng):
        self.X = X
        self.y = y
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, rows: np.ndarray, depth: int) -> int:
        node = self._new_node()
        y = self.y[rows]
        self.value[node] = float(y.mean())
        if (
            depth >= self.max_depth
            or rows.size < 2 * self.min_leaf
            or np.ptp(y) == 0.0
        ):
            return node
        k = self.X.shape[1]
        if self.mtry is not None and self.mtry < k:
            feat_ids = np.sort(self.rng.choice(k, size=self.mtry, replace=False))
        else:
            feat_ids = np.arange(k)
        split = _best_split(self.X[rows], y, feat_ids, self.min_leaf)
        if split is None:
            return node
        _, f, thr = split
        mask = self.X[rows, f] < thr
        self.feature[node] = int(f)
        self.threshold[node] = float(thr)
        self.left[node] = self.build(rows[mask], depth + 1)
        self.right[node] = self.build(rows[~mask], depth + 1)
        return node

    def to_model(self) -> TreeModel:
        return TreeModel(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
            self.max_depth,
            self.min_leaf,
        )


def fit_tree(m: LagMatrix, max_depth: int = 8, min_leaf: int = 2) -> TreeModel:
    """Grow a CART regression tree: greedy best SSE split, leaves predict the
    mean, recursion stops at max_depth, min_leaf, or zero variance."""
    if m.n_rows < 1:
        raise ValueError("tree needs at least 1 training row")
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("require max_depth >= 0 and min_leaf >= 1")
    builder = _TreeBuilder(m.X, m.y, max_depth, min_leaf, None, None)
    builder.build(np.arange(m.n_rows), 0)
    return builder.to_model()


@dataclass(frozen=True)
class ForestModel:
    """Bootstrap ensemble of CART trees; prediction is the arithmetic mean.

    Trees are additionally concatenated into flat arrays so a single jitted
    walk evaluates the whole ensemble.
    """

    trees: tuple[TreeModel, ...]
    mtry: int
    seed: int
    _feature: np.ndarray
    _threshold: np.ndarray
    _left: np.ndarray
    _right: np.ndarray
    _value: np.ndarray
    _roots: np.ndarray

    def raw_predict(self, z: np.ndarray) -> float:
        return float(
            _forest_walk(
                self._feature,
                self._threshold,
                self._left,
                self._right,
                self._value,
                self._roots,
                z,
            )
        )


@njit(cache=True)
def _forest_walk(feature, threshold, left, right, value, roots, z):  # pragma: no cover
    acc = 0.0
    for i in range(roots.size):
        acc += _tree_walk(feature, threshold, left, right, value, z, roots[i])
    return acc / roots.size


def _flatten_trees(trees):
    offsets = np.zeros(len(trees), dtype=np.int64)
    total = 0
    for i, t in enumerate(trees):
        offsets[i] = total
        total += t.n_nodes
    feature = np.concatenate([t.feature for t in trees])
    threshold = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([t.left for t in trees])
    right = np.concatenate([t.right for t in trees])
    value = np.concatenate([t.value for t in trees])
    for i, t in enumerate(trees):
        lo, hi = offsets[i], offsets[i] + t.n_nodes
        internal = feature[lo:hi] >= 0
        left[lo:hi][internal] += offsets[i]
        right[lo:hi][internal] += offsets[i]
    return feature, threshold, left, right, value, offsets


def fit_forest(
    m: LagMatrix,
    n_trees: int = 100,
    max_depth: int = 8,
    min_leaf: int = 2,
    mtry: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
) -> ForestModel:
    """Random forest: each tree sees a bootstrap resample and a fresh
    mtry-subset of features per split. Per-tree RNG streams derive
    deterministically from ``(seed, tree_index)``; ``bootstrap=False`` is a
    test hook that makes a 1-tree full-mtry forest identical to fit_tree.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if mtry is None:
        mtry = math.ceil(m.k / 3)
    if not 1 <= mtry <= m.k:
        raise ValueError(f"mtry must be in [1, k={m.k}]")
    trees = []
    for tree_idx in range(n_trees):
        rng = np.random.default_rng((int(seed) & 0xFFFFFFFF, tree_idx))
        if bootstrap:
            rows = rng.integers(0, m.n_rows, size=m.n_rows)
        else:
            rows = np.arange(m.n_rows)
        builder = _TreeBuilder(
            m.X[rows], m.y[rows], max_depth, min_leaf, mtry if mtry < m.k else None, rng
        )
        builder.build(np.arange(rows.size), 0)
        trees.append(builder.to_model())
    flat = _flatten_trees(trees)
    return ForestModel(tuple(trees), mtry, seed, *flat)


@dataclass(frozen=True)
class PersistenceModel:
    """Predicts the most recent observed value; the natural stub baseline."""

    def raw_predict(self, z: np.ndarray) -> float:
        return float(z[0])


# ---------------------------------------------------------------------------
# uniform fit/predict interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.01  # scaled units
    gamma: float | None = None  # None -> 1/k
    tol: float = 1e-3
    max_passes: int = 200


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 8
    min_leaf: int = 2


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    mtry: int | None = None  # None -> ceil(k/3)


@dataclass(frozen=True)
class FittedRegressor:
    """A model plus the scaler it was trained under; predicts in MW."""

    kind: str
    k: int
    scaler: Scaler | None
    model: object
    converged: bool = True

    def predict(self, lags: np.ndarray) -> float:
        """One-step-ahead prediction from a lag vector (most recent first)."""
        x = np.asarray(lags, dtype=np.float64)
        if x.shape != (self.k,):
            raise ValueError(f"expected {self.k} lags, got shape {x.shape}")
        if self.kind == "persistence":
            return float(x[0])
        z = self.scaler.scale_features(x)
        return self.scaler.unscale_target(self.model.raw_predict(z))


def predict(model: FittedRegressor, lags) -> float:
    return model.predict(np.asarray(lags, dtype=np.float64))


def fit_regressor(
    window,
    k: int,
    kind: str = "svr",
    svr: SvrParams | None = None,
    tree: TreeParams | None = None,
    forest: ForestParams | None = None,
    seed: int = 0,
) -> FittedRegressor:
    """Fit one of the regressor kinds on a raw (unscaled) training window."""
    if kind not in REGRESSOR_KINDS:
        raise ValueError(f"unknown regressor kind {kind!r}")
    if kind == "persistence":
        return FittedRegressor("persistence", k, None, PersistenceModel())
    m = make_lag_matrix(window, k)
    scaler = fit_scaler(m)
    scaled = scale_lag_matrix(m, scaler)
    if kind == "svr":
        p = svr or SvrParams()
        model = fit_svr_smo(
            scaled, C=p.C, epsilon=p.epsilon, gamma=p.gamma, tol=p.tol,
            max_passes=p.max_passes,
        )
        return FittedRegressor("svr", k, scaler, model, converged=model.converged)
    if kind == "linear":
        return FittedRegressor("linear", k, scaler, fit_linear(scaled))
    if kind == "tree":
        p = tree or TreeParams()
        return FittedRegressor(
            "tree", k, scaler, fit_tree(scaled, p.max_depth, p.min_leaf)
        )
    p = forest or ForestParams()
    model = fit_forest(
        scaled, p.n_trees, p.max_depth, p.min_leaf, p.mtry, seed=seed
    )
    return FittedRegressor("forest", k, scaler, model)
