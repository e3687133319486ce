"""
RBF kernel machines trained by sequential minimal optimization.

Both the classifier (one-vs-one) and the epsilon-insensitive regressor are reduced to
the same box-constrained dual

    minimize 0.5 * a'Qa + p'a   subject to  y'a = 0,  0 <= a <= C

and solved with maximal-violating-pair SMO. Kernel matrices are computed once per
training run; predictions evaluate the kernel against the stored support vectors.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import KernelParams

logger = logging.getLogger(__name__)

TAU = 1e-12
SV_EPS = 1e-12


def rbf_kernel(u: np.ndarray, v: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||u - v||^2) for two equally long vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"Kernel arguments differ in shape: {u.shape} vs {v.shape}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    diff = u - v
    return float(np.exp(-gamma * np.dot(diff, diff)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel between the rows of a and the rows of b."""
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(features: np.ndarray) -> float:
    """1 / (n_features * feature variance), falling back to 1/n_features for flat data."""
    variance = float(np.var(features))
    n_features = features.shape[1]
    return 1.0 / (n_features * variance) if variance > 0 else 1.0 / n_features


@dataclass
class Preprocessor:
    """Per-window mean removal followed by a global scale, stored with the model."""

    center: bool = True
    scale: float = 1.0

    def transform(self, windows: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        if self.center:
            x = x - x.mean(axis=1, keepdims=True)
        return x / self.scale

    @classmethod
    def fit(cls, windows: np.ndarray, center: bool = True) -> "Preprocessor":
        x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        if center:
            x = x - x.mean(axis=1, keepdims=True)
        scale = float(np.std(x))
        return cls(center=center, scale=scale if scale > 0 else 1.0)


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    objective: float
    kkt_gap: float
    iterations: int


def solve_smo(
    kernel: np.ndarray,
    y: np.ndarray,
    p: np.ndarray,
    c_penalty: float,
    tol: float = 1e-3,
    max_passes: int = 10_000,
) -> SmoResult:
    """
    Solve the box-constrained dual with maximal-violating-pair SMO.

    Q[s, t] = y[s] * y[t] * kernel[s % n, t % n], where n = len(kernel); this lets the
    regressor pass its doubled variable set over a single kernel matrix.

    Args:
        kernel: n x n kernel matrix
        y: +1/-1 sign of every dual variable (length n or 2n)
        p: Linear term of the objective
        c_penalty: Upper bound C
        tol: Stop once the maximal KKT violation drops below tol
        max_passes: Iteration cap, in units of the number of variables

    Returns:
        SmoResult with the dual variables, rho (decision offset), objective value
        of the equivalent maximization, final KKT gap and iteration count
    """
    n_kernel = kernel.shape[0]
    size = len(y)
    index = np.arange(size) % n_kernel
    diag = kernel[index, index]
    alpha = np.zeros(size)
    grad = p.astype(np.float64).copy()
    max_iter = max_passes * size

    def q_column(t: int) -> np.ndarray:
        return y * y[t] * kernel[index, index[t]]

    iterations = 0
    gap = np.inf
    while iterations < max_iter:
        neg_yg = -y * grad
        up = ((y > 0) & (alpha < c_penalty)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c_penalty))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(neg_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(neg_yg[low])])
        gap = neg_yg[i] - neg_yg[j]
        if gap < tol:
            break

        q_i = q_column(i)
        q_j = q_column(j)
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * q_i[j], TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > c_penalty:
                    alpha[i] = c_penalty
                    alpha[j] = c_penalty - diff
            elif alpha[j] > c_penalty:
                alpha[j] = c_penalty
                alpha[i] = c_penalty + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * q_i[j], TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c_penalty:
                if alpha[i] > c_penalty:
                    alpha[i] = c_penalty
                    alpha[j] = total - c_penalty
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > c_penalty:
                if alpha[j] > c_penalty:
                    alpha[j] = c_penalty
                    alpha[i] = total - c_penalty
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        grad += q_i * (alpha[i] - old_i) + q_j * (alpha[j] - old_j)
        iterations += 1
    else:
        logger.warning(f"SMO stopped at the iteration cap ({max_iter}) with KKT gap {gap:.3g}")

    rho = _compute_rho(alpha, grad, y, c_penalty)
    objective = -0.5 * float(np.dot(alpha, grad - p)) - float(np.dot(p, alpha))
    return SmoResult(alpha=alpha, rho=rho, objective=objective, kkt_gap=float(gap), iterations=iterations)


def _compute_rho(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, c_penalty: float) -> float:
    yg = y * grad
    at_upper = alpha >= c_penalty
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(np.mean(yg[free]))
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = float(np.min(yg[ub_mask])) if ub_mask.any() else np.inf
    lb = float(np.max(yg[lb_mask])) if lb_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        return float(ub if np.isfinite(ub) else lb if np.isfinite(lb) else 0.0)
    return 0.5 * (ub + lb)


@dataclass
class PairModel:
    """One binary sub-problem of the one-vs-one classifier."""

    positive: int
    negative: int
    bias: float
    objective: float
    kkt_gap: float


@dataclass
class KernelModel:
    """
    Trained RBF kernel classifier or regressor.

    For a classifier dual_coefs has one row per pair model (y_i * alpha_i, zero for
    support vectors that belong to other pairs); for a regressor it is the vector of
    alpha_i - alpha_i*.
    """

    kind: str
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    c_penalty: float
    preprocessor: Preprocessor = field(default_factory=Preprocessor)
    classes: Optional[List[float]] = None
    pair_models: Optional[List[PairModel]] = None
    epsilon: Optional[float] = None
    objective: Optional[float] = None
    kkt_gap: Optional[float] = None

    def __post_init__(self):
        if self.dual_coefs.shape[-1] != len(self.support_vectors):
            raise ValueError(
                f"{self.dual_coefs.shape[-1]} dual coefficients for {len(self.support_vectors)} support vectors"
            )
        self._sv_sq = np.sum(self.support_vectors * self.support_vectors, axis=1)

    @property
    def n_features(self) -> int:
        return int(self.support_vectors.shape[1])

    def kernel_row(self, features: np.ndarray) -> np.ndarray:
        sq = self._sv_sq - 2.0 * (self.support_vectors @ features) + features @ features
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def as_float32(self) -> "KernelModel":
        """Copy of the model whose inference runs in 32-bit arithmetic."""
        return replace(
            self,
            support_vectors=self.support_vectors.astype(np.float32),
            dual_coefs=self.dual_coefs.astype(np.float32),
        )


def train_svc(
    windows: np.ndarray,
    labels: Sequence[float],
    c_penalty: float = 10.0,
    gamma: Optional[float] = None,
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 10_000,
    preprocessor: Optional[Preprocessor] = None,
) -> KernelModel:
    """
    Train a one-vs-one RBF support vector classifier.

    Args:
        windows: Training windows, one per row
        labels: Class label per window
        c_penalty: Box constraint C
        gamma: RBF width; defaults to 1 / (n_features * feature variance)
        seed: Shuffle seed for the training order (the solution does not depend on it
            beyond floating-point tie-breaking)
        tol: KKT tolerance
        max_passes: SMO iteration cap per variable
        preprocessor: Window preprocessing; fitted on the data when omitted

    Returns:
        A classifier KernelModel
    """
    raw = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError(f"train_svc needs at least two classes, got {classes}")
    preprocessor = preprocessor or Preprocessor.fit(raw)
    features = preprocessor.transform(raw)
    gamma = gamma or default_gamma(features)

    order = np.random.default_rng(seed).permutation(len(features))
    features, labels = features[order], labels[order]
    kernel = rbf_matrix(features, features, gamma)

    coef_rows = []
    pairs = []
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            members = np.flatnonzero((labels == classes[a]) | (labels == classes[b]))
            y = np.where(labels[members] == classes[a], 1.0, -1.0)
            result = solve_smo(
                kernel[np.ix_(members, members)], y, -np.ones(len(members)), c_penalty, tol, max_passes
            )
            row = np.zeros(len(features))
            row[members] = y * result.alpha
            coef_rows.append(row)
            pairs.append(PairModel(a, b, -result.rho, result.objective, result.kkt_gap))
            logger.debug(
                f"Pair ({classes[a]}, {classes[b]}): {result.iterations} iterations, "
                f"{int(np.sum(result.alpha > SV_EPS))} support vectors"
            )

    coefs = np.vstack(coef_rows)
    keep = np.flatnonzero(np.any(np.abs(coefs) > SV_EPS, axis=0))
    model = KernelModel(
        kind="classifier",
        support_vectors=features[keep],
        dual_coefs=coefs[:, keep],
        bias=0.0,
        gamma=gamma,
        c_penalty=c_penalty,
        preprocessor=preprocessor,
        classes=[float(c) for c in classes],
        pair_models=pairs,
        kkt_gap=max(p.kkt_gap for p in pairs),
    )
    logger.info(f"Trained SVC: {len(classes)} classes, {len(keep)} support vectors, gamma={gamma:.4g}")
    return model


def train_svr(
    windows: np.ndarray,
    targets_shore: Sequence[float],
    c_penalty: float = 10.0,
    gamma: Optional[float] = None,
    epsilon: float = 0.5,
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 10_000,
    preprocessor: Optional[Preprocessor] = None,
) -> KernelModel:
    """
    Train an epsilon-insensitive RBF support vector regressor.

    The prediction is sum_i (alpha_i - alpha_i*) K(x_i, x) + b.

    Args:
        windows: Training windows, one per row
        targets_shore: Target stiffness per window
        c_penalty: Box constraint C
        gamma: RBF width; defaults to 1 / (n_features * feature variance)
        epsilon: Half-width of the insensitive tube (Shore A)
        seed: Shuffle seed for the training order
        tol: KKT tolerance
        max_passes: SMO iteration cap per variable
        preprocessor: Window preprocessing; fitted on the data when omitted

    Returns:
        A regressor KernelModel
    """
    raw = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    targets = np.asarray(targets_shore, dtype=np.float64)
    if len(np.unique(targets)) < 2:
        logger.warning("train_svr called with a single distinct target; the model is a constant")
    preprocessor = preprocessor or Preprocessor.fit(raw)
    features = preprocessor.transform(raw)
    gamma = gamma or default_gamma(features)

    order = np.random.default_rng(seed).permutation(len(features))
    features, targets = features[order], targets[order]
    n = len(features)
    kernel = rbf_matrix(features, features, gamma)
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - targets, epsilon + targets])
    result = solve_smo(kernel, y, p, c_penalty, tol, max_passes)

    beta = result.alpha[:n] - result.alpha[n:]
    keep = np.flatnonzero(np.abs(beta) > SV_EPS)
    model = KernelModel(
        kind="regressor",
        support_vectors=features[keep],
        dual_coefs=beta[keep],
        bias=-result.rho,
        gamma=gamma,
        c_penalty=c_penalty,
        preprocessor=preprocessor,
        epsilon=epsilon,
        objective=svr_dual_objective(kernel, beta, targets, epsilon),
        kkt_gap=result.kkt_gap,
    )
    logger.info(f"Trained SVR: {len(keep)} support vectors, gamma={gamma:.4g}, {result.iterations} iterations")
    return model


def svr_dual_objective(kernel: np.ndarray, beta: np.ndarray, targets: np.ndarray, epsilon: float) -> float:
    """-0.5 b'Kb - eps*|b|_1 + z'b for the collapsed coefficients b = alpha - alpha*."""
    return float(-0.5 * beta @ kernel @ beta - epsilon * np.sum(np.abs(beta)) + targets @ beta)


def decision_values(model: KernelModel, window: np.ndarray) -> np.ndarray:
    features = model.preprocessor.transform(window)[0].astype(model.support_vectors.dtype)
    k = model.kernel_row(features)
    if model.kind == "regressor":
        return np.array([model.dual_coefs @ k + model.bias])
    biases = np.array([pm.bias for pm in model.pair_models], dtype=k.dtype)
    return model.dual_coefs @ k + biases


def _vote(model: KernelModel, decisions: np.ndarray) -> float:
    votes = np.zeros(len(model.classes), dtype=np.int64)
    for pm, value in zip(model.pair_models, decisions):
        votes[pm.positive if value > 0 else pm.negative] += 1
    return model.classes[int(np.argmax(votes))]


def predict(model: KernelModel, window: np.ndarray) -> Tuple[float, float]:
    """
    Predict one window.

    Classifiers use one-vs-one majority voting with ties going to the lowest class;
    regressors are clamped to [0, 100] Shore A.

    Returns:
        (prediction, elapsed milliseconds)
    """
    start = time.perf_counter()
    decisions = decision_values(model, window)
    if model.kind == "regressor":
        value = float(np.clip(decisions[0], 0.0, 100.0))
    else:
        value = _vote(model, decisions)
    return value, (time.perf_counter() - start) * 1000.0


def predict_batch(model: KernelModel, windows: np.ndarray) -> np.ndarray:
    """Vectorized prediction over many windows (no timing)."""
    features = model.preprocessor.transform(windows).astype(model.support_vectors.dtype)
    kernel = rbf_matrix(features, model.support_vectors, model.gamma)
    if model.kind == "regressor":
        return np.clip(kernel @ model.dual_coefs + model.bias, 0.0, 100.0)
    biases = np.array([pm.bias for pm in model.pair_models])
    decisions = kernel @ model.dual_coefs.T + biases
    return np.array([_vote(model, row) for row in decisions])


def grid_search(
    windows: np.ndarray,
    targets: Sequence[float],
    kind: str,
    params: KernelParams = KernelParams(),
    seed: int = 0,
    holdout_fraction: float = 0.2,
    c_grid: Sequence[float] = (1.0, 10.0, 100.0),
    gamma_factors: Sequence[float] = (0.1, 1.0, 10.0),
) -> Tuple[Dict[str, float], List[Dict[str, float]]]:
    """
    Pick C and gamma on a held-out fold.

    Classifiers are scored by accuracy, regressors by negative RMSE.

    Returns:
        (best {"c_penalty", "gamma"}, one row per grid point)
    """
    raw = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(raw))
    n_hold = max(1, int(round(holdout_fraction * len(raw))))
    hold, fit = order[:n_hold], order[n_hold:]
    preprocessor = Preprocessor.fit(raw[fit])
    base_gamma = params.gamma or default_gamma(preprocessor.transform(raw[fit]))

    rows = []
    for c_penalty in c_grid:
        for factor in gamma_factors:
            gamma = base_gamma * factor
            if kind == "classifier":
                model = train_svc(
                    raw[fit], targets[fit], c_penalty, gamma, seed, params.tol, params.max_passes, preprocessor
                )
                score = float(np.mean(predict_batch(model, raw[hold]) == targets[hold]))
            else:
                model = train_svr(
                    raw[fit], targets[fit], c_penalty, gamma, params.epsilon, seed,
                    params.tol, params.max_passes, preprocessor,
                )
                score = -float(np.sqrt(np.mean((predict_batch(model, raw[hold]) - targets[hold]) ** 2)))
            rows.append({"c_penalty": c_penalty, "gamma": gamma, "score": score})
            logger.debug(f"Grid point C={c_penalty} gamma={gamma:.4g}: score {score:.4f}")
    best = max(rows, key=lambda r: r["score"])
    return {"c_penalty": best["c_penalty"], "gamma": best["gamma"]}, rows
