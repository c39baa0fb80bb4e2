"""
Diagonal-covariance Gaussian mixture fitted by EM with k-means initialization.
"""
from typing import List, Optional, Tuple
import logging
import numpy as np
from scipy.special import logsumexp
from tqdm import tqdm
from core.config import settings
from core.exceptions import TooFewPoints, NonFiniteValue, DimMismatch
from estimators.base import DensityModel
from schemas.enums import EstimatorKind
from schemas.models import GmmDocument

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _squared_distances(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(data ** 2, axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + np.sum(centroids ** 2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans_init(
    data: np.ndarray,
    K: int,
    seed: int,
    max_iter: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lloyd's k-means from K distinct random data points.

    Iterates until the assignment reaches a fixpoint or ``max_iter`` rounds.
    A cluster that goes empty is reseeded with the point farthest from its
    current centroid.

    Returns:
        (centroids K x C, assignments N)

    Raises:
        TooFewPoints: N < K
    """
    data = np.asarray(data, dtype=np.float64)
    max_iter = settings.KMEANS_MAX_ITER if max_iter is None else max_iter
    n = data.shape[0]
    if K < 1:
        raise TooFewPoints(f"Need at least one component, got K={K}")
    if n < K:
        raise TooFewPoints(f"k-means needs at least K={K} points, got {n}")

    rng = np.random.default_rng(seed)
    centroids = data[rng.choice(n, size=K, replace=False)].copy()
    assignments = None

    for _ in range(max_iter):
        d2 = _squared_distances(data, centroids)
        new_assignments = np.argmin(d2, axis=1)
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

        counts = np.bincount(assignments, minlength=K)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = d2[np.arange(n), assignments].copy()
            for j in empty:
                # never steal the last member of a cluster
                movable = counts[assignments] > 1
                candidates = np.where(movable, own, -1.0)
                far = int(np.argmax(candidates))
                counts[assignments[far]] -= 1
                assignments[far] = j
                counts[j] = 1
                own[far] = -1.0
            logger.debug(f"Reseeded {empty.size} empty k-means clusters")

        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, data)
        centroids = sums / counts[:, None]

    return centroids, assignments


class GmmModel(DensityModel):
    kind = EstimatorKind.GMM

    def __init__(
        self,
        weights: np.ndarray,
        means: np.ndarray,
        variances: np.ndarray,
        variance_floor: float = None,
        normalized: bool = False,
        log_likelihood_history: Optional[List[float]] = None,
    ):
        self.weights = np.array(weights, dtype=np.float64)
        self.means = np.array(means, dtype=np.float64)
        self.variances = np.array(variances, dtype=np.float64)
        self.variance_floor = settings.GMM_VARIANCE_FLOOR if variance_floor is None else variance_floor
        self._normalized = normalized
        self.log_likelihood_history = list(log_likelihood_history or [])
        if self.means.ndim != 2 or self.means.shape != self.variances.shape or self.weights.shape != (self.means.shape[0],):
            raise DimMismatch(
                f"Inconsistent GMM parameter shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        for array in (self.weights, self.means, self.variances):
            array.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def components(self) -> int:
        return int(self.means.shape[0])

    @property
    def normalized(self) -> bool:
        return self._normalized

    def component_log_prob(self, data: np.ndarray) -> np.ndarray:
        """log(pi_i) + log N(x | mu_i, diag(var_i)) for every point and component (N x K)."""
        return _weighted_log_prob(data, self.weights, self.means, self.variances)

    def score_batch(self, features: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_prob(features), axis=1)

    def to_document(self) -> GmmDocument:
        return GmmDocument(
            dim=self.dim,
            components=self.components,
            normalized=self.normalized,
            variance_floor=self.variance_floor,
            weights=self.weights.tolist(),
            means=self.means.tolist(),
            variances=self.variances.tolist(),
            log_likelihood_history=self.log_likelihood_history,
        )

    @classmethod
    def from_document(cls, document: GmmDocument) -> "GmmModel":
        model = cls(
            weights=document.weights,
            means=document.means,
            variances=document.variances,
            variance_floor=document.variance_floor,
            normalized=document.normalized,
            log_likelihood_history=document.log_likelihood_history,
        )
        if model.dim != document.dim or model.components != document.components:
            raise DimMismatch(
                f"GMM document declares K={document.components}, C={document.dim}; "
                f"parameters have K={model.components}, C={model.dim}"
            )
        return model


def _weighted_log_prob(data, weights, means, variances) -> np.ndarray:
    precisions = 1.0 / variances
    quad = (
        (data ** 2) @ precisions.T
        - 2.0 * data @ (means * precisions).T
        + np.sum(means ** 2 * precisions, axis=1)[None, :]
    )
    log_det = np.sum(np.log(variances), axis=1)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    return -0.5 * (data.shape[1] * LOG_2PI + log_det[None, :] + quad) + log_weights[None, :]


def em_fit(
    data: np.ndarray,
    K: int,
    seed: int,
    max_iter: Optional[int] = None,
    rel_tol: Optional[float] = None,
    variance_floor: Optional[float] = None,
    kmeans_max_iter: Optional[int] = None,
    normalized: bool = False,
) -> GmmModel:
    """
    Fit a K-component diagonal GMM by expectation maximization.

    Responsibilities are computed in log space. Variances are floored instead
    of letting a component collapse; a component that receives no
    responsibility keeps its previous mean and variance.

    Raises:
        TooFewPoints: N < K
        NonFiniteValue: the log-likelihood stopped being finite
    """
    data = np.asarray(data, dtype=np.float64)
    max_iter = settings.GMM_MAX_ITER if max_iter is None else max_iter
    rel_tol = settings.GMM_REL_TOL if rel_tol is None else rel_tol
    variance_floor = settings.GMM_VARIANCE_FLOOR if variance_floor is None else variance_floor
    n, dim = data.shape

    centroids, assignments = kmeans_init(data, K, seed, max_iter=kmeans_max_iter)
    counts = np.bincount(assignments, minlength=K).astype(np.float64)
    weights = counts / n
    means = centroids
    global_var = np.maximum(data.var(axis=0), variance_floor)
    variances = np.tile(global_var, (K, 1))
    for j in range(K):
        members = data[assignments == j]
        if members.shape[0] > 1:
            variances[j] = np.maximum(members.var(axis=0), variance_floor)

    def evaluate(iteration: int):
        log_prob = _weighted_log_prob(data, weights, means, variances)
        log_norm = logsumexp(log_prob, axis=1)
        mean_ll = float(np.mean(log_norm))
        if not np.isfinite(mean_ll):
            raise NonFiniteValue(f"EM log-likelihood became non-finite at iteration {iteration}")
        return log_prob, log_norm, mean_ll

    # history[i] is the log-likelihood of the parameters after i M-steps
    log_prob, log_norm, mean_ll = evaluate(0)
    history: List[float] = [mean_ll]
    progress = tqdm(
        range(max_iter),
        desc=f"EM (K={K})",
        leave=False,
        disable=not logger.isEnabledFor(logging.INFO),
    )
    for iteration in progress:
        resp = np.exp(log_prob - log_norm[:, None])

        # M-step
        nk = resp.sum(axis=0)
        weights = nk / n
        alive = nk > 10 * np.finfo(np.float64).tiny
        safe_nk = np.where(alive, nk, 1.0)[:, None]
        new_means = (resp.T @ data) / safe_nk
        avg_x2 = (resp.T @ (data ** 2)) / safe_nk
        new_vars = np.maximum(avg_x2 - new_means ** 2, variance_floor)
        means = np.where(alive[:, None], new_means, means)
        variances = np.where(alive[:, None], new_vars, variances)

        # E-step
        log_prob, log_norm, mean_ll = evaluate(iteration + 1)
        history.append(mean_ll)
        progress.set_postfix(mean_log_likelihood=f"{mean_ll:.4f}")
        if history[-1] - history[-2] <= rel_tol * abs(history[-2]):
            break

    logger.info(
        f"EM finished after {len(history) - 1} iterations: K={K}, C={dim}, N={n}, "
        f"mean log-likelihood {history[-1]:.4f}"
    )
    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        variance_floor=variance_floor,
        normalized=normalized,
        log_likelihood_history=history,
    )


def gmm_log_density(model: GmmModel, x: np.ndarray) -> float:
    """log p(x | model) for one feature vector; raises DimMismatch on a wrong length."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise DimMismatch(f"GMM expects a {model.dim}-d vector, got shape {x.shape}")
    return float(model.score_batch(x[None, :])[0])
