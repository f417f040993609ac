"""Two-component Gaussian mixture fitted by expectation maximisation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..errors import DegenerateInput, TooFewSamples

logger = logging.getLogger(__name__)

COV_FLOOR = 1e-8
K = 2


@dataclass
class GmmModel:
    """Mixture parameters plus the EM log-likelihood trace.

    The trace holds the mean per-sample log-likelihood after each E-step, so
    its scale does not depend on the number of samples.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """``log(pi_k N(x | mu_k, Sigma_k))``, shape ``(n, K)``."""
        return _weighted_log_density(np.asarray(x, float), self.weights, self.means, self.covariances)

    def posterior(self, x: np.ndarray) -> np.ndarray:
        lp = self.component_log_density(x)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(
            np.asarray(d["weights"], float),
            np.asarray(d["means"], float),
            np.asarray(d["covariances"], float),
            list(d.get("log_likelihood_trace", [])),
            bool(d.get("converged", False)),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "GmmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _weighted_log_density(x, weights, means, covs):
    n, d = x.shape
    out = np.empty((n, len(weights)))
    for k in range(len(weights)):
        chol = np.linalg.cholesky(covs[k])
        li = np.linalg.inv(chol)
        z = (x - means[k]) @ li.T
        maha = np.einsum("ij,ij->i", z, z)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = np.log(weights[k]) - 0.5 * (maha + logdet + d * np.log(2 * np.pi))
    return out


def _logsumexp_rows(lp: np.ndarray) -> np.ndarray:
    m = lp.max(axis=1, keepdims=True)
    return m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    # clipping eigenvalues of the scatter matrix gives the constrained M-step
    # maximiser, so the floor keeps EM monotone
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, COV_FLOOR)
    return (v * w) @ v.T


def m_step(x: np.ndarray, resp: np.ndarray):
    """Weighted mean, covariance and weight per component."""
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, np.finfo(float).tiny)
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], x.shape[1], x.shape[1]))
    for k in range(resp.shape[1]):
        diff = x - means[k]
        covs[k] = _floor_covariance((diff * resp[:, k, None]).T @ diff / nk[k])
    return weights, means, covs


def _random_partition(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Randomly distribute the samples into two classes.

    The split is a random hyperplane in feature space with a random balance
    point. An independent coin flip per sample would give two classes with
    identical statistics, which is a fixed point of EM.
    """
    direction = rng.normal(size=x.shape[1])
    direction /= np.linalg.norm(direction)
    proj = x @ direction
    threshold = np.quantile(proj, rng.uniform(0.25, 0.75))
    labels = (proj > threshold).astype(int)
    if labels.min() == labels.max():
        labels = (proj >= np.median(proj)).astype(int)
    return labels


def _run_em(x, resp, max_iter, tol):
    weights, means, covs = m_step(x, resp)
    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        lp = _weighted_log_density(x, weights, means, covs)
        norm = _logsumexp_rows(lp)
        trace.append(float(norm.mean()))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        resp = np.exp(lp - norm)
        weights, means, covs = m_step(x, resp)
    return GmmModel(weights, means, covs, trace, converged)


def fit_gmm_em(
    samples,
    init: str = "random_partition",
    labels=None,
    max_iter: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
    n_init: int = 4,
    max_samples: int | None = 100_000,
) -> GmmModel:
    """Fit a 2-component GMM to feature samples (e.g. ``(I, Q)`` pairs).

    Parameters
    ----------
    samples : array_like, shape (n, d)
    init : {"random_partition", "user_labels"}
        ``random_partition`` starts from ``n_init`` random two-class splits of
        the samples and keeps the fit with the highest final likelihood.
        ``user_labels`` starts from ``labels`` (0 = unlabeled, 1 = background,
        2 = tissue), mapping background to component 0 and tissue to 1.
    max_iter, tol
        EM stops when the relative change of the log-likelihood is below
        ``tol`` or after ``max_iter`` E-steps.
    seed : int
        Seeds both the subsampling and the random partitions.
    max_samples : int or None
        Random subsample size used for fitting.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("samples must have shape (n, d)")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if len(x) < 2 * K:
        raise TooFewSamples(f"need at least {2 * K} samples, got {len(x)}")
    if np.all(np.ptp(x, axis=0) == 0):
        raise DegenerateInput("all samples are identical")
    rng = np.random.default_rng(seed)
    lab = None if labels is None else np.asarray(labels).ravel()
    if max_samples is not None and len(x) > max_samples:
        pick = np.sort(rng.choice(len(x), size=max_samples, replace=False))
        x = x[pick]
        lab = None if lab is None else lab[pick]

    if init == "user_labels":
        if lab is None or len(lab) != len(x):
            raise ValueError("user_labels init needs one label per sample")
        bg, fg = lab == 1, lab == 2
        if bg.sum() < 2 or fg.sum() < 2:
            raise TooFewSamples("user labels need at least 2 background and 2 tissue samples")
        seed_x = x[bg | fg]
        resp = np.stack([bg[bg | fg], fg[bg | fg]], axis=1).astype(float)
        weights, means, covs = m_step(seed_x, resp)
        lp = _weighted_log_density(x, weights, means, covs)
        start = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        model = _run_em(x, start, max_iter, tol)
    elif init == "random_partition":
        model = None
        for r in range(n_init):
            part = _random_partition(x, rng)
            cand = _run_em(x, np.eye(K)[part], max_iter, tol)
            logger.debug("EM start %d: %d iterations, mean log-lik %.6f", r, len(cand.log_likelihood_trace),
                         cand.log_likelihood_trace[-1])
            if model is None or cand.log_likelihood_trace[-1] > model.log_likelihood_trace[-1]:
                model = cand
    else:
        raise ValueError(f"unknown init {init!r}")
    if not model.converged:
        logger.info("EM reached max_iter=%d without meeting tol=%g", max_iter, tol)
    return model


def select_tissue_component(gmm: GmmModel, modality: str) -> int:
    """Index of the tissue component.

    Blockface tissue is the more chromatic cluster (larger ``|(I, Q)|``);
    stained histology tissue is the cluster with larger ``Q``.
    """
    if modality == "blockface":
        return int(np.argmax(np.linalg.norm(gmm.means, axis=1)))
    if modality == "histology":
        return int(np.argmax(gmm.means[:, -1]))
    raise ValueError(f"unknown modality {modality!r}")


def classify_samples(x, gmm: GmmModel, tissue_component: int) -> np.ndarray:
    """Boolean tissue flags; posterior exactly 0.5 counts as background."""
    # posterior > 0.5 for two components is a strict log-density comparison,
    # which keeps exact ties on the background side without rounding noise
    lp = gmm.component_log_density(np.asarray(x, float))
    other = np.delete(lp, tissue_component, axis=1).max(axis=1)
    return lp[:, tissue_component] > other
