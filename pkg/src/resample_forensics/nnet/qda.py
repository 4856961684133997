"""Bayesian quadratic (Gaussian class-conditional) baseline classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError, TrainingError


@dataclass
class QdaModel:
    means: np.ndarray  # (2, d)
    covariances: np.ndarray  # (2, d, d)
    log_priors: np.ndarray  # (2,)

    def __post_init__(self):
        self._chol = []
        self._logdet = []
        for k in range(2):
            try:
                chol = np.linalg.cholesky(self.covariances[k])
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"class {k} covariance is not positive definite") from exc
            self._chol.append(chol)
            self._logdet.append(2.0 * float(np.sum(np.log(np.diag(chol)))))


def qda_fit(features, labels, reg: float = 1e-4) -> QdaModel:
    """Per-class means and covariances, regularized by ``reg * trace / d`` on the diagonal."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).reshape(-1).astype(int)
    if x.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ShapeError("features must be (n, d) with one label each")
    d = x.shape[1]
    means, covs, priors = [], [], []
    for k in (0, 1):
        xk = x[y == k]
        if xk.shape[0] < 2:
            raise TrainingError(f"class {k} needs at least 2 samples")
        mu = xk.mean(axis=0)
        cov = np.atleast_2d(np.cov(xk, rowvar=False))
        lam = reg * max(float(np.trace(cov)), 1e-300) / d
        cov = cov + lam * np.eye(d)
        means.append(mu)
        covs.append(0.5 * (cov + cov.T))
        priors.append(np.log(xk.shape[0] / x.shape[0]))
    return QdaModel(np.array(means), np.array(covs), np.array(priors))


def _log_density(model: QdaModel, k: int, x: np.ndarray) -> np.ndarray:
    diff = x - model.means[k]
    z = np.linalg.solve(model._chol[k], diff.T)
    d = x.shape[1]
    return -0.5 * (np.sum(z * z, axis=0) + model._logdet[k] + d * np.log(2 * np.pi))


def qda_scores(model: QdaModel, features) -> np.ndarray:
    """Log-likelihood ratio of class 1 over class 0 for each row."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.means.shape[1]:
        raise ShapeError("feature length does not match the model")
    return _log_density(model, 1, x) - _log_density(model, 0, x)


def qda_score(model: QdaModel, x) -> float:
    return float(qda_scores(model, x)[0])
