"""Monte Carlo result records and small statistical helpers."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


@dataclass
class Estimate:
    """A Monte Carlo estimate with its standard error.

    ``stderr`` is the sample standard deviation over ``sqrt(replicas)``.
    ``log_value`` is filled when the estimate was accumulated in log space.
    """

    value: float
    stderr: float
    replicas: int
    metadata: dict = field(default_factory=dict)
    log_value: float = None
    flags: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples, metadata=None):
        x = np.asarray(samples, dtype=float).ravel()
        n = x.shape[0]
        se = float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return cls(float(x.mean()), se, n, dict(metadata or {}))

    @classmethod
    def exact(cls, value, metadata=None):
        return cls(float(value), 0.0, 1, dict(metadata or {}))

    def interval(self, k=3.0):
        return self.value - k * self.stderr, self.value + k * self.stderr

    def to_dict(self):
        out = {"value": self.value, "stderr": self.stderr, "replicas": self.replicas}
        if self.log_value is not None:
            out["log_value"] = self.log_value
        if self.flags:
            out["flags"] = list(self.flags)
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def mean_and_stderr(x, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / np.sqrt(n)


def log_mean_exp(logs):
    """``log(mean(exp(logs)))`` and the standard error of that log (delta method)."""
    logs = np.asarray(logs, dtype=float).ravel()
    n = logs.shape[0]
    lm = float(logsumexp(logs) - np.log(n))
    if not np.isfinite(lm):
        return lm, float("nan")
    w = np.exp(logs - lm)
    rel_se = float(w.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return lm, rel_se


def z_score(a, se_a, b, se_b):
    s = np.hypot(se_a, se_b)
    if s == 0:
        return 0.0 if a == b else float("inf") * np.sign(a - b)
    return float((a - b) / s)


def variance_and_stderr(x):
    """Sample variance with its large-sample standard error ``sqrt((m4 - s^4) / n)``."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.shape[0]
    v = float(x.var(ddof=1))
    c = x - x.mean()
    m4 = float((c ** 4).mean())
    return v, float(np.sqrt(max(m4 - v ** 2, 0.0) / n))


def ols_slope(x, y, cov=None):
    """Least-squares slope of ``y`` on ``x`` with its standard error.

    With ``cov`` (covariance of ``y``) the error is the sandwich
    ``a^T cov a`` for the OLS weights ``a``; otherwise residual-based.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    sxx = float((xc ** 2).sum())
    a = xc / sxx
    slope = float(a @ y)
    intercept = float(y.mean() - slope * x.mean())
    if cov is not None:
        se = float(np.sqrt(max(a @ np.asarray(cov) @ a, 0.0)))
    else:
        resid = y - (intercept + slope * x)
        dof = max(x.shape[0] - 2, 1)
        se = float(np.sqrt((resid ** 2).sum() / dof / sxx))
    return slope, se, intercept


def wls_slope(x, y, se):
    """Weighted least-squares slope with weights ``1/se**2``; returns slope, stderr, intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.asarray(se, dtype=float) ** 2
    X = np.stack([np.ones_like(x), x], axis=1)
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return float(coef[1]), float(np.sqrt(cov[1, 1])), float(coef[0])
