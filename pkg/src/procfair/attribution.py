"""Shapley-value feature attribution.

``kernel_shap`` solves the Shapley-kernel-weighted least squares over feature
coalitions, with absent features replaced by background rows (marginal
expectation) and the efficiency constraint sum(values) = f(x) - base enforced
exactly through a KKT system. When the coalition budget covers all 2^d - 2
proper coalitions the result equals the exact Shapley values.

``exact_shapley`` is an independent enumeration oracle used to verify the
approximation; it deliberately shares no solver code with ``kernel_shap``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Explanation",
    "ExplanationSet",
    "ShapConfig",
    "kernel_shap",
    "exact_shapley",
    "explain_set",
    "sample_background",
    "write_explanations_csv",
    "read_explanations_csv",
]

DEFAULT_COALITION_CAP = 2048
EXACT_SHAPLEY_MAX_D = 15


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Explanation:
    """Importance score per feature for one prediction."""

    values: np.ndarray
    base_value: float
    target: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.isfinite(values).all():
            raise ValueError("non-finite attribution values")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "base_value", float(self.base_value))
        object.__setattr__(self, "target", float(self.target))


@dataclass(frozen=True)
class ExplanationSet:
    """Attribution matrix for a batch of explained instances."""

    values: np.ndarray
    base_values: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError("values must be a non-empty (n, d) matrix")
        base = np.asarray(self.base_values, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if base.shape != (values.shape[0],) or targets.shape != (values.shape[0],):
            raise ValueError("base_values/targets must have one entry per row")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != values.shape[1]:
            raise ValueError("feature_names length does not match d")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "base_values", _readonly(base))
        object.__setattr__(self, "targets", _readonly(targets))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> Explanation:
        return Explanation(self.values[i], float(self.base_values[i]), float(self.targets[i]))


@dataclass(frozen=True)
class ShapConfig:
    """Kernel SHAP settings.

    ``n_coalitions=None`` resolves to min(2^d - 2, 2048) at explanation time.
    The empty and full coalitions are handled by the base value and the
    efficiency constraint rather than as regression rows. ``ridge`` is the
    fallback regularization applied only if the unregularized system is
    singular.
    """

    background: np.ndarray
    n_coalitions: int | None = None
    ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        background = np.atleast_2d(np.asarray(self.background, dtype=float))
        if background.shape[0] < 1:
            raise ValueError("background needs at least one row")
        if not np.isfinite(background).all():
            raise ValueError("background contains non-finite values")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "background", _readonly(background))

    def resolved_budget(self, d: int) -> int:
        budget = self.n_coalitions if self.n_coalitions is not None else min(2**d - 2, DEFAULT_COALITION_CAP)
        if budget < d:
            raise ValueError(f"n_coalitions={budget} is below the feature count {d}")
        return budget


def sample_background(X, size: int = 100, seed: int = 0) -> np.ndarray:
    """Seeded sample of rows (without replacement) to serve as background."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = min(size, X.shape[0])
    rng = np.random.default_rng(seed)
    return X[rng.choice(X.shape[0], size=k, replace=False)]


def _shapley_kernel_weight(d: int, s: int) -> float:
    return (d - 1) / (math.comb(d, s) * s * (d - s))


def _all_proper_coalitions(d: int) -> tuple[np.ndarray, np.ndarray]:
    codes = np.arange(1, 2**d - 1, dtype=np.int64)
    Z = ((codes[:, None] >> np.arange(d)) & 1).astype(bool)
    sizes = Z.sum(axis=1)
    weights = np.array([_shapley_kernel_weight(d, int(s)) for s in sizes])
    return Z, weights


def _sampled_coalitions(d: int, budget: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # Sizes drawn from the Shapley-kernel distribution; each draw is paired
    # with its complement (same kernel weight), so rows get uniform weights.
    sizes = np.arange(1, d)
    probs = (d - 1) / (sizes * (d - sizes))
    probs = probs / probs.sum()
    n_pairs = max(budget // 2, 1)
    Z = np.zeros((2 * n_pairs, d), dtype=bool)
    drawn = rng.choice(sizes, size=n_pairs, p=probs)
    for i, s in enumerate(drawn):
        members = rng.choice(d, size=int(s), replace=False)
        Z[2 * i, members] = True
        Z[2 * i + 1] = ~Z[2 * i]
    return Z, np.ones(len(Z))


def _coalitions(d: int, budget: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if 2**d - 2 <= budget:
        return _all_proper_coalitions(d)
    return _sampled_coalitions(d, budget, rng)


def _masked_values(predict_fn, X: np.ndarray, background: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Mean model output per (row, coalition): present features come from the
    row, absent ones from each background row, averaged."""
    n, d = X.shape
    n_c = Z.shape[0]
    k = background.shape[0]
    out = np.empty((n, n_c))
    rows_per_chunk = max(1, 500_000 // (n_c * k))
    for start in range(0, n, rows_per_chunk):
        chunk = X[start : start + rows_per_chunk]
        masked = np.where(Z[None, :, None, :], chunk[:, None, None, :], background[None, None, :, :])
        preds = np.asarray(predict_fn(masked.reshape(-1, d)), dtype=float)
        out[start : start + len(chunk)] = preds.reshape(len(chunk), n_c, k).mean(axis=2)
    return out


def _solve_constrained_wls(Z, weights, V_centered, constraints, ridge):
    """Weighted least squares per row of V_centered with the per-row equality
    constraint sum(phi) = constraints[row]. Returns an (n, d) matrix."""
    Zf = Z.astype(float)
    d = Zf.shape[1]
    A = Zf.T @ (weights[:, None] * Zf)
    B = (Zf * weights[:, None]).T @ V_centered.T  # (d, n)
    rhs = np.vstack([B, np.asarray(constraints, dtype=float)[None, :]])

    def attempt(reg: float) -> np.ndarray:
        kkt = np.zeros((d + 1, d + 1))
        kkt[:d, :d] = A + reg * np.eye(d) if reg else A
        kkt[:d, d] = 1.0
        kkt[d, :d] = 1.0
        solution = np.linalg.solve(kkt, rhs)
        return solution[:d].T

    try:
        phi = attempt(0.0)
        if np.isfinite(phi).all():
            return phi
    except np.linalg.LinAlgError:
        pass
    try:
        phi = attempt(ridge)
        if np.isfinite(phi).all():
            return phi
    except np.linalg.LinAlgError:
        pass
    raise np.linalg.LinAlgError("singular attribution regression system (even with ridge)")


def explain_set(predict_fn, X, config: ShapConfig, feature_names=None) -> ExplanationSet:
    """Kernel SHAP for every row of X with a shared background and a shared
    coalition sample, so equal rows receive equal explanations."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    background = config.background
    if background.shape[1] != d:
        raise ValueError("background dimensionality does not match the data")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(d))
    if len(names) != d:
        raise ValueError("feature_names length does not match d")

    targets = np.asarray(predict_fn(X), dtype=float).ravel()
    base = float(np.mean(predict_fn(background)))
    if d == 1:
        values = (targets - base)[:, None]
        return ExplanationSet(values, np.full(n, base), targets, names)

    rng = np.random.default_rng(config.seed)
    Z, weights = _coalitions(d, config.resolved_budget(d), rng)
    V = _masked_values(predict_fn, X, background, Z)
    values = _solve_constrained_wls(Z, weights, V - base, targets - base, config.ridge)
    return ExplanationSet(values, np.full(n, base), targets, names)


def kernel_shap(predict_fn, x, config: ShapConfig) -> Explanation:
    """Kernel SHAP attribution of a single instance."""
    x = np.asarray(x, dtype=float).ravel()
    return explain_set(predict_fn, x[None, :], config).row(0)


def exact_shapley(predict_fn, x, background) -> Explanation:
    """Exact Shapley values by full coalition enumeration with the
    marginal-expectation value function. Cost 2^d; refuses d > 15.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    if d > EXACT_SHAPLEY_MAX_D:
        raise ValueError(f"exact enumeration limited to d <= {EXACT_SHAPLEY_MAX_D}")
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[1] != d:
        raise ValueError("background dimensionality does not match x")

    values = np.empty(2**d)
    for code in range(2**d):
        present = np.array([(code >> j) & 1 for j in range(d)], dtype=bool)
        masked = np.where(present, x, background)
        values[code] = float(np.mean(predict_fn(masked)))

    factorial = [math.factorial(i) for i in range(d + 1)]
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        for code in range(2**d):
            if code & bit:
                continue
            s = bin(code).count("1")
            weight = factorial[s] * factorial[d - 1 - s] / factorial[d]
            phi[j] += weight * (values[code | bit] - values[code])
    return Explanation(phi, float(values[0]), float(values[2**d - 1]))


# ---------------------------------------------------------------------------
# CSV interchange (consumed by plotting and the two-sample tests)


def write_explanations_csv(explanations: ExplanationSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(explanations.feature_names) + ["base", "target"])
        for i in range(explanations.n):
            row = [repr(float(v)) for v in explanations.values[i]]
            row.append(repr(float(explanations.base_values[i])))
            row.append(repr(float(explanations.targets[i])))
            writer.writerow(row)


def read_explanations_csv(path) -> ExplanationSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[-2:] != ["base", "target"]:
        raise ValueError("not an explanation CSV (missing base/target columns)")
    data = np.array([[float(c) for c in row] for row in rows[1:]])
    return ExplanationSet(data[:, :-2], data[:, -2], data[:, -1], tuple(header[:-2]))
