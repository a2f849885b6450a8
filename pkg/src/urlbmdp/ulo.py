"""Unsupervised decoding oracles: PCA + k-means and diagonal Gaussian mixtures.

Each fitted decoder maps a batch of observations to cluster indices; every
decoder carries a label permutation applied after its raw prediction so that
label matching never touches the fitted parameters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, InsufficientDataError

_MAX_EXHAUSTIVE = 7


@dataclass(frozen=True)
class UloConfig:
    method: str = "kmeans"
    clusters_per_level: tuple[int, ...] = (1, 3, 3, 3, 3, 3)
    use_pca: bool = False
    pca_dims: int | None = None  # None: min(d, m + 1)
    max_iters: int = 100
    tol: float = 1e-6
    restarts: int = 5
    variance_floor: float = 1e-4
    pooled: bool = False

    def __post_init__(self):
        if self.method not in ("kmeans", "gmm"):
            raise ContractViolation(f"unknown ULO method {self.method!r}")
        if self.tol <= 0 or self.restarts < 1 or self.max_iters < 1:
            raise ContractViolation("need tol > 0, restarts >= 1, max_iters >= 1")
        if self.variance_floor <= 0:
            raise ContractViolation("variance_floor must be positive")
        if not self.clusters_per_level or min(self.clusters_per_level) < 1:
            raise ContractViolation("cluster counts must be positive")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise ContractViolation("pca_dims must be positive")
        object.__setattr__(self, "clusters_per_level", tuple(int(m) for m in self.clusters_per_level))

    def decoded_sizes(self) -> tuple[int, ...]:
        """Number of labels each level's decoder emits."""
        if self.pooled:
            return (max(self.clusters_per_level),) * len(self.clusters_per_level)
        return self.clusters_per_level


# -- decoders -------------------------------------------------------------------


def _identity(m: int) -> np.ndarray:
    return np.arange(m, dtype=np.int64)


def _as_perm(perm, m: int) -> np.ndarray:
    p = _identity(m) if perm is None else np.asarray(perm, dtype=np.int64)
    if sorted(p.tolist()) != list(range(m)):
        raise ContractViolation(f"{p.tolist()} is not a permutation of range({m})")
    p = p.copy()
    p.setflags(write=False)
    return p


class _Permuted:
    """Shared behaviour: raw prediction followed by the label permutation."""

    perm: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.perm)

    def _check_dim(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = self.dim
        if d is not None and X.shape[1] != d:
            raise ContractViolation(f"observation dimension {X.shape[1]} != decoder dimension {d}")
        return X

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.perm[self.raw_predict(self._check_dim(X))]

    def with_permutation(self, p) -> "_Permuted":
        """Decoder whose output is ``p`` applied after this decoder's output."""
        p = _as_perm(p, self.n_states)
        return replace(self, perm=p[self.perm])

    def swapped(self, s: int, t: int) -> "_Permuted":
        p = _identity(self.n_states)
        p[s], p[t] = t, s
        return self.with_permutation(p)


@dataclass(frozen=True)
class ConstantDecoder(_Permuted):
    """Maps every observation to one label (the raw label 0)."""

    level: int
    size: int
    perm: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "perm", _as_perm(self.perm, self.size))

    dim = None

    def raw_predict(self, X):
        return np.zeros(len(X), dtype=np.int64)

    def outlier_score(self, X):
        return np.zeros(len(np.atleast_2d(X)))


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances (used where ties must be exact)."""
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _sqdist_fast(X: np.ndarray, C: np.ndarray, x_norms: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared distances via the expansion |x|^2 - 2 x.c + |c|^2."""
    if x_norms is None:
        x_norms = np.einsum("ij,ij->i", X, X)
    d = x_norms[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d, 0.0)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return top + np.log(np.exp(a - top).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class CentroidDecoder(_Permuted):
    """Nearest centroid, optionally after a PCA projection.

    Ties go to the lowest pre-permutation index.
    """

    level: int
    centers: np.ndarray
    perm: np.ndarray = None
    pca_mean: np.ndarray | None = None
    pca_proj: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "perm", _as_perm(self.perm, len(self.centers)))

    @property
    def dim(self) -> int:
        return self.centers.shape[1] if self.pca_proj is None else self.pca_proj.shape[1]

    def transform(self, X):
        if self.pca_proj is None:
            return X
        return (X - self.pca_mean) @ self.pca_proj.T

    def raw_predict(self, X):
        return np.argmin(_sqdist(self.transform(X), self.centers), axis=1)

    def outlier_score(self, X):
        """Squared distance to the nearest centroid."""
        return _sqdist(self.transform(self._check_dim(X)), self.centers).min(axis=1)

    def centers_in_input_space(self) -> np.ndarray:
        if self.pca_proj is None:
            return self.centers
        return self.pca_mean + self.centers @ self.pca_proj


def _log_joint(X, weights, means, variances):
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    precision = 1.0 / variances
    quad = (X * X) @ precision.T - 2.0 * X @ (means * precision).T + (means * means * precision).sum(axis=1)
    lognorm = np.log(2 * np.pi * variances).sum(axis=-1)
    return logw[None] - 0.5 * (quad + lognorm[None])


@dataclass(frozen=True)
class GmmDecoder(_Permuted):
    """MAP classifier of a diagonal-covariance Gaussian mixture."""

    level: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    perm: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "perm", _as_perm(self.perm, len(self.weights)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def responsibilities(self, X):
        lj = _log_joint(self._check_dim(X), self.weights, self.means, self.variances)
        return np.exp(lj - _logsumexp_rows(lj))

    def raw_predict(self, X):
        return np.argmax(_log_joint(X, self.weights, self.means, self.variances), axis=1)

    def outlier_score(self, X):
        """Squared Mahalanobis distance to the nearest component."""
        X = self._check_dim(X)
        return (((X[:, None, :] - self.means[None]) ** 2) / self.variances[None]).sum(axis=-1).min(axis=1)


def decoder_predict(dec, x) -> int | np.ndarray:
    """Decode one observation (returns int) or a batch (returns array)."""
    x = np.asarray(x, dtype=float)
    out = dec.predict(x)
    return int(out[0]) if x.ndim == 1 else out


# -- clustering kernels -----------------------------------------------------------


class KMeansFit(NamedTuple):
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    history: list


def _kmeanspp(X, m, rng):
    n = len(X)
    centers = np.empty((m, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = min(int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right")), n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, centers, max_iters, tol):
    m = len(centers)
    x_norms = np.einsum("ij,ij->i", X, X)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        d = _sqdist_fast(X, centers, x_norms)
        labels = np.argmin(d, axis=1)
        cost = d[np.arange(len(X)), labels]
        history.append(float(cost.sum()))
        counts = np.bincount(labels, minlength=m)
        onehot = np.zeros((len(X), m))
        onehot[np.arange(len(X)), labels] = 1.0
        new = centers.copy()
        filled = counts > 0
        new[filled] = (onehot.T @ X)[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(cost))
            new[j] = X[far]
            cost[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    d = _sqdist_fast(X, centers, x_norms)
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(len(X)), labels].sum())
    history.append(inertia)
    return KMeansFit(centers, labels, inertia, it, history)


def kmeans_fit(data, m: int, cfg: UloConfig | None = None, rng=None, init=None) -> KMeansFit:
    """k-means++ seeding and Lloyd iterations, best of ``cfg.restarts`` runs.

    Empty clusters are reseeded to the point farthest from its center. With
    ``init`` (an m x d center matrix) a single Lloyd run starts from it
    instead.
    """
    cfg = cfg or UloConfig()
    rng = np.random.default_rng(rng)
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ContractViolation("data must be an n x d matrix")
    if m < 1 or len(X) < m:
        raise InsufficientDataError(f"{len(X)} samples cannot fill {m} clusters")
    if init is not None:
        init = np.array(init, dtype=float)
        if init.shape != (m, X.shape[1]):
            raise ContractViolation(f"initial centers have shape {init.shape}, need {(m, X.shape[1])}")
        return _lloyd(X, init, cfg.max_iters, cfg.tol)
    best = None
    for _ in range(cfg.restarts):
        fit = _lloyd(X, _kmeanspp(X, m, rng), cfg.max_iters, cfg.tol)
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def pca_fit(data, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and ``(n_components, d)`` projection onto top eigenvectors.

    Rows are unit eigenvectors of the sample covariance in descending
    eigenvalue order; each row's largest-magnitude entry is made positive.
    """
    X = np.asarray(data, dtype=float)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("PCA needs at least two samples")
    if not 1 <= n_components <= d:
        raise ContractViolation(f"cannot keep {n_components} of {d} dimensions")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(d, d)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:n_components]
    proj = evecs[:, order].T
    signs = np.sign(proj[np.arange(n_components), np.argmax(np.abs(proj), axis=1)])
    proj = proj * np.where(signs == 0, 1.0, signs)[:, None]
    return mean, proj


class GmmFit(NamedTuple):
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: list
    n_iter: int


def _m_step(X, resp, floor, prev=None):
    nk = resp.sum(axis=0)
    weights = nk / len(X)
    m, d = resp.shape[1], X.shape[1]
    means = np.zeros((m, d)) if prev is None else prev[1].copy()
    variances = np.ones((m, d)) if prev is None else prev[2].copy()
    live = nk > 1e-12
    if live.any():
        first = resp.T @ X
        second = resp.T @ (X * X)
        mu = first[live] / nk[live, None]
        means[live] = mu
        variances[live] = second[live] / nk[live, None] - mu * mu
    return weights, means, np.maximum(variances, floor)


def gmm_fit(data, m: int, cfg: UloConfig | None = None, rng=None, init=None) -> GmmFit:
    """EM for a diagonal Gaussian mixture, initialized from k-means.

    ``init = (weights, means, variances)`` starts EM from those parameters
    instead of a k-means partition.

    ``log_likelihoods`` holds the mean per-sample log-likelihood after each
    E-step; iteration stops once the gain drops below ``cfg.tol``.
    """
    cfg = cfg or UloConfig(method="gmm")
    X = np.asarray(data, dtype=float)
    if len(X) < m:
        raise InsufficientDataError(f"{len(X)} samples cannot fill {m} components")
    if init is None:
        start = kmeans_fit(X, m, cfg, rng)
        resp = np.zeros((len(X), m))
        resp[np.arange(len(X)), start.labels] = 1.0
        params = _m_step(X, resp, cfg.variance_floor)
    else:
        weights, means, variances = (np.array(a, dtype=float) for a in init)
        if means.shape != (m, X.shape[1]) or variances.shape != means.shape or weights.shape != (m,):
            raise ContractViolation("initial mixture parameters do not match (m, d)")
        params = (weights, means, np.maximum(variances, cfg.variance_floor))
    history = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        lj = _log_joint(X, *params)
        lse = _logsumexp_rows(lj)
        history.append(float(lse.mean()))
        if len(history) > 1 and history[-1] - history[-2] < cfg.tol:
            break
        params = _m_step(X, np.exp(lj - lse), cfg.variance_floor, params)
    return GmmFit(*params, history, it)


def _warm_params(prev, method, m, d):
    """Parameters of a previous decoder usable as a warm start, or None."""
    if method == "gmm" and isinstance(prev, GmmDecoder) and prev.means.shape == (m, d):
        return prev.weights, prev.means, prev.variances
    if method == "kmeans" and isinstance(prev, CentroidDecoder) and len(prev.centers) == m:
        centers = prev.centers_in_input_space()
        if centers.shape[1] == d:
            return centers
    return None


def _fit_level(X, m, level, cfg, rng, prev=None):
    d = X.shape[1]
    warm = None if prev is None else _warm_params(prev, cfg.method, m, d)
    if cfg.method == "gmm":
        fit = gmm_fit(X, m, cfg, rng, init=warm)
        return GmmDecoder(level, fit.weights, fit.means, fit.variances)
    dims = cfg.pca_dims if cfg.pca_dims is not None else min(d, m + 1)
    if cfg.use_pca and dims < d and len(X) >= 2:
        mean, proj = pca_fit(X, dims)
        start = None if warm is None else (warm - mean) @ proj.T
        fit = kmeans_fit((X - mean) @ proj.T, m, cfg, rng, init=start)
        return CentroidDecoder(level, fit.centers, None, mean, proj)
    return CentroidDecoder(level, kmeans_fit(X, m, cfg, rng, init=warm).centers)


def fit_ulo(datasets: Sequence[np.ndarray], cfg: UloConfig, rng, init: Sequence | None = None) -> tuple:
    """Fit one decoder per level (identity permutations).

    In pooled mode a single model is fitted on all levels' observations and
    shared by every level; the level enters through the decoded state's
    position in the trajectory rather than as a feature. ``init`` holds
    previous decoders whose fitted parameters seed a single warm-started
    run (decoders of another kind or size are ignored).
    """
    rng = np.random.default_rng(rng)
    if len(datasets) != len(cfg.clusters_per_level):
        raise ContractViolation(
            f"{len(datasets)} datasets for {len(cfg.clusters_per_level)} configured levels"
        )
    if cfg.pooled:
        X = np.vstack([np.asarray(x, dtype=float) for x in datasets])
        prev = None if init is None else init[0]
        shared = _fit_level(X, max(cfg.clusters_per_level), 1, cfg, rng, prev)
        return tuple(replace(shared, level=h) for h in range(1, len(datasets) + 1))
    prevs = [None] * len(datasets) if init is None else list(init)
    return tuple(
        _fit_level(np.asarray(X, dtype=float), m, h, cfg, rng, prev)
        for h, (X, m, prev) in enumerate(zip(datasets, cfg.clusters_per_level, prevs), start=1)
    )


# -- label agreement ----------------------------------------------------------------


def _confusion(pred, truth, k):
    c = np.zeros((k, k), dtype=np.int64)
    np.add.at(c, (np.asarray(pred), np.asarray(truth)), 1)
    return c


def best_alignment(pred, ref, m: int) -> np.ndarray:
    """Permutation ``p`` maximizing ``mean(p[pred] == ref)``; earliest on ties."""
    if m > _MAX_EXHAUSTIVE:
        raise ContractViolation(f"exhaustive matching limited to {_MAX_EXHAUSTIVE} labels")
    c = _confusion(pred, ref, m)
    best, best_p = -1, None
    for p in itertools.permutations(range(m)):
        score = int(c[np.arange(m), p].sum())
        if score > best:
            best, best_p = score, p
    return np.array(best_p, dtype=np.int64)


def purity(pred, truth) -> float:
    """Fraction decoded correctly under the best relabelling (exhaustive search)."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) == 0:
        return 1.0
    k = int(max(pred.max(), truth.max())) + 1
    if k > _MAX_EXHAUSTIVE:
        raise ContractViolation(f"exhaustive matching limited to {_MAX_EXHAUSTIVE} labels")
    c = _confusion(pred, truth, k)
    best = max(int(c[np.arange(k), p].sum()) for p in itertools.permutations(range(k)))
    return best / len(pred)


# -- text format ---------------------------------------------------------------


def _rows(name, a):
    a = np.atleast_2d(a)
    out = [f"{name} {a.shape[0]} {a.shape[1]}"]
    out += [" ".join(repr(float(v)) for v in row) for row in a]
    return out


def dumps_decoders(decoders: Sequence) -> str:
    """Plain-text checkpoint: one ``decoder <kind>`` ... ``end`` block per level."""
    lines = []
    for dec in decoders:
        kind = {ConstantDecoder: "constant", CentroidDecoder: "centroid", GmmDecoder: "gmm"}[type(dec)]
        lines += [f"decoder {kind}", f"level {dec.level}", "perm " + " ".join(map(str, dec.perm))]
        if kind == "centroid":
            lines += _rows("centers", dec.centers)
            if dec.pca_proj is not None:
                lines += _rows("pca_mean", dec.pca_mean) + _rows("pca_proj", dec.pca_proj)
        elif kind == "gmm":
            lines += _rows("weights", dec.weights) + _rows("means", dec.means)
            lines += _rows("variances", dec.variances)
        lines.append("end")
    return "\n".join(lines) + "\n"


def loads_decoders(text: str) -> tuple:
    lines = iter(ln for ln in text.splitlines() if ln.strip())
    out = []
    for line in lines:
        kind = line.split()[1]
        level = int(next(lines).split()[1])
        perm = [int(v) for v in next(lines).split()[1:]]
        arrays = {}
        for line in lines:
            if line == "end":
                break
            name, r, c = line.split()
            arrays[name] = np.array(
                [[float(v) for v in next(lines).split()] for _ in range(int(r))]
            ).reshape(int(r), int(c))
        if kind == "constant":
            out.append(ConstantDecoder(level, len(perm), perm))
        elif kind == "centroid":
            mean = arrays.get("pca_mean")
            out.append(
                CentroidDecoder(
                    level, arrays["centers"], perm,
                    None if mean is None else mean[0], arrays.get("pca_proj"),
                )
            )
        elif kind == "gmm":
            out.append(GmmDecoder(level, arrays["weights"][0], arrays["means"], arrays["variances"], perm))
        else:
            raise ContractViolation(f"unknown decoder kind {kind!r}")
    return tuple(out)
