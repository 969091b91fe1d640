"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations exist for each kernel: a numba-jitted
one (default) and a pure-numpy one.  Selection order:

1. ``set_backend("numba" | "numpy")`` called at runtime, else
2. the ``EMBATTR_BACKEND`` environment variable, else
3. ``numba`` when importable, ``numpy`` otherwise.

Similarity matrices are computed with BLAS matmul on both paths; the
kernels here cover the parts BLAS cannot express (per-anchor reductions,
top-k selection with deterministic tie handling).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigurationError

_ENV_VAR = "EMBATTR_BACKEND"
_VALID = ("numba", "numpy")
_backend = None
_numba_mod = None


def _numba_kernels():
    global _numba_mod
    if _numba_mod is None:
        from . import _kernels_numba
        _numba_mod = _kernels_numba
    return _numba_mod


def _resolve_default() -> str:
    env = os.environ.get(_ENV_VAR)
    if env is not None:
        if env not in _VALID:
            raise ConfigurationError(
                f"{_ENV_VAR} must be one of {_VALID}, got {env!r}")
        if env == "numba":
            _numba_kernels()
        return env
    try:
        _numba_kernels()
        return "numba"
    except ImportError:
        return "numpy"


def get_backend() -> str:
    global _backend
    if _backend is None:
        _backend = _resolve_default()
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID:
        raise ConfigurationError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba":
        try:
            _numba_kernels()
        except ImportError as exc:
            raise ConfigurationError(f"numba backend unavailable: {exc}") from None
    _backend = name


def supcon_terms(z: np.ndarray, labels: np.ndarray, tau: float,
                 want_grad: bool):
    """Dispatch the contrastive-loss kernel.

    Returns (loss, n_contributing, grad, dloss_dtau); n_contributing == 0
    signals that no anchor had a positive partner.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if get_backend() == "numba":
        return _numba_kernels().supcon_kernel(z, labels, float(tau), want_grad)
    return _supcon_numpy(z, labels, float(tau), want_grad)


def knn_select(sims: np.ndarray, support_labels: np.ndarray, k: int,
               n_classes: int):
    """Dispatch the top-k vote kernel over a (queries, exemplars) matrix."""
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    support_labels = np.ascontiguousarray(support_labels, dtype=np.int64)
    if get_backend() == "numba":
        return _numba_kernels().knn_select_kernel(sims, support_labels,
                                                  int(k), int(n_classes))
    return _knn_select_numpy(sims, support_labels, int(k), int(n_classes))


def _supcon_numpy(z, labels, tau, want_grad):
    n = z.shape[0]
    sim = (z @ z.T) / tau
    off_diag = ~np.eye(n, dtype=bool)
    masked = np.where(off_diag, sim, -np.inf)
    row_max = masked.max(axis=1)
    expd = np.exp(masked - row_max[:, None])
    row_denom = expd.sum(axis=1)
    pos = off_diag & (labels[:, None] == labels[None, :])
    pos_count = pos.sum(axis=1)
    contrib = pos_count > 0
    n_contrib = int(contrib.sum())
    if n_contrib == 0:
        return 0.0, 0, np.zeros((0, 0)), 0.0
    pos_sum = np.where(pos, sim, 0.0).sum(axis=1)
    per_anchor = (row_max + np.log(row_denom)) - np.where(
        contrib, pos_sum / np.maximum(pos_count, 1), 0.0)
    loss = float(per_anchor[contrib].sum() / n_contrib)
    if not want_grad:
        return loss, n_contrib, np.zeros((0, 0)), 0.0
    soft = expd / row_denom[:, None]
    g = np.where(off_diag, soft, 0.0) - np.where(
        pos, 1.0 / np.maximum(pos_count, 1)[:, None], 0.0)
    g[~contrib] = 0.0
    scale = 1.0 / (n_contrib * tau)
    grad = (g + g.T) @ z * scale
    dtau = -float((g * np.where(off_diag, sim, 0.0)).sum()) * scale
    return loss, n_contrib, grad, dtau


def _knn_select_numpy(sims, support_labels, k, n_classes):
    n = sims.shape[0]
    # stable sort keeps ascending exemplar index among equal similarities
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top_labels = support_labels[order]
    top_sims = np.take_along_axis(sims, order, axis=1)
    votes = np.zeros((n, n_classes), dtype=np.int64)
    simsum = np.zeros((n, n_classes), dtype=np.float64)
    rows = np.repeat(np.arange(n), k)
    np.add.at(votes, (rows, top_labels.ravel()), 1)
    np.add.at(simsum, (rows, top_labels.ravel()), top_sims.ravel())
    return votes, simsum
