"""CP/PARAFAC decomposition of dense tensors by alternating least squares.

Tensors are plain row-major ``numpy`` arrays.  A rank-``m`` decomposition is
one ``(n_d, m)`` factor matrix per axis; entry ``i`` of the model is
``sum_r prod_d factors[d][i_d, r]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import prod
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .utils import check_tensor

_LETTERS = "abcdefghijklmnopqrstuvwxy"


@dataclass
class CpFactors:
    factors: list[np.ndarray]
    errors: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.factors = [np.asarray(f, dtype=float) for f in self.factors]
        ranks = {f.shape[1] for f in self.factors}
        if len(ranks) != 1:
            raise ValueError("factor matrices must share one rank")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


def khatri_rao(matrices) -> np.ndarray:
    """Column-wise Kronecker product, first matrix varying slowest."""
    n_cols = matrices[0].shape[1]
    lhs = ",".join(f"{c}z" for c in _LETTERS[: len(matrices)])
    rhs = _LETTERS[: len(matrices)] + "z"
    return np.einsum(f"{lhs}->{rhs}", *matrices).reshape(-1, n_cols)


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def cp_entry(cp: CpFactors, index) -> float:
    index = tuple(index)
    if len(index) != cp.order:
        raise IndexError(f"expected {cp.order} indices, got {len(index)}")
    row = np.ones(cp.rank)
    for f, i in zip(cp.factors, index):
        if not 0 <= i < f.shape[0]:
            raise IndexError(f"index {index} out of range for shape {cp.shape}")
        row = row * f[i]
    return float(row.sum())


def cp_reconstruct(cp: CpFactors) -> np.ndarray:
    letters = _LETTERS[: cp.order]
    lhs = ",".join(f"{c}z" for c in letters)
    return np.einsum(f"{lhs}->{letters}", *cp.factors)


def relative_error(tensor, cp: CpFactors) -> float:
    """``||X - [[A]]|| / ||X||``, or ``||[[A]]||`` when ``X`` is all zeros."""
    X = np.asarray(tensor, dtype=float)
    R = cp_reconstruct(cp)
    if R.shape != X.shape:
        raise ValueError(f"shape mismatch {R.shape} vs {X.shape}")
    norm = np.linalg.norm(X)
    if norm == 0.0:
        return float(np.linalg.norm(R))
    return float(np.linalg.norm(X - R) / norm)


def _mttkrp(X: np.ndarray, factors, mode: int) -> np.ndarray:
    letters = _LETTERS[: X.ndim]
    operands = [X]
    subs = [letters]
    for d, f in enumerate(factors):
        if d != mode:
            operands.append(f)
            subs.append(letters[d] + "z")
    return np.einsum(",".join(subs) + f"->{letters[mode]}z", *operands, optimize=True)


def _rebalance(factors) -> None:
    """Unit-norm columns on all but the last factor, scale moved to the last."""
    last = factors[-1]
    for f in factors[:-1]:
        norms = np.linalg.norm(f, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        f /= safe
        last *= safe


def max_rank(shape) -> int:
    """Largest accepted rank: the biggest product of all-but-one axis lengths."""
    total = prod(shape)
    return max(total // n for n in shape)


def _error(X, factors, norm) -> float:
    R = cp_reconstruct(CpFactors(factors))
    return float(np.linalg.norm(X - R) / norm) if norm > 0 else float(np.linalg.norm(R))


def cp_als(tensor, rank: int, max_iters: int = 500, tol: float = 1e-6, seed: int = 0,
           ridge: float = 1e-9, line_search: bool = True) -> CpFactors:
    """Rank-``rank`` CP decomposition by alternating least squares.

    Each factor is solved from the ridge-regularised normal equations
    ``A_n (V + ridge I) = X_(n) KR(others)`` where ``V`` is the Hadamard
    product of the other factors' Gram matrices.  Iteration stops when the
    relative error improves by less than ``tol`` or after ``max_iters`` sweeps;
    a sweep that makes the fit worse is discarded, so ``errors`` never rises.

    With ``line_search`` each sweep is followed by an extrapolation step
    along the direction of the last update (step ``k ** (1/3)`` at sweep
    ``k``), kept only if it lowers the error.  This shortens the long
    plateaus plain ALS tends to get stuck on.
    """
    X = check_tensor(tensor)
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > max_rank(X.shape):
        raise ValueError(f"rank {rank} exceeds the bound {max_rank(X.shape)} for shape {X.shape}")
    rng = np.random.default_rng(seed)
    factors = [rng.random((n, rank)) for n in X.shape]
    norm = np.linalg.norm(X)
    eye = np.eye(rank)
    errors: list[float] = []
    prev = np.inf
    for sweep in range(1, max_iters + 1):
        before = [f.copy() for f in factors]
        for mode in range(X.ndim):
            V = np.ones((rank, rank))
            for d, f in enumerate(factors):
                if d != mode:
                    V *= f.T @ f
            rhs = _mttkrp(X, factors, mode)
            factors[mode] = np.linalg.solve(V + ridge * eye, rhs.T).T
        _rebalance(factors)
        err = _error(X, factors, norm)
        if line_search and sweep > 2:
            step = sweep ** (1.0 / 3.0)
            trial = [f + step * (f - b) for f, b in zip(factors, before)]
            _rebalance(trial)
            trial_err = _error(X, trial, norm)
            if trial_err < err:
                factors, err = trial, trial_err
        if err > prev:
            factors = before
            break
        errors.append(err)
        if prev - err < tol:
            break
        prev = err
    return CpFactors([f.copy() for f in factors], errors)


def balance_scales(cp: CpFactors) -> CpFactors:
    """Spread each component's scale evenly over all factors.

    The reconstruction is unchanged; the factor rows end up on comparable
    scales, which is what the embedding regressors want to fit.
    """
    norms = np.stack([np.linalg.norm(f, axis=0) for f in cp.factors])
    weight = np.prod(norms, axis=0)
    target = weight ** (1.0 / cp.order)
    out = []
    for f, n in zip(cp.factors, norms):
        scale = np.divide(target, n, out=np.zeros_like(n), where=n > 0)
        out.append(f * scale)
    return CpFactors(out, list(cp.errors))


class CPDecomposition(BaseEstimator):
    """Estimator wrapper around :func:`cp_als`.

    Parameters
    ----------
    rank : int
        Number of rank-one components (embedding dimension).
    max_iters : int
        Maximum number of ALS sweeps.
    tol : float
        Stop once a sweep improves the relative error by less than this.
    ridge : float
        Diagonal load on the normal equations.
    random_state : int
        Seed for the uniform ``[0, 1)`` factor initialisation.

    Attributes
    ----------
    factors_ : list of ndarray
        One ``(n_d, rank)`` matrix per tensor axis.
    errors_ : list of float
        Relative reconstruction error after every sweep.
    n_iter_ : int
        Sweeps performed.
    """

    def __init__(self, rank=50, max_iters=500, tol=1e-6, ridge=1e-9, random_state=0):
        self.rank = rank
        self.max_iters = max_iters
        self.tol = tol
        self.ridge = ridge
        self.random_state = random_state

    def fit(self, X, y=None):
        cp = cp_als(X, self.rank, self.max_iters, self.tol, self.random_state, self.ridge)
        self.cp_ = cp
        self.factors_ = cp.factors
        self.errors_ = cp.errors
        self.n_iter_ = len(cp.errors)
        self.reconstruction_error_ = cp.errors[-1] if cp.errors else np.nan
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).factors_

    def inverse_transform(self, factors=None):
        check_is_fitted(self, "cp_")
        cp = self.cp_ if factors is None else CpFactors(factors)
        return cp_reconstruct(cp)


# factor file: magic b"CPFB" | version u32 | order u32 | rank u32 | axis lengths u32*order
#   | factor matrices, each row-major float64, little-endian
_CP_MAGIC = b"CPFB"
_CP_HEAD = struct.Struct("<4sIII")


def save_factors(path, cp: CpFactors) -> None:
    with open(path, "wb") as f:
        f.write(_CP_HEAD.pack(_CP_MAGIC, 1, cp.order, cp.rank))
        f.write(struct.pack(f"<{cp.order}I", *cp.shape))
        for m in cp.factors:
            f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_factors(path) -> CpFactors:
    raw = Path(path).read_bytes()
    magic, version, order, rank = _CP_HEAD.unpack_from(raw)
    if magic != _CP_MAGIC or version != 1:
        raise ValueError(f"{path}: not a factor file")
    off = _CP_HEAD.size
    shape = struct.unpack_from(f"<{order}I", raw, off)
    off += 4 * order
    data = np.frombuffer(raw, dtype="<f8", offset=off)
    if data.size != sum(shape) * rank:
        raise ValueError(f"{path}: truncated payload")
    factors, pos = [], 0
    for n in shape:
        factors.append(data[pos: pos + n * rank].reshape(n, rank).copy())
        pos += n * rank
    return CpFactors(factors)
