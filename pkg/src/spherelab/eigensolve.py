"""Lowest eigenpairs of symmetric pencils K u = lambda M u, with multiplicity
clustering and guarded threshold counts.

Solver strategy: dense symmetric solve below a cutoff dimension; above it,
shift-invert Lanczos with the shift placed under a Gershgorin lower bound of
the pencil, which reaches ~1e-12 residuals in a fraction of the time that
diagonally preconditioned LOBPCG needs for 1e-8 (LOBPCG remains available as
an explicit method, with automatic fallback).  All randomness comes from one
seed, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError
from .fem import SymmetricForm, _as_matrix

DEFAULT_SEED = 42
DENSE_CUTOFF = 400


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray          # ascending
    eigenvectors: np.ndarray         # columns, M-orthonormal
    residual_norms: np.ndarray       # ||K u - lambda M u|| / ||M u||
    clusters: list                   # partition of indices by relative gap
    method: str
    seed: int

    @property
    def count(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class ThresholdCount:
    below: int
    at: int
    threshold: float
    guard_band: float
    stable: bool


def solve_lowest(K, M, count: int, tol: float = 1e-8, seed: int = DEFAULT_SEED,
                 *, method: str = "auto", dense_cutoff: int = DENSE_CUTOFF,
                 maxiter: int = 400, deflate_constant: bool = False,
                 cluster_rel_tol: float = 0.02,
                 spectral_floor: float | None = None) -> SpectrumResult:
    """Lowest `count` eigenpairs of the pencil (K, M), deterministic per seed.

    ``spectral_floor``: a rigorous lower bound on the pencil spectrum, when
    the caller knows one (0.0 for any Laplace pencil: the stiffness form is a
    sum of element Gram matrices).  The shift-invert path places its shift
    just below this bound; without it a Gershgorin bound is used, which can
    be extremely pessimistic on meshes with small mass entries and slightly
    obtuse triangles, ruining the shifted spectrum's separation.
    """
    A = sp.csr_matrix(_as_matrix(K))
    B = sp.csr_matrix(_as_matrix(M))
    n = A.shape[0]
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValidationError(f"pencil shapes differ: {A.shape} vs {B.shape}")
    if not 0 < count < max(n // 2, 2):
        raise ValidationError(f"count must lie in (0, dimension/2), got {count} for n={n}")

    if method == "auto":
        method = "dense" if (n <= dense_cutoff or 5 * (count + 8) >= n) else "shift-invert"

    if method == "dense":
        vals, vecs = _solve_dense(A, B, count)
        how = "dense"
    elif method == "lobpcg":
        vals, vecs, ok = _solve_lobpcg(A, B, count, tol, seed, maxiter, deflate_constant)
        how = "lobpcg"
        if not ok:
            vals, vecs = _solve_shift_invert(A, B, count, seed, spectral_floor)
            how = "lobpcg->shift-invert"
    elif method == "shift-invert":
        vals, vecs = _solve_shift_invert(A, B, count, seed, spectral_floor)
        how = "shift-invert"
    else:
        raise ValidationError(f"unknown solver method {method!r}")

    vals, vecs = _orthonormalize(B, vals, vecs)
    res = _residuals(A, B, vals, vecs)
    if np.any(res > tol):
        raise SolverError(
            f"eigensolver ({how}) did not reach tol={tol:.1e}; "
            f"worst residual {res.max():.3e} at pair {int(np.argmax(res))}")
    return SpectrumResult(eigenvalues=vals, eigenvectors=vecs, residual_norms=res,
                          clusters=cluster(vals, cluster_rel_tol), method=how, seed=seed)


def _solve_dense(A, B, count):
    vals, vecs = scipy.linalg.eigh(A.toarray(), B.toarray(),
                                   subset_by_index=[0, count - 1])
    return vals, vecs


def _solve_lobpcg(A, B, count, tol, seed, maxiter, deflate_constant):
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    block = min(count + max(8, count // 4), (n - 1) // 5)
    block = max(block, count)
    X = rng.standard_normal((n, block))

    d = A.diagonal() + B.diagonal()
    d = np.where(d > 1e-12 * np.abs(d).max(), d, 1e-12 * np.abs(d).max())

    def _jacobi(x):
        return x / (d[:, None] if x.ndim == 2 else d)

    precond = spla.LinearOperator((n, n), matvec=_jacobi, matmat=_jacobi, dtype=float)

    Y = None
    if deflate_constant:
        ones = np.ones((n, 1))
        Y = ones / np.sqrt(float(ones[:, 0] @ (B @ ones[:, 0])))
        want = count - 1
    else:
        want = count

    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals, vecs = spla.lobpcg(A, X, B=B, M=precond, Y=Y, tol=tol * 0.1,
                                 maxiter=maxiter, largest=False)
    order = np.argsort(vals)
    vals, vecs = vals[order][:want], vecs[:, order][:, :want]
    if deflate_constant:
        u0 = (Y[:, 0] if Y is not None else np.ones(n))
        vals = np.concatenate([[0.0], vals])
        vecs = np.column_stack([u0, vecs])
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    ok = bool(np.all(_residuals(A, B, vals, vecs) < tol)) and vals.shape[0] == count
    return vals, vecs, ok


def _gershgorin_floor(A, B) -> float:
    """Lower bound for pencil eigenvalues when B is (nearly) diagonal."""
    absA = abs(A)
    radii = np.asarray(absA.sum(axis=1)).ravel() - np.abs(A.diagonal())
    lo = (A.diagonal() - radii) / B.diagonal()
    return float(lo.min())


def _solve_shift_invert(A, B, count, seed, spectral_floor=None):
    if (B - sp.diags(B.diagonal())).nnz != 0:
        raise SolverError("shift-invert path requires a diagonal mass matrix")
    sigma = _gershgorin_floor(A, B) if spectral_floor is None else float(spectral_floor)
    sigma = sigma - 0.01 * max(1.0, abs(sigma)) - 1.0
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(A.shape[0])
    try:
        vals, vecs = spla.eigsh(A, k=count, M=B, sigma=sigma, which="LM", v0=v0)
    except Exception as exc:       # ARPACK failures carry little structure
        raise SolverError(f"shift-invert Lanczos failed: {exc}") from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _orthonormalize(B, vals, vecs):
    """Enforce B-orthonormality and a deterministic sign convention."""
    G = vecs.T @ (B @ vecs)
    L = scipy.linalg.cholesky(G, lower=True)
    vecs = scipy.linalg.solve_triangular(L, vecs.T, lower=True).T
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def _residuals(A, B, vals, vecs):
    R = A @ vecs - (B @ vecs) * vals
    num = np.linalg.norm(R, axis=0)
    den = np.linalg.norm(B @ vecs, axis=0)
    return num / np.maximum(den, 1e-300)


def cluster(eigenvalues, rel_tol: float = 0.02, zero_tol: float | None = None) -> list:
    """Partition ascending eigenvalues into near-multiplicity groups.

    Consecutive values join a group when their gap is below rel_tol times the
    larger magnitude; values within zero_tol of zero always form one group.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0:
        return []
    if zero_tol is None:
        zero_tol = 1e-6 * max(1.0, float(np.abs(lam).max()))
    is_zero = np.abs(lam) <= zero_tol
    groups = [[0]]
    for i in range(1, lam.size):
        j = groups[-1][-1]
        if is_zero[i] and is_zero[j]:
            joined = True
        elif is_zero[i] != is_zero[j]:
            joined = False
        else:
            joined = (lam[i] - lam[j]) <= rel_tol * max(abs(lam[i]), abs(lam[j]))
        if joined:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def count_threshold(spec: SpectrumResult, threshold: float,
                    guard: float | None = None) -> ThresholdCount:
    """Guarded counts below / at a threshold, with a +-25% stability recount."""
    if guard is None:
        guard = 0.05 * abs(threshold)
    if guard <= 0:
        raise ValidationError("threshold guard must be positive "
                              "(pass one explicitly for threshold 0)")
    lam = spec.eigenvalues
    if lam.max() < threshold + guard:
        raise ValidationError(
            f"spectrum ends at {lam.max():.6g}, below threshold+guard "
            f"{threshold + guard:.6g}; increase count")

    def counts(g):
        return int(np.sum(lam < threshold - g)), int(np.sum(np.abs(lam - threshold) <= g))

    below, at = counts(guard)
    stable = counts(0.75 * guard) == (below, at) == counts(1.25 * guard)
    return ThresholdCount(below=below, at=at, threshold=float(threshold),
                          guard_band=float(guard), stable=bool(stable))


def spectrum_csv(spec: SpectrumResult) -> str:
    """Spectrum CSV text; the only non-deterministic byte is the stamp line."""
    cluster_id = np.empty(spec.count, dtype=int)
    for cid, members in enumerate(spec.clusters):
        cluster_id[members] = cid
    stamp = datetime.now(timezone.utc).isoformat()
    lines = [f"# generated {stamp}", "index,eigenvalue,residual,cluster_id"]
    for i, (lam, r) in enumerate(zip(spec.eigenvalues, spec.residual_norms)):
        lines.append(f"{i},{lam:.16e},{r:.6e},{cluster_id[i]}")
    return "\n".join(lines) + "\n"


def save_spectrum_csv(spec: SpectrumResult, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(spectrum_csv(spec))
