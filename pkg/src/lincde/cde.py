"""Exact solvers for linear controlled differential equations.

The model is dZ = sum_i A_i Z dw^i + B dxi with Z_0 = C x0, driven by
piecewise-linear paths.  On each grid segment the driver slopes are
constant, so the update Z <- e^M Z + phi1(M) B dxi with M = sum_i A_i dw^i
is exact, not a discretization.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .paths import DomainError, Path
from .signature import (
    num_words,
    signature_trajectory,
    stieltjes_prefix,
    word_index,
)

MULTIPLIER_WARN_NORM = 1e3


@dataclass(frozen=True)
class DenseCdeParams:
    """Dense parameterization: A is a (d_omega, N, N) stack."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    v: np.ndarray = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise DomainError(f"A must be (d_omega, N, N), got {A.shape}")
        N = A.shape[1]
        if B.ndim != 2 or B.shape[0] != N:
            raise DomainError(f"B must be (N, d_xi), got {B.shape}")
        if C.ndim != 2 or C.shape[0] != N:
            raise DomainError(f"C must be (N, d_0), got {C.shape}")
        v = self.v
        v = np.zeros(N) if v is None else np.asarray(v, dtype=np.float64)
        if v.shape != (N,):
            raise DomainError(f"v must be (N,), got {v.shape}")
        for name, arr in (("A", A), ("B", B), ("C", C), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"non-finite entries in {name}")
        for key, val in (("A", A), ("B", B), ("C", C), ("v", v)):
            object.__setattr__(self, key, val)

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def d_omega(self) -> int:
        return self.A.shape[0]

    @property
    def d_xi(self) -> int:
        return self.B.shape[1]

    @property
    def d_0(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class DiagonalCdeParams:
    """Diagonal parameterization: A_i = diag(V[:, i])."""

    V: np.ndarray
    B: np.ndarray
    C: np.ndarray
    v: np.ndarray = None

    def __post_init__(self):
        V = np.asarray(self.V, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        if V.ndim != 2:
            raise DomainError(f"V must be (N, d_omega), got {V.shape}")
        N = V.shape[0]
        if B.ndim != 2 or B.shape[0] != N:
            raise DomainError(f"B must be (N, d_xi), got {B.shape}")
        if C.ndim != 2 or C.shape[0] != N:
            raise DomainError(f"C must be (N, d_0), got {C.shape}")
        v = self.v
        v = np.zeros(N) if v is None else np.asarray(v, dtype=np.float64)
        if v.shape != (N,):
            raise DomainError(f"v must be (N,), got {v.shape}")
        for name, arr in (("V", V), ("B", B), ("C", C), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"non-finite entries in {name}")
        for key, val in (("V", V), ("B", B), ("C", C), ("v", v)):
            object.__setattr__(self, key, val)

    @property
    def N(self) -> int:
        return self.V.shape[0]

    def to_dense(self) -> DenseCdeParams:
        A = np.stack([np.diag(col) for col in self.V.T])
        return DenseCdeParams(A, self.B, self.C, self.v)


def phi1(M: np.ndarray) -> np.ndarray:
    """Matrix function M^{-1}(e^M - I), extended by its series at M = 0.

    The closed form is singular as M -> 0 with limit I; below a 1-norm of
    1e-2 an 8-term Taylor series is accurate to well under 1e-15.  Away from
    0 the function is read off the exponential of the augmented matrix
    [[M, I], [0, 0]], which is well defined even for singular M.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if np.linalg.norm(M, 1) < 1e-2:
        out = np.eye(n)
        term = np.eye(n)
        for k in range(2, 10):
            term = term @ M
            out = out + term / math.factorial(k)
        return out
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = M
    aug[:n, n:] = np.eye(n)
    return expm(aug)[:n, n:]


def phi1_scalar(a: np.ndarray) -> np.ndarray:
    """Elementwise (e^a - 1)/a with the removable singularity filled in."""
    a = np.asarray(a, dtype=np.float64)
    small = np.abs(a) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, 1.0 + a / 2.0, np.expm1(safe) / safe)


def _check_drivers(params, omega: Path, xi: Path):
    if omega.grid.num_steps != xi.grid.num_steps:
        raise DomainError("omega and xi must share a grid")
    d_omega = params.A.shape[0] if hasattr(params, "A") else params.V.shape[1]
    if omega.num_channels != d_omega:
        raise DomainError(
            f"omega has {omega.num_channels} channels, params expect {d_omega}"
        )
    if xi.num_channels != params.B.shape[1]:
        raise DomainError(
            f"xi has {xi.num_channels} channels, params expect {params.B.shape[1]}"
        )


def solve_dense(
    params: DenseCdeParams,
    omega: Path,
    xi: Path,
    x0: np.ndarray,
    *,
    method: str = "expm",
) -> np.ndarray:
    """State trajectory at every grid node, shape (L+1, N).

    method="expm" forms each segment propagator explicitly; "action" applies
    it through an augmented-matrix exponential action, avoiding the N x N
    exponential (preferable for large widths).
    """
    if method not in ("expm", "action"):
        raise DomainError(f"unknown method {method!r}")
    _check_drivers(params, omega, xi)
    x0 = np.asarray(x0, dtype=np.float64)
    N = params.N
    domega = omega.increments()
    dxi = xi.increments()
    L = domega.shape[0]
    out = np.empty((L + 1, N))
    z = params.C @ x0
    out[0] = z
    warned = False
    for n in range(L):
        M = np.einsum("i,ijk->jk", domega[n], params.A)
        forcing = params.B @ dxi[n]
        if method == "expm":
            E = expm(M)
            if not warned and np.linalg.norm(E, 1) > MULTIPLIER_WARN_NORM:
                warnings.warn(
                    f"segment {n} multiplier 1-norm exceeds {MULTIPLIER_WARN_NORM:g}; "
                    "dynamics are strongly expansive",
                    RuntimeWarning,
                )
                warned = True
            z = E @ z + phi1(M) @ forcing
        else:
            z = _action_step(M, forcing, z)
        if not np.all(np.isfinite(z)):
            raise OverflowError(f"non-finite state after segment {n}")
        out[n + 1] = z
    return out


def _action_step(M: np.ndarray, forcing: np.ndarray, z: np.ndarray) -> np.ndarray:
    """e^M z + phi1(M) forcing by Taylor series actions, never forming e^M.

    Splits the segment into exact sub-steps sized by a spectral norm
    estimate so the series converges in a few matrix-vector products (the
    tolerance check below keeps accuracy even if the estimate is low).
    """
    v = np.full(M.shape[0], 1.0 / np.sqrt(M.shape[0]))
    for _ in range(4):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
    m = max(1, int(np.ceil(1.2 * np.sqrt(nw))) if nw > 0 else 1)
    Ms = M / m
    fs = forcing / m
    for _ in range(m):
        # accumulate sum_k Ms^k z / k! + sum_k Ms^k fs / (k+1)!
        out = z + fs
        vz = z
        vf = fs
        for k in range(1, 60):
            vz = Ms @ vz / k
            vf = Ms @ vf / (k + 1)
            out = out + vz + vf
            if np.linalg.norm(vz) + np.linalg.norm(vf) <= 1e-17 * np.linalg.norm(out):
                break
        z = out
    return z


def solve_dense_euler(
    params: DenseCdeParams, omega: Path, xi: Path, x0: np.ndarray, substeps: int
) -> np.ndarray:
    """Explicit Euler reference on a grid refined by ``substeps`` per segment.

    First-order accurate; used as an independent oracle for solve_dense.
    Returns states at the coarse grid nodes only.
    """
    if substeps < 1:
        raise DomainError(f"substeps must be >= 1, got {substeps}")
    _check_drivers(params, omega, xi)
    x0 = np.asarray(x0, dtype=np.float64)
    domega = omega.increments() / substeps
    dxi = xi.increments() / substeps
    L = domega.shape[0]
    out = np.empty((L + 1, params.N))
    z = params.C @ x0
    out[0] = z
    for n in range(L):
        M = np.einsum("i,ijk->jk", domega[n], params.A)
        forcing = params.B @ dxi[n]
        for _ in range(substeps):
            z = z + M @ z + forcing
        if not np.all(np.isfinite(z)):
            raise OverflowError(f"non-finite state after segment {n}")
        out[n + 1] = z
    return out


def solve_diagonal(
    params: DiagonalCdeParams, omega: Path, xi: Path, x0: np.ndarray
) -> np.ndarray:
    """Segment-exact diagonal solve using scalar exponentials only."""
    _check_drivers(params, omega, xi)
    x0 = np.asarray(x0, dtype=np.float64)
    domega = omega.increments()
    dxi = xi.increments()
    L = domega.shape[0]
    out = np.empty((L + 1, params.N))
    z = params.C @ x0
    out[0] = z
    for n in range(L):
        a = params.V @ domega[n]
        z = np.exp(a) * z + phi1_scalar(a) * (params.B @ dxi[n])
        if not np.all(np.isfinite(z)):
            raise OverflowError(f"non-finite state after segment {n}")
        out[n + 1] = z
    return out


def wronskian(params: DenseCdeParams, omega: Path, s: float, t: float) -> np.ndarray:
    """State-transition matrix over [s, t]: ordered segment propagators."""
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    ks = omega.grid.index_of(s)
    kt = omega.grid.index_of(t)
    W = np.eye(params.N)
    for n in range(ks, kt):
        M = np.einsum("i,ijk->jk", omega.increments()[n], params.A)
        W = expm(M) @ W
    return W


def _word_matrices(A: np.ndarray, depth: int) -> list[np.ndarray]:
    """A_I = A_{i_m} ... A_{i_1} for every word, in flat-index order."""
    d_omega, N, _ = A.shape
    mats = [np.eye(N)[None]]
    for _ in range(depth):
        prev = mats[-1]
        # appending letter k left-multiplies by A_k; flat order interleaves
        # so that word rank r*d+k follows rank r of the parent word
        nxt = np.einsum("kij,wjl->wkil", A, prev).reshape(-1, N, N)
        mats.append(nxt)
    return mats


def solve_via_signature(
    params: DenseCdeParams, omega: Path, xi: Path, x0: np.ndarray, depth: int
):
    """Truncated series solution and its guaranteed tail bound.

    Evaluates Z_t = sum_{|I|<=M} A_I C x0 Sig(w)^I_{0,t}
                  + sum_j sum_{|I|<=M} A_I B_j int_0^t Sig(w)^I_{s,t} dxi^j_s
    and returns (trajectory, tail_bound) where tail_bound[n] dominates the
    Euclidean truncation error at node n whenever the series converges.
    """
    _check_drivers(params, omega, xi)
    if depth < 0:
        raise DomainError(f"depth must be >= 0, got {depth}")
    x0 = np.asarray(x0, dtype=np.float64)
    d_omega = params.d_omega
    d_xi = params.d_xi
    L = omega.num_steps
    N = params.N

    sig = signature_trajectory(omega, depth)  # (L+1, words)
    win = _windowed_xi_integrals(omega, xi, depth)  # (L+1, words, d_xi)

    mats = _word_matrices(params.A, depth)
    out = np.zeros((L + 1, N))
    cx0 = params.C @ x0
    offset = 0
    for k in range(depth + 1):
        nw = d_omega**k
        block = mats[k]  # (nw, N, N)
        sig_k = sig[:, offset : offset + nw]  # (L+1, nw)
        win_k = win[:, offset : offset + nw, :]  # (L+1, nw, d_xi)
        out += np.einsum("tw,wij,j->ti", sig_k, block, cx0)
        out += np.einsum("twj,wik,kj->ti", win_k, block, params.B)
        offset += nw

    lam = max(np.linalg.norm(params.A[i], 2) for i in range(d_omega))
    om_cum = np.concatenate(
        [[0.0], np.cumsum(np.sum(np.abs(omega.increments()), axis=1))]
    )
    # per-channel 1-variation of xi up to each node
    xi_var = np.concatenate(
        [np.zeros((1, d_xi)), np.cumsum(np.abs(xi.increments()), axis=0)]
    )
    bnorms = np.linalg.norm(params.B, axis=0)
    K0 = np.linalg.norm(cx0) + xi_var @ bnorms  # (L+1,)
    rho = lam * d_omega * om_cum  # (L+1,)
    tail = np.zeros(L + 1)
    term = rho**depth / math.factorial(depth)
    for m in range(depth + 1, depth + 200):
        term = term * rho / m
        tail += term
        if np.all(term <= 1e-300 + 1e-16 * tail):
            break
    return out, K0 * tail


def _windowed_xi_integrals(omega: Path, xi: Path, depth: int) -> np.ndarray:
    """U_{I,j}(t) = int_0^t Sig(w)^I_{s,t} dxi^j_s for all words, all nodes.

    Forward recursion: U_{(),j} = xi^j, U_{I.k,j}(t) = int_0^t U_{I,j} dw^k,
    each step an exact piecewise-polynomial Stieltjes integration.
    """
    d = omega.num_channels
    d_xi = xi.num_channels
    L = omega.num_steps
    om_inc = omega.increments()
    xi_inc = xi.increments()
    out = np.zeros((L + 1, num_words(d, depth), d_xi))
    base_list = []
    for j in range(d_xi):
        base = np.empty((L, 2))
        base[:, 0] = xi.values[:-1, j]
        base[:, 1] = xi_inc[:, j]
        base_list.append(base)
        out[:, 0, j] = xi.values[:, j]
    prev = {(): base_list}
    for _ in range(depth):
        cur = {}
        for word, plist in prev.items():
            for k in range(d):
                new_word = word + (k + 1,)
                new_list = []
                for j, poly in enumerate(plist):
                    np_poly, nodes = stieltjes_prefix(poly, om_inc[:, k])
                    new_list.append(np_poly)
                    out[:, word_index(new_word, d), j] = nodes
                cur[new_word] = new_list
        prev = cur
    return out


def tensor_algebra_realization(
    d0: int, d_omega: int, d_xi: int, depth: int, *, max_cells: int = 50_000_000
) -> DenseCdeParams:
    """Deterministic dense CDE whose state is the truncated feature tensor.

    The state lives in the truncated tensor algebra over an alphabet with
    one letter per initial-condition coordinate, per xi channel, and per
    omega channel (in that order).  Each A_k right-concatenates the k-th
    omega letter, B injects the xi letters, C the initial-condition letters.
    """
    D = d0 + d_xi + d_omega
    mu = num_words(D, depth)
    if mu * mu * d_omega > max_cells:
        raise MemoryError(
            f"realization needs {mu}^2 x {d_omega} cells, over the {max_cells} budget"
        )
    A = np.zeros((d_omega, mu, mu))
    for k in range(d_omega):
        letter = d0 + d_xi + k + 1
        for level in range(depth):
            start = sum(D**j for j in range(level))
            for rank in range(D**level):
                src = start + rank
                dst = start + D**level + rank * D + (letter - 1)
                A[k, dst, src] = 1.0
    B = np.zeros((mu, d_xi))
    for j in range(d_xi):
        B[word_index((d0 + j + 1,), D), j] = 1.0
    C = np.zeros((mu, d0))
    for i in range(d0):
        C[word_index((i + 1,), D), i] = 1.0
    return DenseCdeParams(A, B, C)


def realization_readout(
    d0: int,
    d_omega: int,
    d_xi: int,
    depth: int,
    alpha: dict = None,
    beta: dict = None,
) -> np.ndarray:
    """Readout vector realizing sum alpha[i,I] x0^i Sig^I + sum beta[j,I] U_{I,j}.

    ``alpha`` maps (i, I) with 1-based coordinate i and omega-word I to a
    coefficient; ``beta`` maps (j, I) likewise for the xi channels.  Words
    use 1-based omega letters and must have length <= depth - 1 (one alphabet
    slot is spent on the leading coordinate letter).
    """
    D = d0 + d_xi + d_omega
    v = np.zeros(num_words(D, depth))
    for (i, word), coef in (alpha or {}).items():
        if not 1 <= i <= d0:
            raise DomainError(f"coordinate {i} outside [1, {d0}]")
        full = (i,) + tuple(d0 + d_xi + c for c in word)
        if len(full) > depth:
            raise DomainError(f"word {word} too long for depth {depth}")
        v[word_index(full, D)] += coef
    for (j, word), coef in (beta or {}).items():
        if not 1 <= j <= d_xi:
            raise DomainError(f"xi channel {j} outside [1, {d_xi}]")
        full = (d0 + j,) + tuple(d0 + d_xi + c for c in word)
        if len(full) > depth:
            raise DomainError(f"word {word} too long for depth {depth}")
        v[word_index(full, D)] += coef
    return v


def stability_check(params: DiagonalCdeParams, omega: Path) -> dict:
    """Segment multipliers e^{V dw} and the sign condition V w' <= 0."""
    domega = omega.increments()
    exponents = domega @ params.V.T  # (L, N)
    multipliers = np.exp(exponents)
    unstable = multipliers > 1.0 + 1e-15
    return {
        "stable": bool(not unstable.any()),
        "multipliers": multipliers,
        "drift_condition": bool(np.all(exponents <= 1e-15)),
        "flagged_segments": np.where(unstable.any(axis=1))[0].tolist(),
    }


def dense_to_json(params: DenseCdeParams) -> str:
    return json.dumps(
        {
            "kind": "dense",
            "d_omega": params.d_omega,
            "N": params.N,
            "A": params.A.tolist(),
            "B": params.B.tolist(),
            "C": params.C.tolist(),
            "v": params.v.tolist(),
        }
    )


def diagonal_to_json(params: DiagonalCdeParams) -> str:
    return json.dumps(
        {
            "kind": "diagonal",
            "N": params.N,
            "V": params.V.tolist(),
            "B": params.B.tolist(),
            "C": params.C.tolist(),
            "v": params.v.tolist(),
        }
    )


def params_from_json(text: str):
    obj = json.loads(text)
    if obj["kind"] == "dense":
        return DenseCdeParams(
            np.asarray(obj["A"]), np.asarray(obj["B"]), np.asarray(obj["C"]),
            np.asarray(obj["v"]),
        )
    if obj["kind"] == "diagonal":
        return DiagonalCdeParams(
            np.asarray(obj["V"]), np.asarray(obj["B"]), np.asarray(obj["C"]),
            np.asarray(obj["v"]),
        )
    raise DomainError(f"unknown params kind {obj.get('kind')!r}")
