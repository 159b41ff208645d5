"""Randomized CDE features, the feature tensor, and the induced kernel.

A width-N CDE with Gaussian parameters (LeCun scaling on the state
matrices) gives Monte Carlo features whose normalized inner product
converges to the kernel computed exactly by the Goursat recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cde import DenseCdeParams, _windowed_xi_integrals, solve_dense
from .paths import DomainError, Path
from .signature import num_words, signature_trajectory, word_index

_TAGS = {"A": 1, "B": 2, "C": 3}


@dataclass(frozen=True)
class SeededInit:
    """Deterministic sampling recipe for a random CDE parameter draw."""

    seed: int
    N: int
    d_0: int
    d_omega: int
    d_xi: int

    def __post_init__(self):
        if self.N < 1:
            raise DomainError(f"width must be >= 1, got {self.N}")


def _stream(seed: int, tag: str) -> np.random.Generator:
    # counter-based generator keyed by (seed, matrix tag): any matrix is
    # reproducible independent of the order the others are drawn in
    key = (int(seed) % 2**64) * 2**64 + _TAGS[tag]
    return np.random.Generator(np.random.Philox(key=key))


def sample_lecun(init: SeededInit) -> DenseCdeParams:
    """State matrices iid Normal(0, 1/N); B, C iid Normal(0, 1); readout zero."""
    A = _stream(init.seed, "A").normal(
        0.0, 1.0 / np.sqrt(init.N), size=(init.d_omega, init.N, init.N)
    )
    B = _stream(init.seed, "B").normal(0.0, 1.0, size=(init.N, init.d_xi))
    C = _stream(init.seed, "C").normal(0.0, 1.0, size=(init.N, init.d_0))
    return DenseCdeParams(A, B, C)


@dataclass(frozen=True)
class FeatureTensor:
    """Truncated feature tensor at a fixed time.

    ``sig`` holds the driver signature coefficients (all words up to depth);
    entry (i, I) of the tensor is x0[i] * sig[I], and ``xi_part[I, j]`` holds
    the windowed integral int_0^t Sig^I_{s,t} dxi^j_s.
    """

    depth: int
    d_omega: int
    d_xi: int
    x0: np.ndarray
    sig: np.ndarray  # (num_words,)
    xi_part: np.ndarray  # (num_words, d_xi)

    @property
    def d_0(self) -> int:
        return self.x0.shape[0]

    def entry_init(self, i: int, word) -> float:
        """x0^i Sig^I with 1-based coordinate i and 1-based omega word."""
        if not 1 <= i <= self.d_0:
            raise DomainError(f"coordinate {i} outside [1, {self.d_0}]")
        return float(self.x0[i - 1] * self.sig[word_index(word, self.d_omega)])

    def entry_xi(self, word, j: int) -> float:
        if not 1 <= j <= self.d_xi:
            raise DomainError(f"xi channel {j} outside [1, {self.d_xi}]")
        return float(self.xi_part[word_index(word, self.d_omega), j - 1])

    def functional(self, alpha: dict = None, beta: dict = None) -> float:
        """Linear functional sum alpha[i,I] x0^i Sig^I + sum beta[j,I] U_{I,j}."""
        total = 0.0
        for (i, word), coef in (alpha or {}).items():
            total += coef * self.entry_init(i, word)
        for (j, word), coef in (beta or {}).items():
            total += coef * self.entry_xi(word, j)
        return total

    def inner(self, other: "FeatureTensor") -> float:
        """Euclidean inner product of two truncated feature tensors."""
        if (self.depth, self.d_omega, self.d_xi) != (
            other.depth, other.d_omega, other.d_xi,
        ):
            raise DomainError("feature tensors must share shape")
        return float(
            float(self.x0 @ other.x0) * float(self.sig @ other.sig)
            + np.sum(self.xi_part * other.xi_part)
        )


def feature_tensor(
    omega: Path, xi: Path, x0: np.ndarray, t: float, depth: int
) -> FeatureTensor:
    """Exact truncated feature tensor of the drivers at grid-aligned time t."""
    if omega.grid.num_steps != xi.grid.num_steps:
        raise DomainError("omega and xi must share a grid")
    node = omega.grid.index_of(t)
    sig = signature_trajectory(omega, depth)[node]
    xi_part = _windowed_xi_integrals(omega, xi, depth)[node]
    return FeatureTensor(
        depth=depth,
        d_omega=omega.num_channels,
        d_xi=xi.num_channels,
        x0=np.asarray(x0, dtype=np.float64),
        sig=sig,
        xi_part=xi_part,
    )


def _refine(values: np.ndarray, refinement: int) -> np.ndarray:
    if refinement == 1:
        return values
    L = values.shape[0] - 1
    frac = np.arange(refinement) / refinement
    fine = (
        values[:-1, None, :] * (1.0 - frac)[None, :, None]
        + values[1:, None, :] * frac[None, :, None]
    ).reshape(L * refinement, -1)
    return np.vstack([fine, values[-1]])


def kernel_goursat(
    omega_x: Path,
    xi_x: Path,
    x0_x: np.ndarray,
    omega_y: Path,
    xi_y: Path,
    x0_y: np.ndarray,
    *,
    refinement: int = 1,
) -> np.ndarray:
    """Kernel surface K(s, t) = <T(X)_{0,s}, T(Y)_{0,t}> on the product grid.

    Solves the two-parameter integral equation
        K(s,t) = <x0X, x0Y> + <xiX_s, xiY_t> + II K <dwX, dwY>
    with a second-order scheme (trapezoidal cell averages in both
    parameters).  Returns the full (Lx*r+1) x (Ly*r+1) surface for
    refinement r.
    """
    if omega_x.num_channels != omega_y.num_channels:
        raise DomainError("omega channel mismatch")
    if xi_x.num_channels != xi_y.num_channels:
        raise DomainError("xi channel mismatch")
    x0_x = np.asarray(x0_x, dtype=np.float64)
    x0_y = np.asarray(x0_y, dtype=np.float64)
    dwx = np.diff(_refine(omega_x.values, refinement), axis=0)
    dwy = np.diff(_refine(omega_y.values, refinement), axis=0)
    dxx = np.diff(_refine(xi_x.values, refinement), axis=0)
    dxy = np.diff(_refine(xi_y.values, refinement), axis=0)
    a = dwx @ dwy.T  # (Lx, Ly) cell weights
    f = dxx @ dxy.T  # forcing increments
    Lx, Ly = a.shape
    K = np.full((Lx + 1, Ly + 1), float(x0_x @ x0_y))
    for m in range(Lx):
        Km = K[m]
        Km1 = K[m + 1]
        am = a[m]
        fm = f[m]
        for n in range(Ly):
            rhs = (
                Km[n + 1] + Km1[n] - Km[n]
                + am[n] * (Km[n] + Km1[n] + Km[n + 1]) / 4.0
                + fm[n]
            )
            Km1[n + 1] = rhs / (1.0 - am[n] / 4.0)
    return K


def mc_kernel_estimate(
    omega_x: Path,
    xi_x: Path,
    x0_x: np.ndarray,
    omega_y: Path,
    xi_y: Path,
    x0_y: np.ndarray,
    N: int,
    seed: int,
) -> float:
    """Monte Carlo kernel value (1/N) <Z^X_1, Z^Y_1> under one LeCun draw."""
    init = SeededInit(
        seed=seed,
        N=N,
        d_0=x0_x.shape[0],
        d_omega=omega_x.num_channels,
        d_xi=xi_x.num_channels,
    )
    params = sample_lecun(init)
    method = "action" if N > 256 else "expm"
    zx = solve_dense(params, omega_x, xi_x, x0_x, method=method)[-1]
    zy = solve_dense(params, omega_y, xi_y, x0_y, method=method)[-1]
    return float(zx @ zy) / N


def fit_readout(states: np.ndarray, targets: np.ndarray, lam: float = None,
                *, return_info: bool = False):
    """Ridge readout minimizing ||S v - y||^2 + lam ||v||^2.

    lam=None uses the scale-free default 1e-6 * trace(S^T S) / width;
    lam=0 returns the minimum-norm least-squares solution and reports the
    condition number in the info dict.
    """
    S = np.asarray(states, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != y.shape[0]:
        raise DomainError("states must be (batch, width) matching targets")
    width = S.shape[1]
    gram = S.T @ S
    if lam is None:
        lam = 1e-6 * np.trace(gram) / width
    info = {"lam": float(lam)}
    if lam == 0.0:
        v, _, rank, svals = np.linalg.lstsq(S, y, rcond=None)
        cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
        info.update({"rank": int(rank), "condition_number": cond,
                     "rank_deficient": rank < width})
    else:
        v = scipy.linalg.solve(
            gram + lam * np.eye(width), S.T @ y, assume_a="pos"
        )
    info["residual"] = float(np.mean((S @ v - y) ** 2))
    return (v, info) if return_info else v
