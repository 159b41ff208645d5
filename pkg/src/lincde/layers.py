"""Discrete-time state-space recurrences and their gate constructions.

s4/s6/s5/gla implement the standard zero-order-hold recurrences on token
sequences; make_gates builds the continuous driving paths under which these
recurrences become exact solutions of a linear controlled differential
equation (see the cde module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cde import phi1_scalar
from .paths import DomainError, Path, from_values, time_augment


def softplus(x):
    return np.logaddexp(0.0, x)


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class S4Params:
    """Per-channel diagonal LTI system: shared state (a, b), channel stepsizes."""

    a: np.ndarray  # (N,)
    b: np.ndarray  # (N,)
    delta: np.ndarray  # (d,) per-channel stepsize
    readout: np.ndarray  # (d, N)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        readout = np.asarray(self.readout, dtype=np.float64)
        if np.any(delta <= 0):
            raise DomainError("stepsizes must be positive")
        if readout.shape != (delta.shape[0], a.shape[0]):
            raise DomainError(
                f"readout must be (d, N) = {(delta.shape[0], a.shape[0])}, got {readout.shape}"
            )
        for key, val in (("a", a), ("b", b), ("delta", delta), ("readout", readout)):
            object.__setattr__(self, key, val)

    @property
    def N(self):
        return self.a.shape[0]

    @property
    def d(self):
        return self.delta.shape[0]


@dataclass(frozen=True)
class S6Params:
    """Input-gated diagonal recurrence: stepsize depends on the token."""

    a: np.ndarray  # (N,)
    b: np.ndarray  # (N,)
    alpha: np.ndarray  # (d,)
    beta: np.ndarray  # (d,)
    delta: float  # base step > 0
    readout: np.ndarray  # (d, N)
    gate: str = "softplus"

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError("base step must be positive")
        if self.gate not in ("softplus", "relu"):
            raise DomainError(f"unknown gate {self.gate!r}")
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        readout = np.asarray(self.readout, dtype=np.float64)
        if readout.shape != (alpha.shape[0], a.shape[0]):
            raise DomainError("readout must be (d, N)")
        for key, val in (
            ("a", a), ("b", b), ("alpha", alpha), ("beta", beta), ("readout", readout)
        ):
            object.__setattr__(self, key, val)

    @property
    def N(self):
        return self.a.shape[0]

    @property
    def d(self):
        return self.alpha.shape[0]

    def gate_fn(self, pre):
        return softplus(pre) if self.gate == "softplus" else relu(pre)


@dataclass(frozen=True)
class S5Params:
    """Single diagonal LTI recurrence mixing all input channels."""

    a: np.ndarray  # (N,)
    B: np.ndarray  # (N, d)
    delta: float
    readout: np.ndarray  # (N,)

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError("stepsize must be positive")
        a = np.asarray(self.a, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        readout = np.asarray(self.readout, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != a.shape[0]:
            raise DomainError("B must be (N, d)")
        for key, val in (("a", a), ("B", B), ("readout", readout)):
            object.__setattr__(self, key, val)


@dataclass(frozen=True)
class GlaParams:
    """Gated linear attention on a matrix hidden state."""

    W_key: np.ndarray
    W_val: np.ndarray
    W_alpha: np.ndarray
    W_beta: np.ndarray
    b_alpha: np.ndarray
    b_beta: np.ndarray
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        for key in ("W_key", "W_val", "W_alpha", "W_beta", "b_alpha", "b_beta"):
            object.__setattr__(
                self, key, np.asarray(getattr(self, key), dtype=np.float64)
            )


def s4_forward(params: S4Params, x: np.ndarray):
    """ZOH recurrence per channel from rest; returns (states, outputs).

    states has shape (L+1, d, N) with states[0] = 0; outputs (L, d).
    """
    x = np.asarray(x, dtype=np.float64)
    L, d = x.shape
    if d != params.d:
        raise DomainError(f"expected {params.d} channels, got {d}")
    abar = np.exp(params.delta[:, None] * params.a)  # (d, N)
    bbar = phi1_scalar(params.delta[:, None] * params.a) * (
        params.delta[:, None] * params.b
    )
    states = np.zeros((L + 1, d, params.N))
    for ell in range(L):
        states[ell + 1] = abar * states[ell] + bbar * x[ell][:, None]
    outputs = np.einsum("ldn,dn->ld", states[1:], params.readout)
    return states, outputs


def s6_forward(params: S6Params, x: np.ndarray):
    """Selective recurrence: the stepsize is gated by the current token."""
    x = np.asarray(x, dtype=np.float64)
    L, d = x.shape
    if d != params.d:
        raise DomainError(f"expected {params.d} channels, got {d}")
    step = params.gate_fn(params.alpha * x + params.beta) * params.delta  # (L, d)
    arg = step[:, :, None] * params.a  # (L, d, N)
    abar = np.exp(arg)
    bbar = phi1_scalar(arg) * (step[:, :, None] * params.b)
    states = np.zeros((L + 1, d, params.N))
    for ell in range(L):
        states[ell + 1] = abar[ell] * states[ell] + bbar[ell] * x[ell][:, None]
    outputs = np.einsum("ldn,dn->ld", states[1:], params.readout)
    return states, outputs


def s5_forward(params: S5Params, x: np.ndarray):
    """One diagonal recurrence over all channels jointly; returns (states, outputs)."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    if x.shape[1] != params.B.shape[1]:
        raise DomainError("channel mismatch with B")
    abar = np.exp(params.delta * params.a)
    mix = phi1_scalar(params.delta * params.a)[:, None] * (params.delta * params.B)
    states = np.zeros((L + 1, params.a.shape[0]))
    for ell in range(L):
        states[ell + 1] = abar * states[ell] + mix @ x[ell]
    outputs = states[1:] @ params.readout
    return states, outputs


def gla_forward(params: GlaParams, x: np.ndarray):
    """Hadamard-gated matrix recurrence; returns (L+1, d, d) matrix states."""
    x = np.asarray(x, dtype=np.float64)
    L, d = x.shape
    sig = lambda u: 1.0 / (1.0 + np.exp(-u))
    states = np.zeros((L + 1, d, d))
    inv_tau2 = 1.0 / params.tau**2
    for ell in range(L):
        xv = x[ell]
        gate = (
            np.outer(sig(params.W_alpha @ xv + params.b_alpha),
                     sig(params.W_beta @ xv + params.b_beta))
            * inv_tau2
        )
        update = np.outer(params.W_key.T @ xv, params.W_val.T @ xv)
        states[ell + 1] = gate * states[ell] + update
    return states


GATE_KINDS = ("s4", "mamba-softplus", "mamba-relu", "linear-ncde")


def make_gates(kind: str, x: np.ndarray, params: dict = None):
    """Continuous drivers (omega, xi, x0) equivalent to a discrete recurrence.

    Tokens are held constant over each of the L grid segments, so every
    gated integral below is piecewise-linear and stored exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("tokens must be finite")
    L, d = x.shape
    params = params or {}
    h = 1.0 / L
    if kind == "s4":
        omega = from_values(np.linspace(0.0, 1.0, L + 1)[:, None])
        xi_vals = np.vstack([np.zeros((1, d)), np.cumsum(x * h, axis=0)])
        return omega, from_values(xi_vals), np.zeros(1)
    if kind in ("mamba-softplus", "mamba-relu"):
        alpha = np.asarray(params.get("alpha", np.ones(d)), dtype=np.float64)
        beta = np.asarray(params.get("beta", np.zeros(d)), dtype=np.float64)
        g = softplus if kind == "mamba-softplus" else relu
        rate = g(alpha * x + beta)  # (L, d)
        dom = rate * h
        dxi = rate * x * h
        omega = from_values(np.vstack([np.zeros((1, d)), np.cumsum(dom, axis=0)]))
        xi = from_values(np.vstack([np.zeros((1, d)), np.cumsum(dxi, axis=0)]))
        return omega, xi, np.zeros(1)
    if kind == "linear-ncde":
        path = from_values(np.vstack([np.zeros((1, d)), x]))
        driver = time_augment(path)
        return driver, driver, np.ones(1)
    raise DomainError(f"unknown gate kind {kind!r}")


def relu_split(x: Path, W: np.ndarray, b: np.ndarray) -> Path:
    """The 2-fold gate [relu(Wx+b); relu(-Wx-b)]; the group difference is Wx+b.

    Output is the node-sampled composition (piecewise-linear between nodes).
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pre = x.values @ W.T + b
    vals = np.hstack([relu(pre), relu(-pre)])
    return Path(x.grid, vals, basepointed=bool(np.all(vals[0] == 0.0)))


@dataclass(frozen=True)
class ScanElement:
    """Affine update z -> multiplier * z + offset, composed left to right."""

    multiplier: np.ndarray
    offset: np.ndarray


def combine(first: ScanElement, second: ScanElement) -> ScanElement:
    """Composition applying ``first`` then ``second`` (associative)."""
    return ScanElement(
        second.multiplier * first.multiplier,
        second.multiplier * first.offset + second.offset,
    )


def parallel_scan(elements, *, schedule: str = "tree"):
    """Inclusive prefix compositions of affine scan elements.

    schedule="sequential" is the reference left fold; "tree" uses a
    logarithmic-depth doubling schedule.  Floating-point reassociation in
    the tree schedule stays within 1e-12 of sequential on contractive
    elements.
    """
    elements = list(elements)
    if schedule not in ("tree", "sequential"):
        raise DomainError(f"unknown schedule {schedule!r}")
    if not elements:
        return []
    if schedule == "sequential":
        out = [elements[0]]
        for e in elements[1:]:
            out.append(combine(out[-1], e))
        return out
    mult = np.stack([np.asarray(e.multiplier, dtype=np.float64) for e in elements])
    off = np.stack([np.asarray(e.offset, dtype=np.float64) for e in elements])
    n = len(elements)
    shift = 1
    while shift < n:
        new_mult = mult.copy()
        new_off = off.copy()
        new_mult[shift:] = mult[shift:] * mult[:-shift]
        new_off[shift:] = mult[shift:] * off[:-shift] + off[shift:]
        mult, off = new_mult, new_off
        shift *= 2
    return [ScanElement(mult[i], off[i]) for i in range(n)]
