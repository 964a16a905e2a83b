"""Complex Stiefel manifold geometry and Riemannian ADAM on products of Stiefel factors.

A point of St(n, p) is an ``n x p`` complex array with orthonormal columns. A
product point is a plain list of such arrays; factors are independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DimensionError, frobenius_norm


class NumericError(ArithmeticError):
    """Raised when a non-finite value enters the optimizer."""


def sym(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"sym needs a square matrix, got {m.shape}")
    return 0.5 * (m + m.conj().T)


def skew(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - m.conj().T)


def orthonormality_residual(x: np.ndarray) -> float:
    """Frobenius norm of X^dag X - I."""
    return frobenius_norm(x.conj().T @ x - np.eye(x.shape[1]))


def check_stiefel(x: np.ndarray, tol: float = 1e-10) -> None:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < x.shape[1]:
        raise DimensionError(f"Stiefel point must be n x p with n >= p, got {x.shape}")
    dev = np.max(np.abs(x.conj().T @ x - np.eye(x.shape[1])))
    if not dev < tol:
        raise ValueError(f"columns are not orthonormal (max deviation {dev:.3e})")


def project_tangent(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``g`` onto the tangent space at ``x``."""
    if x.shape != g.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match point {x.shape}")
    return g - x @ sym(x.conj().T @ g)


def cayley_retract(x: np.ndarray, g_st: np.ndarray, tau: float) -> np.ndarray:
    """Move from ``x`` along -``g_st`` with step ``tau`` using the Cayley transform.

    D = g_st x^dag - x g_st^dag is skew-Hermitian, so I + tau/2 D is always
    invertible and the result keeps orthonormal columns.
    """
    if x.shape != g_st.shape:
        raise DimensionError(f"direction shape {g_st.shape} does not match point {x.shape}")
    d = g_st @ x.conj().T - x @ g_st.conj().T
    half = 0.5 * tau * d
    lhs = np.eye(x.shape[0]) + half
    try:
        return np.linalg.solve(lhs, x - half @ x)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Cayley solve failed; non-finite direction?") from exc


def random_stiefel(n: int, p: int, seed=None) -> np.ndarray:
    """Orthonormalized complex Gaussian matrix; R of the QR has positive diagonal."""
    if n < p:
        raise DimensionError(f"St({n}, {p}) is empty: need n >= p")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases[np.newaxis, :]


@dataclass
class AdamConfig:
    gamma1: float = 0.9
    gamma2: float = 0.999
    tau0: float = 0.1
    eps: float = 1e-8
    # second moment from the projected (Riemannian) gradient instead of the Euclidean one
    projected_second_moment: bool = False
    # keep the running maximum of the bias-corrected second moment (AMSGrad)
    amsgrad: bool = False
    # step cap schedule tau0 / (1 + t / tau_decay); None keeps tau0 fixed
    tau_decay: float | None = None

    def __post_init__(self):
        if not (0 <= self.gamma1 < 1 and 0 <= self.gamma2 < 1):
            raise ValueError("gamma1 and gamma2 must lie in [0, 1)")
        if self.tau0 <= 0 or self.eps <= 0:
            raise ValueError("tau0 and eps must be positive")
        if self.tau_decay is not None and self.tau_decay <= 0:
            raise ValueError("tau_decay must be positive")


@dataclass
class AdamState:
    """Per-factor first moments, per-factor scalar second moments, shared step counter."""

    config: AdamConfig
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    v_max: list = field(default_factory=list)
    # multiplier on the step cap, lowered by step rejection in the driver
    scale: float = 1.0

    def snapshot(self) -> tuple:
        # adam_step replaces list entries instead of mutating them, so shallow copies suffice
        return list(self.m), list(self.v), self.t, list(self.v_max), self.scale

    def restore(self, snap: tuple) -> None:
        self.m, self.v, self.t, self.v_max, self.scale = list(snap[0]), list(snap[1]), snap[2], list(snap[3]), snap[4]

    @classmethod
    def zeros(cls, point: Sequence[np.ndarray], config: AdamConfig | None = None) -> "AdamState":
        config = config or AdamConfig()
        n = len(point)
        return cls(config, [np.zeros_like(x) for x in point], [0.0] * n, 0, [0.0] * n)


def adam_step(point: Sequence[np.ndarray], euclid_grads: Sequence[np.ndarray], state: AdamState):
    """One joint Riemannian ADAM update of every factor.

    Per factor: M <- g1 M + (1-g1) G, v <- g2 v + (1-g2) ||G||_F^2,
    r = (1-g1^t) sqrt(v/(1-g2^t) + eps), G_st = P_X(M)/r,
    tau = min(tau0, 1/(||G_st||_F + eps)), then a Cayley step. Factors of equal
    shape are updated as one batch. Returns ``(new_point, state)``; ``state`` is
    advanced in place.
    """
    if len(point) != len(euclid_grads) or len(point) != len(state.m):
        raise DimensionError("need exactly one gradient and one moment per factor")
    cfg = state.config
    g1, g2, eps = cfg.gamma1, cfg.gamma2, cfg.eps
    t = state.t + 1
    bias1 = 1.0 - g1**t
    bias2 = 1.0 - g2**t
    groups: dict = {}
    for k, (x, g) in enumerate(zip(point, euclid_grads)):
        if g.shape != x.shape:
            raise DimensionError(f"factor {k}: gradient {g.shape} vs point {x.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"factor {k}: non-finite gradient")
        groups.setdefault(x.shape, []).append(k)
    new_point = [None] * len(point)
    for (n, _), ks in groups.items():
        x = np.stack([point[k] for k in ks])
        g = np.stack([euclid_grads[k] for k in ks])
        m = g1 * np.stack([state.m[k] for k in ks]) + (1.0 - g1) * g
        xh = x.conj().transpose(0, 2, 1)
        if cfg.projected_second_moment:
            xg = xh @ g
            g = g - x @ (0.5 * (xg + xg.conj().transpose(0, 2, 1)))
        gsq = np.sum(g.real**2 + g.imag**2, axis=(1, 2))
        v = g2 * np.array([state.v[k] for k in ks]) + (1.0 - g2) * gsq
        v_hat = v / bias2
        if cfg.amsgrad:
            v_hat = np.maximum(v_hat, [state.v_max[k] for k in ks])
        r = bias1 * np.sqrt(v_hat + eps)
        xm = xh @ m
        g_st = (m - x @ (0.5 * (xm + xm.conj().transpose(0, 2, 1)))) / r[:, None, None]
        st_norm = np.sqrt(np.sum(g_st.real**2 + g_st.imag**2, axis=(1, 2)))
        tau0 = state.scale * (cfg.tau0 if cfg.tau_decay is None else cfg.tau0 / (1.0 + t / cfg.tau_decay))
        tau = np.minimum(tau0, 1.0 / (st_norm + eps))
        d = g_st @ xh - x @ g_st.conj().transpose(0, 2, 1)
        half = 0.5 * tau[:, None, None] * d
        try:
            x_new = np.linalg.solve(np.eye(n) + half, x - half @ x)
        except np.linalg.LinAlgError as exc:
            raise NumericError("Cayley solve failed") from exc
        for j, k in enumerate(ks):
            state.m[k] = m[j]
            state.v[k] = float(v[j])
            state.v_max[k] = float(v_hat[j])
            new_point[k] = x_new[j]
    state.t = t
    return new_point, state


def riemannian_grad_norm(point: Sequence[np.ndarray], euclid_grads: Sequence[np.ndarray]) -> float:
    """Root-sum-of-squares of the per-factor projected gradients."""
    return float(np.sqrt(sum(frobenius_norm(project_tangent(x, g)) ** 2
                             for x, g in zip(point, euclid_grads))))
