"""Loss terms for regularized local training and their analytic gradients.

The composite local objective is

    total = ce + mu * he + lambda * var + prox

where ``ce`` is cross-entropy, ``he`` the hyperspherical energy of the
unit-norm features, ``var`` the hinge keeping per-class prediction variance
above the floor c = (D-1)/D^2, and ``prox`` the (already weighted) proximal
pull toward the broadcast global parameters.

Gradient conventions: the classifier head is differentiated with respect to
the pre-softmax logits (cross-entropy's natural space); the variance term's
probability-space gradient is chained through the softmax Jacobian before it
joins that head. The feature head is differentiated with respect to the
unit-norm rows; the caller chains it through row normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import ForwardTrace, ParamVector
from .numeric import column_variance

DEFAULT_HE_EPS = 1e-4


@dataclass(frozen=True)
class VarianceFloor:
    classes: int
    c: float


@dataclass(frozen=True)
class Coefficients:
    mu: float = 0.0        # hyperspherical energy weight
    lam: float = 0.0       # variance hinge weight
    mu_prox: float = 0.0   # proximal weight
    he_eps: float = DEFAULT_HE_EPS
    he_features: str = "post_projector"  # or "pre_projector"


@dataclass
class LossBreakdown:
    ce: float
    he: float
    var: float
    prox: float
    total: float
    coefficients: Coefficients


def variance_threshold(classes: int) -> VarianceFloor:
    """Variance floor from ideal one-hot predictions.

    Built literally: per-column population variance of the D x D identity,
    averaged over columns. Equals (D-1)/D^2 in closed form.
    """
    if classes < 1:
        raise ValueError("variance_threshold: need at least one class")
    ident = np.eye(classes)
    c = float(np.mean(column_variance(ident, "population")))
    return VarianceFloor(classes, c)


def variance_regularizer(p: np.ndarray, floor: VarianceFloor) -> tuple[float, np.ndarray]:
    """Hinge on per-class batch prediction variance; gradient w.r.t. P.

    loss = (1/D) sum_j max(0, c - Var_pop(P_:j)); a column at exactly the
    floor is treated as inactive.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != floor.classes:
        raise ValueError("variance_regularizer: P shape mismatch")
    n, d = p.shape
    mean = p.mean(axis=0)
    var = p.var(axis=0)
    gap = floor.c - var
    active = gap > 0.0
    loss = float(np.sum(gap[active])) / d
    grad = np.zeros_like(p)
    if np.any(active):
        grad[:, active] = -(2.0 / (d * n)) * (p[:, active] - mean[active])
    return loss, grad


def hyperspherical_energy(z: np.ndarray, eps: float = DEFAULT_HE_EPS) -> tuple[float, np.ndarray]:
    """Pairwise inverse-angular-distance energy of unit rows (i != j only).

    Diagonal terms are a constant n/(n^2 eps) with zero gradient and are
    excluded so reported losses are not dominated by a 1/eps offset.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("hyperspherical_energy: need at least two rows")
    if eps <= 0.0:
        raise ValueError("hyperspherical_energy: eps must be positive")
    norms = np.sqrt(np.sum(z * z, axis=1))
    if np.max(np.abs(norms - 1.0)) > 1e-6:
        raise ValueError("hyperspherical_energy: rows must be unit-norm")
    loss, grad = kernels.pairwise_energy(z, eps)
    return float(loss), grad


def cross_entropy(
    p: np.ndarray, y: np.ndarray, logits: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood; gradient w.r.t. logits = (P - onehot)/n.

    When the producing logits are available the loss is evaluated through
    log-sum-exp, which agrees with log(P) but survives extreme logit gaps.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    n, d = p.shape
    if y.shape != (n,):
        raise ValueError("cross_entropy: label count mismatch")
    if np.any(y < 0) or np.any(y >= d):
        raise ValueError("cross_entropy: label out of range")
    rows = np.arange(n)
    if logits is not None:
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        log_p = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        loss = float(-np.mean(log_p[rows, y]))
    else:
        loss = float(-np.mean(np.log(p[rows, y])))
    grad = p.copy()
    grad[rows, y] -= 1.0
    grad /= n
    return loss, grad


def proximal_term(
    theta: ParamVector, theta_global: ParamVector, mu_prox: float
) -> tuple[float, np.ndarray]:
    """L2 pull toward the broadcast parameters, frozen entries excluded."""
    if theta.size != theta_global.size:
        raise ValueError("proximal_term: length mismatch")
    diff = theta.values - theta_global.values
    diff[theta.mask] = 0.0
    if mu_prox == 0.0:
        return 0.0, np.zeros_like(diff)
    loss = 0.5 * mu_prox * float(diff @ diff)
    return loss, mu_prox * diff


def _softmax_jacobian_chain(g_p: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Convert a probability-space gradient to logit space row by row."""
    inner = np.sum(g_p * p, axis=1, keepdims=True)
    return p * (g_p - inner)


def composite_loss(
    trace: ForwardTrace,
    y: np.ndarray,
    coeffs: Coefficients,
    floor: VarianceFloor,
    theta: ParamVector,
    theta_global: ParamVector,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    """All loss terms plus the gradients backward() needs.

    Returns (breakdown, d_logits, d_features, d_pre_features, d_theta_direct).
    Terms with a zero coefficient are skipped entirely, so a run with
    mu = lambda = mu_prox = 0 is arithmetically identical to plain
    cross-entropy training.
    """
    ce, d_logits = cross_entropy(trace.p, y, logits=trace.logits)
    he = var = prox = 0.0
    n, d_feat = trace.z.shape
    d_features = np.zeros((n, d_feat))
    d_pre_features = None
    d_theta = np.zeros(theta.size)

    if coeffs.lam != 0.0:
        var, g_p = variance_regularizer(trace.p, floor)
        d_logits = d_logits + coeffs.lam * _softmax_jacobian_chain(g_p, trace.p)
    if coeffs.mu != 0.0:
        if coeffs.he_features == "pre_projector":
            # post-ReLU encoder rows can go completely dark; a zero vector has
            # no direction, so such rows are excluded from the energy
            valid = trace.enc_norms > 1e-12
            d_pre_features = np.zeros_like(trace.z_pre)
            if int(valid.sum()) >= 2:
                he, g_sub = hyperspherical_energy(trace.z_pre[valid], coeffs.he_eps)
                d_pre_features[valid] = coeffs.mu * g_sub
        else:
            he, g_z = hyperspherical_energy(trace.z, coeffs.he_eps)
            d_features = coeffs.mu * g_z
    if coeffs.mu_prox != 0.0:
        prox, d_theta = proximal_term(theta, theta_global, coeffs.mu_prox)

    total = ce + coeffs.mu * he + coeffs.lam * var + prox
    breakdown = LossBreakdown(ce=ce, he=he, var=var, prox=prox, total=total, coefficients=coeffs)
    return breakdown, d_logits, d_features, d_pre_features, d_theta
