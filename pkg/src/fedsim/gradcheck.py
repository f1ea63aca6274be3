"""Finite-difference verification of every loss-term gradient.

Each term is checked against central differences on a fixed tiny problem
(encoder 3->4, projector 4->4, two classes, five samples). `GRAD_SOURCES`
maps term names to the gradient-producing functions; tests can swap an entry
to verify that a fault is attributed to that term alone (the composite check
goes through composite_loss and is not affected by the table).

The feature-head energy is checked through row normalization -- that is the
composition training actually uses, and it keeps the unit-norm precondition
intact while differentiating.
"""

from __future__ import annotations

import numpy as np

from . import objectives
from .model import ModelSpec, ParamVector, backward, forward, init_model
from .numeric import softmax
from .rng import RngStream

REL_TOL = 1e-5
ABS_FLOOR = 1e-8
TERMS = ("ce", "he", "var", "prox", "composite")

GRAD_SOURCES = {
    "ce": objectives.cross_entropy,
    "he": objectives.hyperspherical_energy,
    "var": objectives.variance_regularizer,
    "prox": objectives.proximal_term,
}

TINY_SPEC = ModelSpec(input_dim=3, encoder=(4,), projector=4, feature_dim=4, classes=2)


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst normalized discrepancy; < REL_TOL means the check passes.

    Entries under ABS_FLOOR in magnitude are compared absolutely at the
    floor (scaled into the same pass/fail units)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    big = scale >= ABS_FLOOR
    score = 0.0
    if np.any(big):
        score = float(np.max(err[big] / scale[big]))
    if np.any(~big):
        score = max(score, float(np.max(err[~big])) / ABS_FLOOR * REL_TOL)
    return score


def _check_ce(seed: int) -> float:
    rng = RngStream(seed, 101)
    logits = rng.normal((5, 2))
    y = np.array([0, 1, 0, 0, 1])
    fn = GRAD_SOURCES["ce"]
    _, analytic = fn(softmax(logits), y, logits=logits)
    numeric = central_difference(lambda l: fn(softmax(l), y, logits=l)[0], logits.copy())
    return grad_error(analytic, numeric)


def _check_var(seed: int) -> float:
    rng = RngStream(seed, 102)
    floor = objectives.variance_threshold(2)
    p = softmax(0.5 * rng.normal((5, 2)))  # mild spread keeps the hinge active
    fn = GRAD_SOURCES["var"]
    _, analytic = fn(p, floor)
    numeric = central_difference(lambda q: fn(q, floor)[0], p.copy())
    return grad_error(analytic, numeric)


def _check_he(seed: int) -> float:
    rng = RngStream(seed, 103)
    f = rng.normal((5, 4))
    fn = GRAD_SOURCES["he"]

    def through_norm(raw):
        z = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        return fn(z, 1e-3)[0]

    norms = np.linalg.norm(f, axis=1, keepdims=True)
    z = f / norms
    _, g_z = fn(z, 1e-3)
    radial = np.sum(g_z * z, axis=1, keepdims=True)
    analytic = (g_z - radial * z) / norms
    numeric = central_difference(through_norm, f.copy())
    return grad_error(analytic, numeric)


def _check_prox(seed: int) -> float:
    rng = RngStream(seed, 104)
    theta = rng.normal(12)
    theta_g = rng.normal(12)
    mask = np.zeros(12, dtype=bool)
    layout = [("w", (12,))]
    fn = GRAD_SOURCES["prox"]
    _, analytic = fn(ParamVector(theta, layout, mask), ParamVector(theta_g, layout, mask), 0.7)

    def loss(t):
        return fn(ParamVector(t, layout, mask), ParamVector(theta_g, layout, mask), 0.7)[0]

    numeric = central_difference(loss, theta.copy())
    return grad_error(analytic, numeric)


def _check_composite(seed: int) -> float:
    params = init_model(TINY_SPEC, RngStream(seed, 105))
    x = RngStream(seed, 106).normal((5, 3))
    y = np.array([0, 1, 0, 1, 1])
    floor = objectives.variance_threshold(2)
    coeffs = objectives.Coefficients(mu=0.5, lam=0.5, mu_prox=0.01)
    theta_global = params.copy()
    theta_global.values = theta_global.values + 0.05

    trace = forward(params, x, "train")
    bd, d_logits, d_feat, d_pre, d_theta = objectives.composite_loss(
        trace, y, coeffs, floor, params, theta_global)
    analytic = backward(params, trace, d_logits, d_feat, d_pre) + d_theta

    def scalar(theta_flat):
        p = ParamVector(theta_flat, params.layout, params.mask, TINY_SPEC)
        t = forward(p, x, "train")
        return objectives.composite_loss(t, y, coeffs, floor, p, theta_global)[0].total

    numeric = central_difference(scalar, params.values.copy())
    free = ~params.mask
    return grad_error(analytic[free], numeric[free])


_CHECKS = {
    "ce": _check_ce,
    "he": _check_he,
    "var": _check_var,
    "prox": _check_prox,
    "composite": _check_composite,
}


def run_gradcheck(seed: int = 0) -> dict[str, float]:
    """Max normalized gradient error per term; pass iff all < REL_TOL."""
    return {term: _CHECKS[term](seed) for term in TERMS}
