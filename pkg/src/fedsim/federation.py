"""Federated round loop: broadcast, local training, weighted aggregation.

Every random choice is drawn from a stream derived from the run seed with
fixed integer tags, so results are bit-reproducible and independent of how
many worker threads execute the (pure) per-client training functions.

Stream tags:
    (TAG_LOCAL, round, client) -> local batch shuffling
    (TAG_PARTICIPATION, round) -> participant sampling
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, batches
from .model import (
    ModelSpec,
    OptimizerState,
    ParamVector,
    backward,
    forward,
    sgd_step,
    update_running_stats,
)
from .objectives import (
    Coefficients,
    LossBreakdown,
    VarianceFloor,
    composite_loss,
    variance_threshold,
)
from .rng import RngStream

TAG_LOCAL = 7
TAG_PARTICIPATION = 6
TAG_INIT = 5

ALGORITHMS = ("fedavg", "fedprox", "freeze", "univarfl")


@dataclass(frozen=True)
class Algorithm:
    """Exactly one local-training objective per run."""

    kind: str
    mu: float = 0.0
    lam: float = 0.0
    mu_prox: float = 0.0
    he_eps: float = 1e-4
    he_features: str = "post_projector"

    def __post_init__(self):
        if self.kind not in ALGORITHMS:
            raise ValueError(f"Algorithm: unknown kind {self.kind!r}")
        if min(self.mu, self.lam, self.mu_prox) < 0:
            raise ValueError("Algorithm: coefficients must be >= 0")

    def coefficients(self) -> Coefficients:
        return Coefficients(
            mu=self.mu, lam=self.lam, mu_prox=self.mu_prox,
            he_eps=self.he_eps, he_features=self.he_features,
        )

    @property
    def freezes_classifier(self) -> bool:
        return self.kind == "freeze"


def fedavg() -> Algorithm:
    return Algorithm("fedavg")


def fedprox(mu_prox: float = 0.01) -> Algorithm:
    return Algorithm("fedprox", mu_prox=mu_prox)


def freeze() -> Algorithm:
    return Algorithm("freeze")


def univarfl(mu: float, lam: float, he_eps: float = 1e-4,
             he_features: str = "post_projector") -> Algorithm:
    return Algorithm("univarfl", mu=mu, lam=lam, he_eps=he_eps, he_features=he_features)


@dataclass(frozen=True)
class FederationConfig:
    clients: int
    rounds: int
    local_epochs: int
    rho: float = 1.0
    batch_size: int = 64
    weighting: str = "by_sample_count"  # or "uniform"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.clients < 1 or self.rounds < 0 or self.local_epochs < 1:
            raise ValueError("FederationConfig: invalid counts")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("FederationConfig: participation out of range")
        if self.weighting not in ("uniform", "by_sample_count"):
            raise ValueError(f"FederationConfig: unknown weighting {self.weighting!r}")


@dataclass
class ClientUpdate:
    client_id: int
    params: ParamVector
    n_samples: int
    mean_losses: LossBreakdown
    steps: int


@dataclass
class RoundRecord:
    round_index: int
    participants: list[int]
    accuracy: float
    mean_losses: LossBreakdown
    grad_sq_norm: float
    wall_time: float


def local_train(
    global_params: ParamVector,
    data: Dataset,
    cfg: FederationConfig,
    algo: Algorithm,
    rng: RngStream,
    client_id: int = 0,
) -> ClientUpdate:
    """E epochs of mini-batch SGD on the algorithm's objective.

    Momentum starts from zero each call; running normalization statistics
    are folded into the returned parameters.
    """
    if len(data) == 0:
        raise ValueError("local_train: empty client dataset")
    params = global_params.copy()
    coeffs = algo.coefficients()
    floor = variance_threshold(data.classes)
    state = OptimizerState.fresh(params, cfg.lr, cfg.momentum, cfg.weight_decay)

    sums = np.zeros(5)
    steps = 0
    for epoch in range(cfg.local_epochs):
        for batch_idx in batches(len(data), cfg.batch_size, rng.derive(epoch)):
            xb, yb = data.x[batch_idx], data.y[batch_idx]
            trace = forward(params, xb, "train")
            if trace.batch_mean is not None:
                update_running_stats(params, trace)
            bd, d_logits, d_feat, d_pre, d_theta = composite_loss(
                trace, yb, coeffs, floor, params, global_params)
            grads = backward(params, trace, d_logits, d_feat, d_pre)
            grads += d_theta
            sgd_step(params, grads, state)
            sums += (bd.ce, bd.he, bd.var, bd.prox, bd.total)
            steps += 1
    denom = max(steps, 1)
    mean_bd = LossBreakdown(*(sums / denom), coefficients=coeffs)
    return ClientUpdate(client_id, params, len(data), mean_bd, steps)


def sample_participants(clients: int, rho: float, rng: RngStream) -> list[int]:
    """Uniform sample without replacement of size max(1, round(rho * clients))."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("sample_participants: rho out of range")
    size = max(1, int(round(rho * clients)))
    return sorted(int(i) for i in rng.permutation(clients)[:size])


def aggregate(updates: list[ClientUpdate], weighting: str = "by_sample_count") -> ParamVector:
    """Weighted parameter average over participants.

    Computed as theta_0 + sum_k w_k (theta_k - theta_0) in ascending client-id
    order: identical inputs aggregate to themselves exactly, and the result
    cannot depend on the caller's iteration order.
    """
    if not updates:
        raise ValueError("aggregate: no updates")
    updates = sorted(updates, key=lambda u: u.client_id)
    size = updates[0].params.size
    if any(u.params.size != size for u in updates):
        raise ValueError("aggregate: parameter length mismatch")
    if weighting == "uniform":
        weights = np.full(len(updates), 1.0 / len(updates))
    elif weighting == "by_sample_count":
        counts = np.array([u.n_samples for u in updates], dtype=np.float64)
        weights = counts / counts.sum()
    else:
        raise ValueError(f"aggregate: unknown weighting {weighting!r}")
    base = updates[0].params
    acc = np.zeros(size)
    for w, u in zip(weights, updates):
        acc += w * (u.params.values - base.values)
    return ParamVector(base.values + acc, base.layout, base.mask.copy(), base.spec)


def _client_full_batch_gradient(
    params: ParamVector, data: Dataset, algo: Algorithm, floor: VarianceFloor
) -> np.ndarray:
    trace = forward(params, data.x, "eval")
    coeffs = algo.coefficients()
    if len(data) < 2 and coeffs.mu != 0.0:
        # the pairwise energy of a singleton is an empty sum
        coeffs = Coefficients(mu=0.0, lam=coeffs.lam, mu_prox=coeffs.mu_prox,
                              he_eps=coeffs.he_eps, he_features=coeffs.he_features)
    _, d_logits, d_feat, d_pre, d_theta = composite_loss(
        trace, data.y, coeffs, floor, params, params)
    return backward(params, trace, d_logits, d_feat, d_pre) + d_theta


def global_gradient_norm(
    params: ParamVector,
    clients: list[Dataset],
    algo: Algorithm,
    weights: list[float] | None = None,
) -> float:
    """Squared l2 norm of the sample-weighted full-batch global gradient.

    Each client's objective is evaluated on its whole dataset in eval mode
    (running normalization statistics). Weights default to sample counts and
    are normalized, so uniform rescaling cannot change the result.
    """
    if not clients:
        raise ValueError("global_gradient_norm: no client data")
    if weights is None:
        w = np.array([len(c) for c in clients], dtype=np.float64)
    else:
        w = np.array(weights, dtype=np.float64)
    w = w / w.sum()
    floor = variance_threshold(clients[0].classes)
    total = np.zeros(params.size)
    for wk, data in zip(w, clients):
        if len(data) == 0:
            continue
        total += wk * _client_full_batch_gradient(params, data, algo, floor)
    return float(total @ total)


def run_training(
    spec: ModelSpec,
    algo: Algorithm,
    cfg: FederationConfig,
    clients: list[Dataset],
    test: Dataset,
    evaluate,
    record_grad_norm: bool = True,
    on_round=None,
) -> tuple[list[RoundRecord], ParamVector]:
    """Algorithm 1-style outer loop.

    `evaluate(params, test) -> float` is injected to avoid a metrics import
    cycle; `on_round(index, params)`, when given, observes each aggregated
    model. Client training runs through a thread pool when cfg.threads > 1;
    results are aggregated in client-id order, so scheduling cannot leak into
    the output.
    """
    if len(clients) != cfg.clients:
        raise ValueError("run_training: client data does not match config")
    if any(len(c) == 0 for c in clients):
        raise ValueError("run_training: empty client (repair the partition upstream)")
    if algo.freezes_classifier and not spec.classifier_frozen:
        spec = replace(spec, classifier_frozen=True)

    from .model import init_model  # local import keeps module tops light

    root = RngStream(cfg.seed)
    params = init_model(spec, root.derive(TAG_INIT))
    records: list[RoundRecord] = []

    for rnd in range(cfg.rounds):
        t0 = time.perf_counter()
        participants = sample_participants(
            cfg.clients, cfg.rho, root.derive(TAG_PARTICIPATION, rnd))

        def train_one(k: int) -> ClientUpdate:
            stream = root.derive(TAG_LOCAL, rnd, k)
            return local_train(params, clients[k], cfg, algo, stream, client_id=k)

        if cfg.threads > 1 and len(participants) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                updates = list(pool.map(train_one, participants))
        else:
            updates = [train_one(k) for k in participants]

        params = aggregate(updates, cfg.weighting)
        accuracy = evaluate(params, test)
        grad_sq = (
            global_gradient_norm(params, clients, algo) if record_grad_norm else 0.0
        )
        mean_losses = _mean_breakdown([u.mean_losses for u in updates])
        records.append(RoundRecord(
            round_index=rnd,
            participants=participants,
            accuracy=accuracy,
            mean_losses=mean_losses,
            grad_sq_norm=grad_sq,
            wall_time=time.perf_counter() - t0,
        ))
        if on_round is not None:
            on_round(rnd, params)
    return records, params


def _mean_breakdown(breakdowns: list[LossBreakdown]) -> LossBreakdown:
    arr = np.array([[b.ce, b.he, b.var, b.prox, b.total] for b in breakdowns])
    m = arr.mean(axis=0)
    return LossBreakdown(*m, coefficients=breakdowns[0].coefficients)
