"""Feed-forward model with manual forward/backward passes.

Architecture: ReLU MLP encoder -> two-layer projector (linear, optional
batch standardization, ReLU, linear) -> l2-normalized feature rows Z ->
linear classifier -> softmax probabilities P. Parameters live in one flat
float64 vector with a named layout so broadcast, aggregation and
serialization are array operations.

Masked parameter entries (a frozen classifier, and always the running
batch-standardization statistics) receive exactly-zero gradients and are
never touched by the optimizer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numeric import softmax
from .rng import RngStream

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    encoder: tuple[int, ...]
    projector: int
    feature_dim: int
    classes: int
    normalization: str = "batch"  # "batch" | "none"
    classifier_frozen: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.projector < 1 or self.feature_dim < 1:
            raise ValueError("ModelSpec: all widths must be >= 1")
        if any(w < 1 for w in self.encoder):
            raise ValueError("ModelSpec: encoder widths must be >= 1")
        if self.classes < 2:
            raise ValueError("ModelSpec: need at least two classes")
        if self.normalization not in ("batch", "none"):
            raise ValueError(f"ModelSpec: unknown normalization {self.normalization!r}")
        if self.classifier_frozen and self.classes > self.feature_dim:
            raise ValueError("ModelSpec: frozen classifier needs classes <= feature_dim")
        object.__setattr__(self, "encoder", tuple(int(w) for w in self.encoder))

    @property
    def encoder_out(self) -> int:
        return self.encoder[-1] if self.encoder else self.input_dim


def layout_for(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic (name, shape) sequence of all tensors."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    prev = spec.input_dim
    for i, w in enumerate(spec.encoder):
        shapes.append((f"enc{i}.w", (w, prev)))
        shapes.append((f"enc{i}.b", (w,)))
        prev = w
    shapes.append(("proj1.w", (spec.projector, prev)))
    shapes.append(("proj1.b", (spec.projector,)))
    if spec.normalization == "batch":
        shapes.append(("bn.gamma", (spec.projector,)))
        shapes.append(("bn.beta", (spec.projector,)))
        shapes.append(("bn.running_mean", (spec.projector,)))
        shapes.append(("bn.running_var", (spec.projector,)))
    shapes.append(("proj2.w", (spec.feature_dim, spec.projector)))
    shapes.append(("proj2.b", (spec.feature_dim,)))
    shapes.append(("cls.w", (spec.classes, spec.feature_dim)))
    shapes.append(("cls.b", (spec.classes,)))
    return shapes


@dataclass
class ParamVector:
    """Flat, ordered view of all model parameters plus a freeze mask."""

    values: np.ndarray
    layout: list[tuple[str, tuple[int, ...]]]
    mask: np.ndarray  # True = frozen (optimizer and gradients skip it)
    spec: ModelSpec | None = None
    _offsets: dict[str, tuple[int, int]] = field(init=False, repr=False)
    _shapes: dict[str, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        offsets = {}
        pos = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            offsets[name] = (pos, size)
            pos += size
        if pos != self.values.size:
            raise ValueError("ParamVector: layout does not match value count")
        if self.mask.shape != self.values.shape:
            raise ValueError("ParamVector: mask length mismatch")
        self._offsets = offsets
        self._shapes = dict(self.layout)

    def view(self, name: str) -> np.ndarray:
        off, size = self._offsets[name]
        return self.values[off:off + size].reshape(self._shapes[name])

    def has(self, name: str) -> bool:
        return name in self._offsets

    def slice_of(self, name: str) -> slice:
        off, size = self._offsets[name]
        return slice(off, off + size)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout, self.mask.copy(), self.spec)

    @property
    def size(self) -> int:
        return self.values.size


def zeros_like_params(params: ParamVector) -> np.ndarray:
    return np.zeros_like(params.values)


def init_model(spec: ModelSpec, rng: RngStream) -> ParamVector:
    """Fan-in-scaled uniform init; orthonormal classifier rows when frozen."""
    layout = layout_for(spec)
    total = sum(int(np.prod(shape)) for _, shape in layout)
    params = ParamVector(np.zeros(total), layout, np.zeros(total, dtype=bool), spec)
    fan_in_of = {}
    for name, shape in layout:
        if name.endswith(".w"):
            fan_in_of[name[:-2]] = shape[1]
    for name, shape in layout:
        v = params.view(name)
        if name.endswith(".w") and name != "cls.w":
            bound = np.sqrt(6.0 / shape[1])
            v[...] = rng.uniform(-bound, bound, shape)
        elif name.endswith(".b") and name != "cls.b":
            # nonzero bias init also keeps feature rows away from the
            # l2-normalization singularity when a ReLU block goes dark
            bound = 1.0 / np.sqrt(fan_in_of[name[:-2]])
            v[...] = rng.uniform(-bound, bound, shape)
        elif name == "bn.gamma" or name == "bn.running_var":
            v[...] = 1.0
        elif name == "cls.w":
            if spec.classifier_frozen:
                g = rng.normal((spec.feature_dim, spec.classes))
                q, r = np.linalg.qr(g)
                q = q * np.sign(np.diag(r))  # canonical sign, rows stay orthonormal
                v[...] = q.T
            else:
                bound = np.sqrt(6.0 / spec.feature_dim)
                v[...] = rng.uniform(-bound, bound, shape)
        # cls.b, bn.beta and bn.running_mean stay zero
    for name in ("bn.running_mean", "bn.running_var"):
        if params.has(name):
            params.mask[params.slice_of(name)] = True
    if spec.classifier_frozen:
        params.mask[params.slice_of("cls.w")] = True
        params.mask[params.slice_of("cls.b")] = True
    return params


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass (consumed by backward)."""

    spec: ModelSpec
    mode: str
    x: np.ndarray
    enc_pre: list[np.ndarray]
    enc_outs: list[np.ndarray]
    enc_out: np.ndarray
    u: np.ndarray                      # projector pre-normalization input
    bn_mean: np.ndarray | None         # statistics actually used (batch or running)
    bn_std: np.ndarray | None
    u_hat: np.ndarray | None
    v: np.ndarray                      # post-standardization, pre-ReLU
    r: np.ndarray                      # post-ReLU
    f: np.ndarray                      # raw features (pre l2)
    f_norms: np.ndarray
    z: np.ndarray                      # unit-row features feeding the classifier
    enc_norms: np.ndarray
    z_pre: np.ndarray                  # unit-row encoder output (pre-projector head)
    logits: np.ndarray
    p: np.ndarray
    batch_mean: np.ndarray | None      # train-mode batch stats for running updates
    batch_var: np.ndarray | None


def _normalize_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(a * a, axis=1))
    safe = np.maximum(norms, 1e-30)
    return a / safe[:, None], safe


def forward(params: ParamVector, batch: np.ndarray, mode: str = "train") -> ForwardTrace:
    spec = params.spec if params.spec is not None else _spec_from_layout(params)
    if mode not in ("train", "eval"):
        raise ValueError(f"forward: unknown mode {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"forward: batch width {x.shape} does not match input_dim {spec.input_dim}")
    n = x.shape[0]
    if n < 1:
        raise ValueError("forward: empty batch")
    if mode == "train" and spec.normalization == "batch" and n < 2:
        raise ValueError("forward: train mode with batch standardization needs n >= 2")

    h = x
    enc_pre = []
    enc_outs = []
    for i in range(len(spec.encoder)):
        a = h @ params.view(f"enc{i}.w").T + params.view(f"enc{i}.b")
        enc_pre.append(a)
        h = np.maximum(a, 0.0)
        enc_outs.append(h)
    enc_out = h

    u = enc_out @ params.view("proj1.w").T + params.view("proj1.b")
    batch_mean = batch_var = None
    if spec.normalization == "batch":
        if mode == "train":
            mean = u.mean(axis=0)
            var = u.var(axis=0)
            batch_mean, batch_var = mean, var
        else:
            mean = params.view("bn.running_mean").copy()
            var = params.view("bn.running_var").copy()
        std = np.sqrt(var + BN_EPS)
        u_hat = (u - mean) / std
        v = params.view("bn.gamma") * u_hat + params.view("bn.beta")
        bn_mean, bn_std = mean, std
    else:
        u_hat = None
        bn_mean = bn_std = None
        v = u
    r = np.maximum(v, 0.0)
    f = r @ params.view("proj2.w").T + params.view("proj2.b")
    z, f_norms = _normalize_rows(f)
    z_pre, enc_norms = _normalize_rows(enc_out)
    logits = z @ params.view("cls.w").T + params.view("cls.b")
    p = softmax(logits)
    return ForwardTrace(
        spec=spec, mode=mode, x=x, enc_pre=enc_pre, enc_outs=enc_outs,
        enc_out=enc_out, u=u,
        bn_mean=bn_mean, bn_std=bn_std, u_hat=u_hat, v=v, r=r, f=f,
        f_norms=f_norms, z=z, enc_norms=enc_norms, z_pre=z_pre,
        logits=logits, p=p, batch_mean=batch_mean, batch_var=batch_var,
    )


def _spec_from_layout(params: ParamVector) -> ModelSpec:
    names = [n for n, _ in params.layout]
    shapes = dict(params.layout)
    enc = []
    i = 0
    while f"enc{i}.w" in shapes:
        enc.append(shapes[f"enc{i}.w"][0])
        i += 1
    input_dim = shapes["enc0.w"][1] if enc else shapes["proj1.w"][1]
    frozen = bool(params.mask[params.slice_of("cls.w")].all())
    return ModelSpec(
        input_dim=input_dim,
        encoder=tuple(enc),
        projector=shapes["proj1.w"][0],
        feature_dim=shapes["proj2.w"][0],
        classes=shapes["cls.w"][0],
        normalization="batch" if "bn.gamma" in names else "none",
        classifier_frozen=frozen,
    )


def _normalize_backward(g_z: np.ndarray, z: np.ndarray, norms: np.ndarray) -> np.ndarray:
    radial = np.sum(g_z * z, axis=1, keepdims=True)
    return (g_z - radial * z) / norms[:, None]


def backward(
    params: ParamVector,
    trace: ForwardTrace,
    d_logits: np.ndarray,
    d_features: np.ndarray,
    d_pre_features: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the upstream heads w.r.t. every parameter.

    ``d_logits`` is the loss gradient at the classifier logits, ``d_features``
    at the normalized feature rows Z; ``d_pre_features`` optionally injects a
    head on the normalized encoder output. Masked entries come back exactly 0.
    """
    spec = trace.spec
    n = trace.x.shape[0]
    d_logits = np.asarray(d_logits, dtype=np.float64)
    d_features = np.asarray(d_features, dtype=np.float64)
    if d_logits.shape != (n, spec.classes):
        raise ValueError("backward: d_logits shape mismatch")
    if d_features.shape != (n, spec.feature_dim):
        raise ValueError("backward: d_features shape mismatch")

    grads = ParamVector(np.zeros(params.size), params.layout, params.mask.copy())

    grads.view("cls.w")[...] = d_logits.T @ trace.z
    grads.view("cls.b")[...] = d_logits.sum(axis=0)

    g_z = d_logits @ params.view("cls.w") + d_features
    g_f = _normalize_backward(g_z, trace.z, trace.f_norms)

    grads.view("proj2.w")[...] = g_f.T @ trace.r
    grads.view("proj2.b")[...] = g_f.sum(axis=0)
    g_r = g_f @ params.view("proj2.w")
    g_v = g_r * (trace.v > 0.0)

    if spec.normalization == "batch":
        gamma = params.view("bn.gamma")
        grads.view("bn.gamma")[...] = np.sum(g_v * trace.u_hat, axis=0)
        grads.view("bn.beta")[...] = g_v.sum(axis=0)
        g_hat = g_v * gamma
        if trace.mode == "train":
            # batch statistics participate in the gradient
            mean_g = g_hat.mean(axis=0)
            mean_gu = np.mean(g_hat * trace.u_hat, axis=0)
            g_u = (g_hat - mean_g - trace.u_hat * mean_gu) / trace.bn_std
        else:
            g_u = g_hat / trace.bn_std
    else:
        g_u = g_v

    grads.view("proj1.w")[...] = g_u.T @ trace.enc_out
    grads.view("proj1.b")[...] = g_u.sum(axis=0)
    g_h = g_u @ params.view("proj1.w")

    if d_pre_features is not None:
        d_pre = np.asarray(d_pre_features, dtype=np.float64)
        if d_pre.shape != trace.enc_out.shape:
            raise ValueError("backward: d_pre_features shape mismatch")
        g_h = g_h + _normalize_backward(d_pre, trace.z_pre, trace.enc_norms)

    for i in reversed(range(len(spec.encoder))):
        g_a = g_h * (trace.enc_pre[i] > 0.0)
        below = trace.x if i == 0 else trace.enc_outs[i - 1]
        grads.view(f"enc{i}.w")[...] = g_a.T @ below
        grads.view(f"enc{i}.b")[...] = g_a.sum(axis=0)
        g_h = g_a @ params.view(f"enc{i}.w")

    grads.values[params.mask] = 0.0
    return grads.values


def update_running_stats(params: ParamVector, trace: ForwardTrace) -> None:
    """Fold a train-mode trace's batch statistics into the running ones."""
    if trace.batch_mean is None:
        return
    rm = params.view("bn.running_mean")
    rv = params.view("bn.running_var")
    rm[...] = (1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * trace.batch_mean
    rv[...] = (1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * trace.batch_var


@dataclass
class OptimizerState:
    velocity: np.ndarray
    lr: float
    momentum: float
    weight_decay: float

    @classmethod
    def fresh(cls, params: ParamVector, lr: float, momentum: float, weight_decay: float) -> "OptimizerState":
        return cls(np.zeros(params.size), lr, momentum, weight_decay)


def sgd_step(params: ParamVector, grads: np.ndarray, state: OptimizerState) -> None:
    """In-place momentum SGD: v <- m*v + (g + wd*theta); theta <- theta - lr*v."""
    if grads.shape != params.values.shape or state.velocity.shape != params.values.shape:
        raise ValueError("sgd_step: length mismatch")
    g_eff = grads + state.weight_decay * params.values
    g_eff[params.mask] = 0.0
    state.velocity *= state.momentum
    state.velocity += g_eff
    params.values -= state.lr * state.velocity


# --- serialization -------------------------------------------------------

_MAGIC = b"FSPV"


def serialize_params(params: ParamVector) -> bytes:
    """Layout header then raw little-endian float64 values."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<I", len(params.layout))
    for name, shape in params.layout:
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", len(shape))
        for dim in shape:
            out += struct.pack("<I", dim)
    out += params.values.astype("<f8").tobytes()
    return bytes(out)


def deserialize_params(blob: bytes, mask: np.ndarray | None = None) -> ParamVector:
    if blob[:4] != _MAGIC:
        raise ValueError("deserialize_params: bad magic")
    pos = 4
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    layout: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        layout.append((name, tuple(int(d) for d in shape)))
    total = sum(int(np.prod(s)) for _, s in layout)
    values = np.frombuffer(blob, dtype="<f8", count=total, offset=pos).astype(np.float64)
    if values.size != total:
        raise ValueError("deserialize_params: truncated payload")
    if mask is None:
        mask = np.zeros(total, dtype=bool)
    return ParamVector(values, layout, mask)
