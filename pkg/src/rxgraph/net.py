"""Kernel-fusion embedding network with a contrastive + cross-entropy loss.

The network maps the three kernel rows of a case (each a length-N vector of
similarities to the training cases) through one affine layer per kernel, a
rectifier, and a fusion layer into a shared embedding; a sigmoid layer on the
embedding predicts treatment failure.

Training is plain numpy with hand-derived gradients, verified against central
finite differences (:func:`gradient_check`).  The contrastive term pulls
same-label embeddings together (penalty: their *unsquared* distance) and
pushes different-label embeddings apart with a squared hinge of margin
``lambda``.  The contrastive term only reaches the embedding parameters; the
cross-entropy term also trains the classifier.  Updates use Adamax with the
first-moment bias correction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernels import GramMatrix

CE_CLIP = 1e-7
IMPROVEMENT_TOL = 1e-6
ADAMAX_BETA1 = 0.9
ADAMAX_BETA2 = 0.999
ADAMAX_EPS = 1e-8

KNET_MAGIC = b"KNET"
KNET_VERSION = 1

METRICS = ("euclidean", "cosine")

PARAM_FIELDS = (
    "w_wl", "b_wl", "w_tp", "b_tp", "w_vh", "b_vh",
    "w_fuse", "b_fuse", "w_cls", "b_cls",
)


class TrainingDivergedError(RuntimeError):
    """Raised when a batch loss turns non-finite during training."""


@dataclass
class NetConfig:
    """Architecture and optimizer settings.

    ``classifier_dim`` is the input width of the sigmoid classifier and must
    equal ``fusion_dim``.
    """

    embed_dim_per_kernel: int = 5000
    fusion_dim: int = 50
    classifier_dim: int = 50
    margin_lambda: float = 1.0
    metric: str = "euclidean"
    learning_rate: float = 0.0001
    batch_size: int = 64
    max_epochs: int = 1000
    early_stop_patience: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim_per_kernel", "fusion_dim", "classifier_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.classifier_dim != self.fusion_dim:
            raise ValueError(
                "classifier_dim is the classifier's input width and must equal "
                f"fusion_dim ({self.fusion_dim}), got {self.classifier_dim}"
            )
        if self.margin_lambda <= 0:
            raise ValueError(f"margin_lambda must be > 0, got {self.margin_lambda}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class EmbedNet:
    """Network parameters; shapes derive from the config and training size."""

    config: NetConfig
    n_train: int
    w_wl: np.ndarray
    b_wl: np.ndarray
    w_tp: np.ndarray
    b_tp: np.ndarray
    w_vh: np.ndarray
    b_vh: np.ndarray
    w_fuse: np.ndarray
    b_fuse: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_FIELDS]


@dataclass
class TrainTrace:
    """Per-epoch mean batch losses plus how and when training stopped."""

    contrastive: list[float] = field(default_factory=list)
    crossentropy: list[float] = field(default_factory=list)
    joint: list[float] = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = "max_epochs"

    def to_csv(self) -> str:
        lines = ["epoch,contrastive,crossentropy,joint"]
        for i, (c, x, j) in enumerate(zip(self.contrastive, self.crossentropy, self.joint), 1):
            lines.append(f"{i},{c!r},{x!r},{j!r}")
        return "\n".join(lines) + "\n"


def init_net(config: NetConfig, n_train: int) -> EmbedNet:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    e, f = config.embed_dim_per_kernel, config.fusion_dim

    def draw(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return EmbedNet(
        config=config,
        n_train=n_train,
        w_wl=draw((e, n_train), n_train),
        b_wl=draw((e,), n_train),
        w_tp=draw((e, n_train), n_train),
        b_tp=draw((e,), n_train),
        w_vh=draw((e, n_train), n_train),
        b_vh=draw((e,), n_train),
        w_fuse=draw((f, 3 * e), 3 * e),
        b_fuse=draw((f,), 3 * e),
        w_cls=draw((f,), f),
        b_cls=draw((), f),
    )


# ---------------------------------------------------------------------------
# forward pass


def _as_batch(rows, n_train: int, what: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    if len(rows) != 3:
        raise ValueError(f"{what} must be a triple of kernel rows (wl, temporal, vertex)")
    arrays = [np.asarray(r, dtype=float) for r in rows]
    single = arrays[0].ndim == 1
    if single:
        arrays = [a[None, :] for a in arrays]
    for a in arrays:
        if a.ndim != 2 or a.shape[1] != n_train:
            raise ValueError(
                f"{what}: expected rows of width {n_train}, got shape {tuple(a.shape)}"
            )
        if a.shape[0] != arrays[0].shape[0]:
            raise ValueError(f"{what}: the three row blocks disagree on batch size")
    return arrays[0], arrays[1], arrays[2], single


def _forward(net: EmbedNet, x_wl, x_tp, x_vh):
    z = np.concatenate(
        [x_wl @ net.w_wl.T + net.b_wl, x_tp @ net.w_tp.T + net.b_tp, x_vh @ net.w_vh.T + net.b_vh],
        axis=1,
    )
    a = np.maximum(z, 0.0)
    emb = a @ net.w_fuse.T + net.b_fuse
    logit = emb @ net.w_cls + net.b_cls
    prob = 1.0 / (1.0 + np.exp(-logit))
    return z, a, emb, logit, prob


def forward_embed(net: EmbedNet, rows) -> np.ndarray:
    """Embedding of one case (triple of vectors) or a batch (triple of matrices)."""
    x_wl, x_tp, x_vh, single = _as_batch(rows, net.n_train, "rows")
    _, _, emb, _, _ = _forward(net, x_wl, x_tp, x_vh)
    return emb[0] if single else emb


def predict(net: EmbedNet, cross_rows) -> tuple[np.ndarray, np.ndarray]:
    """Failure probabilities and hard labels (1 iff p >= 0.5) for test rows."""
    x_wl, x_tp, x_vh, single = _as_batch(cross_rows, net.n_train, "cross_rows")
    _, _, _, _, prob = _forward(net, x_wl, x_tp, x_vh)
    preds = (prob >= 0.5).astype(int)
    if single:
        return prob[0], preds[0]
    return prob, preds


# ---------------------------------------------------------------------------
# distances


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def cosine_distance(a, b) -> float:
    """1 - cos(a, b), in [0, 2].  Zero-norm inputs are an error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for zero-norm embeddings")
    sim = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return 1.0 - sim


def _pairwise_distances(emb: np.ndarray, metric: str):
    """(B, B) distance matrix plus the cache the backward pass needs."""
    if metric == "euclidean":
        diff = emb[:, None, :] - emb[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        return dist, None
    norms = np.sqrt((emb ** 2).sum(1))
    if np.any(norms == 0.0):
        raise ValueError("cosine distance is undefined for zero-norm embeddings")
    unit = emb / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    dist = np.maximum(1.0 - sim, 0.0)
    return dist, (norms, unit, sim)


# ---------------------------------------------------------------------------
# losses


def _contrastive_terms(dist, same, margin, pair_mask=None):
    hinge = np.maximum(margin - dist, 0.0)
    per_pair = same * dist + (1.0 - same) * hinge ** 2
    if pair_mask is not None:
        per_pair = per_pair * pair_mask
    return per_pair, hinge


def contrastive_loss(embeddings, labels, margin: float, metric: str) -> float:
    """Mean over all ordered pairs (i, j), including i = j, of
    ``Y_ij * D_ij + (1 - Y_ij) * max(0, margin - D_ij)^2`` — divided by the
    batch size, not the pair count."""
    emb = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels)
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be a (batch, dim) array, got shape {emb.shape}")
    if y.shape != (emb.shape[0],):
        raise ValueError("labels must align with the embedding batch")
    if margin <= 0:
        raise ValueError("margin must be > 0")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    dist, _ = _pairwise_distances(emb, metric)
    same = (y[:, None] == y[None, :]).astype(float)
    per_pair, _ = _contrastive_terms(dist, same, margin)
    return float(per_pair.sum() / emb.shape[0])


def binary_cross_entropy(probs, labels) -> float:
    """Standard two-term cross-entropy with probabilities clipped to
    [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(probs, dtype=float), CE_CLIP, 1.0 - CE_CLIP)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("probs and labels must have the same shape")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def joint_loss(net: EmbedNet, rows, labels, config: NetConfig | None = None):
    """(contrastive, crossentropy, combined) on one batch, same forward pass."""
    config = config or net.config
    x_wl, x_tp, x_vh, _ = _as_batch(rows, net.n_train, "rows")
    _, _, emb, _, prob = _forward(net, x_wl, x_tp, x_vh)
    y = np.asarray(labels, dtype=float)
    con = contrastive_loss(emb, y, config.margin_lambda, config.metric)
    ce = binary_cross_entropy(prob, y)
    return con, ce, con + ce


# ---------------------------------------------------------------------------
# backward pass


def _losses_and_grads(net: EmbedNet, x_wl, x_tp, x_vh, y, config: NetConfig, pair_mask=None):
    """Joint loss and gradients for every parameter tensor.

    The contrastive gradient flows only into the embedding parameters; the
    cross-entropy gradient also reaches the classifier.
    """
    batch = x_wl.shape[0]
    z, a, emb, _, prob = _forward(net, x_wl, x_tp, x_vh)

    dist, cos_cache = _pairwise_distances(emb, config.metric)
    same = (y[:, None] == y[None, :]).astype(float)
    per_pair, hinge = _contrastive_terms(dist, same, config.margin_lambda, pair_mask)
    con = float(per_pair.sum() / batch)

    # dL/dD for ordered pair (i, j); symmetric because every factor is
    dl_ddist = (same - 2.0 * (1.0 - same) * hinge) / batch
    if pair_mask is not None:
        dl_ddist = dl_ddist * pair_mask
    g_pair = dl_ddist + dl_ddist.T
    if config.metric == "euclidean":
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dist > 0.0, g_pair / dist, 0.0)
        demb_con = w.sum(1)[:, None] * emb - w @ emb
    else:
        norms, unit, sim = cos_cache
        demb_con = (-(g_pair @ unit) + (g_pair * sim).sum(1)[:, None] * unit) / norms[:, None]

    pc = np.clip(prob, CE_CLIP, 1.0 - CE_CLIP)
    ce = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    inside = (prob > CE_CLIP) & (prob < 1.0 - CE_CLIP)
    dlogit = inside * (prob - y) / batch

    grads = {
        "w_cls": emb.T @ dlogit,
        "b_cls": np.asarray(dlogit.sum()),
    }
    demb = demb_con + np.outer(dlogit, net.w_cls)
    grads["w_fuse"] = demb.T @ a
    grads["b_fuse"] = demb.sum(0)
    dz = (demb @ net.w_fuse) * (z > 0.0)
    e = config.embed_dim_per_kernel
    dz_wl, dz_tp, dz_vh = dz[:, :e], dz[:, e : 2 * e], dz[:, 2 * e :]
    grads["w_wl"] = dz_wl.T @ x_wl
    grads["b_wl"] = dz_wl.sum(0)
    grads["w_tp"] = dz_tp.T @ x_tp
    grads["b_tp"] = dz_tp.sum(0)
    grads["w_vh"] = dz_vh.T @ x_vh
    grads["b_vh"] = dz_vh.sum(0)
    return con, ce, grads


class _Adamax:
    """Adamax: exponential first moment, infinity-norm second moment."""

    def __init__(self, net: EmbedNet, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in net.tensors()}
        self.u = {name: np.zeros_like(arr) for name, arr in net.tensors()}

    def step(self, net: EmbedNet, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        correction = 1.0 - ADAMAX_BETA1 ** self.t
        for name, arr in net.tensors():
            g = grads[name]
            self.m[name] = ADAMAX_BETA1 * self.m[name] + (1.0 - ADAMAX_BETA1) * g
            self.u[name] = np.maximum(ADAMAX_BETA2 * self.u[name], np.abs(g))
            arr -= (self.lr / correction) * self.m[name] / (self.u[name] + ADAMAX_EPS)


def _gram_values(gram) -> np.ndarray:
    if isinstance(gram, GramMatrix):
        return np.asarray(gram.values, dtype=float)
    return np.asarray(gram, dtype=float)


def train(grams, labels, config: NetConfig) -> tuple[EmbedNet, TrainTrace]:
    """Train a net on the three training Gram matrices.

    Deterministic for a fixed seed: seeded init, seeded minibatch shuffling,
    fixed update order.  Stops early once the best epoch-mean batch loss has
    not improved by at least 1e-6 for ``early_stop_patience`` epochs.
    """
    if len(grams) != 3:
        raise ValueError("train expects the (wl, temporal, vertex) gram triple")
    k_wl, k_tp, k_vh = (_gram_values(g) for g in grams)
    n = k_wl.shape[0]
    for mat in (k_wl, k_tp, k_vh):
        if mat.shape != (n, n):
            raise ValueError(f"gram shapes disagree: {mat.shape} vs {(n, n)}")
    y = np.asarray(labels, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be binary 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")

    net = init_net(config, n)
    trace = TrainTrace()
    if config.max_epochs == 0:
        return net, trace

    rng = np.random.default_rng((config.seed & 0xFFFFFFFFFFFFFFFF) + 1)
    opt = _Adamax(net, config.learning_rate)
    best = np.inf
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        con_sum = ce_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            con, ce, grads = _losses_and_grads(
                net, k_wl[idx], k_tp[idx], k_vh[idx], y[idx], config
            )
            if not np.isfinite(con + ce):
                raise TrainingDivergedError(f"non-finite batch loss at epoch {epoch}")
            opt.step(net, grads)
            con_sum += con
            ce_sum += ce
            n_batches += 1
        trace.contrastive.append(con_sum / n_batches)
        trace.crossentropy.append(ce_sum / n_batches)
        trace.joint.append((con_sum + ce_sum) / n_batches)
        trace.stop_epoch = epoch
        if trace.joint[-1] < best - IMPROVEMENT_TOL:
            best = trace.joint[-1]
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                trace.stop_reason = "converged"
                return net, trace
    trace.stop_reason = "max_epochs"
    return net, trace


# ---------------------------------------------------------------------------
# gradient verification


def _masked_joint(net: EmbedNet, x_wl, x_tp, x_vh, y, config: NetConfig, pair_mask):
    _, _, emb, _, prob = _forward(net, x_wl, x_tp, x_vh)
    dist, _ = _pairwise_distances(emb, config.metric)
    same = (y[:, None] == y[None, :]).astype(float)
    per_pair, _ = _contrastive_terms(dist, same, config.margin_lambda, pair_mask)
    con = float(per_pair.sum() / x_wl.shape[0])
    pc = np.clip(prob, CE_CLIP, 1.0 - CE_CLIP)
    ce = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    return con + ce


def gradient_check(net: EmbedNet, rows, labels, config: NetConfig | None = None,
                   epsilon: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference
    gradients of the joint loss over every parameter.

    Dissimilar pairs within ``10 * epsilon`` of the hinge margin are excluded
    from both sides (the hinge is non-differentiable there); the exclusion
    mask is frozen at the unperturbed point.  Relative deviation is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    config = config or net.config
    x_wl, x_tp, x_vh, _ = _as_batch(rows, net.n_train, "rows")
    y = np.asarray(labels, dtype=float)
    if y.shape != (x_wl.shape[0],):
        raise ValueError("labels must align with the batch")

    _, _, emb, _, _ = _forward(net, x_wl, x_tp, x_vh)
    dist, _ = _pairwise_distances(emb, config.metric)
    same = (y[:, None] == y[None, :]).astype(float)
    kink = (same == 0.0) & (np.abs(config.margin_lambda - dist) < 10.0 * epsilon)
    pair_mask = (~kink).astype(float)

    con, ce, grads = _losses_and_grads(net, x_wl, x_tp, x_vh, y, config, pair_mask)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite analytic gradient in {name}")

    worst = 0.0
    for name, arr in net.tensors():
        analytic = np.atleast_1d(grads[name])
        flat = arr.reshape(-1) if arr.ndim else arr.reshape(1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            up = _masked_joint(net, x_wl, x_tp, x_vh, y, config, pair_mask)
            flat[i] = saved - epsilon
            down = _masked_joint(net, x_wl, x_tp, x_vh, y, config, pair_mask)
            flat[i] = saved
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            deviation = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, deviation)
    return worst


def finite_difference_gradient(fn, theta: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat parameter vector."""
    theta = np.asarray(theta, dtype=float).copy()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + epsilon
        up = fn(theta)
        theta[i] = saved - epsilon
        down = fn(theta)
        theta[i] = saved
        grad[i] = (up - down) / (2.0 * epsilon)
    return grad


# ---------------------------------------------------------------------------
# KNET container

_METRIC_TAGS = {"euclidean": 0, "cosine": 1}
_TAG_METRICS = {v: k for k, v in _METRIC_TAGS.items()}

_KNET_HEADER = struct.Struct("<4sIIIIdBdIIIqI")


def save_net(path: str | Path, net: EmbedNet) -> None:
    """KNET container: magic, version, config echo, then the parameter
    tensors in declared order as little-endian float64 with shape headers."""
    cfg = net.config
    parts = [
        _KNET_HEADER.pack(
            KNET_MAGIC,
            KNET_VERSION,
            cfg.embed_dim_per_kernel,
            cfg.fusion_dim,
            cfg.classifier_dim,
            cfg.margin_lambda,
            _METRIC_TAGS[cfg.metric],
            cfg.learning_rate,
            cfg.batch_size,
            cfg.max_epochs,
            cfg.early_stop_patience,
            cfg.seed,
            net.n_train,
        )
    ]
    for _, arr in net.tensors():
        arr = np.atleast_1d(np.asarray(arr, dtype="<f8"))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_net(path: str | Path) -> EmbedNet:
    blob = Path(path).read_bytes()
    if len(blob) < _KNET_HEADER.size:
        raise ValueError(f"{path}: truncated KNET file")
    (magic, version, embed, fusion, classifier, margin, metric_tag, lr, batch,
     max_epochs, patience, seed, n_train) = _KNET_HEADER.unpack_from(blob)
    if magic != KNET_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {KNET_MAGIC!r}")
    if version != KNET_VERSION:
        raise ValueError(f"{path}: unsupported KNET version {version}")
    if metric_tag not in _TAG_METRICS:
        raise ValueError(f"{path}: unknown metric tag {metric_tag}")
    config = NetConfig(
        embed_dim_per_kernel=embed,
        fusion_dim=fusion,
        classifier_dim=classifier,
        margin_lambda=margin,
        metric=_TAG_METRICS[metric_tag],
        learning_rate=lr,
        batch_size=batch,
        max_epochs=max_epochs,
        early_stop_patience=patience,
        seed=seed,
    )
    offset = _KNET_HEADER.size
    tensors = {}
    for name in PARAM_FIELDS:
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
        tensors[name] = arr
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in KNET file")
    tensors["b_cls"] = tensors["b_cls"].reshape(())
    net = EmbedNet(config=config, n_train=n_train, **tensors)
    _validate_shapes(net)
    return net


def _validate_shapes(net: EmbedNet) -> None:
    cfg, n = net.config, net.n_train
    e, f = cfg.embed_dim_per_kernel, cfg.fusion_dim
    expected = {
        "w_wl": (e, n), "b_wl": (e,), "w_tp": (e, n), "b_tp": (e,),
        "w_vh": (e, n), "b_vh": (e,), "w_fuse": (f, 3 * e), "b_fuse": (f,),
        "w_cls": (f,), "b_cls": (),
    }
    for name, arr in net.tensors():
        if arr.shape != expected[name]:
            raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
