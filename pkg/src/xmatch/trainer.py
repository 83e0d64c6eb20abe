"""Trainable embedding head fine-tuned with triplet loss and SGD momentum."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import l2_normalize, l2_normalize_rows
from .errors import ConfigError, DimensionError, EmptyInputError, ParseError
from .mining import ANCHOR_MODES, mine_arrays, sample_batch
from .valbuilder import validation_tar

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingHead:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise DimensionError(f"W {W.shape} and b {b.shape} are inconsistent")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("head parameters must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def d_in(self):
        return self.W.shape[1]

    @property
    def d_out(self):
        return self.W.shape[0]

    def embed(self, X):
        """Unit embeddings for the rows of ``X``."""
        return l2_normalize_rows(np.asarray(X, dtype=np.float64) @ self.W.T + self.b)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingHead):
            return NotImplemented
        return np.array_equal(self.W, other.W) and np.array_equal(self.b, other.b)

    __hash__ = None


def init_head(d_in, d_out=None, rng=None, sigma=0.01):
    """Identity when square; otherwise an identity block plus small truncated noise."""
    d_out = d_in if d_out is None else d_out
    if d_out == d_in:
        return EmbeddingHead(np.eye(d_in), np.zeros(d_in))
    if rng is None:
        raise ConfigError("a non-square head needs an rng for its random part")
    W = rng.normal(0.0, sigma, size=(d_out, d_in))
    bad = np.abs(W) > 2 * sigma
    while bad.any():
        W[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(W) > 2 * sigma
    k = min(d_in, d_out)
    W[:k, :k] += np.eye(k)
    return EmbeddingHead(W, np.zeros(d_out))


def forward(head, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (head.d_in,):
        raise DimensionError(f"expected a vector of length {head.d_in}, got shape {x.shape}")
    return l2_normalize(head.W @ x + head.b)


def _proj_back(g, y, z):
    """Pull dL/dz back through z = y / |y|."""
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    return (g - z * np.sum(z * g, axis=1, keepdims=True)) / norm


def loss_and_gradient(head, xa, xp=None, xn=None, margin=0.3):
    """Mean triplet loss over triplets and its gradient w.r.t. ``W`` and ``b``.

    Accepts either three (T, d_in) arrays or a single list of
    ``(x_a, x_p, x_n)`` tuples as ``xa``. Triplets with an inactive hinge
    contribute zero loss and zero gradient.
    """
    if xp is None and xn is None:
        trip = list(xa)
        if not trip:
            raise EmptyInputError("no triplets")
        xa, xp, xn = (np.array([t[k] for t in trip], dtype=np.float64) for k in range(3))
    xa, xp, xn = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (xa, xp, xn))
    if xa.shape[0] == 0:
        raise EmptyInputError("no triplets")
    if not (xa.shape == xp.shape == xn.shape) or xa.shape[1] != head.d_in:
        raise DimensionError("triplet feature arrays must all be (T, d_in)")

    ya = xa @ head.W.T + head.b
    yp = xp @ head.W.T + head.b
    yn = xn @ head.W.T + head.b
    za, zp, zn = l2_normalize_rows(ya), l2_normalize_rows(yp), l2_normalize_rows(yn)
    d_ap = np.sum((za - zp) ** 2, axis=1)
    d_an = np.sum((za - zn) ** 2, axis=1)
    hinge = d_ap - d_an + margin
    active = hinge > 0.0
    n_trip = xa.shape[0]
    loss = float(np.sum(np.where(active, hinge, 0.0)) / n_trip)

    grad_W = np.zeros_like(head.W)
    grad_b = np.zeros_like(head.b)
    if not active.any():
        return loss, grad_W, grad_b
    w = (active / n_trip)[:, None]
    ga = _proj_back(2.0 * (zn - zp) * w, ya, za)
    gp = _proj_back(-2.0 * (za - zp) * w, yp, zp)
    gn = _proj_back(2.0 * (za - zn) * w, yn, zn)
    grad_W = ga.T @ xa + gp.T @ xp + gn.T @ xn
    grad_b = ga.sum(axis=0) + gp.sum(axis=0) + gn.sum(axis=0)
    return loss, grad_W, grad_b


def sgd_momentum_step(params, grads, velocity, lr, momentum):
    """Classical momentum: ``v <- momentum*v - lr*g``; ``theta <- theta + v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise DimensionError("params, grads and velocity must have equal length")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        p, g, v = (np.asarray(a, dtype=np.float64) for a in (p, g, v))
        if not (p.shape == g.shape == v.shape):
            raise DimensionError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v = momentum * v - lr * g
        new_v.append(v)
        new_p.append(p + v)
    return tuple(new_p), tuple(new_v)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 240
    margin: float = 0.3
    eval_interval: int = 200
    max_iterations: int = 10000
    seed: int = 0
    selection_far: float = 0.001
    d_out: int = None
    anchor_modality: str = "both"
    train_fraction: float = 0.9
    val_folds: int = 10
    # None picks min(300, fold size // 2)
    val_per_fold: int = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size <= 0 or self.batch_size % 2:
            raise ConfigError("batch_size must be a positive even number")
        if not self.margin > 0:
            raise ConfigError("margin must be positive")
        if self.eval_interval <= 0:
            raise ConfigError("eval_interval must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if not 0.0 < self.selection_far < 1.0:
            raise ConfigError("selection_far must lie in (0, 1)")
        if self.anchor_modality not in ANCHOR_MODES:
            raise ConfigError(f"anchor_modality must be one of {ANCHOR_MODES}")
        if self.d_out is not None and self.d_out < 1:
            raise ConfigError("d_out must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    val_tars: list = field(default_factory=list)

    def record(self, iteration, loss, val_tar):
        self.iterations.append(int(iteration))
        self.losses.append(float(loss))
        self.val_tars.append(float(val_tar))

    @property
    def best_index(self):
        if not self.val_tars:
            raise EmptyInputError("empty history")
        return int(np.argmax(self.val_tars))  # first maximum wins ties

    @property
    def best_iteration(self):
        return self.iterations[self.best_index]

    def to_csv(self):
        lines = ["iteration,loss,val_tar"]
        lines += [f"{i},{loss!r},{tar!r}" for i, loss, tar
                  in zip(self.iterations, self.losses, self.val_tars)]
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path):
        hist = cls()
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != "iteration,loss,val_tar":
            raise ParseError("unexpected history header", 1)
        for row_no, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError("expected 3 fields", row_no)
            try:
                hist.record(int(parts[0]), float(parts[1]), float(parts[2]))
            except ValueError:
                raise ParseError("non-numeric history field", row_no) from None
        return hist


def train(train_set, validation, config, head=None):
    """Fine-tune a head; returns ``(best_head, history)``.

    Each iteration samples a batch, mines cross-modal triplets with the
    current head, and takes one momentum step. Every ``eval_interval``
    iterations (and at iterations 0 and ``max_iterations``) the mean
    validation TAR at ``selection_far`` is recorded; the head of the first
    best-scoring record is returned.
    """
    config.validate()
    if validation is None or not validation.folds or validation.n_pairs == 0:
        raise ConfigError("validation set is empty")
    head_rng, loop_rng = (np.random.default_rng(s)
                          for s in np.random.SeedSequence(config.seed).spawn(2))
    if head is None:
        head = init_head(train_set.d_in, config.d_out, head_rng)
    pair_idx = validation.pair_indices()

    def evaluate(h):
        return validation_tar(validation, h.embed, config.selection_far, pair_idx)

    history = TrainHistory()
    best_tar = evaluate(head)
    best = head
    history.record(0, math.nan, best_tar)

    W, b = head.W.copy(), head.b.copy()
    vel = (np.zeros_like(W), np.zeros_like(b))
    window = []
    for it in range(1, config.max_iterations + 1):
        batch = sample_batch(train_set, config.batch_size, loop_rng)
        cur = EmbeddingHead(W, b)
        emb = cur.embed(batch.features)
        a, p, n, _, _, _ = mine_arrays(batch, emb, config.margin, loop_rng,
                                       config.anchor_modality)
        if a.size:
            f = batch.features
            loss, gW, gb = loss_and_gradient(cur, f[a], f[p], f[n], config.margin)
            (W, b), vel = sgd_momentum_step((W, b), (gW, gb), vel,
                                            config.learning_rate, config.momentum)
        else:
            loss = 0.0
        window.append(loss)
        if it % config.eval_interval == 0 or it == config.max_iterations:
            cur = EmbeddingHead(W, b)
            tar = evaluate(cur)
            history.record(it, float(np.mean(window)), tar)
            window = []
            log.info("iteration %d loss %.5f val_tar %.4f", it, history.losses[-1], tar)
            if tar > best_tar:
                best_tar, best = tar, cur
    return best, history


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, head, config=None, iteration=0, validation_tar=None):
    payload = {
        "dims": [head.d_out, head.d_in],
        "config": config.to_dict() if config is not None else None,
        "iteration": int(iteration),
        "validation_tar": validation_tar,
        "params": head.W.ravel().tolist() + head.b.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns ``(head, header_dict)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        d_out, d_in = payload["dims"]
        params = np.asarray(payload["params"], dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad checkpoint: {exc}") from None
    if params.size != d_out * d_in + d_out:
        raise ParseError("checkpoint parameter count does not match dims")
    head = EmbeddingHead(params[: d_out * d_in].reshape(d_out, d_in), params[d_out * d_in:])
    header = {k: v for k, v in payload.items() if k != "params"}
    return head, header
