"""Small pre-LN transformer encoder trained as a masked language model.

Everything is plain numpy with hand-derived backward passes.  The output
projection is tied to the token embedding matrix.  Parameters are stored as
float32; passing float64 copies through the same code is how gradients are
checked against finite differences.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import InputDocument, SegmentKind
from .textprep import Vocabulary, normalize_tag

LN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MaskedLMConfig:
    vocab_size: int
    layers: int = 4
    hidden_dim: int = 128
    heads: int = 4
    max_len: int = 512
    seed: int = 0
    ffn_mult: int = 4
    n_segments: int = len(SegmentKind)
    init_scale: float = 0.02
    dropout: float = 0.0

    def validate(self) -> None:
        for name in ("vocab_size", "layers", "hidden_dim", "heads", "max_len", "ffn_mult",
                     "n_segments"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads



def param_shapes(cfg: MaskedLMConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.hidden_dim, cfg.hidden_dim * cfg.ffn_mult
    shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.max_len, d),
              "seg_emb": (cfg.n_segments, d)}
    for i in range(cfg.layers):
        p = f"l{i}."
        shapes.update({p + "ln1_g": (d,), p + "ln1_b": (d,),
                       p + "wq": (d, d), p + "bq": (d,), p + "wk": (d, d), p + "bk": (d,),
                       p + "wv": (d, d), p + "bv": (d,), p + "wo": (d, d), p + "bo": (d,),
                       p + "ln2_g": (d,), p + "ln2_b": (d,),
                       p + "w1": (d, f), p + "b1": (f,), p + "w2": (f, d), p + "b2": (d,)})
    shapes.update({"lnf_g": (d,), "lnf_b": (d,), "out_b": (cfg.vocab_size,)})
    return shapes


@dataclass
class MaskedLMParams:
    config: MaskedLMConfig
    arrays: dict[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def astype(self, dtype) -> "MaskedLMParams":
        return MaskedLMParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "MaskedLMParams":
        return MaskedLMParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def dtype(self):
        return self.arrays["tok_emb"].dtype

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_model(config: MaskedLMConfig) -> MaskedLMParams:
    config.validate()
    rng = np.random.default_rng(config.seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.startswith("b") or leaf.endswith("_b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, config.init_scale, size=shape)
        arrays[name] = arr.astype(np.float32)
    return MaskedLMParams(config, arrays)


# ---------------------------------------------------------------- primitives

def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, g, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    n = dy.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def log_softmax(z, axis=-1):
    m = z.max(axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis, keepdims=True))


# ------------------------------------------------------------------ encoder

@dataclass
class Batch:
    """Right-padded token batch.  ``lengths[b]`` real tokens in row b."""
    ids: np.ndarray
    kinds: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], kinds: Sequence[Sequence[int]],
                       pad_id: int = 3) -> "Batch":
        T = max(len(s) for s in seqs)
        B = len(seqs)
        ids = np.full((B, T), pad_id, dtype=np.int64)
        kk = np.full((B, T), int(SegmentKind.SEP), dtype=np.int64)
        for i, (s, k) in enumerate(zip(seqs, kinds)):
            ids[i, :len(s)] = s
            kk[i, :len(k)] = k
        return cls(ids, kk, np.array([len(s) for s in seqs], dtype=np.int64))

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]


def encode_batch(params: MaskedLMParams, batch: Batch, train: bool = False,
                 rng: np.random.Generator | None = None, rows: np.ndarray | None = None):
    """Final-layer hidden states and the cache for ``backward_hidden``.

    With ``rows`` (one position per sequence) the last layer is evaluated only
    at those positions and the result has shape (B, 1, d) instead of (B, T, d).
    """
    cfg = params.config
    A = params.arrays
    B, T = batch.ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    dtype = params.dtype
    x = A["tok_emb"][batch.ids] + A["pos_emb"][:T][None] + A["seg_emb"][batch.kinds]
    key_bias = np.where(batch.valid, 0.0, -1e9).astype(dtype)[:, None, None, :]
    drop = cfg.dropout if train else 0.0
    layers = []
    for i in range(cfg.layers):
        last_rows = rows if i == cfg.layers - 1 else None
        x, lc = _layer_forward(x, A, f"l{i}.", cfg, key_bias, drop, rng, last_rows)
        layers.append(lc)
    hf, lnf = _ln_forward(x, A["lnf_g"], A["lnf_b"])
    return hf, (batch, layers, lnf)


def _layer_forward(x, A, p, cfg, key_bias, drop, rng, rows):
    B, T, d = x.shape
    H, dh = cfg.heads, cfg.head_dim
    a, ln1 = _ln_forward(x, A[p + "ln1_g"], A[p + "ln1_b"])
    if rows is None:
        aq, xq = a, x
    else:
        ar = np.arange(B)
        aq, xq = a[ar, rows][:, None], x[ar, rows][:, None]
    Tq = aq.shape[1]
    q = (aq @ A[p + "wq"] + A[p + "bq"]).reshape(B, Tq, H, dh).transpose(0, 2, 1, 3)
    k = (a @ A[p + "wk"] + A[p + "bk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    v = (a @ A[p + "wv"] + A[p + "bv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    s = q @ k.transpose(0, 1, 3, 2)
    pr = kernels.masked_softmax(s, key_bias, 1.0 / math.sqrt(dh))
    o = (pr @ v).transpose(0, 2, 1, 3).reshape(B, Tq, d)
    y = o @ A[p + "wo"] + A[p + "bo"]
    m1 = m2 = None
    if drop:
        m1 = (rng.random(y.shape) >= drop).astype(x.dtype) / (1.0 - drop)
        y = y * m1
    x2 = xq + y
    c, ln2 = _ln_forward(x2, A[p + "ln2_g"], A[p + "ln2_b"])
    u = c @ A[p + "w1"] + A[p + "b1"]
    gu, t = kernels.gelu_forward(u)
    z = gu @ A[p + "w2"] + A[p + "b2"]
    if drop:
        m2 = (rng.random(z.shape) >= drop).astype(x.dtype) / (1.0 - drop)
        z = z * m2
    return x2 + z, (rows, a, ln1, q, k, v, pr, o, m1, c, ln2, u, gu, t, m2)


def _layer_backward(dx, A, p, cfg, cache, grads):
    rows, a, ln1, q, k, v, pr, o, m1, c, ln2, u, gu, t, m2 = cache
    B, T, d = a.shape
    Tq = dx.shape[1]
    H, dh = cfg.heads, cfg.head_dim
    # feed-forward branch
    dz = dx * m2 if m2 is not None else dx
    grads[p + "w2"] += gu.reshape(-1, gu.shape[-1]).T @ dz.reshape(-1, d)
    grads[p + "b2"] += dz.sum((0, 1))
    du = kernels.gelu_backward(u, t, dz @ A[p + "w2"].T)
    grads[p + "w1"] += c.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
    grads[p + "b1"] += du.sum((0, 1))
    dx2, dg, db = _ln_backward(du @ A[p + "w1"].T, A[p + "ln2_g"], ln2)
    grads[p + "ln2_g"] += dg
    grads[p + "ln2_b"] += db
    dx2 += dx
    # attention branch
    dy = dx2 * m1 if m1 is not None else dx2
    grads[p + "wo"] += o.reshape(-1, d).T @ dy.reshape(-1, d)
    grads[p + "bo"] += dy.sum((0, 1))
    do = (dy @ A[p + "wo"].T).reshape(B, Tq, H, dh).transpose(0, 2, 1, 3)
    dpr = do @ v.transpose(0, 1, 3, 2)
    dv = pr.transpose(0, 1, 3, 2) @ do
    ds = kernels.softmax_backward(pr, dpr, 1.0 / math.sqrt(dh))
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    af = a.reshape(-1, d)
    da = np.zeros_like(a)
    for name, g_ in (("k", dk), ("v", dv)):
        dflat = g_.transpose(0, 2, 1, 3).reshape(B * T, d)
        grads[p + "w" + name] += af.T @ dflat
        grads[p + "b" + name] += dflat.sum(0)
        da += (dflat @ A[p + "w" + name].T).reshape(a.shape)
    dqf = dq.transpose(0, 2, 1, 3).reshape(B * Tq, d)
    daq = (dqf @ A[p + "wq"].T).reshape(B, Tq, d)
    grads[p + "bq"] += dqf.sum(0)
    if rows is None:
        grads[p + "wq"] += af.T @ dqf
        da += daq
    else:
        ar = np.arange(B)
        grads[p + "wq"] += a[ar, rows].T @ dqf
        da[ar, rows] += daq[:, 0]
    dxa, dg, db = _ln_backward(da, A[p + "ln1_g"], ln1)
    grads[p + "ln1_g"] += dg
    grads[p + "ln1_b"] += db
    if rows is None:
        dxa += dx2
    else:
        dxa[np.arange(B), rows] += dx2[:, 0]
    return dxa


def backward_hidden(params: MaskedLMParams, cache, dH: np.ndarray,
                    grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients given dLoss/dHidden."""
    cfg = params.config
    A = params.arrays
    batch, layers, lnf = cache
    T = batch.ids.shape[1]
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in A.items()}
    dx, dg, db = _ln_backward(dH, A["lnf_g"], lnf)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    for i in reversed(range(cfg.layers)):
        dx = _layer_backward(dx, A, f"l{i}.", cfg, layers[i], grads)
    flat = dx.reshape(-1, dx.shape[-1])
    _scatter_rows(grads["tok_emb"], batch.ids.reshape(-1), flat)
    grads["pos_emb"][:T] += dx.sum(0)
    _scatter_rows(grads["seg_emb"], batch.kinds.reshape(-1), flat)
    return grads


def _scatter_rows(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    np.add.at(target, rows, values)


# ------------------------------------------------------------- masked LM head

@dataclass(frozen=True)
class MaskSpan:
    """Generated region [p, q] of a sequence with the current MASK at r."""
    p: int
    q: int
    r: int

    def __post_init__(self):
        if not self.p <= self.r <= self.q:
            raise ValueError("MaskSpan requires p <= r <= q")


@dataclass(frozen=True)
class StepExample:
    ids: tuple[int, ...]
    kinds: tuple[int, ...]
    r: int
    gold: int

    def __post_init__(self):
        if len(self.ids) != len(self.kinds):
            raise ValueError("ids and kinds differ in length")
        if not 0 <= self.r < len(self.ids):
            raise ValueError("mask position outside sequence")


def _mask_logits(params: MaskedLMParams, batch: Batch, r: np.ndarray,
                 train: bool = False, rng=None):
    hf, cache = encode_batch(params, batch, train=train, rng=rng, rows=r)
    h_r = hf[:, 0]
    logits = h_r @ params["tok_emb"].T + params["out_b"]
    return logits, h_r, hf, cache


def forward_batch(params: MaskedLMParams, steps: Sequence[StepExample]) -> np.ndarray:
    """Log-probabilities over the vocabulary at each step's MASK, shape (B, V)."""
    batch = Batch.from_sequences([s.ids for s in steps], [s.kinds for s in steps])
    r = np.array([s.r for s in steps])
    logits, *_ = _mask_logits(params, batch, r)
    return log_softmax(logits.astype(np.float64))


def forward(params: MaskedLMParams, step: StepExample) -> np.ndarray:
    if len(step.ids) > params.config.max_len:
        raise ValueError(f"sequence length {len(step.ids)} exceeds max_len "
                         f"{params.config.max_len}")
    return forward_batch(params, [step])[0]


def mlm_loss_and_grads(params: MaskedLMParams, steps: Sequence[StepExample],
                       train: bool = False, rng=None):
    """Mean negative log-likelihood of the gold tokens and its gradient."""
    batch = Batch.from_sequences([s.ids for s in steps], [s.kinds for s in steps])
    r = np.array([s.r for s in steps])
    gold = np.array([s.gold for s in steps])
    logits, h_r, hf, cache = _mask_logits(params, batch, r, train=train, rng=rng)
    logp = log_softmax(logits)
    n = len(steps)
    loss = float(-logp[np.arange(n), gold].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), gold] -= 1.0
    dlogits /= n
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    grads["tok_emb"] += dlogits.T @ h_r
    grads["out_b"] += dlogits.sum(0)
    dH = (dlogits @ params["tok_emb"])[:, None, :]
    backward_hidden(params, cache, dH, grads)
    return loss, grads


def mean_step_loss(params: MaskedLMParams, steps: Sequence[StepExample],
                   batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(steps), batch_size):
        chunk = steps[i:i + batch_size]
        lp = forward_batch(params, chunk)
        total += -float(sum(lp[j, s.gold] for j, s in enumerate(chunk)))
    return total / len(steps)


def sequence_log_likelihood(params: MaskedLMParams, steps: Sequence[StepExample]) -> float:
    """Sum of per-step conditional log-probabilities of a teacher-forced span."""
    lp = forward_batch(params, steps)
    return float(sum(lp[j, s.gold] for j, s in enumerate(steps)))


# ----------------------------------------------------------- step expansion

def tag_token_runs(target_tags: Iterable[str | Sequence[str]]) -> list[list[str]]:
    runs = []
    for tag in target_tags:
        toks = normalize_tag(tag).split() if isinstance(tag, str) else list(tag)
        if not toks:
            raise ValueError(f"tag {tag!r} has no tokens after normalization")
        runs.append(toks)
    return runs


def expand_to_steps(document: InputDocument, target_tags, vocab: Vocabulary,
                    max_len: int | None = None) -> list[StepExample]:
    """Teacher-forced expansion of a document and its gold tags into MASK steps.

    Step k sees the first k gold tokens appended where the MASK was, with a
    TAG_SEP closing every finished tag, and predicts gold token k.
    """
    runs = tag_token_runs(target_tags)
    if not runs:
        raise ValueError("empty target tag set")
    gold = []
    for toks in runs:
        gold.extend(vocab.id(t) for t in toks)
        gold.append(vocab.tag_sep_id)
    if max_len is not None:
        document = document.truncated(max_len - len(gold), vocab)
    if not document.ids or document.ids[-1] != vocab.mask_id:
        raise ValueError("document must end with the MASK slot")
    base_ids = document.ids[:-1]
    base_kinds = document.kinds[:-1]
    mk = int(SegmentKind.MASK)
    steps = []
    for k, g in enumerate(gold):
        ids = base_ids + tuple(gold[:k]) + (vocab.mask_id,)
        kinds = base_kinds + (mk,) * (k + 1)
        steps.append(StepExample(ids, kinds, len(ids) - 1, g))
    return steps


# ---------------------------------------------------------------- training

class Adamax:
    """Adam variant with an infinity-norm second moment."""

    def __init__(self, params: MaskedLMParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.u = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, params: MaskedLMParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        step = self.lr / (1.0 - self.beta1 ** self.t)
        for k, g in grads.items():
            m, u = self.m[k], self.u[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            params.arrays[k] -= (step * m / (u + self.eps)).astype(params.arrays[k].dtype)


@dataclass
class TrainHyper:
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 1.0


def _batches(steps: Sequence[StepExample], batch_size: int, rng: np.random.Generator):
    """Shuffled, length-bucketed batches with a seed-fixed order."""
    order = rng.permutation(len(steps))
    pool = batch_size * 16
    batches = []
    for i in range(0, len(order), pool):
        chunk = sorted(order[i:i + pool].tolist(), key=lambda j: (len(steps[j].ids), j))
        batches.extend(chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def _global_norm(grads) -> float:
    return float(math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))


def train_masked_lm(params: MaskedLMParams, steps: Sequence[StepExample],
                    hyper: TrainHyper | None = None,
                    callback: Callable[[int, float], None] | None = None
                    ) -> tuple[MaskedLMParams, list[float]]:
    """Adamax on the mean masked-token cross-entropy; one trace entry per epoch."""
    hyper = hyper or TrainHyper()
    if not steps:
        raise ValueError("no training steps")
    params = params.copy()
    opt = Adamax(params, lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    trace = []
    it = 0
    for epoch in range(hyper.epochs):
        total, count = 0.0, 0
        for idx in _batches(steps, hyper.batch_size, rng):
            chunk = [steps[j] for j in idx]
            loss, grads = mlm_loss_and_grads(params, chunk, train=True, rng=rng)
            gnorm = _global_norm(grads)
            if not (math.isfinite(loss) and math.isfinite(gnorm)):
                raise NumericError(f"non-finite loss at step {it} (loss={loss}, "
                                   f"grad_norm={gnorm})")
            if hyper.grad_clip and gnorm > hyper.grad_clip:
                for g in grads.values():
                    g *= hyper.grad_clip / gnorm
            opt.step(params, grads)
            total += loss * len(chunk)
            count += len(chunk)
            it += 1
        trace.append(total / count)
        if callback is not None:
            callback(epoch, trace[-1])
    return params, trace


# -------------------------------------------------------------- embeddings

@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def embed_tokens(params: MaskedLMParams, vocab: Vocabulary, tokens: Sequence[str],
                 kind: SegmentKind = SegmentKind.BIO) -> EmbeddingVector:
    """Mean final-layer state over the non-special tokens."""
    ids = [vocab.id(t) for t in tokens][: params.config.max_len - 1]
    keep = [i for i, t in enumerate(ids) if t not in vocab.special_ids]
    if not keep:
        raise ValueError("no embeddable tokens")
    seq = [vocab.cls_id] + ids
    batch = Batch.from_sequences([seq], [[int(SegmentKind.CLS)] + [int(kind)] * len(ids)])
    hf, _ = encode_batch(params, batch)
    pos = np.array(keep) + 1
    return EmbeddingVector(hf[0, pos].astype(np.float64).mean(0))


def _token_signature(token: str, dim: int, seed: int) -> np.ndarray:
    h = hashlib.blake2b(f"{seed}\x00{token}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(h, "little")).standard_normal(dim)


def hash_embed(tokens: Iterable[str], dim: int = 64, seed: int = 0,
               weights: Mapping[str, float] | None = None) -> EmbeddingVector:
    """Sum of per-token Gaussian signatures, L2-normalized (zero for no tokens).

    With ``weights`` each token's signature is scaled by its weight (default 1).
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    v = np.zeros(dim)
    for t in tokens:
        w = 1.0 if weights is None else weights.get(t, 1.0)
        v += w * _token_signature(t, dim, seed)
    n = np.linalg.norm(v)
    return EmbeddingVector(v / n if n > 0 else v)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"TGCKPT\x00\x01"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: MaskedLMParams, path: str | Path, extra: dict | None = None) -> None:
    """Magic, version (u32), header length (u32), JSON header, then float32 LE tensors."""
    names = list(params.arrays)
    header = {"config": asdict(params.config),
              "tensors": [[n, list(params.arrays[n].shape)] for n in names],
              "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.arrays[n], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, with_extra: bool = False):
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a tagcast checkpoint")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    try:
        header = json.loads(data[off:off + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    off += hlen
    cfg = MaskedLMConfig(**header["config"])
    arrays = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) * 4
        if off + n > len(data):
            raise CheckpointError(f"{path}: truncated tensor data at {name}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n // 4, offset=off) \
            .reshape(shape).astype(np.float32)
        off += n
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    params = MaskedLMParams(cfg, arrays)
    return (params, header["extra"]) if with_extra else params
