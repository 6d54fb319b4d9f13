"""Decoder-only transformer over scene-graph token sequences.

The network is a small pre-norm stack (RMSNorm, causal multi-head attention,
gated SiLU feed-forward) with learned absolute position embeddings. Training
minimizes next-token cross-entropy over the supervised positions of each
sequence; inference reads the predicate distribution after a query frame.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tokenizer as tok
from .corpus import shuffle_augment
from .errors import (
    ContextOverflow,
    EmptyMask,
    FormatError,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .scenegraph import MAX_INSTANCES, DEFAULT_SCHEMA, SceneGraph, Schema
from .tokenizer import Role, TokenSequence, Vocabulary

log = logging.getLogger(__name__)

FULL_TOKEN = "full_token"
PREDICATE_ONLY = "predicate_only"


@dataclass
class ModelConfig:
    vocab_size: int
    context_length: int = 256
    hidden_size: int = 128
    num_heads: int = 4
    num_layers: int = 4
    feedforward_multiplier: int = 4
    learning_rate: float = 5e-4
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 50
    lr_schedule: str = "cosine"
    supervision_mode: str = FULL_TOKEN
    seed: int = 0
    patience: int = 5
    shuffle_copies: int = 3
    grad_clip: float = 1.0
    dtype: str = "float32"
    zero_init_head: bool = False
    max_instances: int = MAX_INSTANCES
    schema: Optional[dict] = None

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError("hidden_size must be divisible by num_heads")
        if self.context_length < tok.FRAME_LEN:
            raise ValueError("context_length must be at least 8")
        if self.supervision_mode not in (FULL_TOKEN, PREDICATE_ONLY):
            raise ValueError(f"unknown supervision mode {self.supervision_mode!r}")
        if self.lr_schedule != "cosine":
            raise ValueError("only the cosine schedule is supported")

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def vocabulary(self) -> Vocabulary:
        schema = Schema.from_dict(self.schema) if self.schema else DEFAULT_SCHEMA
        return tok.build_vocab(schema, self.max_instances)


PROFILES = {
    # values used for the published-scale model
    "paper": dict(context_length=1024, hidden_size=768, num_heads=12, num_layers=12, max_epochs=50),
    # CPU-sized model
    "desk": dict(context_length=256, hidden_size=128, num_heads=4, num_layers=4, max_epochs=50),
}


def make_config(vocab: Vocabulary, profile: str = "desk", schema: Schema = DEFAULT_SCHEMA, **overrides) -> ModelConfig:
    kw = dict(PROFILES[profile])
    kw.update(overrides)
    return ModelConfig(
        vocab_size=len(vocab),
        max_instances=vocab.max_instances,
        schema=schema.to_dict(),
        **kw,
    )


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.hidden_size
        self.num_heads = cfg.num_heads
        self.attn_norm = nn.RMSNorm(h, eps=1e-6)
        self.qkv = nn.Linear(h, 3 * h, bias=False)
        self.proj = nn.Linear(h, h, bias=False)
        self.ff_norm = nn.RMSNorm(h, eps=1e-6)
        ff = cfg.feedforward_multiplier * h
        self.gate = nn.Linear(h, ff, bias=False)
        self.up = nn.Linear(h, ff, bias=False)
        self.down = nn.Linear(ff, h, bias=False)

    def forward(self, x: torch.Tensor, causal: torch.Tensor) -> torch.Tensor:
        b, t, h = x.shape
        q, k, v = self.qkv(self.attn_norm(x)).split(h, dim=-1)
        shape = (b, t, self.num_heads, h // self.num_heads)
        q, k, v = (z.view(shape).transpose(1, 2) for z in (q, k, v))
        att = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.proj(att.transpose(1, 2).reshape(b, t, h))
        z = self.ff_norm(x)
        return x + self.down(F.silu(self.gate(z)) * self.up(z))


class SceneTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.hidden_size)
        self.pos_emb = nn.Embedding(cfg.context_length, cfg.hidden_size)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
        self.norm = nn.RMSNorm(cfg.hidden_size, eps=1e-6)
        self.head = nn.Linear(cfg.hidden_size, cfg.vocab_size, bias=False)
        mask = torch.triu(torch.ones(cfg.context_length, cfg.context_length, dtype=torch.bool), diagonal=1)
        self.register_buffer("causal", mask, persistent=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        t = ids.shape[-1]
        if t > self.config.context_length:
            raise ContextOverflow(f"{t} tokens exceed context length {self.config.context_length}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        for blk in self.blocks:
            x = blk(x, self.causal)
        return self.head(self.norm(x))


def init_model(cfg: ModelConfig) -> SceneTransformer:
    """Seeded initialization; identical configs give bit-identical weights."""
    gen = torch.Generator().manual_seed(cfg.seed)
    model = SceneTransformer(cfg)
    std = 0.02
    out_std = std / math.sqrt(2 * max(cfg.num_layers, 1))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "norm" in name:
                p.fill_(1.0)
            elif name.endswith(("proj.weight", "down.weight")):
                p.copy_(torch.randn(p.shape, generator=gen) * out_std)
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * std)
        if cfg.zero_init_head:
            model.head.weight.zero_()
    return model.to(cfg.torch_dtype)


def forward(model: SceneTransformer, ids) -> torch.Tensor:
    """Logits ``[positions x vocab]`` for a single sequence (or batched input)."""
    x = torch.as_tensor(ids, dtype=torch.long)
    squeeze = x.dim() == 1
    if squeeze:
        x = x.unsqueeze(0)
    logits = model(x)
    return logits[0] if squeeze else logits


@dataclass
class TrainBatch:
    inputs: torch.Tensor
    targets: torch.Tensor
    loss_mask: torch.Tensor


def supervision_mask(seq: TokenSequence, mode: str) -> list[int]:
    """1 where the token at this position is a training target."""
    out = []
    for i, r in zip(seq.ids, seq.role_mask):
        if i == tok.PAD_ID:
            out.append(0)
        elif mode == PREDICATE_ONLY:
            out.append(int(r == Role.PREDICATE))
        else:
            out.append(1)
    return out


def make_batch(seqs: Sequence[TokenSequence], mode: str = FULL_TOKEN, length: int | None = None) -> TrainBatch:
    """Shift-by-one batch, right-padded to ``length`` (default: longest row)."""
    span = max(len(s) for s in seqs) - 1
    if length is not None:
        span = max(span, length)
    inputs = torch.full((len(seqs), span), tok.PAD_ID, dtype=torch.long)
    targets = torch.full((len(seqs), span), tok.PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(seqs), span))
    for row, s in enumerate(seqs):
        n = len(s) - 1
        if n <= 0:
            continue
        ids = torch.tensor(s.ids, dtype=torch.long)
        inputs[row, :n] = ids[:-1]
        targets[row, :n] = ids[1:]
        mask[row, :n] = torch.tensor(supervision_mask(s, mode)[1:], dtype=mask.dtype)
    return TrainBatch(inputs, targets, mask)


def loss(model: SceneTransformer, batch: TrainBatch) -> torch.Tensor:
    mask = batch.loss_mask.to(model.tok_emb.weight.dtype)
    total = mask.sum()
    if total == 0:
        raise EmptyMask("batch has no supervised positions")
    logits = model(batch.inputs)
    nll = F.cross_entropy(logits.transpose(1, 2), batch.targets, reduction="none")
    return (nll * mask).sum() / total


def gradients(model: SceneTransformer, batch: TrainBatch) -> dict[str, torch.Tensor]:
    model.zero_grad(set_to_none=True)
    value = loss(model, batch)
    value.backward()
    grads = {}
    for name, p in model.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    model.zero_grad(set_to_none=True)
    return grads


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "holdout_loss", "lr"])
        for r in self.rows:
            writer.writerow([r["epoch"], repr(r["train_loss"]), repr(r["holdout_loss"]), repr(r["lr"])])
        return buf.getvalue()


def encode_corpus(vocab: Vocabulary, graphs: Sequence[SceneGraph], context_length: int) -> list[TokenSequence]:
    return [tok.encode_graph(vocab, g, context_length) for g in graphs if g.edges]


def _batches(seqs, batch_size, order):
    for start in range(0, len(order), batch_size):
        yield [seqs[i] for i in order[start:start + batch_size]]


def bucketed_batches(seqs, batch_size: int, gen: torch.Generator, window: int = 32):
    """Shuffled batches of similar length: sort within windows, shuffle batch order."""
    order = torch.randperm(len(seqs), generator=gen).tolist()
    span = batch_size * window
    batches = []
    for start in range(0, len(order), span):
        chunk = sorted(order[start:start + span], key=lambda i: len(seqs[i]))
        batches.extend(chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size))
    for b in torch.randperm(len(batches), generator=gen).tolist():
        yield [seqs[i] for i in batches[b]]


@torch.no_grad()
def evaluate_loss(model: SceneTransformer, seqs: Sequence[TokenSequence], mode: str, batch_size: int = 64) -> float:
    model.eval()
    total, count = 0.0, 0.0
    # length-sorted batching keeps padding small; summation order stays fixed
    order = sorted(range(len(seqs)), key=lambda i: (len(seqs[i]), i))
    for chunk in _batches(seqs, batch_size, order):
        b = make_batch(chunk, mode)
        n = float(b.loss_mask.sum())
        if n == 0:
            continue
        total += float(loss(model, b)) * n
        count += n
    if count == 0:
        raise EmptyMask("holdout has no supervised positions")
    return total / count


def train(
    config: ModelConfig,
    corpus: Sequence[SceneGraph],
    holdout: Sequence[SceneGraph],
    vocab: Vocabulary | None = None,
    progress=None,
) -> tuple[SceneTransformer, TrainingLog]:
    """AdamW with decoupled weight decay, cosine decay to zero, early stopping.

    Every scene contributes itself plus ``config.shuffle_copies`` edge-order
    permutations. The returned weights are those of the best holdout epoch.
    """
    vocab = vocab or config.vocabulary()
    torch.manual_seed(config.seed)
    mode = config.supervision_mode

    graphs = []
    for i, g in enumerate(corpus):
        graphs.append(g)
        graphs.extend(shuffle_augment(g, config.shuffle_copies, seed=int(np.random.SeedSequence([config.seed, i]).generate_state(1)[0])))
    train_seqs = encode_corpus(vocab, graphs, config.context_length)
    hold_seqs = encode_corpus(vocab, holdout, config.context_length)
    if not train_seqs:
        raise EmptyMask("training corpus has no edges")

    model = init_model(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    steps_per_epoch = math.ceil(len(train_seqs) / config.batch_size)
    total_steps = max(1, steps_per_epoch * config.max_epochs)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1.0 + math.cos(math.pi * min(s, total_steps) / total_steps)))
    gen = torch.Generator().manual_seed(config.seed)

    log_ = TrainingLog()
    best = evaluate_loss(model, hold_seqs, mode) if hold_seqs else math.inf
    log_.rows.append({"epoch": 0, "train_loss": math.nan, "holdout_loss": best, "lr": config.learning_rate})
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        run_loss, run_n = 0.0, 0.0
        for chunk in bucketed_batches(train_seqs, config.batch_size, gen):
            b = make_batch(chunk, mode)
            n = float(b.loss_mask.sum())
            if n == 0:
                continue
            value = loss(model, b)
            if not torch.isfinite(value):
                raise NonFiniteLoss(f"loss became {float(value)} at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            value.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            sched.step()
            run_loss += value.item() * n
            run_n += n
        lr = opt.param_groups[0]["lr"]
        train_loss = run_loss / max(run_n, 1.0)
        hold = evaluate_loss(model, hold_seqs, mode) if hold_seqs else train_loss
        log_.rows.append({"epoch": epoch, "train_loss": train_loss, "holdout_loss": hold, "lr": lr})
        log.info("epoch %d train %.4f holdout %.4f lr %.2e", epoch, train_loss, hold, lr)
        if progress is not None:
            progress(log_.rows[-1])
        if hold < best:
            best, stale = hold, 0
            log_.best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= config.patience:
                log_.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, log_


@torch.no_grad()
def predict_relation_distribution(
    model: SceneTransformer,
    vocab: Vocabulary,
    context: TokenSequence,
    query: TokenSequence,
) -> np.ndarray:
    """Probability over the relation block for the token after the query's ``[SEP]``."""
    ids = context.ids + query.ids
    if len(ids) > model.config.context_length:
        raise ContextOverflow(f"{len(ids)} tokens exceed context length {model.config.context_length}")
    model.eval()
    logits = model(torch.tensor(ids, dtype=torch.long).unsqueeze(0))[0, -1]
    return _relation_probs(logits, vocab)


def _relation_probs(logits: torch.Tensor, vocab: Vocabulary) -> np.ndarray:
    full = torch.softmax(logits.to(torch.float64), dim=-1).numpy()
    rel = full[vocab.relation_range.start:vocab.relation_range.stop]
    return rel / rel.sum()


@torch.no_grad()
def predict_relation_distributions(
    model: SceneTransformer,
    vocab: Vocabulary,
    requests: Sequence[tuple[TokenSequence, TokenSequence]],
    batch_size: int = 32,
) -> list[np.ndarray]:
    """Batched form of :func:`predict_relation_distribution` (right padding)."""
    model.eval()
    out: list[np.ndarray] = []
    for start in range(0, len(requests), batch_size):
        chunk = [c.ids + q.ids for c, q in requests[start:start + batch_size]]
        longest = max(len(c) for c in chunk)
        if longest > model.config.context_length:
            raise ContextOverflow(f"{longest} tokens exceed context length {model.config.context_length}")
        x = torch.full((len(chunk), longest), tok.PAD_ID, dtype=torch.long)
        for r, ids in enumerate(chunk):
            x[r, :len(ids)] = torch.tensor(ids)
        logits = model(x)
        for r, ids in enumerate(chunk):
            out.append(_relation_probs(logits[r, len(ids) - 1], vocab))
    return out


@dataclass(frozen=True)
class SamplerConfig:
    top_p: float = 0.7
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def descending_order(dist: np.ndarray) -> np.ndarray:
    """Indices by descending probability, ties broken by ascending index."""
    dist = np.asarray(dist, dtype=np.float64)
    return np.lexsort((np.arange(len(dist)), -dist))


def top_p_support(dist: np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest descending prefix whose cumulative mass exceeds ``top_p``.

    Returns ``(indices, renormalized probabilities)``. When no prefix exceeds
    ``top_p`` (``top_p = 1``) the whole support is kept.
    """
    dist = np.asarray(dist, dtype=np.float64)
    order = descending_order(dist)
    cum = np.cumsum(dist[order])
    over = np.nonzero(cum > top_p)[0]
    k = int(over[0]) + 1 if len(over) else len(order)
    keep = order[:k]
    probs = dist[keep]
    return keep, probs / probs.sum()


def sample_top_p(dist: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator | None = None) -> int:
    """Index into ``dist`` drawn by nucleus sampling."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    dist = np.asarray(dist, dtype=np.float64)
    if cfg.temperature != 1.0:
        with np.errstate(divide="ignore"):
            scaled = np.exp(np.log(dist) / cfg.temperature)
        dist = scaled / scaled.sum()
    keep, probs = top_p_support(dist, cfg.top_p)
    return int(keep[rng.choice(len(keep), p=probs)])


@torch.no_grad()
def generate_free(
    model: SceneTransformer,
    context: TokenSequence,
    max_new_tokens: int,
    cfg: SamplerConfig,
) -> list[int]:
    """Experimental unconstrained continuation; stops at ``[EOS]``. No framing guarantees."""
    rng = np.random.default_rng(cfg.seed)
    ids = list(context.ids)
    for _ in range(max_new_tokens):
        if len(ids) >= model.config.context_length:
            break
        logits = model(torch.tensor(ids).unsqueeze(0))[0, -1]
        probs = torch.softmax(logits.to(torch.float64), -1).numpy()
        nxt = sample_top_p(probs, cfg, rng)
        ids.append(nxt)
        if nxt == tok.EOS_ID:
            break
    return ids[len(context.ids):]


MAGIC = b"SGTM"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_checkpoint(model: SceneTransformer, config: ModelConfig | None = None) -> bytes:
    config = config or model.config
    header = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
    out.write(header)
    state = model.state_dict()
    out.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        raw_name = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return out.getvalue()


def load_checkpoint(data: bytes) -> tuple[SceneTransformer, ModelConfig]:
    buf = io.BytesIO(data)

    def read(n: int) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise FormatError("checkpoint is truncated")
        return chunk

    if read(4) != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<HI", read(6))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    try:
        config = ModelConfig.from_dict(json.loads(read(header_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from None
    model = SceneTransformer(config).to(config.torch_dtype)
    expected = model.state_dict()
    (count,) = struct.unpack("<I", read(4))
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2))
        name = read(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", read(2))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", read(4 * ndim))
        dtype = _DTYPES[code]
        arr = np.frombuffer(read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize), dtype=dtype).reshape(shape)
        if name not in expected:
            raise ShapeMismatch(f"unexpected array {name!r}")
        if tuple(expected[name].shape) != shape:
            raise ShapeMismatch(f"{name}: header implies {tuple(expected[name].shape)}, file has {shape}")
        state[name] = torch.from_numpy(arr.astype(dtype.newbyteorder("="), copy=True))
    missing = set(expected) - set(state)
    if missing:
        raise ShapeMismatch(f"missing arrays: {sorted(missing)}")
    if buf.read(1):
        raise FormatError("trailing bytes after last array")
    model.load_state_dict(state)
    model.eval()
    return model, config
