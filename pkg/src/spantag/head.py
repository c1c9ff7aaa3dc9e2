"""Two-layer CNN token-classification head with hand-derived reverse-mode
gradients, Adam training, and a portable binary checkpoint format.

Architecture, for per-token input vectors x (N x D):

    h1 = relu(conv_k(x; W1) + b1)       zero "same" padding, kernel k (odd)
    h2 = relu(conv_k(h1; W2) + b2)
    logits = h2 @ Wout + bout           one logit per label in (B, I, O)

The loss is softmax cross-entropy summed (not averaged) over tokens, so loss
magnitudes scale with document length.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import (Document, EntitySpan, TokenizedDocument, canonical_type,
                     project_bio, tokenize)
from .encoder import (HashedNGramTable, EncoderOutput, encode_hashed,
                      encode_hashed_backward_sparse)

LABELS = ("B", "I", "O")
LABEL_IDS = {lab: i for i, lab in enumerate(LABELS)}
N_LABELS = len(LABELS)

CHECKPOINT_MAGIC = b"SPTG"
CHECKPOINT_VERSION = 1


@dataclass
class TaggerParams:
    W1: np.ndarray    # (k, D, H)
    b1: np.ndarray    # (H,)
    W2: np.ndarray    # (k, H, H)
    b2: np.ndarray    # (H,)
    Wout: np.ndarray  # (H, 3)
    bout: np.ndarray  # (3,)
    table: HashedNGramTable | None = None

    @property
    def kernel(self) -> int:
        return self.W1.shape[0]

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[2]

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator,
                   kernel: int = 5, table: HashedNGramTable | None = None) -> "TaggerParams":
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        # He-style init for the ReLU conv layers; smaller for the output layer
        return cls(
            W1=rng.normal(0.0, np.sqrt(2.0 / (kernel * dim)), size=(kernel, dim, hidden)),
            b1=np.zeros(hidden),
            W2=rng.normal(0.0, np.sqrt(2.0 / (kernel * hidden)), size=(kernel, hidden, hidden)),
            b2=np.zeros(hidden),
            Wout=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, N_LABELS)),
            bout=np.zeros(N_LABELS),
            table=table,
        )

    def head_tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "Wout": self.Wout, "bout": self.bout}


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wout: np.ndarray
    bout: np.ndarray
    vectors: np.ndarray  # gradient w.r.t. the input token vectors
    # (rows, row_grads) into the hash table; set only when the encoder is
    # trainable and the encoding carries token texts
    table_rows: tuple[np.ndarray, np.ndarray] | None = None

    def head_tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "Wout": self.Wout, "bout": self.bout}


@dataclass
class TrainConfig:
    epochs: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 1
    seed: int = 0
    hidden: int = 64
    dim: int = 32
    table_size: int = 65536
    kernel: int = 5
    freeze_encoder: bool = False
    log_points_per_epoch: int = 11

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


# LossTrace: list of (fractional epoch, summed loss over the logging window),
# strictly increasing x.
LossTrace = list


def _vectors_of(enc) -> np.ndarray:
    if isinstance(enc, EncoderOutput):
        return enc.vectors
    return np.asarray(enc, dtype=float)


def _conv_same(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Length-preserving 1-D convolution with zero padding, kernel-first weights."""
    k, d_in, d_out = W.shape
    if x.shape[1] != d_in:
        raise ValueError(f"input dim {x.shape[1]} does not match weight dim {d_in}")
    pad = k // 2
    n = x.shape[0]
    xp = np.zeros((n + 2 * pad, d_in))
    xp[pad:pad + n] = x
    out = np.empty((n, d_out))
    out[:] = b
    for o in range(k):
        out += xp[o:o + n] @ W[o]
    return out


def _conv_same_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Gradients of _conv_same: returns (dW, db, dx)."""
    k = W.shape[0]
    pad = k // 2
    n = x.shape[0]
    xp = np.zeros((n + 2 * pad, x.shape[1]))
    xp[pad:pad + n] = x
    dxp = np.zeros_like(xp)
    dW = np.empty_like(W)
    for o in range(k):
        dW[o] = xp[o:o + n].T @ dout
        dxp[o:o + n] += dout @ W[o].T
    db = dout.sum(axis=0)
    return dW, db, dxp[pad:pad + n]


def _forward_cache(x: np.ndarray, params: TaggerParams):
    if x.ndim != 2:
        raise ValueError("token vectors must be a 2-D array")
    if x.shape[0] < 1:
        raise ValueError("forward needs at least one token")
    z1 = _conv_same(x, params.W1, params.b1)
    h1 = np.maximum(z1, 0.0)
    z2 = _conv_same(h1, params.W2, params.b2)
    h2 = np.maximum(z2, 0.0)
    logits = h2 @ params.Wout + params.bout
    return logits, (x, z1, h1, z2, h2)


def forward(enc, params: TaggerParams) -> np.ndarray:
    """Per-token logits, shape (N, 3) in (B, I, O) order."""
    logits, _ = _forward_cache(_vectors_of(enc), params)
    return logits


def _label_ids(gold) -> np.ndarray:
    try:
        return np.asarray([LABEL_IDS[lab] for lab in gold], dtype=np.intp)
    except KeyError as e:
        raise ValueError(f"unknown label {e.args[0]!r}") from e


def loss(logits: np.ndarray, gold) -> float:
    """Softmax cross-entropy, summed over tokens."""
    ids = _label_ids(gold)
    if logits.shape[0] != len(ids):
        raise ValueError(f"{logits.shape[0]} logits vs {len(ids)} labels")
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float((lse - logits[np.arange(len(ids)), ids]).sum())


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent_dlogits(logits: np.ndarray, ids: np.ndarray) -> np.ndarray:
    d = _softmax(logits)
    d[np.arange(len(ids)), ids] -= 1.0
    return d


def _backward_from_dlogits(dlogits: np.ndarray, params: TaggerParams, cache) -> Gradients:
    x, z1, h1, z2, h2 = cache
    dWout = h2.T @ dlogits
    dbout = dlogits.sum(axis=0)
    dh2 = dlogits @ params.Wout.T
    dz2 = dh2 * (z2 > 0.0)
    dW2, db2, dh1 = _conv_same_backward(dz2, h1, params.W2)
    dz1 = dh1 * (z1 > 0.0)
    dW1, db1, dx = _conv_same_backward(dz1, x, params.W1)
    return Gradients(W1=dW1, b1=db1, W2=dW2, b2=db2, Wout=dWout, bout=dbout, vectors=dx)


def _loss_and_grads(enc, params: TaggerParams, gold) -> tuple[float, Gradients]:
    x = _vectors_of(enc)
    ids = _label_ids(gold)
    logits, cache = _forward_cache(x, params)
    if logits.shape[0] != len(ids):
        raise ValueError(f"{logits.shape[0]} logits vs {len(ids)} labels")
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    value = float((lse - logits[np.arange(len(ids)), ids]).sum())
    grads = _backward_from_dlogits(_xent_dlogits(logits, ids), params, cache)
    return value, grads


def backward(enc, params: TaggerParams, gold) -> Gradients:
    """Exact reverse-mode gradients of loss(forward(enc, params), gold).

    The returned ``vectors`` field carries the gradient w.r.t. the input token
    vectors.  When params carry a trainable hash table and ``enc`` knows its
    token texts, ``table_rows`` additionally holds the sparse table gradient.
    """
    _, grads = _loss_and_grads(enc, params, gold)
    if (params.table is not None and params.table.trainable
            and isinstance(enc, EncoderOutput) and enc.token_texts is not None):
        grads.table_rows = encode_hashed_backward_sparse(
            grads.vectors, enc.token_texts, params.table)
    return grads


def predict(enc, params: TaggerParams) -> list[str]:
    """Per-token argmax labels; ties resolve to the earlier label in (B, I, O)."""
    logits = forward(enc, params)
    return [LABELS[i] for i in np.argmax(logits, axis=1)]


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adam with an active-row shortcut for large embedding tables.

    Rows of a row-sparse tensor that have never received gradient keep zero
    moments, so skipping them is exactly equivalent to the dense update.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._active: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             row_updates: dict[str, tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]] | None = None) -> None:
        """One update: dense tensors plus optional (tensor, (rows, row_grads)) entries."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            theta = tensors[name]
            m = self._m.setdefault(name, np.zeros_like(theta))
            v = self._v.setdefault(name, np.zeros_like(theta))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        for name, (theta, (rows, row_grads)) in (row_updates or {}).items():
            m = self._m.setdefault(name, np.zeros_like(theta))
            v = self._v.setdefault(name, np.zeros_like(theta))
            active = self._active.get(name, np.zeros(0, dtype=np.intp))
            if len(rows):
                active = np.union1d(active, rows)
            self._active[name] = active
            if not len(active):
                continue
            g = np.zeros((len(active), theta.shape[1]))
            if len(rows):
                g[np.searchsorted(active, rows)] = row_grads
            ma = self.beta1 * m[active] + (1.0 - self.beta1) * g
            va = self.beta2 * v[active] + (1.0 - self.beta2) * (g * g)
            m[active] = ma
            v[active] = va
            theta[active] -= self.lr * (ma / c1) / (np.sqrt(va / c2) + self.eps)


# ---------------------------------------------------------------------------
# Training loop


def _training_items(docs, spans, entity_type, embeddings):
    """Pair each document with its gold BIO labels; skip token-less documents."""
    canon = canonical_type(entity_type)
    spans_by_doc: dict[str, list[EntitySpan]] = {}
    n_gold = 0
    for s in spans:
        if canonical_type(s.entity_type) == canon:
            spans_by_doc.setdefault(s.doc_id, []).append(
                EntitySpan(s.doc_id, canon, s.start, s.end, s.surface))
            n_gold += 1
    if n_gold == 0:
        raise ValueError(f"no gold spans of type '{entity_type}' in the corpus")

    items = []
    if embeddings is None:
        for doc in docs:
            tdoc = tokenize(doc)
            if not tdoc.tokens:
                continue
            items.append((tdoc, None, project_bio(tdoc, spans_by_doc.get(doc.id, []))))
    else:
        by_id = {e.doc_id: e for e in embeddings}
        for doc in docs:
            enc = by_id.get(doc.id)
            if enc is None:
                raise ValueError(f"no embeddings for document '{doc.id}'")
            if not len(enc.tokens):
                continue
            tdoc = TokenizedDocument(doc=doc, tokens=enc.tokens)
            items.append((tdoc, enc, project_bio(tdoc, spans_by_doc.get(doc.id, []))))
    if not items:
        raise ValueError("empty corpus: no document yields any tokens")
    return items


def train(docs: list[Document], spans: list[EntitySpan], entity_type: str,
          cfg: TrainConfig, embeddings: list[EncoderOutput] | None = None
          ) -> tuple[TaggerParams, LossTrace]:
    """Train one tagger for one entity type.

    Documents are visited in seeded-shuffled order for cfg.epochs epochs with
    Adam updates every cfg.batch documents.  The summed loss is logged roughly
    eleven times per epoch; the trace x axis is the fractional epoch.
    Deterministic for a fixed config and seed.
    """
    rng = np.random.default_rng(cfg.seed)
    if embeddings is None:
        table = HashedNGramTable.create(cfg.table_size, cfg.dim, rng,
                                        trainable=not cfg.freeze_encoder)
        dim = cfg.dim
    else:
        table = None
        dims = {e.dim for e in embeddings}
        if len(dims) != 1:
            raise ValueError(f"embeddings carry mixed dims {sorted(dims)}")
        dim = dims.pop()

    items = _training_items(docs, spans, entity_type, embeddings)
    params = TaggerParams.initialize(dim, cfg.hidden, rng, kernel=cfg.kernel, table=table)

    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    n = len(items)
    log_interval = max(1, round(n / cfg.log_points_per_epoch))

    trace: LossTrace = []
    processed = 0
    window_loss = 0.0
    pending = 0

    accum: dict[str, np.ndarray] | None = None
    accum_rows: list[tuple[np.ndarray, np.ndarray]] = []
    in_batch = 0

    def apply_step():
        nonlocal accum, accum_rows, in_batch
        row_updates = None
        if accum_rows:
            all_rows = np.concatenate([r for r, _ in accum_rows])
            all_grads = np.concatenate([g for _, g in accum_rows])
            uniq, inverse = np.unique(all_rows, return_inverse=True)
            combined = np.zeros((len(uniq), all_grads.shape[1]))
            np.add.at(combined, inverse, all_grads)
            row_updates = {"table": (params.table.rows, (uniq, combined))}
        opt.step(params.head_tensors(), accum, row_updates)
        accum = None
        accum_rows = []
        in_batch = 0

    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for pos, idx in enumerate(order):
            tdoc, enc, gold = items[idx]
            if enc is None:
                enc = encode_hashed(tdoc, params.table)
            value, grads = _loss_and_grads(enc, params, gold)
            if accum is None:
                accum = grads.head_tensors()
            else:
                for name, g in grads.head_tensors().items():
                    accum[name] += g
            if params.table is not None and params.table.trainable:
                accum_rows.append(
                    encode_hashed_backward_sparse(grads.vectors, tdoc, params.table))
            in_batch += 1
            if in_batch >= cfg.batch or pos == n - 1:
                apply_step()

            processed += 1
            window_loss += value
            pending += 1
            if processed % log_interval == 0:
                trace.append((processed / n, window_loss))
                window_loss = 0.0
                pending = 0
    if pending:
        trace.append((processed / n, window_loss))
    return params, trace


def write_loss_trace(trace: LossTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("fractional_epoch,loss\n")
        for x, value in trace:
            f.write(f"{x!r},{value!r}\n")


# ---------------------------------------------------------------------------
# Checkpoint format: magic "SPTG", then version, D, H, V as little-endian u32,
# then the tensors as row-major float32 in field order (table rows last).


def save_checkpoint(params: TaggerParams, path) -> None:
    tensors = [params.W1, params.b1, params.W2, params.b2, params.Wout, params.bout]
    v = 0
    if params.table is not None:
        tensors.append(params.table.rows)
        v = params.table.table_size
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIII", CHECKPOINT_VERSION, params.dim, params.hidden, v))
        for t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path) -> TaggerParams:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a tagger checkpoint (bad magic)")
    version, dim, hidden, v = struct.unpack("<IIII", blob[4:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    data = np.frombuffer(blob[20:], dtype="<f4")
    # header carries no kernel size; recover it from the float count
    fixed = 5 * hidden + N_LABELS + v * dim
    per_k = dim * hidden + hidden * hidden
    if (len(data) - fixed) % per_k != 0:
        raise ValueError(f"{path}: corrupt checkpoint (tensor sizes do not add up)")
    kernel = (len(data) - fixed) // per_k
    if kernel < 1 or kernel % 2 != 1:
        raise ValueError(f"{path}: corrupt checkpoint (implied kernel {kernel})")

    shapes = [("W1", (kernel, dim, hidden)), ("b1", (hidden,)),
              ("W2", (kernel, hidden, hidden)), ("b2", (hidden,)),
              ("Wout", (hidden, N_LABELS)), ("bout", (N_LABELS,))]
    if v:
        shapes.append(("table", (v, dim)))
    out = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        out[name] = data[pos:pos + size].astype(float).reshape(shape)
        pos += size
    table = HashedNGramTable(rows=out["table"]) if v else None
    return TaggerParams(W1=out["W1"], b1=out["b1"], W2=out["W2"], b2=out["b2"],
                        Wout=out["Wout"], bout=out["bout"], table=table)
