"""Skip-gram with negative sampling over flattened per-patient code sequences."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .claims import ClaimCode, ClaimHistory, CodeType

UNKNOWN = "<UNK>"


def parse_token(token: str) -> ClaimCode:
    type_name, sep, code = token.partition(":")
    if not sep:
        raise ValueError(f"bad code token {token!r}, expected TYPE:code")
    return ClaimCode(CodeType.parse(type_name), code)


class Vocabulary:
    """Dense ids for ``TYPE:code`` tokens; id 0 is the shared unknown bucket."""

    def __init__(self, tokens, counts=None):
        tokens = list(tokens)
        if not tokens or tokens[0] != UNKNOWN:
            tokens.insert(0, UNKNOWN)
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = np.asarray(counts if counts is not None else np.ones(len(tokens)), dtype=np.int64)

    def __len__(self):
        return len(self.tokens)

    def id_of(self, code: ClaimCode) -> int:
        return self.index.get(code.token, 0)

    def lookup(self, idx: int):
        """Inverse of :meth:`id_of`; id 0 maps to ``None``."""
        return None if idx == 0 else parse_token(self.tokens[idx])

    def encode(self, codes) -> np.ndarray:
        return np.fromiter((self.index.get(c.token, 0) for c in codes), dtype=np.int64)

    def unknown_rate(self, histories) -> float:
        total = unknown = 0
        for h in histories:
            for e in h.encounters:
                for c in e.codes:
                    total += 1
                    unknown += c.token not in self.index
        return unknown / total if total else 0.0


def build_vocabulary(histories, min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq = Counter(c for h in histories for e in h.encounters for c in e.codes)
    kept = sorted(
        (c for c, n in freq.items() if n >= min_count),
        key=lambda c: (-freq[c], c.code, c.code_type.value),
    )
    rare = sum(n for c, n in freq.items() if n < min_count)
    return Vocabulary([UNKNOWN] + [c.token for c in kept], [rare] + [freq[c] for c in kept])


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    epoch_losses: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _pairs(seq: np.ndarray, window: int):
    centers, contexts = [], []
    for off in range(1, min(window, len(seq) - 1) + 1):
        centers += [seq[:-off], seq[off:]]
        contexts += [seq[off:], seq[:-off]]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def _row_step(w, rows, grads, alpha):
    # gradients hitting the same row in one batch are summed and divided by
    # sqrt(hits): a plain sum diverges for frequent codes in small vocabularies,
    # a plain mean learns far too slowly
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), w.shape[1]))
    np.add.at(acc, inverse, grads)
    w[uniq] -= alpha * acc / np.sqrt(np.bincount(inverse))[:, None]


def train_skipgram(
    histories,
    vocab: Vocabulary,
    dim: int = 100,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    batch_size: int = 256,
) -> EmbeddingMatrix:
    """Train code vectors; the window runs across encounter boundaries.

    Minibatch SGD in a fixed order, so results depend only on ``seed``.
    The learning rate decays linearly to ``lr * 1e-4`` over all epochs.
    """
    if len(vocab) <= 1:
        raise ValueError("vocabulary must contain at least one known code")
    if dim < 2 or window < 1 or negatives < 1:
        raise ValueError("require dim >= 2, window >= 1, negatives >= 1")
    rng = np.random.default_rng(seed)
    V = len(vocab)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))

    noise = vocab.counts.astype(np.float64) ** 0.75
    if noise.sum() == 0:
        noise = np.ones(V)
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    seqs = [vocab.encode(c for e in h.encounters for c in e.codes) for h in histories]
    built = [_pairs(s, window) for s in seqs]
    centers = np.concatenate([b[0] for b in built]) if built else np.empty(0, np.int64)
    contexts = np.concatenate([b[1] for b in built]) if built else np.empty(0, np.int64)
    n_pairs = len(centers)
    total_steps = max(1, epochs * -(-n_pairs // batch_size))
    step = 0
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, batch_size):
            idx = order[start:start + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = np.searchsorted(noise_cdf, rng.random((len(idx), negatives)), side="right")
            alpha = lr * max(1e-4, 1.0 - step / total_steps)
            step += 1

            v = w_in[c]
            u_pos = w_out[o]
            u_neg = w_out[neg]
            s_pos = _sigmoid(np.einsum("bd,bd->b", v, u_pos))
            s_neg = _sigmoid(np.einsum("bd,bkd->bk", v, u_neg))
            epoch_loss -= np.log(np.maximum(s_pos, 1e-12)).sum() + np.log(np.maximum(1 - s_neg, 1e-12)).sum()

            g_pos = s_pos - 1.0
            g_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", s_neg, u_neg)
            out_rows = np.concatenate([o, neg.ravel()])
            out_grads = np.concatenate([g_pos[:, None] * v, (s_neg[:, :, None] * v[:, None, :]).reshape(-1, dim)])
            _row_step(w_out, out_rows, out_grads, alpha)
            _row_step(w_in, c, g_v, alpha)
        losses.append(epoch_loss / max(n_pairs, 1))
    return EmbeddingMatrix(w_in, losses)


def embed_sequence(codes, vocab: Vocabulary, emb: EmbeddingMatrix) -> list:
    return [emb.vectors[i] for i in vocab.encode(codes)]


def cosine(a, b) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def write_embeddings(vocab: Vocabulary, emb: EmbeddingMatrix, sink) -> None:
    sink.write(f"{len(vocab)} {emb.dim}\n".encode())
    for token, row in zip(vocab.tokens, emb.vectors):
        sink.write((token + " " + " ".join(repr(float(x)) for x in row) + "\n").encode())


def read_embeddings(source):
    """Parse an embedding file into ``(Vocabulary, EmbeddingMatrix)``."""
    lines = [ln.decode() if isinstance(ln, bytes) else ln for ln in source]
    try:
        size, dim = (int(x) for x in lines[0].split())
    except (IndexError, ValueError):
        raise ValueError("line 1: expected header 'vocab_size dim'") from None
    tokens, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != dim + 1:
            raise ValueError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
        tokens.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    if len(tokens) != size:
        raise ValueError(f"header declares {size} codes but file has {len(tokens)}")
    if tokens[0] != UNKNOWN:
        raise ValueError(f"first embedding row must be {UNKNOWN}")
    return Vocabulary(tokens), EmbeddingMatrix(np.array(rows, dtype=np.float64).reshape(size, dim))
