"""Hierarchical time-aware network for ADE risk, and the flat LSTM baseline.

Encounter level: a Bi-LSTM reads each encounter's code embeddings, and an
attention layer pools its outputs into one encounter vector. History level:
a time-aware LSTM reads the encounter vectors together with the day gaps
between encounters, and a second attention layer pools its states before a
logistic output.

Batches are run as packed sequences: rows are sorted by length, so at step
``t`` only the leading ``n_t`` rows are still active and the rest keep their
state unchanged. A batch of one is the single-instance computation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import EmbeddingMatrix, Vocabulary

CHECKPOINT_VERSION = "htnnr-ckpt-1"
DELTA_MIN = 1.0
GATES = ("i", "f", "o", "c")
MASK_BIAS = -1e9


# ---------------------------------------------------------------------------
# cells


class LstmCell:
    """Gate weights act on ``[input, h_prev]``: each ``W_*`` is ``(in + hidden, hidden)``."""

    def __init__(self, params: dict, prefix: str, input_dim: int, hidden_dim: int):
        self.prefix = prefix
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.W = {g: params[f"{prefix}.W_{g}"] for g in GATES}
        self.b = {g: params[f"{prefix}.b_{g}"] for g in GATES}

    @staticmethod
    def declare(prefix, input_dim, hidden_dim):
        shapes = {}
        for g in GATES:
            shapes[f"{prefix}.W_{g}"] = (input_dim + hidden_dim, hidden_dim)
        for g in GATES:
            shapes[f"{prefix}.b_{g}"] = (hidden_dim,)
        return shapes

    def stacked(self):
        """All four gates side by side: ``(in + hidden, 4 * hidden)`` and ``(4 * hidden,)``."""
        W = ad.concat([self.W[g] for g in GATES], axis=1)
        b = ad.concat([self.b[g] for g in GATES], axis=0)
        return W, b


class TlstmCell:
    def __init__(self, params: dict, prefix: str, input_dim: int, hidden_dim: int):
        self.lstm = LstmCell(params, prefix, input_dim, hidden_dim)
        self.W_d = params[f"{prefix}.W_d"]
        self.b_d = params[f"{prefix}.b_d"]

    @staticmethod
    def declare(prefix, input_dim, hidden_dim):
        shapes = LstmCell.declare(prefix, input_dim, hidden_dim)
        shapes[f"{prefix}.W_d"] = (hidden_dim, hidden_dim)
        shapes[f"{prefix}.b_d"] = (hidden_dim,)
        return shapes


def decay(delta):
    """Elapsed-time weight ``1 / delta`` with ``delta`` clamped to one day."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError(f"elapsed time must be non-negative, got {delta}")
    return 1.0 / np.maximum(delta, DELTA_MIN)


def _gate_update(z, c_prev, hidden):
    s = ad.sigmoid(z[..., : 3 * hidden])
    i = s[..., :hidden]
    f = s[..., hidden: 2 * hidden]
    o = s[..., 2 * hidden:]
    cand = ad.tanh(z[..., 3 * hidden:])
    c = f * c_prev + i * cand
    h = o * ad.tanh(c)
    return h, c


def lstm_step(cell: LstmCell, x, h_prev, c_prev):
    """One LSTM step on a vector or a batch of row vectors; returns ``(h, c)``."""
    x, h_prev, c_prev = ad.as_tensor(x), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    if x.shape[-1] != cell.input_dim or h_prev.shape[-1] != cell.hidden_dim or c_prev.shape != h_prev.shape:
        raise ad.ShapeError(
            f"lstm_step: input {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"do not fit cell ({cell.input_dim} -> {cell.hidden_dim})"
        )
    W, b = cell.stacked()
    z = ad.concat([x, h_prev], axis=-1) @ W + b
    return _gate_update(z, c_prev, cell.hidden_dim)


def short_term_memory(cell: TlstmCell, c_prev):
    return ad.tanh(c_prev @ cell.W_d + cell.b_d)


def adjust_memory(cell: TlstmCell, c_prev, g, bypass=False):
    """Split ``c_prev`` into long- and short-term parts and decay the short one by ``g``.

    Returns ``(c_star, c_hat)``; with ``bypass`` the memory passes through untouched.
    """
    c_prev = ad.as_tensor(c_prev)
    if bypass:
        return c_prev, None
    c_short = short_term_memory(cell, c_prev)
    c_hat = c_short * g
    # (c_prev - c_short) + c_hat, arranged so that g == 1 gives c_prev bit for bit
    return c_prev + c_short * (g - 1.0), c_hat


def tlstm_step(cell: TlstmCell, x, h_prev, c_prev, delta, bypass=False):
    g = decay(delta)
    if g.ndim:
        g = g.reshape(-1, 1)
    c_star, _ = adjust_memory(cell, c_prev, g, bypass)
    return lstm_step(cell.lstm, x, h_prev, c_star)


def attention(H, w, mask=None):
    """Pool ``H`` of shape ``(N, T, D)`` over ``T``: ``alpha = softmax(w . tanh(H))``.

    Returns ``(pooled (N, D), alpha (N, T))``; masked positions get zero weight.
    """
    H = ad.as_tensor(H)
    scores = ad.tanh(H) @ w
    if mask is not None:
        scores = scores + np.where(mask, 0.0, MASK_BIAS)
    alpha = ad.softmax(scores, axis=1)
    n, t, d = H.shape
    pooled = (H * alpha.reshape(n, t, 1)).sum(axis=1)
    return pooled, alpha


# ---------------------------------------------------------------------------
# packed sequence scans


def _active_counts(lengths, steps):
    lengths = np.asarray(lengths)
    return [int(np.count_nonzero(lengths > t)) for t in range(steps)]


def packed_lstm(cell: LstmCell, X, lengths, reverse=False, deltas=None, tcell=None, bypass=False):
    """Run ``cell`` over padded inputs ``X`` ``(N, T, in)``; rows sorted by length, longest first.

    Returns per-position states stacked as ``(N, T, hidden)`` and the final
    state of every row. When ``tcell`` is given the memory is time-adjusted
    with the ``(N, T)`` day gaps in ``deltas``.
    """
    X = ad.as_tensor(X)
    n, steps, _ = X.shape
    hid = cell.hidden_dim
    W, b = cell.stacked()
    W_x, W_h = W[: cell.input_dim], W[cell.input_dim:]
    xproj = X @ W_x + b
    g_all = decay(deltas) if deltas is not None else None
    active = _active_counts(lengths, steps)
    h = Tensor(np.zeros((n, hid)))
    c = Tensor(np.zeros((n, hid)))
    outputs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        k = active[t]
        h_k = h if k == n else h[:k]
        c_k = c if k == n else c[:k]
        if tcell is not None:
            c_k, _ = adjust_memory(tcell, c_k, g_all[:k, t:t + 1], bypass)
        z = xproj[:k, t] + h_k @ W_h
        h_new, c_new = _gate_update(z, c_k, hid)
        if k == n:
            h, c = h_new, c_new
        else:
            h = ad.concat([h_new, h[k:]], axis=0)
            c = ad.concat([c_new, c[k:]], axis=0)
        outputs[t] = h
    return ad.stack(outputs, axis=1), h


# ---------------------------------------------------------------------------
# encoded inputs


@dataclass(frozen=True)
class EncodedHistory:
    codes: tuple  # one int array of vocabulary ids per encounter
    deltas: np.ndarray  # days since the previous encounter, first entry DELTA_MIN


def encode_history(history, vocab: Vocabulary, max_encounters: int = 200) -> EncodedHistory:
    """Vocabulary ids and day gaps for the most recent ``max_encounters`` encounters."""
    encs = history.encounters[-max_encounters:] if max_encounters else history.encounters
    if not encs:
        raise ValueError(f"patient {history.patient_id}: empty claim history")
    codes = tuple(vocab.encode(e.codes) for e in encs)
    deltas = np.full(len(encs), DELTA_MIN)
    for i in range(1, len(encs)):
        deltas[i] = max(DELTA_MIN, (encs[i].date - encs[i - 1].date).days)
    return EncodedHistory(codes, deltas)


def _init_params(shapes: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b"):
            value = np.full(shape, 1.0 if leaf == "b_f" else 0.0)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


class _Model:
    kind = ""

    def __init__(self, vocab: Vocabulary, emb: EmbeddingMatrix, dims: dict, seed: int = 0,
                 max_encounters: int = 200, params: dict | None = None, target_drug: str = ""):
        if len(vocab) != emb.vectors.shape[0]:
            raise ValueError(f"vocabulary has {len(vocab)} codes but embedding has {emb.vectors.shape[0]} rows")
        self.vocab = vocab
        self.emb = emb
        self.dims = dict(dims)
        self.max_encounters = max_encounters
        self.target_drug = target_drug
        shapes = self.declare()
        if params is None:
            params = _init_params(shapes, seed)
        missing = set(shapes) ^ set(params)
        if missing:
            raise ValueError(f"parameter names do not match model: {sorted(missing)}")
        for name, shape in shapes.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ValueError(f"parameter {name}: shape {params[name].shape}, expected {shape}")
        self.params = {name: params[name] for name in shapes}

    def declare(self) -> dict:
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def encode(self, history) -> EncodedHistory:
        return encode_history(history, self.vocab, self.max_encounters)

    def forward_batch(self, batch, **kwargs):
        raise NotImplementedError

    def predict_proba(self, histories, batch_size=256) -> np.ndarray:
        encoded = [h if isinstance(h, EncodedHistory) else self.encode(h) for h in histories]
        out = [self.forward_batch(encoded[i:i + batch_size]).data for i in range(0, len(encoded), batch_size)]
        return np.concatenate(out) if out else np.empty(0)

    def _embed(self, ids_rows, width):
        X = np.zeros((len(ids_rows), width, self.emb.dim))
        for r, ids in enumerate(ids_rows):
            X[r, : len(ids)] = self.emb.vectors[ids]
        return X


class HtnnrModel(_Model):
    kind = "htnnr"
    default_dims = {"code_hidden": 64, "history_hidden": 128}

    def declare(self):
        e, hc, hh = self.emb.dim, self.dims["code_hidden"], self.dims["history_hidden"]
        shapes = {}
        shapes.update(LstmCell.declare("encounter.bilstm.fwd", e, hc))
        shapes.update(LstmCell.declare("encounter.bilstm.bwd", e, hc))
        shapes["encounter.attention.w"] = (2 * hc,)
        shapes.update(TlstmCell.declare("history.tlstm", 2 * hc, hh))
        shapes["history.attention.w"] = (hh,)
        shapes["classifier.w"] = (hh,)
        shapes["classifier.b"] = ()
        return shapes

    @property
    def fwd(self):
        return LstmCell(self.params, "encounter.bilstm.fwd", self.emb.dim, self.dims["code_hidden"])

    @property
    def bwd(self):
        return LstmCell(self.params, "encounter.bilstm.bwd", self.emb.dim, self.dims["code_hidden"])

    @property
    def tlstm(self):
        return TlstmCell(self.params, "history.tlstm", 2 * self.dims["code_hidden"], self.dims["history_hidden"])

    def encode_encounters(self, code_rows):
        """Encounter vectors for a list of id arrays; returns ``(V, alpha, order)``.

        ``V`` rows follow ``order`` (longest encounter first).
        """
        lengths = np.array([len(r) for r in code_rows])
        if np.any(lengths == 0):
            raise ValueError("encounter with no codes")
        order = np.argsort(-lengths, kind="stable")
        lengths = lengths[order]
        X = self._embed([code_rows[i] for i in order], int(lengths[0]))
        Hf, _ = packed_lstm(self.fwd, X, lengths)
        Hb, _ = packed_lstm(self.bwd, X, lengths, reverse=True)
        H = ad.concat([Hf, Hb], axis=2)
        mask = np.arange(X.shape[1])[None, :] < lengths[:, None]
        V, alpha = attention(H, self.params["encounter.attention.w"], mask)
        return V, alpha, order

    def forward_batch(self, batch, bypass_decomposition=False, trace=None):
        """ADE probabilities ``(B,)`` for a list of :class:`EncodedHistory`."""
        if not batch:
            raise ValueError("empty batch")
        rows = [codes for h in batch for codes in h.codes]
        V, code_alpha, enc_order = self.encode_encounters(rows)
        n_enc = len(rows)
        where = np.empty(n_enc, dtype=np.int64)
        where[enc_order] = np.arange(n_enc)

        m = np.array([len(h.codes) for h in batch])
        inst_order = np.argsort(-m, kind="stable")
        starts = np.concatenate([[0], np.cumsum(m)[:-1]])
        m_sorted = m[inst_order]
        width = int(m_sorted[0])
        gather = np.full((len(batch), width), n_enc, dtype=np.int64)
        deltas = np.full((len(batch), width), DELTA_MIN)
        for r, b in enumerate(inst_order):
            gather[r, : m[b]] = where[starts[b]: starts[b] + m[b]]
            deltas[r, : m[b]] = batch[b].deltas
        V_pad = ad.concat([V, Tensor(np.zeros((1, V.shape[1])))], axis=0)
        seq = V_pad[gather]

        tl = self.tlstm
        Hs, _ = packed_lstm(tl.lstm, seq, m_sorted, deltas=deltas, tcell=tl, bypass=bypass_decomposition)
        mask = np.arange(width)[None, :] < m_sorted[:, None]
        u, enc_alpha = attention(Hs, self.params["history.attention.w"], mask)
        logit = u @ self.params["classifier.w"] + self.params["classifier.b"]
        inverse = np.empty(len(batch), dtype=np.int64)
        inverse[inst_order] = np.arange(len(batch))
        if trace is not None:
            trace.update(code_alpha=code_alpha.data, code_mask=None, encounter_alpha=enc_alpha.data[inverse],
                         history_states=Hs.data[inverse], encounter_states=V.data[where])
        return ad.sigmoid(logit)[inverse]


class FlatLstmModel(_Model):
    """One LSTM over all prefix codes in order, ignoring encounters and dates."""

    kind = "flat-lstm"
    default_dims = {"hidden": 64}

    def declare(self):
        shapes = LstmCell.declare("flat.lstm", self.emb.dim, self.dims["hidden"])
        shapes["flat.classifier.w"] = (self.dims["hidden"],)
        shapes["flat.classifier.b"] = ()
        return shapes

    def forward_batch(self, batch, trace=None):
        if not batch:
            raise ValueError("empty batch")
        seqs = [np.concatenate(h.codes) for h in batch]
        lengths = np.array([len(s) for s in seqs])
        order = np.argsort(-lengths, kind="stable")
        X = self._embed([seqs[i] for i in order], int(lengths[order][0]))
        cell = LstmCell(self.params, "flat.lstm", self.emb.dim, self.dims["hidden"])
        _, h_last = packed_lstm(cell, X, lengths[order])
        logit = h_last @ self.params["flat.classifier.w"] + self.params["flat.classifier.b"]
        inverse = np.empty(len(batch), dtype=np.int64)
        inverse[order] = np.arange(len(batch))
        return ad.sigmoid(logit)[inverse]


MODELS = {HtnnrModel.kind: HtnnrModel, FlatLstmModel.kind: FlatLstmModel}


def build_model(kind, vocab, emb, dims=None, seed=0, max_encounters=200, target_drug=""):
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODELS)}") from None
    full = dict(cls.default_dims)
    full.update(dims or {})
    return cls(vocab, emb, full, seed=seed, max_encounters=max_encounters, target_drug=target_drug)


def forward(model, prefix) -> float:
    """ADE probability for a single claim-history prefix."""
    return float(model.forward_batch([model.encode(prefix)]).data[0])


def encode_encounter(model: HtnnrModel, code_vectors) -> np.ndarray:
    """Encounter vector for one encounter given its code embedding vectors."""
    X = np.asarray(code_vectors, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("encounter needs a non-empty list of code vectors")
    lengths = np.array([len(X)])
    Hf, _ = packed_lstm(model.fwd, X[None], lengths)
    Hb, _ = packed_lstm(model.bwd, X[None], lengths, reverse=True)
    H = ad.concat([Hf, Hb], axis=2)
    v, _ = attention(H, model.params["encounter.attention.w"])
    return v.data[0]


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(model: _Model) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "model": model.kind,
        "dims": model.dims,
        "max_encounters": model.max_encounters,
        "target_drug": model.target_drug,
        "params": {n: {"shape": list(p.shape), "values": p.data.ravel().tolist()} for n, p in model.params.items()},
        "vocab": model.vocab.tokens,
        "embedding": {"shape": list(model.emb.vectors.shape), "values": model.emb.vectors.ravel().tolist()},
    }


def save_checkpoint(model: _Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh, separators=(",", ":"))
        fh.write("\n")


def model_from_dict(obj: dict) -> _Model:
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    cls = MODELS[obj["model"]]

    def arr(entry):
        return np.array(entry["values"], dtype=float).reshape(entry["shape"])

    vocab = Vocabulary(obj["vocab"])
    emb = EmbeddingMatrix(arr(obj["embedding"]))
    params = {n: Tensor(arr(e), requires_grad=True, name=n) for n, e in obj["params"].items()}
    return cls(vocab, emb, obj["dims"], max_encounters=obj["max_encounters"], params=params,
               target_drug=obj.get("target_drug", ""))


def load_checkpoint(path) -> _Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
