import io

import numpy as np
import pytest

from htnnr import embedding
from htnnr.embedding import UNKNOWN, Vocabulary

from conftest import code, enc, history


def corpus(counts):
    """One patient per token, with the token repeated ``n`` times."""
    return [history(f"p{k}", *(enc(d, tok) for d in range(n))) for k, (tok, n) in enumerate(counts.items())]


def two_clusters(n_patients=60, n_enc=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_patients):
        group = ["ICD:a", "ICD:b", "ICD:c"] if k % 2 else ["ICD:x", "ICD:y", "ICD:z"]
        out.append(history(f"p{k}", *(enc(d, *rng.permutation(group)) for d in range(n_enc))))
    return out


def intra_minus_inter(vocab, emb):
    vec = {t: emb.vectors[vocab.index["ICD:" + t]] for t in "abcxyz"}
    intra, inter = [], []
    for i, s in enumerate("abcxyz"):
        for t in "abcxyz"[i + 1:]:
            same = (s in "abc") == (t in "abc")
            (intra if same else inter).append(embedding.cosine(vec[s], vec[t]))
    return np.mean(intra) - np.mean(inter)


class TestVocabulary:
    def test_empty(self):
        v = embedding.build_vocabulary([])
        assert v.tokens == [UNKNOWN]

    def test_min_count(self):
        v = embedding.build_vocabulary(corpus({"ICD:a": 5, "ICD:b": 2, "ICD:c": 1}), min_count=2)
        assert v.tokens == [UNKNOWN, "ICD:a", "ICD:b"]
        assert v.id_of(code("ICD:c")) == 0
        assert list(v.counts) == [1, 5, 2]

    def test_ties_are_deterministic(self):
        v = embedding.build_vocabulary(corpus({"ICD:b": 1, "CPT:a": 1, "ICD:a": 1}))
        assert v.tokens == [UNKNOWN, "CPT:a", "ICD:a", "ICD:b"]

    def test_lookup_inverts_id(self):
        v = embedding.build_vocabulary(corpus({"ICD:a": 2, "GPI:b": 1}))
        for i in range(1, len(v)):
            assert v.id_of(v.lookup(i)) == i
        assert v.lookup(0) is None

    def test_unknown_rate(self):
        v = embedding.build_vocabulary(corpus({"ICD:a": 3}))
        assert v.unknown_rate([history("q", enc(0, "ICD:a", "ICD:zz"))]) == 0.5

    def test_min_count_validated(self):
        with pytest.raises(ValueError):
            embedding.build_vocabulary([], min_count=0)


class TestTrain:
    def test_empty_vocabulary(self):
        with pytest.raises(ValueError, match="at least one known code"):
            embedding.train_skipgram([], embedding.build_vocabulary([]))

    def test_single_code_corpus(self):
        hs = corpus({"ICD:a": 30})
        v = embedding.build_vocabulary(hs)
        emb = embedding.train_skipgram(hs, v, dim=8, epochs=2)
        assert np.isfinite(np.linalg.norm(emb.vectors[1]))

    def test_two_cluster_separation(self):
        hs = two_clusters()
        v = embedding.build_vocabulary(hs)
        emb = embedding.train_skipgram(hs, v, dim=16, epochs=15, seed=0)
        gap = intra_minus_inter(v, emb)
        print(f"intra - inter cosine {gap:.3f}")
        assert gap >= 0.2

    def test_loss_decreases(self):
        hs = two_clusters()
        emb = embedding.train_skipgram(hs, embedding.build_vocabulary(hs), dim=16, epochs=3)
        assert emb.epoch_losses[0] > emb.epoch_losses[1] > emb.epoch_losses[2]
        assert np.all(np.isfinite(emb.vectors))
        assert np.all(np.linalg.norm(emb.vectors, axis=1) > 0)

    def test_deterministic(self):
        hs = two_clusters(10)
        v = embedding.build_vocabulary(hs)
        a = embedding.train_skipgram(hs, v, dim=8, epochs=2, seed=4)
        b = embedding.train_skipgram(hs, v, dim=8, epochs=2, seed=4)
        assert np.array_equal(a.vectors, b.vectors)


class TestEmbedSequence:
    @pytest.fixture
    def setup(self):
        v = embedding.build_vocabulary(corpus({"ICD:a": 2, "ICD:b": 1}))
        return v, embedding.EmbeddingMatrix(np.arange(len(v) * 3, dtype=float).reshape(len(v), 3))

    def test_empty(self, setup):
        assert embedding.embed_sequence([], *setup) == []

    def test_known_row(self, setup):
        v, emb = setup
        out = embedding.embed_sequence([code("ICD:b")], v, emb)
        assert np.array_equal(out[0], emb.vectors[v.index["ICD:b"]])

    def test_unknowns_share_row(self, setup):
        v, emb = setup
        out = embedding.embed_sequence([code("ICD:q"), code("ICD:a"), code("CPT:a")], v, emb)
        assert np.array_equal(out[0], emb.vectors[0])
        assert np.array_equal(out[2], emb.vectors[0])
        assert not np.array_equal(out[1], emb.vectors[0])


class TestFile:
    def test_roundtrip_exact(self):
        hs = two_clusters(6)
        v = embedding.build_vocabulary(hs)
        emb = embedding.train_skipgram(hs, v, dim=5, epochs=1)
        buf = io.BytesIO()
        embedding.write_embeddings(v, emb, buf)
        assert buf.getvalue().split(b"\n")[0] == f"{len(v)} 5".encode()
        v2, emb2 = embedding.read_embeddings(io.BytesIO(buf.getvalue()))
        assert v2.tokens == v.tokens
        assert np.array_equal(emb2.vectors, emb.vectors)

    @pytest.mark.parametrize("text, msg", [
        (b"", "line 1"),
        (b"2 2\n<UNK> 0 0\nICD:a 1\n", "line 3: expected 2 values"),
        (b"3 1\n<UNK> 0\nICD:a 1\n", "declares 3"),
        (b"1 1\nICD:a 1\n", "first embedding row"),
    ])
    def test_errors(self, text, msg):
        with pytest.raises(ValueError, match=msg):
            embedding.read_embeddings(io.BytesIO(text))
