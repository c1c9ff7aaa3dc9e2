import math

import numpy as np
import pytest

import oracles
from spantag.corpus import Document, Token, tokenize
from spantag.encoder import (EmbeddingsError, EncoderConfig, EncoderOutput,
                             HashedNGramTable, encode_hashed,
                             encode_hashed_backward,
                             encode_hashed_backward_sparse, fnv1a64,
                             load_external, save_external, token_trigrams,
                             trigram_rows)


def tdoc_of(text, doc_id="d"):
    return tokenize(Document(id=doc_id, lang="en", text=text))


# ---------------------------------------------------------------------------
# hashing


def test_fnv1a64_published_vectors():
    # reference values from the FNV specification's test suite
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_token_trigrams_padding():
    assert token_trigrams("ab") == ["^ab", "ab$"]
    assert token_trigrams("a") == ["^a$"]
    assert token_trigrams("pain") == ["^pa", "pai", "ain", "in$"]


def test_trigram_rows_mod_table_size():
    rows = trigram_rows("ab", 64)
    assert rows == tuple(fnv1a64(g.encode("utf-8")) % 64
                         for g in ("^ab", "ab$"))
    assert all(0 <= r < 64 for r in rows)


# ---------------------------------------------------------------------------
# encode_hashed


def test_encode_unrolled_definition():
    rng = np.random.default_rng(0)
    table = HashedNGramTable.create(128, 6, rng)
    enc = encode_hashed(tdoc_of("ab"), table)
    h1 = fnv1a64(b"^ab") % 128
    h2 = fnv1a64(b"ab$") % 128
    np.testing.assert_array_equal(enc.vectors[0], table.rows[h1] + table.rows[h2])


def test_encode_zero_table_gives_zero_vectors():
    table = HashedNGramTable(rows=np.zeros((32, 4)))
    enc = encode_hashed(tdoc_of("chest pain"), table)
    assert enc.vectors.shape == (2, 4)
    assert not enc.vectors.any()


def test_encode_matches_independent_trigram_enumeration():
    rng = np.random.default_rng(1)
    table = HashedNGramTable.create(512, 8, rng)
    tdoc = tdoc_of("severe chest pain, čtyři")
    enc = encode_hashed(tdoc, table)
    for i, text in enumerate(tdoc.token_texts()):
        padded = "^" + text + "$"
        grams = ["".join(t) for t in zip(padded, padded[1:], padded[2:])]
        expected = sum((table.rows[fnv1a64(g.encode()) % 512] for g in grams),
                       np.zeros(8))
        np.testing.assert_allclose(enc.vectors[i], expected, rtol=0, atol=0)


def test_encode_distinct_tokens_distinct_vectors():
    rng = np.random.default_rng(2)
    table = HashedNGramTable.create(4096, 8, rng)
    enc = encode_hashed(tdoc_of("ibuprofen naproxen"), table)
    assert not np.allclose(enc.vectors[0], enc.vectors[1])


def test_encode_deterministic():
    rng = np.random.default_rng(3)
    table = HashedNGramTable.create(256, 4, rng)
    a = encode_hashed(tdoc_of("chest pain"), table)
    b = encode_hashed(tdoc_of("chest pain"), table)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_encoder_output_window_view():
    enc = EncoderOutput(doc_id="d", dim=2,
                        vectors=np.arange(10.0).reshape(5, 2),
                        tokens=tuple(Token(i, i + 1) for i in range(5)),
                        token_texts=("a", "b", "c", "d", "e"))
    w = enc.window(1, 3)
    assert len(w) == 2
    assert w.tokens == (Token(1, 2), Token(2, 3))
    assert w.token_texts == ("b", "c")
    np.testing.assert_array_equal(w.vectors, enc.vectors[1:3])


def test_encoder_config_validation():
    with pytest.raises(ValueError, match="backend"):
        EncoderConfig(backend="quantum")
    with pytest.raises(ValueError, match="max_context_tokens"):
        EncoderConfig(max_context_tokens=0)


# ---------------------------------------------------------------------------
# backward


def test_backward_single_token_single_trigram():
    rng = np.random.default_rng(4)
    table = HashedNGramTable.create(64, 3, rng)
    tdoc = tdoc_of("a")  # one token, padded "^a$" -> exactly one 3-gram
    g = np.array([[1.0, -2.0, 0.5]])
    rows, grads = encode_hashed_backward_sparse(g, tdoc, table)
    assert list(rows) == [fnv1a64(b"^a$") % 64]
    np.testing.assert_array_equal(grads, g)
    dense = encode_hashed_backward(g, tdoc, table)
    np.testing.assert_array_equal(dense[rows[0]], g[0])
    assert np.count_nonzero(dense) == 3


def test_backward_empty_document():
    table = HashedNGramTable(rows=np.zeros((16, 4)))
    tdoc = tdoc_of("")
    rows, grads = encode_hashed_backward_sparse(np.zeros((0, 4)), tdoc, table)
    assert len(rows) == 0
    assert encode_hashed_backward(np.zeros((0, 4)), tdoc, table).any() == False


def test_backward_shape_mismatch():
    table = HashedNGramTable(rows=np.zeros((16, 4)))
    with pytest.raises(ValueError, match="does not match"):
        encode_hashed_backward_sparse(np.zeros((3, 5)), tdoc_of("a b c"), table)


def test_backward_collision_sums_gradients():
    # table of size 1: every 3-gram hits row 0
    table = HashedNGramTable(rows=np.zeros((1, 2)))
    tdoc = tdoc_of("ab cd")
    g = np.array([[1.0, 2.0], [10.0, 20.0]])
    rows, grads = encode_hashed_backward_sparse(g, tdoc, table)
    assert list(rows) == [0]
    # each token has two 3-grams, all hashed into row 0
    np.testing.assert_array_equal(grads[0], 2 * g[0] + 2 * g[1])


def test_backward_finite_difference_spot_check():
    rng = np.random.default_rng(5)
    table = HashedNGramTable.create(64, 4, rng)
    tdoc = tdoc_of("ab cde f")
    target = rng.normal(size=(3, 4))

    def loss():
        diff = encode_hashed(tdoc, table).vectors - target
        return float((diff * diff).sum())

    grad_vectors = 2.0 * (encode_hashed(tdoc, table).vectors - target)
    analytical = encode_hashed_backward(grad_vectors, tdoc, table)
    touched = sorted({r for t in tdoc.token_texts() for r in trigram_rows(t, 64)})
    picks = rng.choice(touched, size=min(5, len(touched)), replace=False)
    for r in picks:
        for c in range(4):
            orig = table.rows[r, c]
            table.rows[r, c] = orig + 1e-3
            up = loss()
            table.rows[r, c] = orig - 1e-3
            down = loss()
            table.rows[r, c] = orig
            fd = (up - down) / 2e-3
            assert abs(fd - analytical[r, c]) / max(abs(fd), abs(analytical[r, c]), 1e-8) < 1e-4


# ---------------------------------------------------------------------------
# external embeddings file


def make_outputs():
    doc = Document("d1", "en", "chest pain")
    tdoc = tokenize(doc)
    vectors = np.array([[1.0, 2.0, 3.5], [-1.25, 0.0, 4.0]])
    return doc, [EncoderOutput(doc_id="d1", dim=3, vectors=vectors,
                               tokens=tdoc.tokens)]


def test_save_load_round_trip(tmp_path):
    doc, outputs = make_outputs()
    path = tmp_path / "emb.jsonl"
    save_external(outputs, path)
    loaded = load_external(path, {"d1": doc})
    assert len(loaded) == 1
    got = loaded[0]
    assert got.doc_id == "d1" and got.dim == 3
    assert got.tokens == outputs[0].tokens
    assert got.token_texts == ("chest", "pain")
    np.testing.assert_array_equal(got.vectors, outputs[0].vectors)


def test_load_header_errors(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"format":"something-else","version":1,"dim":3}\n')
    with pytest.raises(EmbeddingsError, match="not a spantag-emb file"):
        load_external(path)
    path.write_text('{"format":"spantag-emb","version":9,"dim":3}\n')
    with pytest.raises(EmbeddingsError, match="unsupported version"):
        load_external(path)
    path.write_text('{"format":"spantag-emb","version":1}\n')
    with pytest.raises(EmbeddingsError, match="dim"):
        load_external(path)


def test_load_body_errors(tmp_path):
    header = '{"format":"spantag-emb","version":1,"dim":2}\n'
    path = tmp_path / "emb.jsonl"

    path.write_text(header + '{"doc_id":"d","tokens":[[0,1]],"vectors":[[1.0,2.0],[3.0,4.0]]}\n')
    with pytest.raises(EmbeddingsError, match="1 tokens but 2 vectors"):
        load_external(path)

    path.write_text(header + '{"doc_id":"d","tokens":[[0,1]],"vectors":[[1.0,2.0,3.0]]}\n')
    with pytest.raises(EmbeddingsError, match="do not have dim 2"):
        load_external(path)

    path.write_text(header + '{"doc_id":"d","tokens":[[0,1]],"vectors":[[1.0,NaN]]}\n')
    with pytest.raises(EmbeddingsError, match="doc 'd' token 0: non-finite"):
        load_external(path)

    path.write_text(header + '{"doc_id":"d","tokens":[[0,1],[1,2]],"vectors":[[1.0,2.0],[3.0]]}\n')
    with pytest.raises(EmbeddingsError, match="malformed vectors|do not have dim"):
        load_external(path)


def test_load_validates_offsets_against_docs(tmp_path):
    header = '{"format":"spantag-emb","version":1,"dim":1}\n'
    doc = Document("d", "en", "ab")
    path = tmp_path / "emb.jsonl"

    path.write_text(header + '{"doc_id":"d","tokens":[[0,9]],"vectors":[[1.0]]}\n')
    with pytest.raises(EmbeddingsError, match="out of bounds"):
        load_external(path, {"d": doc})

    path.write_text(header + '{"doc_id":"d","tokens":[[0,2],[1,2]],"vectors":[[1.0],[2.0]]}\n')
    with pytest.raises(EmbeddingsError, match="overlaps the previous token"):
        load_external(path, {"d": doc})

    path.write_text(header + '{"doc_id":"ghost","tokens":[],"vectors":[]}\n')
    with pytest.raises(EmbeddingsError, match="unknown document 'ghost'"):
        load_external(path, {"d": doc})

    # without docs the same files load fine (offsets adopted verbatim)
    path.write_text(header + '{"doc_id":"ghost","tokens":[[0,9]],"vectors":[[1.0]]}\n')
    assert load_external(path)[0].token_texts is None


def test_load_empty_document_entry(tmp_path):
    header = '{"format":"spantag-emb","version":1,"dim":4}\n'
    path = tmp_path / "emb.jsonl"
    path.write_text(header + '{"doc_id":"d","tokens":[],"vectors":[]}\n')
    out = load_external(path, {"d": Document("d", "en", "")})
    assert len(out[0]) == 0
    assert out[0].vectors.shape == (0, 4)


def test_save_rejects_mixed_dims(tmp_path):
    doc, outputs = make_outputs()
    bad = EncoderOutput(doc_id="x", dim=2, vectors=np.zeros((1, 2)),
                        tokens=(Token(0, 1),))
    with pytest.raises(EmbeddingsError, match="differs from header dim"):
        save_external(outputs + [bad], tmp_path / "emb.jsonl")
