from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcre.embedding import (
    EmbeddingFormatError,
    EmbeddingStore,
    EmbeddingVector,
    centroid,
    concat_embeddings,
    cosine_similarity,
    fetch_embeddings,
    load_embedding_file,
    write_embedding_file,
)

vec = lambda *values: EmbeddingVector(np.array(values, dtype=np.float64))


class TestCosineSimilarity:
    def test_identical_vectors(self):
        assert cosine_similarity(vec(1, 2, 3), vec(1, 2, 3)) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(vec(1, 0), vec(0, 1)) == 0.0

    def test_analytic_45_degrees(self):
        assert cosine_similarity(vec(1, 0), vec(1, 1)) == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_zero_norm_is_error(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity(vec(0, 0), vec(1, 1))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            cosine_similarity(vec(1, 2), vec(1, 2, 3))

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=6),
        st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=6),
        st.floats(1e-3, 1e3),
    )
    @settings(max_examples=100)
    def test_symmetric_bounded_scale_invariant(self, a, b, alpha):
        n = min(len(a), len(b))
        u = np.array(a[:n])
        v = np.array(b[:n])
        if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
            return
        uu, vv = EmbeddingVector(u), EmbeddingVector(v)
        s = cosine_similarity(uu, vv)
        assert abs(s) <= 1 + 1e-12
        assert s == pytest.approx(cosine_similarity(vv, uu), abs=1e-12)
        scaled = EmbeddingVector(alpha * u)
        assert cosine_similarity(scaled, vv) == pytest.approx(s, abs=1e-9)


class TestConcatAndCentroid:
    def test_concat_dims_add(self):
        a = EmbeddingVector(np.ones(768))
        b = EmbeddingVector(np.ones(768))
        assert concat_embeddings(a, b).dim == 1536

    def test_concat_order(self):
        assert concat_embeddings(vec(1), vec(2)).values.tolist() == [1.0, 2.0]

    def test_concat_empty_identity(self):
        a = vec(1, 2)
        empty = EmbeddingVector(np.array([]))
        assert concat_embeddings(a, empty) is a

    def test_centroid_mean(self):
        c = centroid([vec(0, 0), vec(2, 2)])
        assert c.values.tolist() == [1.0, 1.0]

    def test_centroid_single(self):
        assert centroid([vec(3, 4)]).values.tolist() == [3.0, 4.0]

    def test_centroid_empty_errors(self):
        with pytest.raises(ValueError, match="empty"):
            centroid([])

    def test_degenerate_centroid_breaks_similarity(self):
        c = centroid([vec(1, 0), vec(-1, 0)])
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity(c, vec(1, 1))


class TestBinaryStore:
    def _store(self, count=2, dim=3):
        store = EmbeddingStore(dim=dim, source_tag="test")
        rng = np.random.default_rng(1)
        for i in range(count):
            store.add(f"q{i}", "m1", rng.standard_normal(dim))
        return store

    def test_roundtrip_bit_exact(self, tmp_path):
        store = self._store(count=5, dim=7)
        path = tmp_path / "embeddings.bin"
        write_embedding_file(store, path)
        loaded = load_embedding_file(path)
        assert len(loaded) == 5 and loaded.dim == 7
        for key in store.keys():
            original = store.get(*key).values.astype("<f4")
            assert np.array_equal(loaded.get(*key).values.astype("<f4"), original)

    def test_size_arithmetic(self, tmp_path):
        store = self._store(count=2, dim=3)
        path = tmp_path / "embeddings.bin"
        write_embedding_file(store, path)
        assert path.stat().st_size == 16 + 2 * 3 * 4
        assert len(load_embedding_file(path)) == 2

    def test_bad_magic(self, tmp_path):
        store = self._store()
        path = tmp_path / "embeddings.bin"
        write_embedding_file(store, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(EmbeddingFormatError, match="bad magic"):
            load_embedding_file(path)

    def test_truncated_payload(self, tmp_path):
        store = self._store()
        path = tmp_path / "embeddings.bin"
        write_embedding_file(store, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(EmbeddingFormatError, match="truncated"):
            load_embedding_file(path)

    def test_missing_sidecar(self, tmp_path):
        store = self._store()
        path = tmp_path / "embeddings.bin"
        write_embedding_file(store, path)
        (tmp_path / "embeddings.index.jsonl").unlink()
        with pytest.raises(EmbeddingFormatError, match="sidecar"):
            load_embedding_file(path)

    def test_dimension_mismatch_on_add(self):
        store = EmbeddingStore(dim=4)
        with pytest.raises(EmbeddingFormatError, match="dimension mismatch"):
            store.add("q", "m", np.ones(3))


class _EmbedHandler(BaseHTTPRequestHandler):
    fail_first = 0
    short_response = False
    calls = 0

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        texts = body["texts"]
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        rows = [[float(len(t)), 1.0] for t in texts]
        if cls.short_response:
            rows = rows[:-1]
        payload = json.dumps({"embeddings": rows}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    server = HTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _EmbedHandler.fail_first = 0
    _EmbedHandler.short_response = False
    _EmbedHandler.calls = 0
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestFetchEmbeddings:
    def test_order_preserving(self, embed_server):
        vectors = fetch_embeddings(["a", "bb", "ccc"], embed_server)
        assert [v.values[0] for v in vectors] == [1.0, 2.0, 3.0]

    def test_empty_list_no_request(self, embed_server):
        assert fetch_embeddings([], embed_server) == []
        assert _EmbedHandler.calls == 0

    def test_count_mismatch(self, embed_server):
        _EmbedHandler.short_response = True
        with pytest.raises(RuntimeError, match="count mismatch"):
            fetch_embeddings(["a", "b", "c"], embed_server)

    def test_retries_transient_failures(self, embed_server):
        _EmbedHandler.fail_first = 2
        vectors = fetch_embeddings(["xy"], embed_server)
        assert vectors[0].values[0] == 2.0
        assert _EmbedHandler.calls == 3

    def test_gives_up_after_three_attempts(self, embed_server):
        _EmbedHandler.fail_first = 5
        with pytest.raises(RuntimeError, match="failed after 3 attempts"):
            fetch_embeddings(["xy"], embed_server)
        assert _EmbedHandler.calls == 3
