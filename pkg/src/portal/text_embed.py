"""Text embedding providers for cell contents and column names.

Three interchangeable sources behind one interface: a deterministic built-in
hashing embedder (no model weights needed), a client for an external sidecar
process speaking JSON lines over stdio, and a read-only file cache of
precomputed vectors. All providers memoize, so identical strings map to
bit-identical vectors within a session.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading

import numpy as np

DEFAULT_TEXT_DIM = 384

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class SidecarTransportError(RuntimeError):
    """Sidecar unreachable or protocol violation; callers may fall back."""


class EmbedderConfigError(RuntimeError):
    """Unrecoverable embedder misconfiguration (e.g. dimension mismatch)."""


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def fallback_embed(text: str, dim: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """Character 3-gram hashing embedder with unit L2 norm.

    The lowercased, whitespace-collapsed string is scanned in overlapping
    3-grams; each gram hashes (FNV-1a, 64-bit) to a coordinate in [0, dim)
    and a sign, accumulated and then normalized. Inputs with no 3-grams
    (empty or shorter than 3 chars) map to the reserved basis vector e0.
    """
    normalized = " ".join(text.lower().split())
    acc = np.zeros(dim, dtype=np.float64)
    for i in range(len(normalized) - 2):
        h = _fnv1a64(normalized[i : i + 3].encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        acc[h % dim] += sign
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        e0 = np.zeros(dim, dtype=np.float64)
        e0[0] = 1.0
        return e0
    return acc / norm


class TextEmbedder:
    """Base provider: fixed dimension, memoized, batched lookups."""

    kind = "base"

    def __init__(self, dim: int):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> np.ndarray:
        """One row per input text, shape (len(texts), dim)."""
        with self._lock:
            misses = [t for t in dict.fromkeys(texts) if t not in self._cache]
            if misses:
                vectors = self._compute(misses)
                if vectors.shape != (len(misses), self.dim):
                    raise EmbedderConfigError(
                        f"{self.kind} embedder returned shape {vectors.shape}, "
                        f"expected ({len(misses)}, {self.dim})"
                    )
                for t, v in zip(misses, vectors):
                    self._cache[t] = np.asarray(v, dtype=np.float64)
            if not texts:
                return np.zeros((0, self.dim), dtype=np.float64)
            return np.stack([self._cache[t] for t in texts])

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]

    def _compute(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError

    def close(self):
        pass


class FallbackEmbedder(TextEmbedder):
    kind = "fallback"

    def __init__(self, dim: int = DEFAULT_TEXT_DIM):
        super().__init__(dim)

    def _compute(self, texts: list[str]) -> np.ndarray:
        return np.stack([fallback_embed(t, self.dim) for t in texts])


class SidecarEmbedder(TextEmbedder):
    """Client for a subprocess serving embeddings over line-oriented stdio.

    Requests are serialized on one connection; the hello handshake declares
    the dimension before any embed exchange and must match expected_dim when
    one is given.
    """

    kind = "sidecar"

    def __init__(self, command: str | list[str], expected_dim: int | None = None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        except OSError as exc:
            raise SidecarTransportError(f"cannot launch sidecar {argv!r}: {exc}") from exc
        self._next_id = 0
        dim = self._request({"op": "hello"}).get("dim")
        if not isinstance(dim, int) or dim <= 0:
            raise SidecarTransportError(f"sidecar hello did not declare a dimension: {dim!r}")
        if expected_dim is not None and dim != expected_dim:
            raise EmbedderConfigError(f"sidecar dimension {dim} != configured {expected_dim}")
        super().__init__(dim)

    def _request(self, payload: dict) -> dict:
        msg = dict(payload, id=self._next_id)
        self._next_id += 1
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise SidecarTransportError(f"sidecar pipe failure: {exc}") from exc
        if not line:
            raise SidecarTransportError("sidecar closed its stdout")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SidecarTransportError(f"sidecar sent invalid JSON: {line!r}") from exc
        if reply.get("id") != msg["id"]:
            raise SidecarTransportError(f"sidecar reply id {reply.get('id')} != request id {msg['id']}")
        if "error" in reply:
            raise SidecarTransportError(f"sidecar error: {reply['error']}")
        return reply

    def _compute(self, texts: list[str]) -> np.ndarray:
        reply = self._request({"op": "embed", "texts": texts})
        embeddings = reply.get("embeddings")
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise SidecarTransportError("sidecar embed reply shape mismatch")
        return np.asarray(embeddings, dtype=np.float64)

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append({"\\": "\\", "t": "\t", "n": "\n"}.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


class FileCacheEmbedder(TextEmbedder):
    """Read-only provider backed by a precomputed embedding file.

    File format: header line ``dim=E``, then ``text<TAB>v1,...,vE`` lines,
    UTF-8. Lookups of texts absent from the file are errors.
    """

    kind = "file-cache"

    def __init__(self, path: str):
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if not header.startswith("dim="):
                raise EmbedderConfigError(f"{path}: expected 'dim=E' header, got {header!r}")
            dim = int(header[4:])
            super().__init__(dim)
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                text, _, vec = line.partition("\t")
                values = np.array([float(v) for v in vec.split(",")])
                if values.shape != (dim,):
                    raise EmbedderConfigError(f"{path}:{lineno}: vector length {values.size} != dim {dim}")
                self._cache[_unescape(text)] = values

    def _compute(self, texts: list[str]) -> np.ndarray:
        raise EmbedderConfigError(f"texts not present in file cache: {texts[:3]!r}...")


def write_embedding_cache(path: str, embedder: TextEmbedder, texts: list[str]):
    """Dump embeddings of the given texts in the file-cache format."""
    vectors = embedder.embed(texts)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"dim={embedder.dim}\n")
        for text, vec in zip(texts, vectors):
            f.write(_escape(text) + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")


def embed_text(embedder: TextEmbedder, texts: list[str]) -> np.ndarray:
    return embedder.embed(texts)


def make_embedder(spec: str, dim: int = DEFAULT_TEXT_DIM) -> TextEmbedder:
    """Build a provider from a config string.

    Accepted forms: ``fallback``, ``sidecar:<command line>``, ``cache:<path>``.
    """
    if spec == "fallback":
        return FallbackEmbedder(dim)
    if spec.startswith("sidecar:"):
        return SidecarEmbedder(spec[len("sidecar:"):], expected_dim=dim)
    if spec.startswith("cache:"):
        emb = FileCacheEmbedder(spec[len("cache:"):])
        if emb.dim != dim:
            raise EmbedderConfigError(f"file cache dim {emb.dim} != configured {dim}")
        return emb
    raise EmbedderConfigError(f"unknown embedder spec {spec!r}")
