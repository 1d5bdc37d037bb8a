"""Embedding server over line-oriented stdio.

Protocol (one JSON object per line, no pretty-printing; every response echoes
the request id):

    {"id": 0, "op": "hello"}                  -> {"id": 0, "dim": 384}
    {"id": 1, "op": "embed", "texts": [...]}  -> {"id": 1, "embeddings": [[...], ...]}
    anything malformed                        -> {"id": <id or null>, "error": "..."}

Launched as `portal-embed-sidecar --model <name>`. The model name is either a
sentence-transformers model (e.g. all-MiniLM-L6-v2) or `hash:<dim>` for a
dependency-free deterministic backend used in offline tests.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class HashModel:
    """Deterministic character-3-gram hashing embedder (unit L2 norm)."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim

    @staticmethod
    def _fnv1a(data: bytes) -> int:
        h = _FNV_OFFSET
        for b in data:
            h = ((h ^ b) * _FNV_PRIME) & _U64
        return h

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            normalized = " ".join(text.lower().split())
            for i in range(len(normalized) - 2):
                h = self._fnv1a(normalized[i : i + 3].encode("utf-8"))
                out[row, h % self.dim] += 1.0 if (h >> 63) == 0 else -1.0
            norm = np.linalg.norm(out[row])
            if norm == 0.0:
                out[row, 0] = 1.0
            else:
                out[row] /= norm
        return out


class SentenceTransformerModel:
    def __init__(self, name: str):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(name)
        self._model.eval()
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.asarray(self._model.encode(texts, convert_to_numpy=True,
                                             show_progress_bar=False))


def load_model(name: str):
    if name.startswith("hash:"):
        return HashModel(int(name[len("hash:"):]))
    return SentenceTransformerModel(name)


def _reply(stdout, payload: dict):
    stdout.write(json.dumps(payload, separators=(",", ":")) + "\n")
    stdout.flush()


def _request_id(line: str):
    try:
        parsed = json.loads(line)
        if isinstance(parsed, dict):
            return parsed.get("id")
    except json.JSONDecodeError:
        pass
    return None


def serve(stdin, stdout, model) -> int:
    """Handle requests until EOF. Malformed lines get an error reply; the loop survives."""
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("request must be a JSON object")
            req_id = msg.get("id")
            op = msg.get("op")
            if op == "hello":
                _reply(stdout, {"id": req_id, "dim": model.dim})
            elif op == "embed":
                texts = msg.get("texts")
                if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                    raise ValueError("'texts' must be a list of strings")
                vectors = model.encode(texts)
                _reply(stdout, {"id": req_id,
                                "embeddings": [[float(v) for v in vec] for vec in vectors]})
            else:
                raise ValueError(f"unknown op {op!r}")
        except Exception as exc:
            _reply(stdout, {"id": _request_id(line), "error": str(exc)})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="portal-embed-sidecar", description=__doc__)
    parser.add_argument("--model", required=True,
                        help="sentence-transformers model name, or hash:<dim>")
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model)
    except Exception as exc:
        # declare the failure on the pending hello, then exit nonzero
        line = sys.stdin.readline()
        _reply(sys.stdout, {"id": _request_id(line), "error": f"model load failed: {exc}"})
        return 1
    return serve(sys.stdin, sys.stdout, model)


if __name__ == "__main__":
    sys.exit(main())
