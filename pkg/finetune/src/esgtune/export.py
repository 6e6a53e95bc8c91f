"""Vector export in the retrieval pipeline's file format, plus a local
embeddings endpoint speaking its remote-provider wire contract.

Exported rows are addressed by the SHA-256 digest of the exact text, which
is how the pipeline's file-backed provider looks embeddings up.
"""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_value(v: float) -> str:
    return f"{v:.9g}"


def export_vectors(
    encoder,
    texts: Sequence[str],
    path: Path | str,
    provider_tag: str,
    batch_size: int = 64,
) -> int:
    """Write one vector line per distinct text; returns the line count.

    An empty text list still produces the header, so downstream readers can
    verify the provider tag and dimension.
    """
    seen: set[str] = set()
    distinct: list[str] = []
    for text in texts:
        if text not in seen:
            seen.add(text)
            distinct.append(text)
    dim = encoder.dim
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"provider_tag": provider_tag, "dim": dim}, sort_keys=True))
        fh.write("\n")
        for start in range(0, len(distinct), batch_size):
            batch = distinct[start : start + batch_size]
            matrix = encoder.encode_frozen(batch)
            if matrix.shape[1] != dim:
                raise ValueError(
                    f"encoder produced dim {matrix.shape[1]}, header declares {dim}"
                )
            for text, row in zip(batch, matrix.tolist()):
                fh.write(text_digest(text))
                fh.write("\t")
                fh.write(",".join(format_value(v) for v in row))
                fh.write("\n")
                count += 1
    return count


class EmbeddingServer:
    """Serves {model, input: [texts]} -> {data: [{index, embedding}]} locally.

    Stateless per request; encoding is serialized behind a lock so the
    encoder needs no thread safety of its own.
    """

    def __init__(self, encoder, model_tag: str, host: str = "127.0.0.1", port: int = 0):
        self.encoder = encoder
        self.model_tag = model_tag
        self.requests_served = 0
        lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                try:
                    payload = json.loads(body)
                    texts = payload["input"]
                except (json.JSONDecodeError, KeyError):
                    self.send_response(400)
                    self.end_headers()
                    return
                with lock:
                    matrix = outer.encoder.encode_frozen(texts)
                    outer.requests_served += 1
                data = json.dumps(
                    {
                        "model": outer.model_tag,
                        "data": [
                            {"index": i, "embedding": row}
                            for i, row in enumerate(matrix.tolist())
                        ],
                    }
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1/embeddings"

    def start(self) -> "EmbeddingServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def serve_forever(self) -> None:  # pragma: no cover - interactive path
        self._thread.start()
        self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
