"""HTTP embedding service over an export tree.

GET /embed?sample=<id>&branch=<tag> answers `u32 count | count x MCLE record`
with the global record first and the locals in layer order, streamed verbatim
from the exported files. Unknown samples or branches answer 404.
"""

from __future__ import annotations

import struct
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


def bundle_body(root, sample: str, branch: str) -> bytes | None:
    """Concatenated on-disk record bytes, or None when the bundle is absent."""
    base = Path(root) / sample
    gpath = base / f"{branch}.global.mcle"
    if not gpath.is_file():
        return None
    records = [gpath.read_bytes()]
    m = 0
    while (base / f"{branch}.local{m}.mcle").is_file():
        records.append((base / f"{branch}.local{m}.mcle").read_bytes())
        m += 1
    if m == 0:
        return None
    return struct.pack("<I", len(records)) + b"".join(records)


class _Handler(BaseHTTPRequestHandler):
    root: Path
    quiet: bool = True

    def _answer(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urllib.parse.urlparse(self.path)
        if url.path != "/embed":
            self._answer(404, b"unknown path\n", "text/plain")
            return
        query = urllib.parse.parse_qs(url.query)
        sample = query.get("sample", [""])[0]
        branch = query.get("branch", [""])[0]
        if not sample or not branch:
            self._answer(400, b"sample and branch are required\n", "text/plain")
            return
        body = bundle_body(self.root, sample, branch)
        if body is None:
            msg = f"no bundle for {sample}/{branch}\n".encode()
            self._answer(404, msg, "text/plain")
            return
        self._answer(200, body, "application/octet-stream")

    def log_message(self, format, *args):
        if not self.quiet:
            super().log_message(format, *args)


def make_server(root, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bound but not yet serving; port 0 picks a free port."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"export root not found: {root}")

    class Handler(_Handler):
        pass

    Handler.root = root
    return ThreadingHTTPServer((host, port), Handler)


def run(root, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(root, host, port)
    host_out, port_out = server.server_address[:2]
    print(f"serving {root} on http://{host_out}:{port_out}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
