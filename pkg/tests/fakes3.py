"""Tiny in-memory S3-protocol server: enough surface for the S3 driver tests.

Implements bucket PUT, object GET/PUT/HEAD/DELETE, x-amz-copy-source and
list-type=2 listing with prefix. Signatures are accepted, not verified.
"""
from __future__ import annotations

import hashlib
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse
from xml.sax.saxutils import escape


class FakeS3Server:
    def __init__(self):
        self.buckets: dict[str, dict[str, tuple[bytes, datetime]]] = {}
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler_class())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "FakeS3Server":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "FakeS3Server":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _split(self) -> tuple[str, str, dict]:
                parsed = urlparse(self.path)
                parts = unquote(parsed.path).lstrip("/").split("/", 1)
                bucket = parts[0]
                key = parts[1] if len(parts) > 1 else ""
                return bucket, key, parse_qs(parsed.query)

            def _send(self, status: int, body: bytes = b"", headers: dict | None = None):
                self.send_response(status)
                headers = dict(headers or {})
                headers.setdefault("Content-Length", str(len(body)))
                for name, value in headers.items():
                    self.send_header(name, value)
                self.end_headers()
                if self.command != "HEAD":
                    self.wfile.write(body)

            def do_PUT(self):
                bucket, key, _ = self._split()
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                copy_source = self.headers.get("x-amz-copy-source")
                with server._lock:
                    if not key:  # create bucket
                        server.buckets.setdefault(bucket, {})
                        self._send(200)
                        return
                    if copy_source:
                        src_bucket, src_key = unquote(copy_source).lstrip("/").split("/", 1)
                        source = server.buckets.get(src_bucket, {}).get(src_key)
                        if source is None:
                            self._send(404, b"<Error><Code>NoSuchKey</Code></Error>")
                            return
                        body = source[0]
                    server.buckets.setdefault(bucket, {})[key] = (
                        body,
                        datetime.now(timezone.utc),
                    )
                etag = hashlib.md5(body).hexdigest()
                self._send(200, b"", {"ETag": f'"{etag}"'})

            def do_GET(self):
                bucket, key, query = self._split()
                with server._lock:
                    objects = server.buckets.get(bucket)
                    if objects is None:
                        self._send(404, b"<Error><Code>NoSuchBucket</Code></Error>")
                        return
                    if not key:  # listing
                        prefix = query.get("prefix", [""])[0]
                        entries = []
                        for k in sorted(objects):
                            if not k.startswith(prefix):
                                continue
                            data, modified = objects[k]
                            entries.append(
                                "<Contents>"
                                f"<Key>{escape(k)}</Key>"
                                f"<Size>{len(data)}</Size>"
                                f"<LastModified>{modified.isoformat()}</LastModified>"
                                f'<ETag>"{hashlib.md5(data).hexdigest()}"</ETag>'
                                "</Contents>"
                            )
                        xml = (
                            '<?xml version="1.0" encoding="UTF-8"?>'
                            "<ListBucketResult>" + "".join(entries) + "</ListBucketResult>"
                        )
                        self._send(200, xml.encode(), {"Content-Type": "application/xml"})
                        return
                    entry = objects.get(key)
                    if entry is None:
                        self._send(404, b"<Error><Code>NoSuchKey</Code></Error>")
                        return
                    data, modified = entry
                self._send(
                    200,
                    data,
                    {
                        "ETag": f'"{hashlib.md5(data).hexdigest()}"',
                        "Last-Modified": modified.strftime("%a, %d %b %Y %H:%M:%S GMT"),
                    },
                )

            def do_HEAD(self):
                bucket, key, _ = self._split()
                with server._lock:
                    entry = server.buckets.get(bucket, {}).get(key)
                if entry is None:
                    self._send(404)
                    return
                data, modified = entry
                self._send(
                    200,
                    b"",
                    {
                        "ETag": f'"{hashlib.md5(data).hexdigest()}"',
                        "Last-Modified": modified.strftime("%a, %d %b %Y %H:%M:%S GMT"),
                        "Content-Length": str(len(data)),
                    },
                )

            def do_DELETE(self):
                bucket, key, _ = self._split()
                with server._lock:
                    server.buckets.get(bucket, {}).pop(key, None)
                self._send(204)

        return Handler
