"""Per-user object storage: bucket isolation, signed links, staging.

Two drivers sit behind one contract: a local-filesystem driver whose signed
links are HMAC tokens served by this service at /storage/signed/{token}, and
an S3-compatible driver that presigns real URLs (SigV4 query auth). Mount
``url`` strings are always keys in the submitter's own bucket; nothing here
can cross user buckets.
"""
from __future__ import annotations

import base64
import hashlib
import hmac
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Optional
from urllib.parse import quote

import httpx

from .domain import MountPoint, container_to_host, render_timestamp, utcnow
from .errors import TasklabError

Clock = Callable[[], datetime]

DEFAULT_LINK_TTL_SECONDS = 15 * 60


class InvalidKey(TasklabError):
    code = "invalid_key"


class ObjectNotFound(TasklabError):
    code = "object_not_found"


class DestinationExists(TasklabError):
    code = "destination_exists"


class LinkInvalid(TasklabError):
    code = "link_invalid"


class LinkExpired(TasklabError):
    code = "link_expired"


class InputMissing(TasklabError):
    code = "input_missing"

    def __init__(self, url: str):
        super().__init__(f"input object '{url}' not found in the submitter's bucket")
        self.url = url


def normalize_key(key: str) -> str:
    """Keys have no empty, '.' or '..' segments and no leading slash."""
    if not isinstance(key, str) or key == "":
        raise InvalidKey("empty key")
    segments = key.split("/")
    for segment in segments:
        if segment in ("", ".", ".."):
            raise InvalidKey(f"invalid key '{key}'")
    return "/".join(segments)


def bucket_for_user(username: str) -> str:
    """Deterministic user -> bucket mapping; injective even for unsafe names."""
    safe = username.lower()
    if safe == username and safe.replace("-", "a").replace("_", "a").isalnum():
        return f"user-{safe}"
    digest = hashlib.sha256(username.encode()).hexdigest()[:8]
    cleaned = "".join(c if c.isalnum() else "-" for c in safe).strip("-") or "u"
    return f"user-{cleaned}-{digest}"


@dataclass(frozen=True)
class StoredObject:
    bucket: str
    key: str
    size_bytes: int
    modified_at: datetime
    checksum: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "bucket": self.bucket,
            "key": self.key,
            "size_bytes": self.size_bytes,
            "modified_at": render_timestamp(self.modified_at),
            "checksum": self.checksum,
        }


@dataclass(frozen=True)
class SignedLink:
    url: str
    method: str  # "upload" | "download"
    expires_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "method": self.method,
            "expires_at": render_timestamp(self.expires_at),
        }


class LocalDriver:
    """Objects as files under root/<bucket>/<key>; links are signed tokens."""

    def __init__(self, root: Path, secret: str = "", base_url: str = "", clock: Clock = utcnow):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._secret = (secret or "local-signing-secret").encode()
        self._base_url = base_url.rstrip("/")
        self._clock = clock
        self._lock = threading.Lock()

    def _path(self, bucket: str, key: str) -> Path:
        return self.root / bucket / key

    def _stat(self, bucket: str, key: str, path: Path) -> StoredObject:
        data = path.read_bytes()
        return StoredObject(
            bucket=bucket,
            key=key,
            size_bytes=len(data),
            modified_at=datetime.fromtimestamp(path.stat().st_mtime, tz=timezone.utc),
            checksum=hashlib.sha256(data).hexdigest(),
        )

    def list_objects(self, bucket: str, prefix: str = "") -> list[StoredObject]:
        base = self.root / bucket
        if not base.is_dir():
            return []
        objects = []
        for path in sorted(p for p in base.rglob("*") if p.is_file()):
            key = path.relative_to(base).as_posix()
            if key.startswith(prefix):
                objects.append(self._stat(bucket, key, path))
        return objects

    def stat(self, bucket: str, key: str) -> StoredObject:
        path = self._path(bucket, key)
        if not path.is_file():
            raise ObjectNotFound(f"object '{key}' not found")
        return self._stat(bucket, key, path)

    def read(self, bucket: str, key: str) -> bytes:
        path = self._path(bucket, key)
        if not path.is_file():
            raise ObjectNotFound(f"object '{key}' not found")
        return path.read_bytes()

    def write(self, bucket: str, key: str, data: bytes) -> StoredObject:
        path = self._path(bucket, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return self._stat(bucket, key, path)

    def delete(self, bucket: str, key: str) -> None:
        path = self._path(bucket, key)
        if not path.is_file():
            raise ObjectNotFound(f"object '{key}' not found")
        path.unlink()

    def move(self, bucket: str, from_key: str, to_key: str, overwrite: bool = False) -> StoredObject:
        src = self._path(bucket, from_key)
        dst = self._path(bucket, to_key)
        with self._lock:
            if not src.is_file():
                raise ObjectNotFound(f"object '{from_key}' not found")
            if dst.exists() and not overwrite:
                raise DestinationExists(f"object '{to_key}' already exists")
            dst.parent.mkdir(parents=True, exist_ok=True)
            src.replace(dst)
        return self._stat(bucket, to_key, dst)

    # -- signed token links ---------------------------------------------------

    def presign(self, bucket: str, key: str, method: str, expires_at: datetime) -> str:
        payload = f"{bucket}\n{key}\n{method}\n{int(expires_at.timestamp())}".encode()
        signature = hmac.new(self._secret, payload, hashlib.sha256).hexdigest()
        token = base64.urlsafe_b64encode(payload).decode().rstrip("=") + "." + signature
        return f"{self._base_url}/storage/signed/{token}"

    def verify_token(self, token: str) -> tuple[str, str, str]:
        """Return (bucket, key, method) for a valid, unexpired token."""
        try:
            encoded, signature = token.split(".", 1)
            payload = base64.urlsafe_b64decode(encoded + "=" * (-len(encoded) % 4))
        except (ValueError, TypeError) as exc:
            raise LinkInvalid("malformed link token") from exc
        expected = hmac.new(self._secret, payload, hashlib.sha256).hexdigest()
        if not hmac.compare_digest(expected, signature):
            raise LinkInvalid("bad link signature")
        bucket, key, method, expires_ts = payload.decode().split("\n")
        if self._clock() > datetime.fromtimestamp(int(expires_ts), tz=timezone.utc):
            raise LinkExpired("link expired")
        return bucket, key, method


def _sigv4_sign(key: bytes, message: str) -> bytes:
    return hmac.new(key, message.encode(), hashlib.sha256).digest()


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _uri_encode_path(path: str) -> str:
    return quote(path, safe="/-_.~")


class S3Driver:
    """Speaks the S3-compatible HTTP protocol directly (SigV4, path-style)."""

    def __init__(
        self,
        endpoint: str,
        access_key: str,
        secret_key: str,
        region: str = "us-east-1",
        clock: Clock = utcnow,
        client: Optional[httpx.Client] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.access_key = access_key
        self.secret_key = secret_key
        self.region = region
        self._clock = clock
        self._client = client or httpx.Client(timeout=30.0)
        self._known_buckets: set[str] = set()

    @property
    def _host(self) -> str:
        return httpx.URL(self.endpoint).netloc.decode()

    def _scope(self, datestamp: str) -> str:
        return f"{datestamp}/{self.region}/s3/aws4_request"

    def _signing_key(self, datestamp: str) -> bytes:
        key = _sigv4_sign(b"AWS4" + self.secret_key.encode(), datestamp)
        key = hmac.new(key, self.region.encode(), hashlib.sha256).digest()
        key = hmac.new(key, b"s3", hashlib.sha256).digest()
        return hmac.new(key, b"aws4_request", hashlib.sha256).digest()

    def _canonical_query(self, params: dict[str, str]) -> str:
        return "&".join(
            f"{quote(k, safe='-_.~')}={quote(v, safe='-_.~')}" for k, v in sorted(params.items())
        )

    def presign(self, bucket: str, key: str, method: str, expires_at: datetime) -> str:
        http_method = "GET" if method == "download" else "PUT"
        now = self._clock().astimezone(timezone.utc)
        amz_date = now.strftime("%Y%m%dT%H%M%SZ")
        datestamp = now.strftime("%Y%m%d")
        expires_in = max(1, int((expires_at - now).total_seconds()))
        path = _uri_encode_path(f"/{bucket}/{key}")
        params = {
            "X-Amz-Algorithm": "AWS4-HMAC-SHA256",
            "X-Amz-Credential": f"{self.access_key}/{self._scope(datestamp)}",
            "X-Amz-Date": amz_date,
            "X-Amz-Expires": str(expires_in),
            "X-Amz-SignedHeaders": "host",
        }
        query = self._canonical_query(params)
        canonical_request = "\n".join(
            [http_method, path, query, f"host:{self._host}\n", "host", "UNSIGNED-PAYLOAD"]
        )
        string_to_sign = "\n".join(
            [
                "AWS4-HMAC-SHA256",
                amz_date,
                self._scope(datestamp),
                _sha256_hex(canonical_request.encode()),
            ]
        )
        signature = hmac.new(
            self._signing_key(datestamp), string_to_sign.encode(), hashlib.sha256
        ).hexdigest()
        return f"{self.endpoint}{path}?{query}&X-Amz-Signature={signature}"

    def _request(
        self,
        method: str,
        path: str,
        params: Optional[dict[str, str]] = None,
        body: bytes = b"",
        headers: Optional[dict[str, str]] = None,
    ) -> httpx.Response:
        now = self._clock().astimezone(timezone.utc)
        amz_date = now.strftime("%Y%m%dT%H%M%SZ")
        datestamp = now.strftime("%Y%m%d")
        payload_hash = _sha256_hex(body)
        all_headers = dict(headers or {})
        all_headers["host"] = self._host
        all_headers["x-amz-date"] = amz_date
        all_headers["x-amz-content-sha256"] = payload_hash
        signed_names = ";".join(sorted(all_headers))
        canonical_headers = "".join(
            f"{name}:{all_headers[name].strip()}\n" for name in sorted(all_headers)
        )
        query = self._canonical_query(params or {})
        canonical_request = "\n".join(
            [
                method,
                _uri_encode_path(path),
                query,
                canonical_headers,
                signed_names,
                payload_hash,
            ]
        )
        string_to_sign = "\n".join(
            [
                "AWS4-HMAC-SHA256",
                amz_date,
                self._scope(datestamp),
                _sha256_hex(canonical_request.encode()),
            ]
        )
        signature = hmac.new(
            self._signing_key(datestamp), string_to_sign.encode(), hashlib.sha256
        ).hexdigest()
        authorization = (
            "AWS4-HMAC-SHA256 "
            f"Credential={self.access_key}/{self._scope(datestamp)}, "
            f"SignedHeaders={signed_names}, Signature={signature}"
        )
        request_headers = {k: v for k, v in all_headers.items() if k != "host"}
        request_headers["Authorization"] = authorization
        url = f"{self.endpoint}{_uri_encode_path(path)}"
        if query:
            url += f"?{query}"
        return self._client.request(method, url, content=body, headers=request_headers)

    def _ensure_bucket(self, bucket: str) -> None:
        if bucket in self._known_buckets:
            return
        response = self._request("PUT", f"/{bucket}")
        if response.status_code in (200, 204, 409):  # 409: already owned
            self._known_buckets.add(bucket)

    def list_objects(self, bucket: str, prefix: str = "") -> list[StoredObject]:
        response = self._request(
            "GET", f"/{bucket}", params={"list-type": "2", "prefix": prefix}
        )
        if response.status_code == 404:
            return []
        response.raise_for_status()
        ns = {"s3": "http://s3.amazonaws.com/doc/2006-03-01/"}
        root = ET.fromstring(response.content)
        contents = root.findall("s3:Contents", ns) or root.findall("Contents")
        objects = []
        for entry in contents:
            def text(tag: str) -> str:
                node = entry.find(f"s3:{tag}", ns)
                if node is None:
                    node = entry.find(tag)
                return node.text or "" if node is not None else ""

            objects.append(
                StoredObject(
                    bucket=bucket,
                    key=text("Key"),
                    size_bytes=int(text("Size") or 0),
                    modified_at=datetime.fromisoformat(
                        text("LastModified").replace("Z", "+00:00")
                    ),
                    checksum=text("ETag").strip('"'),
                )
            )
        return sorted(objects, key=lambda o: o.key)

    def stat(self, bucket: str, key: str) -> StoredObject:
        response = self._request("HEAD", f"/{bucket}/{key}")
        if response.status_code == 404:
            raise ObjectNotFound(f"object '{key}' not found")
        response.raise_for_status()
        modified = response.headers.get("Last-Modified")
        return StoredObject(
            bucket=bucket,
            key=key,
            size_bytes=int(response.headers.get("Content-Length", 0)),
            modified_at=(
                datetime.strptime(modified, "%a, %d %b %Y %H:%M:%S %Z").replace(
                    tzinfo=timezone.utc
                )
                if modified
                else self._clock()
            ),
            checksum=response.headers.get("ETag", "").strip('"'),
        )

    def read(self, bucket: str, key: str) -> bytes:
        response = self._request("GET", f"/{bucket}/{key}")
        if response.status_code == 404:
            raise ObjectNotFound(f"object '{key}' not found")
        response.raise_for_status()
        return response.content

    def write(self, bucket: str, key: str, data: bytes) -> StoredObject:
        self._ensure_bucket(bucket)
        response = self._request("PUT", f"/{bucket}/{key}", body=data)
        response.raise_for_status()
        return self.stat(bucket, key)

    def delete(self, bucket: str, key: str) -> None:
        self.stat(bucket, key)  # surface ObjectNotFound; S3 DELETE is silent
        response = self._request("DELETE", f"/{bucket}/{key}")
        if response.status_code not in (200, 204):
            response.raise_for_status()

    def move(self, bucket: str, from_key: str, to_key: str, overwrite: bool = False) -> StoredObject:
        if not overwrite:
            try:
                self.stat(bucket, to_key)
            except ObjectNotFound:
                pass
            else:
                raise DestinationExists(f"object '{to_key}' already exists")
        self.stat(bucket, from_key)
        response = self._request(
            "PUT",
            f"/{bucket}/{to_key}",
            headers={"x-amz-copy-source": _uri_encode_path(f"/{bucket}/{from_key}")},
        )
        response.raise_for_status()
        self.delete(bucket, from_key)
        return self.stat(bucket, to_key)


class FilesAdapter:
    """User-facing file management plus input staging / output collection."""

    def __init__(self, driver, link_ttl_seconds: int = DEFAULT_LINK_TTL_SECONDS, clock: Clock = utcnow):
        self.driver = driver
        self.link_ttl = timedelta(seconds=link_ttl_seconds)
        self._clock = clock

    def bucket(self, user: str) -> str:
        return bucket_for_user(user)

    def list_objects(self, user: str, prefix: str = "") -> list[StoredObject]:
        return self.driver.list_objects(self.bucket(user), prefix)

    def stat_object(self, user: str, key: str) -> StoredObject:
        return self.driver.stat(self.bucket(user), normalize_key(key))

    def read_object(self, user: str, key: str) -> bytes:
        return self.driver.read(self.bucket(user), normalize_key(key))

    def write_object(self, user: str, key: str, data: bytes) -> StoredObject:
        return self.driver.write(self.bucket(user), normalize_key(key), data)

    def delete_object(self, user: str, key: str) -> None:
        self.driver.delete(self.bucket(user), normalize_key(key))

    def move_object(self, user: str, from_key: str, to_key: str, overwrite: bool = False) -> StoredObject:
        return self.driver.move(
            self.bucket(user), normalize_key(from_key), normalize_key(to_key), overwrite
        )

    def issue_upload_link(self, user: str, key: str) -> SignedLink:
        key = normalize_key(key)
        expires_at = self._clock() + self.link_ttl
        url = self.driver.presign(self.bucket(user), key, "upload", expires_at)
        return SignedLink(url=url, method="upload", expires_at=expires_at)

    def issue_download_link(self, user: str, key: str) -> tuple[SignedLink, StoredObject]:
        key = normalize_key(key)
        meta = self.driver.stat(self.bucket(user), key)  # ObjectNotFound for missing keys
        expires_at = self._clock() + self.link_ttl
        url = self.driver.presign(self.bucket(user), key, "download", expires_at)
        return SignedLink(url=url, method="download", expires_at=expires_at), meta

    # -- staging ------------------------------------------------------------

    def stage_inputs(
        self, inputs: tuple[MountPoint, ...] | list[MountPoint], submitter: str, volumes_root: Path
    ) -> list[Path]:
        """Copy each input object to its workspace path before the first executor."""
        staged = []
        for mount in inputs:
            try:
                data = self.read_object(submitter, mount.url)
            except ObjectNotFound:
                raise InputMissing(mount.url) from None
            target = container_to_host(volumes_root, mount.path)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            staged.append(target)
        return staged

    def collect_outputs(
        self, outputs: tuple[MountPoint, ...] | list[MountPoint], submitter: str, volumes_root: Path
    ) -> tuple[list[StoredObject], list[str]]:
        """Copy declared output files into the submitter's bucket; missing ones warn."""
        collected = []
        warnings = []
        for mount in outputs:
            source = container_to_host(volumes_root, mount.path)
            if not source.is_file():
                warnings.append(f"declared output '{mount.path}' was never written")
                continue
            collected.append(self.write_object(submitter, mount.url, source.read_bytes()))
        return collected, warnings
