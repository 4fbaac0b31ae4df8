"""Service configuration from environment variables."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


@dataclass
class Config:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: Path = Path("tasklab-data")
    db_url: Optional[str] = None  # default: sqlite file under data_dir
    storage_driver: str = "local"  # "local" | "s3"
    s3_endpoint: str = ""
    s3_access_key: str = ""
    s3_secret_key: str = ""
    s3_region: str = "us-east-1"
    backend: str = "local"  # "local" | "tes"
    tes_url: str = ""
    tes_token: str = ""
    reconcile_interval: float = 2.0
    link_ttl_seconds: int = 900
    signing_secret: str = ""
    base_url: str = ""
    quota_seed: Optional[Path] = None
    key_seed: Optional[Path] = None
    local_workers: int = 4
    local_capacity: Optional[int] = None
    container_engine: Optional[str] = None  # e.g. "docker"; None runs commands directly
    dashboard_dir: Optional[Path] = None  # static bundle to serve at /dashboard

    @classmethod
    def from_env(cls, environ: Optional[dict[str, str]] = None) -> "Config":
        env = environ if environ is not None else os.environ

        def get(name: str, default: str = "") -> str:
            return env.get(f"TASKLAB_{name}", default)

        capacity = get("LOCAL_CAPACITY")
        return cls(
            host=get("HOST", "127.0.0.1"),
            port=int(get("PORT", "8080")),
            data_dir=Path(get("DATA_DIR", "tasklab-data")),
            db_url=get("DB_URL") or None,
            storage_driver=get("STORAGE_DRIVER", "local"),
            s3_endpoint=get("S3_ENDPOINT"),
            s3_access_key=get("S3_ACCESS_KEY"),
            s3_secret_key=get("S3_SECRET_KEY"),
            s3_region=get("S3_REGION", "us-east-1"),
            backend=get("BACKEND", "local"),
            tes_url=get("TES_URL"),
            tes_token=get("TES_TOKEN"),
            reconcile_interval=float(get("RECONCILE_INTERVAL", "2.0")),
            link_ttl_seconds=int(get("LINK_TTL", "900")),
            signing_secret=get("SIGNING_SECRET"),
            base_url=get("BASE_URL"),
            quota_seed=Path(get("QUOTA_SEED")) if get("QUOTA_SEED") else None,
            key_seed=Path(get("KEY_SEED")) if get("KEY_SEED") else None,
            local_workers=int(get("LOCAL_WORKERS", "4")),
            local_capacity=int(capacity) if capacity else None,
            container_engine=get("CONTAINER_ENGINE") or None,
            dashboard_dir=Path(get("DASHBOARD")) if get("DASHBOARD") else None,
        )
