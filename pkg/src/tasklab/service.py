"""Composition root: wires persistence, storage, backend and managers together."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from .config import Config
from .backends import ExecutionBackend, LocalBackend, TesBackend
from .domain import render_timestamp, utcnow
from .experiments import ExperimentsManager
from .manager import ExecutionManager, ReconcileLoop
from .persistence import Store
from .quotas import QuotasManager
from .storage import FilesAdapter, LocalDriver, S3Driver


@dataclass
class Service:
    config: Config
    store: Store
    quotas: QuotasManager
    files: FilesAdapter
    backend: ExecutionBackend
    manager: ExecutionManager
    experiments: ExperimentsManager
    reconciler: Optional[ReconcileLoop] = None

    def start(self) -> "Service":
        self.manager.recover()
        self.reconciler = ReconcileLoop(self.manager, self.config.reconcile_interval).start()
        return self

    def stop(self) -> None:
        if self.reconciler is not None:
            self.reconciler.stop()
        if isinstance(self.backend, LocalBackend):
            self.backend.shutdown()
        self.store.close()

    # -- administrative seeding -------------------------------------------------

    def seed_context(self, slug: str, members: list[str]) -> None:
        self.store.put_context(slug, {"slug": slug, "members": sorted(members)})

    def seed_api_key(self, token: str, user: str, context: str, active: bool = True) -> None:
        self.store.put_api_key(
            token,
            {
                "token": token,
                "user_ref": user,
                "context_ref": context,
                "active": active,
                "created_at": render_timestamp(utcnow()),
            },
        )

    def load_key_seed(self, seed: dict[str, Any]) -> None:
        """{"contexts": {slug: {"members": [...]}}, "keys": [{token,user,context,active}]}"""
        for slug, doc in seed.get("contexts", {}).items():
            self.seed_context(slug, doc.get("members", []))
        for key in seed.get("keys", []):
            self.seed_api_key(
                key["token"], key["user"], key["context"], key.get("active", True)
            )


def build_service(config: Config) -> Service:
    config.data_dir.mkdir(parents=True, exist_ok=True)
    db_url = config.db_url or f"sqlite:///{config.data_dir / 'tasklab.db'}"
    store = Store(db_url)

    if config.storage_driver == "s3":
        driver = S3Driver(
            endpoint=config.s3_endpoint,
            access_key=config.s3_access_key,
            secret_key=config.s3_secret_key,
            region=config.s3_region,
        )
    else:
        driver = LocalDriver(
            root=config.data_dir / "objects",
            secret=config.signing_secret,
            base_url=config.base_url,
        )
    files = FilesAdapter(driver, link_ttl_seconds=config.link_ttl_seconds)

    backend: ExecutionBackend
    if config.backend == "tes":
        backend = TesBackend(config.tes_url, token=config.tes_token or None)
        stage_files = False  # file transfer is the TES deployment's job
    else:
        backend = LocalBackend(
            root=config.data_dir / "jobs",
            max_workers=config.local_workers,
            capacity=config.local_capacity,
            container_engine=config.container_engine,
        )
        stage_files = True

    quotas = QuotasManager(store)
    manager = ExecutionManager(
        store=store,
        quotas=quotas,
        backend=backend,
        files=files,
        runs_root=config.data_dir / "runs",
        stage_files=stage_files,
    )
    experiments = ExperimentsManager(store)
    service = Service(
        config=config,
        store=store,
        quotas=quotas,
        files=files,
        backend=backend,
        manager=manager,
        experiments=experiments,
    )
    if config.quota_seed:
        service.quotas.load_seed(json.loads(config.quota_seed.read_text()))
    if config.key_seed:
        service.load_key_seed(json.loads(config.key_seed.read_text()))
    return service
