"""Quota definitions, effective-limit merging and the reservation ledger.

Effective limits are the dimension-wise most-restrictive merge (min) of the
submitting user's and the execution context's quotas, with an absent field
meaning unlimited. Reservations are tracked per (user, context) pair; both the
user's total across contexts and the context's total across users count
against the effective limits. Totals are always derived from the outstanding
tokens, so conservation (issued - released = outstanding) holds by
construction.
"""
from __future__ import annotations

import threading
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Any, Optional

from .domain import Context, Quota, Resources
from .errors import NotAMember, NotFound, TasklabError
from .persistence import Store

DIMENSIONS = ("active_executions", "cpu_cores", "ram_gb", "disk_gb")

UNLIMITED = Quota()


class QuotaExceeded(TasklabError):
    code = "quota_exceeded"

    def __init__(self, dimensions: list[str]):
        super().__init__("quota exceeded in: " + ", ".join(dimensions))
        self.dimensions = dimensions


class UnknownToken(TasklabError):
    code = "unknown_token"


class AlreadyReleased(TasklabError):
    code = "already_released"


@dataclass(frozen=True)
class ReservationToken:
    id: str
    user: str
    context: str
    amounts: dict[str, float] = field(default_factory=dict)


def request_amounts(resources: Resources) -> dict[str, float]:
    """The ledger charge for one execution with the given resource request."""
    return {
        "active_executions": 1,
        "cpu_cores": resources.cpu_cores,
        "ram_gb": resources.ram_gb,
        "disk_gb": resources.disk_gb,
    }


def merge_quotas(a: Quota, b: Quota) -> Quota:
    """Dimension-wise most-restrictive merge; absent means unlimited."""

    def pick(x: Optional[float], y: Optional[float]) -> Optional[float]:
        if x is None:
            return y
        if y is None:
            return x
        return min(x, y)

    return Quota(
        max_active_executions=pick(a.max_active_executions, b.max_active_executions),
        max_cpu_cores=pick(a.max_cpu_cores, b.max_cpu_cores),
        max_ram_gb=pick(a.max_ram_gb, b.max_ram_gb),
        max_disk_gb=pick(a.max_disk_gb, b.max_disk_gb),
    )


def _limit(quota: Quota, dimension: str) -> Optional[float]:
    return getattr(quota, f"max_{dimension}")


class QuotasManager:
    """Stores quota definitions and enforces effective limits per submission."""

    def __init__(self, store: Store):
        self._store = store
        self._lock = threading.Lock()
        self._outstanding: dict[str, ReservationToken] = {}
        self._released: set[str] = set()

    # -- definitions ---------------------------------------------------------

    def load_seed(self, seed: dict[str, Any]) -> None:
        """Seed file format: {"users": {name: quota}, "contexts": {slug: quota}}."""
        for name, doc in seed.get("users", {}).items():
            self._store.put_quota("user", name, doc)
        for slug, doc in seed.get("contexts", {}).items():
            self._store.put_quota("context", slug, doc)

    def set_user_quota(self, user: str, quota: Quota) -> None:
        self._store.put_quota("user", user, quota.to_dict())

    def set_context_quota(self, context: str, quota: Quota) -> None:
        self._store.put_quota("context", context, quota.to_dict())

    def user_quota(self, user: str) -> Quota:
        doc = self._store.get_quota("user", user)
        return Quota.from_dict(doc) if doc else UNLIMITED

    def context_quota(self, context: str) -> Quota:
        doc = self._store.get_quota("context", context)
        return Quota.from_dict(doc) if doc else UNLIMITED

    def _context(self, slug: str) -> Context:
        return Context.from_dict(self._store.get_context(slug))

    def _require_member(self, user: str, context: str) -> None:
        try:
            members = self._context(context).members
        except NotFound:
            raise NotAMember(user, context) from None
        if user not in members:
            raise NotAMember(user, context)

    # -- effective limits ------------------------------------------------------

    def effective_quota(self, user: str, context: str) -> Quota:
        """Per dimension, the minimum of the user's and the context's quota."""
        self._require_member(user, context)
        return merge_quotas(self.user_quota(user), self.context_quota(context))

    # -- reservation ledger ----------------------------------------------------

    def _totals(self, *, user: Optional[str] = None, context: Optional[str] = None) -> dict[str, float]:
        totals = dict.fromkeys(DIMENSIONS, 0.0)
        for token in self._outstanding.values():
            if user is not None and token.user != user:
                continue
            if context is not None and token.context != context:
                continue
            for dim in DIMENSIONS:
                totals[dim] += token.amounts.get(dim, 0.0)
        return totals

    def check_and_reserve(
        self, user: str, context: str, request: Resources | dict[str, float]
    ) -> ReservationToken:
        """Atomically reserve the request against the effective quota or deny.

        Both the user's running totals and the context's running totals must
        stay within the effective limits in every limited dimension.
        """
        amounts = request_amounts(request) if isinstance(request, Resources) else dict(request)
        effective = self.effective_quota(user, context)
        with self._lock:
            user_totals = self._totals(user=user)
            context_totals = self._totals(context=context)
            violated = []
            for dim in DIMENSIONS:
                limit = _limit(effective, dim)
                if limit is None:
                    continue
                requested = amounts.get(dim, 0.0)
                if user_totals[dim] + requested > limit or context_totals[dim] + requested > limit:
                    violated.append(dim)
            if violated:
                raise QuotaExceeded(violated)
            token = ReservationToken(
                id=uuidlib.uuid4().hex, user=user, context=context, amounts=amounts
            )
            self._outstanding[token.id] = token
            return token

    def release(self, token_id: str) -> None:
        with self._lock:
            if token_id in self._outstanding:
                del self._outstanding[token_id]
                self._released.add(token_id)
                return
            if token_id in self._released:
                raise AlreadyReleased(f"token {token_id} already released")
            raise UnknownToken(f"token {token_id} was never issued")

    def restore(self, token: ReservationToken) -> None:
        """Re-register a reservation recovered from a persisted record at startup."""
        with self._lock:
            self._outstanding[token.id] = token

    # -- views ------------------------------------------------------------------

    def usage(self, user: str, context: str) -> dict[str, float]:
        """Binding usage per dimension: max of the user's and the context's totals.

        This is exactly the quantity check_and_reserve holds under the
        effective limit, so usage <= effective always.
        """
        with self._lock:
            user_totals = self._totals(user=user)
            context_totals = self._totals(context=context)
        return {dim: max(user_totals[dim], context_totals[dim]) for dim in DIMENSIONS}

    def context_usage(self, context: str) -> dict[str, float]:
        with self._lock:
            return self._totals(context=context)

    def get_quotas(self, user: str, context: str) -> dict[str, Any]:
        self._require_member(user, context)
        user_quota = self.user_quota(user)
        context_quota = self.context_quota(context)
        return {
            "user_quota": user_quota.to_dict(),
            "context_quota": context_quota.to_dict(),
            "effective": merge_quotas(user_quota, context_quota).to_dict(),
            "current_usage": self.usage(user, context),
        }

    def outstanding_count(self) -> int:
        with self._lock:
            return len(self._outstanding)
