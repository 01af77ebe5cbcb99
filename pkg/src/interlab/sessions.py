"""Session resolution and impression id allocation.

Both live in memory; durable state is reconstructed from the feedback log on
startup so that ids keep counting up across restarts.
"""
from __future__ import annotations

import re
import threading
from typing import Callable, Iterable


class ImpressionIdSequence:
    """Monotonic ``imp-NNNNNNNN`` ids, thread-safe and resumable."""

    _PATTERN = re.compile(r"^imp-(\d+)$")

    def __init__(self, start: int = 1) -> None:
        self._next = start
        self._lock = threading.Lock()

    def next(self) -> str:
        with self._lock:
            value = self._next
            self._next += 1
        return f"imp-{value:08d}"

    @classmethod
    def resuming_after(cls, existing: Iterable[str]) -> "ImpressionIdSequence":
        """Continue after the highest id seen in ``existing``; unknown shapes are ignored."""
        highest = 0
        for impression_id in existing:
            match = cls._PATTERN.match(impression_id)
            if match:
                highest = max(highest, int(match.group(1)))
        return cls(start=highest + 1)


class SessionStore:
    """Tracks the active session per site user.

    A request within ``timeout`` seconds of the user's last activity joins the
    existing session; anything later opens a new one. Resolution updates the
    last-activity clock, and is atomic per user.
    """

    def __init__(
        self,
        timeout: float = 30 * 60.0,
        on_create: Callable[[str, str, float], None] | None = None,
        start: int = 1,
    ) -> None:
        if timeout <= 0:
            raise ValueError("session timeout must be positive")
        self.timeout = timeout
        self._on_create = on_create
        self._next = start
        # site_user -> (session_id, last_activity_ts)
        self._active: dict[str, tuple[str, float]] = {}
        self._lock = threading.Lock()

    def resolve(self, site_user: str, ts: float) -> str:
        if not site_user:
            raise ValueError("site_user must be non-empty")
        with self._lock:
            current = self._active.get(site_user)
            if current is not None:
                session_id, last_ts = current
                if ts - last_ts <= self.timeout:
                    self._active[site_user] = (session_id, max(last_ts, ts))
                    return session_id
            session_id = f"s-{self._next:08d}"
            self._next += 1
            self._active[site_user] = (session_id, ts)
        if self._on_create is not None:
            self._on_create(session_id, site_user, ts)
        return session_id

    def seed_activity(self, site_user: str, session_id: str, last_ts: float) -> None:
        """Restore one user's session state, e.g. replayed from a log."""
        with self._lock:
            known = self._active.get(site_user)
            if known is None or known[1] <= last_ts:
                self._active[site_user] = (session_id, last_ts)
            match = re.match(r"^s-(\d+)$", session_id)
            if match:
                self._next = max(self._next, int(match.group(1)) + 1)

    def active_count(self) -> int:
        with self._lock:
            return len(self._active)
