"""
Processing slots: at most one holder per key (one task per worker, one
active mission per fleetd)
"""
from contextlib import asynccontextmanager
from typing import Callable, Optional, Set

from app.exceptions import FleetError


class ProcessingSlots:
    """
    Non-blocking slots keyed by name

    All callers run on one event loop, so claim/release need no lock; a
    second claim on a held key fails instead of waiting.
    """
    def __init__(self, busy_error: Callable[[str], FleetError]):
        self._processing: Set[str] = set()
        self._busy_error = busy_error

    def claim(self, key: str) -> None:
        """
        Take the slot for key

        Raises:
            FleetError: Built by busy_error when the slot is already held
        """
        if key in self._processing:
            raise self._busy_error(key)
        self._processing.add(key)

    def release(self, key: str) -> None:
        self._processing.discard(key)

    @asynccontextmanager
    async def hold(self, key: str):
        self.claim(key)
        try:
            yield
        finally:
            self.release(key)

    def is_processing(self, key: Optional[str] = None) -> bool:
        """Check one key, or whether any slot is held"""
        if key is None:
            return bool(self._processing)
        return key in self._processing
