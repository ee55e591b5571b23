import logging
import os
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from app.exceptions import CorruptSnapshot
from .models import FleetStore, MissionPhase

logger = logging.getLogger(__name__)


class SnapshotStore:
    """Single JSON document holding the whole FleetStore"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists()

    def save(self, store: FleetStore) -> None:
        """Write to <path>.tmp, fsync, then rename over the snapshot"""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(store.model_dump_json(indent=2))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.path)

    def load(self) -> FleetStore:
        """
        Read the snapshot

        Raises:
            CorruptSnapshot: If the file is unreadable, truncated or does not
                match the store schema
        """
        try:
            text = self.path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise CorruptSnapshot(f"cannot read {self.path}: {e}")
        try:
            return FleetStore.model_validate_json(text)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()[:5]
            )
            raise CorruptSnapshot(f"{self.path}: {problems}")

    def load_or_create(self, rules_dir: Optional[str] = None) -> FleetStore:
        if not self.exists():
            logger.info(f"No snapshot at {self.path}; starting with an empty store")
            return FleetStore(rules_dir=rules_dir) if rules_dir else FleetStore()
        store = restore_store(self.load())
        if rules_dir:
            store.rules_dir = rules_dir
        return store


def restore_store(store: FleetStore) -> FleetStore:
    """Missions interrupted while executing come back in phase replanning"""
    for mission in store.missions.values():
        if mission.phase == MissionPhase.EXECUTING:
            mission.transition(MissionPhase.REPLANNING)
            logger.info(f"Mission {mission.id} was executing; restored as replanning")
    return store


# Global snapshot instance
snapshot: Optional[SnapshotStore] = None


def init_snapshot(path: Union[str, Path]) -> SnapshotStore:
    """Initialize snapshot store"""
    global snapshot
    snapshot = SnapshotStore(path)
    return snapshot
