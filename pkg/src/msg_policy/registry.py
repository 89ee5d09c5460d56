from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .errors import FlowPolicyError
from .flowmatch import FlowModel, load_model
from .manifest import StreamEntry, StreamManifest, parse_manifest, stream_name
from .records import write_json

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class StreamRegistry:
    """Trained streams of one (task, seed) run directory, resolved through its manifest."""

    def __init__(self, run_dir: Path) -> None:
        self._run_dir = run_dir
        self._manifest: Optional[StreamManifest] = None
        self._entries: Dict[str, StreamEntry] = {}
        self._models: Dict[str, FlowModel] = {}

    @property
    def run_dir(self) -> Path:
        return self._run_dir

    @property
    def manifest_path(self) -> Path:
        return self._run_dir / MANIFEST_NAME

    def load(self, force: bool = False) -> StreamManifest:
        if self._manifest is not None and not force:
            return self._manifest
        path = self.manifest_path
        if not path.exists():
            raise FlowPolicyError("MISSING_STREAM", f"No stream manifest at {path}; run 'train' first")
        try:
            manifest = parse_manifest(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, ValueError) as e:
            raise FlowPolicyError("CHECKPOINT", f"Unreadable stream manifest: {path}", {"error": str(e)})
        self._manifest = manifest
        self._entries = {e.name: e for e in manifest.entries}
        self._models.clear()
        return manifest

    def variants(self) -> List[str]:
        self.load()
        return sorted({e.variant for e in self._entries.values()})

    def has(self, variant: str, skill: int, frame: str) -> bool:
        self.load()
        entry = self._entries.get(stream_name(variant, skill, frame))
        return entry is not None and (self._run_dir / entry.checkpoint).exists()

    def model(self, variant: str, skill: int, frame: str) -> FlowModel:
        self.load()
        name = stream_name(variant, skill, frame)
        cached = self._models.get(name)
        if cached is not None:
            return cached
        entry = self._entries.get(name)
        if entry is None:
            raise FlowPolicyError("MISSING_STREAM", f"Stream '{name}' is not in the manifest", {"stream": name})
        path = self._run_dir / entry.checkpoint
        if not path.exists():
            raise FlowPolicyError("MISSING_STREAM", f"Checkpoint for stream '{name}' not found", {"path": str(path)})
        model = load_model(path)
        self._models[name] = model
        logger.debug("loaded stream %s from %s", name, path)
        return model

    def models(self, variant: str, skill: int, frames: Sequence[str]) -> List[FlowModel]:
        return [self.model(variant, skill, frame) for frame in frames]


def write_manifest(run_dir: Path, manifest: StreamManifest) -> Path:
    path = run_dir / MANIFEST_NAME
    write_json(path, manifest.to_dict())
    return path


def update_manifest(run_dir: Path, task: str, seed: int, space: str, entries: Sequence[StreamEntry]) -> StreamManifest:
    """Merge new entries into the run's manifest, creating it when absent."""
    path = run_dir / MANIFEST_NAME
    base = StreamManifest(task, seed, space, ())
    if path.exists():
        try:
            base = parse_manifest(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, ValueError) as e:
            logger.warning("replacing unreadable manifest %s: %s", path, e)
    manifest = base.merged(tuple(entries))
    write_manifest(run_dir, manifest)
    return manifest
