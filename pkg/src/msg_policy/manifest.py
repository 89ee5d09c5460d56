from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Mapping

MANIFEST_FORMAT = "msg-policy-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class StreamEntry:
    variant: str
    skill: int
    frame: str
    checkpoint: str
    loss_csv: str

    @property
    def name(self) -> str:
        return stream_name(self.variant, self.skill, self.frame)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "skill": self.skill,
            "frame": self.frame,
            "checkpoint": self.checkpoint,
            "loss_csv": self.loss_csv,
        }


@dataclass(frozen=True)
class StreamManifest:
    task: str
    seed: int
    space: str
    entries: tuple[StreamEntry, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "task": self.task,
            "seed": self.seed,
            "space": self.space,
            "streams": [e.to_dict() for e in sorted(self.entries, key=lambda e: (e.variant, e.skill, e.frame))],
        }

    def merged(self, entries: tuple[StreamEntry, ...]) -> "StreamManifest":
        """Replace entries with the same (variant, skill, frame), keep the rest."""
        keyed = {(e.variant, e.skill, e.frame): e for e in self.entries}
        keyed.update({(e.variant, e.skill, e.frame): e for e in entries})
        return StreamManifest(self.task, self.seed, self.space, tuple(keyed.values()))


def stream_name(variant: str, skill: int, frame: str) -> str:
    return f"{variant}/skill-{skill}/{frame}"


def _as_str(value: Any, default: str = "") -> str:
    if value is None:
        return default
    if isinstance(value, str):
        return value
    return str(value)


def parse_manifest(data: Mapping[str, Any]) -> StreamManifest:
    if _as_str(data.get("format")) != MANIFEST_FORMAT:
        raise ValueError("Invalid stream manifest: unexpected format tag")
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"Invalid stream manifest: unsupported version {data.get('version')!r}")

    task = _as_str(data.get("task"))
    space = _as_str(data.get("space"))
    seed = data.get("seed")
    if not task or not space or not isinstance(seed, int):
        raise ValueError("Invalid stream manifest: missing required fields (task/seed/space)")

    streams = data.get("streams") or []
    if not isinstance(streams, list):
        raise ValueError("Invalid stream manifest: 'streams' must be a list")

    entries = []
    for item in streams:
        if not isinstance(item, Mapping):
            raise ValueError("Invalid stream manifest: stream entries must be objects")
        skill = item.get("skill")
        entry = StreamEntry(
            variant=_as_str(item.get("variant"), default="default"),
            skill=skill if isinstance(skill, int) else -1,
            frame=_as_str(item.get("frame")),
            checkpoint=_as_str(item.get("checkpoint")),
            loss_csv=_as_str(item.get("loss_csv")),
        )
        if entry.skill < 0 or not entry.frame or not entry.checkpoint:
            raise ValueError(f"Invalid stream manifest entry: {dict(item)}")
        entries.append(entry)

    return StreamManifest(task=task, seed=seed, space=space, entries=tuple(entries))
