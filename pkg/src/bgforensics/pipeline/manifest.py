"""Dataset manifests: JSON lines of ``{path, label, tags}``."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import BadParams, EmptyDataset, IoFailure, UnlabeledEntry
from ..raster import save_image
from . import synth

LABELS = ("real", "virtual")
SOFTWARE = ("zoom", "gmeet", "teams", "synthetic", "unknown")
LIGHTING = ("full", "s1_75pct", "s2_50pct", "unknown")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm")

DEFAULT_LABEL_RULES = {"real": "real", "virtual": "virtual"}
DEFAULT_TAG_RULES = {
    "software": {name: name for name in SOFTWARE if name != "unknown"},
    "lighting": {name: name for name in LIGHTING if name != "unknown"},
}
DEFAULT_TAGS = {"software": "unknown", "camera": "unknown", "lighting": "unknown"}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise UnlabeledEntry(f"{self.path}: label must be one of {LABELS}, got {self.label!r}")
        object.__setattr__(self, "tags", {**DEFAULT_TAGS, **self.tags})

    @property
    def target(self) -> int:
        """1 for virtual (the manipulated class), 0 for real."""
        return int(self.label == "virtual")

    def to_dict(self) -> dict:
        return {"path": self.path, "label": self.label, "tags": dict(sorted(self.tags.items()))}


@dataclass
class DatasetManifest:
    entries: list
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise BadParams("manifest paths must be unique")

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.base_dir / p

    def targets(self) -> list:
        return [e.target for e in self.entries]

    def matching(self, filters: dict | None) -> list:
        """Indices of entries whose tags satisfy `filters` (tag -> value or list of values)."""
        if not filters:
            return list(range(len(self.entries)))
        wanted = {k: (set(v) if isinstance(v, (list, tuple, set)) else {v}) for k, v in filters.items()}
        return [
            i for i, e in enumerate(self.entries)
            if all(e.tags.get(k) in allowed for k, allowed in wanted.items())
        ]

    def write(self, path) -> None:
        lines = [json.dumps(e.to_dict()) for e in self.entries]
        try:
            Path(path).write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def read(cls, path) -> DatasetManifest:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such manifest: {path}")
        entries = []
        for n, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                entries.append(ManifestEntry(doc["path"], doc.get("label"), doc.get("tags", {})))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BadParams(f"{path}:{n}: malformed manifest line: {exc}") from exc
        if not entries:
            raise EmptyDataset(f"{path}: manifest has no entries")
        return cls(entries, path.parent)


def _match_segment(parts, rules: dict):
    for part in parts:
        if part.lower() in rules:
            return rules[part.lower()]
    return None


def build_manifest(roots, label_rules: dict | None = None, tag_rules: dict | None = None,
                   base_dir=None) -> DatasetManifest:
    """Scan `roots` recursively for images and label them from path segments.

    `label_rules` maps a directory or file-name segment to a label and
    `tag_rules` maps tag name -> {segment: value}. Paths are stored relative
    to `base_dir` when given, and entries are ordered lexicographically.
    """
    label_rules = {k.lower(): v for k, v in (label_rules or DEFAULT_LABEL_RULES).items()}
    tag_rules = tag_rules if tag_rules is not None else DEFAULT_TAG_RULES
    files = []
    for root in roots:
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"no such directory: {root}")
        files += [(root, p) for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise EmptyDataset(f"no images found under {[str(r) for r in roots]}")
    base = Path(base_dir).resolve() if base_dir is not None else None
    named = []
    for root, p in files:
        shown = Path(os.path.relpath(p.resolve(), base)) if base is not None else p
        named.append((shown.as_posix(), root, p))
    named.sort()
    entries = []
    for shown, root, p in named:
        # only segments below the scanned root take part in rule matching
        rel = p.relative_to(root)
        parts = list(rel.parts[:-1]) + [p.stem]
        label = _match_segment(parts, label_rules)
        if label is None:
            raise UnlabeledEntry(f"{p}: no label rule matches this path")
        tags = {}
        for tag, rules in tag_rules.items():
            value = _match_segment(parts, {k.lower(): v for k, v in rules.items()})
            if value is not None:
                tags[tag] = value
        entries.append(ManifestEntry(shown, label, tags))
    return DatasetManifest(entries, base if base is not None else Path())


def synth_dataset(n_per_class: int, size=(320, 180), seed: int = 0, out_dir=None) -> DatasetManifest:
    """Generate the procedural real/virtual set as PNGs plus ``manifest.jsonl`` in `out_dir`."""
    if isinstance(n_per_class, bool) or not isinstance(n_per_class, int) or n_per_class < 1:
        raise BadParams(f"n_per_class must be a positive integer, got {n_per_class!r}")
    w, h = (int(v) for v in size)
    if w < 16 or h < 16:
        raise BadParams(f"frame size must be at least 16x16, got {w}x{h}")
    if out_dir is None:
        raise BadParams("synth_dataset needs an output directory")
    out = Path(out_dir)
    entries = []
    tags = {"software": "synthetic", "camera": "synthetic", "lighting": "full"}
    for label, make in ((0, synth.real_frame), (1, synth.virtual_frame)):
        name = LABELS[label]
        (out / name).mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            img = make(synth.frame_rng(seed, label, i), w, h)
            rel = f"{name}/{name}_{i:05d}.png"
            save_image(img, out / rel)
            entries.append(ManifestEntry(rel, name, tags))
    manifest = DatasetManifest(entries, out)
    manifest.write(out / "manifest.jsonl")
    return manifest
