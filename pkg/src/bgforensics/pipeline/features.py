"""Feature extraction over manifests and the on-disk feature store."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..attacks import AttackChain, apply_chain
from ..comat import CoMatTensor, load_tensor, save_tensor, six_comat_tensor
from ..errors import BadParams, ForensicsError, IoFailure
from ..raster import load_image
from ..spam import crspam1372

SCHEMES = ("six_comat", "crspam")
CRSPAM_DIM = 1372
# CRSPAM1372 laid out as a one-channel image for the CNN variant
CRSPAM_GRID = (49, 28, 1)


def default_threads() -> int:
    return os.cpu_count() or 1


def extract(img, scheme: str) -> np.ndarray:
    """Six co-mat tensor (256, 256, 6) as float32, or the CRSPAM1372 vector as float64."""
    if scheme == "six_comat":
        return six_comat_tensor(img).data.astype(np.float32)
    if scheme == "crspam":
        return crspam1372(img).values
    raise BadParams(f"unknown feature scheme {scheme!r}; expected one of {SCHEMES}")


def frame_features(path, scheme: str, chain: AttackChain | None = None, salt: int | None = None) -> np.ndarray:
    """Load, optionally attack, and featurize one frame; errors name the frame."""
    try:
        img = load_image(path)
        if chain is not None:
            img = apply_chain(img, chain, salt)
        return extract(img, scheme)
    except (ForensicsError, OSError) as exc:
        exc.args = (f"{path}: {exc}",)
        raise


def featurize_paths(paths, scheme: str, chain=None, salts=None, threads: int = 1) -> list:
    """Features for every path, in input order. `salts` seeds per-frame noise."""
    if chain is not None and not isinstance(chain, AttackChain):
        chain = AttackChain.parse(chain)
    salts = list(salts) if salts is not None else list(range(len(paths)))
    jobs = list(zip(paths, salts))
    if threads <= 1 or len(jobs) < 2:
        return [frame_features(p, scheme, chain, s) for p, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: frame_features(job[0], scheme, chain, job[1]), jobs))


def featurize(manifest, scheme: str, attack=None, out=None, threads: int = 1) -> list:
    """Featurize a whole manifest and, when `out` is given, write a feature store.

    six_comat writes ``<out>/NNNNNN.cmt`` tensor files plus ``index.json``.
    crspam writes a CSV (``id,label,f0..f1371``); if `out` is a directory
    the CSV goes to ``<out>/features.csv`` next to ``index.json``.
    Salts for seeded attacks are the manifest indices.
    """
    chain = AttackChain.parse(attack) if attack is not None else None
    paths = [manifest.resolve(e) for e in manifest.entries]
    feats = featurize_paths(paths, scheme, chain, range(len(paths)), threads)
    if out is not None:
        write_store(manifest, scheme, feats, out, chain)
    return feats


def _index(manifest, scheme, chain, files) -> dict:
    return {
        "scheme": scheme,
        "attack": chain.to_json() if chain is not None else None,
        "entries": [
            {"id": e.path, "label": e.label, "file": f} for e, f in zip(manifest.entries, files)
        ],
    }


def write_store(manifest, scheme: str, feats, out, chain=None) -> None:
    out = Path(out)
    try:
        if scheme == "six_comat":
            out.mkdir(parents=True, exist_ok=True)
            files = []
            for i, (entry, data) in enumerate(zip(manifest.entries, feats)):
                name = f"{i:06d}.cmt"
                save_tensor(CoMatTensor(np.asarray(data, dtype=np.float64), entry.path), out / name)
                files.append(name)
            (out / "index.json").write_text(json.dumps(_index(manifest, scheme, chain, files), indent=1) + "\n")
            return
        if out.suffix.lower() == ".csv":
            csv_path = out
            out.parent.mkdir(parents=True, exist_ok=True)
        else:
            out.mkdir(parents=True, exist_ok=True)
            csv_path = out / "features.csv"
            index = _index(manifest, scheme, chain, ["features.csv"] * len(feats))
            (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label"] + [f"f{i}" for i in range(CRSPAM_DIM)])
            for entry, vec in zip(manifest.entries, feats):
                writer.writerow([entry.path, entry.label] + [repr(float(v)) for v in vec])
    except OSError as exc:
        raise IoFailure(f"cannot write feature store {out}: {exc}") from exc


def read_csv_store(path):
    """Return ``(ids, labels, matrix)`` from a CRSPAM CSV store."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["id", "label"] or len(header) != 2 + CRSPAM_DIM:
        raise BadParams(f"{path}: not a CRSPAM1372 feature CSV")
    ids = [r[0] for r in body]
    labels = [r[1] for r in body]
    X = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), CRSPAM_DIM)
    return ids, labels, X


def read_tensor_store(directory):
    """Return ``(index, tensors)`` from a six co-mat store directory."""
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    tensors = [load_tensor(directory / e["file"]) for e in index["entries"]]
    return index, tensors
