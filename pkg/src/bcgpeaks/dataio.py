"""Dataset layout on disk, chronological splitting and checkpoints.

Dataset directory::

    manifest.json                 subjects, epoch file references, fs, epoch length
    <subject>/epoch_00000.bin     header + float64 little-endian samples
    <subject>/epoch_00000.peaks   one integer sample index per line

Binary header (little-endian): magic ``b"BCGE"``, uint32 subject-id byte
length, subject-id UTF-8 bytes, uint64 epoch index, float64 fs, uint64 T.

Checkpoints are zip archives (fixed timestamps, so identical content
gives identical bytes) holding ``meta.json`` and one ``.npy`` per
parameter keyed by module path.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidInputError, PeakAnnotation, SignalEpoch

MAGIC = b"BCGE"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
CHECKPOINT_FORMAT = "bcgpeaks-checkpoint"


class DatasetError(ValueError):
    """Raised for missing, malformed or inconsistent dataset files."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EpochRef:
    subject_id: str
    epoch_index: int
    signal: str
    annotation: str


@dataclass
class DatasetManifest:
    fs: float
    epoch_seconds: float
    subjects: dict[str, list[EpochRef]]

    @property
    def n_epochs(self) -> int:
        return sum(len(v) for v in self.subjects.values())

    def refs(self) -> list[EpochRef]:
        return [r for sid in self.subjects for r in self.subjects[sid]]


@dataclass
class Split:
    train: list[EpochRef]
    test: list[EpochRef]


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_json(path, obj):
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def encode_epoch(epoch: SignalEpoch) -> bytes:
    sid = epoch.subject_id.encode("utf-8")
    header = MAGIC + struct.pack("<I", len(sid)) + sid + struct.pack(
        "<QdQ", epoch.epoch_index, float(epoch.fs), epoch.n_samples)
    return header + epoch.samples.astype("<f8").tobytes()


def decode_epoch(blob: bytes, where: str = "<bytes>") -> SignalEpoch:
    try:
        if blob[:4] != MAGIC:
            raise DatasetError(f"{where}: bad magic")
        (nid,) = struct.unpack_from("<I", blob, 4)
        sid = blob[8 : 8 + nid].decode("utf-8")
        off = 8 + nid
        idx, fs, n = struct.unpack_from("<QdQ", blob, off)
        off += 24
        payload = blob[off:]
        if len(payload) != 8 * n:
            raise DatasetError(f"{where}: expected {n} samples, found {len(payload) // 8}")
        samples = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return SignalEpoch(samples, fs, sid, int(idx))
    except DatasetError:
        raise
    except (struct.error, UnicodeDecodeError, InvalidInputError) as exc:
        raise DatasetError(f"{where}: malformed epoch file ({exc})") from exc


def encode_peaks(ann: PeakAnnotation) -> bytes:
    return "".join(f"{int(p)}\n" for p in ann.peaks).encode()


def _epoch_stem(i: int) -> str:
    return f"epoch_{i:05d}"


def save_dataset(data, path, epoch_seconds: float | None = None) -> DatasetManifest:
    """Write ``(SignalEpoch, PeakAnnotation)`` pairs under ``path``.

    Epochs are grouped by subject and must share fs and length.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    data = list(data)
    if not data:
        raise DatasetError("no epochs to save")
    fs = data[0][0].fs
    n0 = data[0][0].n_samples
    subjects: dict[str, list[EpochRef]] = {}
    for epoch, ann in data:
        if epoch.fs != fs or epoch.n_samples != n0:
            raise DatasetError("all epochs must share fs and length")
        sid = epoch.subject_id
        sub = root / sid
        sub.mkdir(exist_ok=True)
        stem = _epoch_stem(epoch.epoch_index)
        ref = EpochRef(sid, epoch.epoch_index, f"{sid}/{stem}.bin", f"{sid}/{stem}.peaks")
        _atomic_write(root / ref.signal, encode_epoch(epoch))
        _atomic_write(root / ref.annotation, encode_peaks(ann))
        subjects.setdefault(sid, []).append(ref)
    for refs in subjects.values():
        refs.sort(key=lambda r: r.epoch_index)
    manifest = DatasetManifest(fs, epoch_seconds if epoch_seconds is not None else n0 / fs, subjects)
    write_json(root / MANIFEST_NAME, manifest_to_dict(manifest))
    return manifest


def manifest_to_dict(m: DatasetManifest) -> dict:
    return {
        "format": "bcgpeaks-dataset",
        "version": FORMAT_VERSION,
        "fs": m.fs,
        "epoch_seconds": m.epoch_seconds,
        "subjects": [
            {
                "subject_id": sid,
                "epochs": [
                    {"epoch_index": r.epoch_index, "signal": r.signal, "annotation": r.annotation}
                    for r in refs
                ],
            }
            for sid, refs in m.subjects.items()
        ],
    }


def load_manifest(path) -> DatasetManifest:
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    try:
        raw = json.loads(mpath.read_text())
        subjects = {}
        for s in raw["subjects"]:
            sid = str(s["subject_id"])
            refs = [EpochRef(sid, int(e["epoch_index"]), e["signal"], e["annotation"])
                    for e in s["epochs"]]
            if [r.epoch_index for r in refs] != list(range(len(refs))):
                raise DatasetError(f"subject {sid}: epoch indices must run 0..n-1 in order")
            subjects[sid] = refs
        return DatasetManifest(float(raw["fs"]), float(raw["epoch_seconds"]), subjects)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"{mpath}: malformed manifest ({exc})") from exc


def load_epoch(root, ref: EpochRef, manifest: DatasetManifest) -> tuple[SignalEpoch, PeakAnnotation]:
    root = Path(root)
    sig_path = root / ref.signal
    ann_path = root / ref.annotation
    name = f"{ref.subject_id}/epoch {ref.epoch_index}"
    for p in (sig_path, ann_path):
        if not p.is_file():
            raise DatasetError(f"{name}: missing file {p}")
    epoch = decode_epoch(sig_path.read_bytes(), str(sig_path))
    if epoch.fs != manifest.fs:
        raise DatasetError(f"{name}: fs {epoch.fs} differs from manifest fs {manifest.fs}")
    if epoch.subject_id != ref.subject_id or epoch.epoch_index != ref.epoch_index:
        raise DatasetError(f"{name}: header does not match manifest entry")
    try:
        lines = [ln.strip() for ln in ann_path.read_text().splitlines() if ln.strip()]
        peaks = np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"{name}: malformed annotation file ({exc})") from exc
    try:
        ann = PeakAnnotation(peaks, epoch.n_samples)
    except InvalidInputError as exc:
        raise DatasetError(f"{name}: {exc}") from exc
    return epoch, ann


def load_dataset(path, refs=None):
    """Return ``(manifest, [(SignalEpoch, PeakAnnotation), ...])``.

    ``refs`` restricts loading to a subset (e.g. one side of a split).
    """
    manifest = load_manifest(path)
    refs = manifest.refs() if refs is None else refs
    data = [load_epoch(path, r, manifest) for r in refs]
    lengths = {e.n_samples for e, _ in data}
    if len(lengths) > 1:
        raise DatasetError(f"epochs have differing lengths {sorted(lengths)}")
    return manifest, data


def chronological_split(manifest: DatasetManifest, train_fraction: float = 0.8) -> Split:
    """Per subject, the first ceil(fraction * n) epochs train, the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError("train_fraction must lie in (0, 1)")
    train, test = [], []
    for sid, refs in manifest.subjects.items():
        n = len(refs)
        if n < 2:
            raise InvalidInputError(f"subject {sid} has {n} epoch(s); need at least 2")
        # guard against 0.7 * 10 = 7.000000000000001
        n_train = min(n, math.ceil(train_fraction * n - 1e-9))
        ordered = sorted(refs, key=lambda r: r.epoch_index)
        train.extend(ordered[:n_train])
        test.extend(ordered[n_train:])
    return Split(train, test)


# -- checkpoints ---------------------------------------------------------------------
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_entry(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model, train_config: dict | None = None, history=None,
                    extra: dict | None = None):
    from .models import config_to_dict

    buf = io.BytesIO()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "architecture": model.kind,
        "model_config": config_to_dict(model.cfg),
        "train_config": train_config or {},
        "history": list(history or []),
        "parameters": list(model.named_parameters()),
    }
    if extra:
        meta.update(extra)
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_entry(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for name, p in model.named_parameters().items():
            arr = io.BytesIO()
            np.lib.format.write_array(arr, np.ascontiguousarray(p.data, dtype="<f8"),
                                      allow_pickle=False)
            _zip_entry(zf, f"params/{name}.npy", arr.getvalue())
    _atomic_write(Path(path), buf.getvalue())


def load_checkpoint(path, expect_architecture: str | None = None):
    """Return ``(model, meta)``; raises :class:`CheckpointError` on mismatch."""
    from .models import build_model, config_from_dict

    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a bcgpeaks checkpoint")
            arch = meta["architecture"]
            if expect_architecture is not None and arch != expect_architecture:
                raise CheckpointError(
                    f"{path}: architecture {arch!r}, expected {expect_architecture!r}")
            cfg = config_from_dict(meta["model_config"])
            if cfg.kind != arch:
                raise CheckpointError(f"{path}: config kind {cfg.kind!r} != architecture {arch!r}")
            state = {}
            for name in meta["parameters"]:
                with zf.open(f"params/{name}.npy") as fh:
                    state[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    model = build_model(cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not fit architecture ({exc})") from exc
    return model, meta
