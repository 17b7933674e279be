"""On-disk formats: the OMAT tensor container, JSON/CSV tables, file digests.

Tensor container layout (all integers little-endian)::

    b"OMAT"                     magic
    u32   version               currently 1
    u32   count                 number of named arrays
    repeated count times:
      u32  name_len
      u8[] name                 UTF-8
      u32  rank
      u64[rank] extents
      f64[prod(extents)]        C order, little-endian

Generators and detectors are stored as one container of their parameters
plus a JSON sidecar with the structural metadata needed to rebuild them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .. import tensor as T
from ..detector.model import Detector, PreprocessSpec
from ..diffusion.decoders import decoder_matrix
from ..diffusion.generator import Generator
from ..diffusion.schedule import make_schedule
from ..omat.lora import LoraAdapter

MAGIC = b"OMAT"
VERSION = 1


class FormatError(ValueError):
    pass


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def decode_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not an OMAT container (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError("truncated OMAT container")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise FormatError(f"unsupported OMAT version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(blob):
            raise FormatError("truncated OMAT container")
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        if pos + 8 * size > len(blob):
            raise FormatError("truncated OMAT container")
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(blob):
        raise FormatError("trailing bytes after OMAT container")
    return out


def save_arrays(path: Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def load_arrays(path: Path) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# JSON / CSV


def _clean(obj):
    """Replace non-finite floats with None so reports never carry NaN."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def _cell(v) -> str:
    v = _clean(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: Iterable[Mapping], columns: list[str] | None = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# models


def save_generator(stem: Path, gen: Generator) -> None:
    stem = Path(stem)
    save_arrays(stem.with_suffix(".omat"), {k: v.data for k, v in gen.params.items()})
    meta = {
        "generator_id": gen.generator_id,
        "kind": gen.kind,
        "widths": list(gen.widths),
        "decoder_kind": gen.decoder_kind,
        "inference_steps": gen.inference_steps,
        "n_classes": gen.n_classes,
        "latent_shape": list(gen.latent_shape),
        "image_shape": list(gen.image_shape),
        "schedule": None if gen.schedule is None else {"kind": gen.schedule.kind, "T_train": gen.schedule.T_train},
    }
    write_json(stem.with_suffix(".json"), meta)


def load_generator(stem: Path) -> Generator:
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    arrays = load_arrays(stem.with_suffix(".omat"))
    sched = meta["schedule"]
    return Generator(
        generator_id=meta["generator_id"],
        params={k: T.Tensor(v) for k, v in arrays.items()},
        widths=tuple(meta["widths"]),
        schedule=None if sched is None else make_schedule(sched["kind"], sched["T_train"]),
        decoder=decoder_matrix(meta["decoder_kind"]),
        decoder_kind=meta["decoder_kind"],
        inference_steps=meta["inference_steps"],
        kind=meta["kind"],
        n_classes=meta["n_classes"],
        latent_shape=tuple(meta["latent_shape"]),
        image_shape=tuple(meta["image_shape"]),
    )


def save_detector(stem: Path, d: Detector, extra: Mapping | None = None) -> None:
    stem = Path(stem)
    arrays = {k: v.data for k, v in d.params.items()}
    adapters = {}
    for name, a in d.adapters.items():
        arrays[f"lora.{name}.A"] = a.A.data
        arrays[f"lora.{name}.B"] = a.B.data
        adapters[name] = {"rank": a.rank, "alpha": a.alpha, "dropout": a.dropout}
    save_arrays(stem.with_suffix(".omat"), arrays)
    p = d.preprocess
    meta = {
        "detector_id": d.detector_id,
        "archetype": d.archetype,
        "widths": list(d.widths),
        "image_shape": list(d.image_shape),
        "preprocess": {"levels": p.levels, "mean": list(p.mean), "std": list(p.std), "resize": p.resize, "quantize": p.quantize},
        "adapters": adapters,
    }
    if extra:
        meta.update(extra)
    write_json(stem.with_suffix(".json"), meta)


def load_detector(stem: Path) -> Detector:
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    arrays = load_arrays(stem.with_suffix(".omat"))
    pp = meta["preprocess"]
    adapters = {
        name: LoraAdapter(
            name, a["rank"], a["alpha"], a["dropout"],
            T.Tensor(arrays.pop(f"lora.{name}.A")), T.Tensor(arrays.pop(f"lora.{name}.B")),
        )
        for name, a in meta["adapters"].items()
    }
    return Detector(
        meta["detector_id"],
        meta["archetype"],
        {k: T.Tensor(v) for k, v in arrays.items()},
        tuple(meta["widths"]),
        PreprocessSpec(pp["levels"], tuple(pp["mean"]), tuple(pp["std"]), pp["resize"], pp["quantize"]),
        adapters,
        tuple(meta["image_shape"]),
    )
