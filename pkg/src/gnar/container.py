"""Trajectory container files.

Layout (integers little-endian, see docs/formats.md)::

    magic    8 bytes  b"GNARTRJ1"
    spec_len u32, spec JSON (utf-8)
    count    u32
    count x trajectory:
        n u32, T u32, num_arrays u32
        num_arrays x array:
            group u8 (0 input, 1 hint, 2 output)
            name_len u32, name utf-8
            ndim u32, dims u64 * ndim
            payload float64 little-endian, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .specs import FeatureSpec, ProblemSpec, Stage, Trajectory

MAGIC = b"GNARTRJ1"
_GROUPS = (Stage.INPUT, Stage.HINT, Stage.OUTPUT)


class ContainerError(ValueError):
    pass


def spec_to_dict(spec: ProblemSpec) -> dict:
    return {
        "algorithm_id": spec.algorithm_id,
        "family": spec.family.value,
        "features": [
            {
                "name": f.name,
                "stage": f.stage.value,
                "location": f.location.value,
                "ftype": f.ftype.value,
                "num_categories": f.num_categories,
                "permutation": f.permutation,
            }
            for f in spec.features
        ],
    }


def spec_from_dict(d: dict) -> ProblemSpec:
    return ProblemSpec(d["algorithm_id"], tuple(FeatureSpec(**f) for f in d["features"]), d["family"])


def encode(spec: ProblemSpec, trajectories: Iterable[Trajectory]) -> bytes:
    trajectories = list(trajectories)
    spec_bytes = json.dumps(spec_to_dict(spec), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(spec_bytes)), spec_bytes, struct.pack("<I", len(trajectories))]
    for tr in trajectories:
        arrays = [(gi, name, arr) for gi, stage in enumerate(_GROUPS) for name, arr in sorted(tr.group(stage).items())]
        parts.append(struct.pack("<III", tr.n, tr.T, len(arrays)))
        for gi, name, arr in arrays:
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<BI", gi, len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[ProblemSpec, list[Trajectory]]:
    if buf[:8] != MAGIC:
        raise ContainerError("not a trajectory container (bad magic)")
    try:
        pos = 8
        (slen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        spec = spec_from_dict(json.loads(buf[pos:pos + slen].decode("utf-8")))
        pos += slen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out = []
        for _ in range(count):
            n, T, k = struct.unpack_from("<III", buf, pos)
            pos += 12
            groups: list[dict] = [{}, {}, {}]
            for _ in range(k):
                gi, nlen = struct.unpack_from("<BI", buf, pos)
                pos += 5
                name = buf[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (ndim,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
                pos += 8 * ndim
                nbytes = int(np.prod(shape, dtype=np.int64)) * 8
                if pos + nbytes > len(buf):
                    raise ContainerError(f"array {name!r} truncated")
                groups[gi][name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape)
                pos += nbytes
            out.append(Trajectory(n, T, *groups))
    except (struct.error, IndexError, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt container: {exc}") from exc
    if pos != len(buf):
        raise ContainerError("trailing bytes after last trajectory")
    return spec, out


def write_container(path, spec: ProblemSpec, trajectories: Iterable[Trajectory]) -> None:
    Path(path).write_bytes(encode(spec, trajectories))


def read_container(path) -> tuple[ProblemSpec, list[Trajectory]]:
    return decode(Path(path).read_bytes())
