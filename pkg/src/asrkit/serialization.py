"""Checkpoint directory format.

A checkpoint directory holds:
  index.json   — {"arrays": {name: {"shape", "dtype", "offset"}}} with
                 names sorted, offsets into params.bin
  params.bin   — the arrays' raw little-endian bytes, concatenated in
                 index order
  config.json  — model/build configuration (written by the caller)
  train_state.json — optional optimizer/progress state (written by the
                 caller)

Round-tripping an array dict through save/load is bit-exact.
"""

import json
import os

import numpy as np

from .errors import CheckpointError

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i8": np.dtype("<i8")}

INDEX_FILE = "index.json"
PARAMS_FILE = "params.bin"
CONFIG_FILE = "config.json"
STATE_FILE = "train_state.json"


def save_arrays(directory: str, arrays: dict[str, np.ndarray]) -> None:
    """Write index.json + params.bin for a name -> array mapping."""
    os.makedirs(directory, exist_ok=True)
    index = {}
    offset = 0
    names = sorted(arrays)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        elif arr.dtype == np.int64:
            code = "<i8"
        else:
            raise CheckpointError(
                f"unsupported dtype {arr.dtype} for array {name!r}")
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": code,
                       "offset": offset}
        offset += len(raw)
        blobs.append(raw)
    with open(os.path.join(directory, PARAMS_FILE), "wb") as fh:
        for raw in blobs:
            fh.write(raw)
    with open(os.path.join(directory, INDEX_FILE), "w", encoding="utf-8") as fh:
        json.dump({"arrays": index}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_arrays(directory: str) -> dict[str, np.ndarray]:
    index_path = os.path.join(directory, INDEX_FILE)
    params_path = os.path.join(directory, PARAMS_FILE)
    if not os.path.isfile(index_path) or not os.path.isfile(params_path):
        raise CheckpointError(
            f"{directory!r} is not a checkpoint directory "
            f"(missing {INDEX_FILE} or {PARAMS_FILE})")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)["arrays"]
    with open(params_path, "rb") as fh:
        blob = fh.read()
    out = {}
    for name, meta in index.items():
        dtype = _DTYPES.get(meta["dtype"])
        if dtype is None:
            raise CheckpointError(
                f"unknown dtype {meta['dtype']!r} for array {name!r}")
        shape = tuple(meta["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = meta["offset"]
        end = start + count * dtype.itemsize
        if end > len(blob):
            raise CheckpointError(
                f"array {name!r} extends past the end of {PARAMS_FILE}")
        out[name] = np.frombuffer(
            blob[start:end], dtype=dtype).reshape(shape).copy()
    return out


def save_json(directory: str, filename: str, payload: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, filename), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(directory: str, filename: str) -> dict:
    path = os.path.join(directory, filename)
    if not os.path.isfile(path):
        raise CheckpointError(f"missing {filename} in {directory!r}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
