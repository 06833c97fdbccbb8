"""Model files and receptive-field images.

A model file is UTF-8 JSON.  Arrays are stored as base64 of little-endian
float64 bytes so they round-trip bit for bit, and a SHA-256 over the
canonical JSON of everything else guards against corruption.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptError, DimError, FormatError, VersionError
from .rbm import RbmParams
from .stability import LassoModel

FORMAT_VERSION = 1
MODEL_KINDS = ("rbm", "nrbm", "lasso", "pipeline")


@dataclass
class ModelFile:
    model_kind: str
    rbm: Optional[RbmParams] = None
    lasso: Optional[LassoModel] = None
    train_config: dict = field(default_factory=dict)
    master_seed: Optional[int] = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise FormatError(f"unknown model kind {self.model_kind!r}")
        needs_rbm = self.model_kind != "lasso"
        needs_lasso = self.model_kind in ("lasso", "pipeline")
        if needs_rbm and self.rbm is None:
            raise FormatError(f"{self.model_kind} model needs RBM parameters")
        if needs_lasso and self.lasso is None:
            raise FormatError(f"{self.model_kind} model needs lasso parameters")
        if self.model_kind == "pipeline" and self.lasso.weights.size != self.rbm.n_hidden:
            raise DimError("pipeline lasso width must equal the hidden count")

    @property
    def dims(self) -> tuple:
        if self.rbm is not None:
            return (self.rbm.n_visible, self.rbm.n_hidden)
        return (self.lasso.weights.size, 0)


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(obj) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptError(f"bad array record: {exc}") from None
    if len(raw) != 8 * math.prod(shape):
        raise CorruptError("array payload length does not match its shape")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_to_document(model: ModelFile) -> dict:
    params = {}
    if model.rbm is not None:
        params["a"] = _encode(model.rbm.a)
        params["b"] = _encode(model.rbm.b)
        params["W"] = _encode(model.rbm.W)
    if model.lasso is not None:
        params["w_hat"] = _encode(model.lasso.weights)
        params["bias"] = _encode(np.array([model.lasso.bias]))
        params["beta"] = _encode(np.array([model.lasso.beta]))
    doc = {
        "header": {
            "format_version": model.format_version,
            "model_kind": model.model_kind,
            "dims": list(model.dims),
            "train_config": model.train_config,
            "master_seed": model.master_seed,
        },
        "parameters": params,
    }
    doc["sha256"] = hashlib.sha256(_canonical(doc)).hexdigest()
    return doc


def save_model(model: ModelFile, path) -> None:
    doc = model_to_document(model)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> ModelFile:
    text = Path(path).read_bytes()
    try:
        doc = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptError(f"{path}: unreadable model file ({exc})") from None
    if not isinstance(doc, dict) or "header" not in doc or "parameters" not in doc:
        raise CorruptError(f"{path}: missing header or parameters")
    stored = doc.pop("sha256", None)
    if stored != hashlib.sha256(_canonical(doc)).hexdigest():
        raise CorruptError(f"{path}: checksum mismatch")
    header, params = doc["header"], doc["parameters"]
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    kind = header.get("model_kind")
    if kind not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    rbm = lasso = None
    if "W" in params:
        rbm = RbmParams(_decode(params["a"]), _decode(params["b"]), _decode(params["W"]))
    if "w_hat" in params:
        lasso = LassoModel(
            _decode(params["w_hat"]),
            float(_decode(params["bias"])[0]),
            float(_decode(params["beta"])[0]),
        )
    model = ModelFile(kind, rbm, lasso, header.get("train_config") or {}, header.get("master_seed"))
    if list(model.dims) != list(header.get("dims", [])):
        raise CorruptError(f"{path}: header dims disagree with parameters")
    return model


# ----------------------------------------------------------------------
# filter images


def filter_tiles(params: RbmParams, width: int, height: int) -> np.ndarray:
    """K x height x width uint8 tiles; larger weight renders darker.

    Each tile is min-max scaled on its own; a constant column is mid-gray.
    """
    W = params.W if isinstance(params, RbmParams) else np.asarray(params, dtype=np.float64)
    if width * height != W.shape[0]:
        raise DimError(f"{width}x{height} tiles need N={width * height}, model has N={W.shape[0]}")
    tiles = np.empty((W.shape[1], height, width), dtype=np.uint8)
    for k in range(W.shape[1]):
        col = W[:, k]
        lo, hi = col.min(), col.max()
        if hi == lo:
            tiles[k] = 128
            continue
        scaled = (col - lo) / (hi - lo)
        tiles[k] = np.rint(255.0 * (1.0 - scaled)).astype(np.uint8).reshape(height, width)
    return tiles


def tile_grid(tiles: np.ndarray, grid_cols: int, pad: int = 1, fill: int = 255) -> np.ndarray:
    K, h, w = tiles.shape
    grid_cols = max(1, min(grid_cols, K))
    grid_rows = -(-K // grid_cols)
    out = np.full((grid_rows * (h + pad) + pad, grid_cols * (w + pad) + pad), fill, dtype=np.uint8)
    for k in range(K):
        r, c = divmod(k, grid_cols)
        y0, x0 = pad + r * (h + pad), pad + c * (w + pad)
        out[y0:y0 + h, x0:x0 + w] = tiles[k]
    return out


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    data = parts[4]
    if len(data) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def export_filters(params: RbmParams, width: int, height: int, grid_cols: int, path, pad: int = 1) -> np.ndarray:
    """Render every hidden unit's weight column as a tile and save a PGM grid."""
    image = tile_grid(filter_tiles(params, width, height), grid_cols, pad)
    write_pgm(path, image)
    return image
