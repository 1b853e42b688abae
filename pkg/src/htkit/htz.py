"""Zip-archived format and checkpoint serialization (.htz).

A format archive holds ``manifest.json`` with the fixed fields ``kind``,
``dims``, ``tree``, ``ranks``, ``factors`` plus one HTK1 blob per stored
factor. Model checkpoints reuse the same container with a parameter list
instead of a factor tree.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError
from .ht import HTFormat
from .layers import factor_arrays, transfer_id
from .tensor_io import from_bytes, to_bytes
from .tree import tree_from_jsonable, tree_to_jsonable
from .tt import TTFormat

__all__ = ["save_format", "load_format", "save_checkpoint", "load_checkpoint"]


def save_format(fmt: HTFormat | TTFormat, path) -> None:
    arrays = factor_arrays(fmt)
    if isinstance(fmt, HTFormat):
        manifest = {
            "kind": "ht",
            "dims": list(fmt.dims),
            "tree": tree_to_jsonable(fmt.tree),
            "ranks": [n.rank for n in fmt.tree.nodes()],
            "factors": [
                {"id": name, "file": f"{name}.htk"} for name in sorted(arrays)
            ],
        }
    else:
        manifest = {
            "kind": "tt",
            "dims": list(fmt.dims),
            "tree": None,
            "ranks": list(fmt.ranks),
            "factors": [
                {"id": f"G{k + 1}", "file": f"G{k + 1}.htk"}
                for k in range(fmt.order)
            ],
        }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for entry in manifest["factors"]:
            zf.writestr(entry["file"], to_bytes(arrays[entry["id"]]))


def load_format(path) -> HTFormat | TTFormat:
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise ContainerFormatError(f"{path} has no manifest.json") from None
        blobs = {
            entry["id"]: from_bytes(zf.read(entry["file"]))
            for entry in manifest["factors"]
        }
    kind = manifest.get("kind")
    if kind == "tt":
        return TTFormat([blobs[f"G{k + 1}"] for k in range(len(manifest["dims"]))])
    if kind == "ht":
        tree = tree_from_jsonable(manifest["tree"])
        leaves = {
            node.indices[0]: blobs[f"U{node.indices[0] + 1}"]
            for node in tree.leaves()
        }
        transfers = {
            node.indices: blobs[transfer_id(node.indices)]
            for node in tree.internal_nodes()
        }
        return HTFormat(tree, leaves, transfers)
    raise ContainerFormatError(f"{path}: unknown format kind {kind!r}")


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None):
    manifest = {
        "kind": "checkpoint",
        "params": sorted(params),
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name in manifest["params"]:
            zf.writestr(f"{name}.htk", to_bytes(params[name]))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("kind") != "checkpoint":
            raise ContainerFormatError(f"{path} is not a checkpoint bundle")
        params = {
            name: from_bytes(zf.read(f"{name}.htk"))
            for name in manifest["params"]
        }
    return params, manifest.get("meta", {})
