"""Model checkpoints: a zip container with ``meta.json`` and one ``.npy`` per
weight tensor. Entry timestamps are fixed so identical models produce
identical bytes; files are written to a temporary name and renamed."""
import io
import json
import os
import zipfile

import numpy as np

from .errors import ValidationError
from .slearner import ModelConfig, ModelParams

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, params, meta=None):
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    meta["model_config"] = params.config.to_dict()
    meta["tensors"] = list(params.arrays)
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w") as zf:
        _entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1))
        for name, arr in params.arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            _entry(zf, f"tensors/{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(ModelParams, meta)``."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {meta.get('format_version')}")
        cfg = ModelConfig(**meta["model_config"])
        arrays = {}
        for name in meta["tensors"]:
            with zf.open(f"tensors/{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return ModelParams(cfg, arrays), meta
