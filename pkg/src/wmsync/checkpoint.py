"""Versioned checkpoint container for :class:`TemplateModel`.

The file is a zip archive with one ``.npy`` entry per named tensor and a
``meta.json`` entry holding the format version, the network configuration,
the layout key and the training metadata. Entry order and timestamps are
fixed, so saving the same model twice gives identical bytes.
"""

import io
import json
import zipfile

import numpy as np
import torch

from . import nets
from .io_utils import atomic_write_bytes, dumps_json

FORMAT = "wmsync-template"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_NETS = ("generator", "extractor", "matcher")


def _entry(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def to_bytes(model: nets.TemplateModel) -> bytes:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config_record(),
        "dtype": str(model.dtype).replace("torch.", ""),
        "train_meta": model.train_meta,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _entry(zf, "meta.json", dumps_json(meta).encode("utf-8"))
        for net_name in _NETS:
            state = getattr(model, net_name).state_dict()
            for key in sorted(state):
                arr = io.BytesIO()
                np.save(arr, state[key].detach().cpu().numpy(), allow_pickle=False)
                _entry(zf, f"{net_name}/{key}.npy", arr.getvalue())
    return buf.getvalue()


def save_model(model: nets.TemplateModel, path) -> None:
    atomic_write_bytes(path, to_bytes(model))


def from_bytes(data: bytes) -> nets.TemplateModel:
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise ValueError("not a checkpoint file") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise ValueError("checkpoint has no meta.json") from None
        if meta.get("format") != FORMAT:
            raise ValueError("unknown checkpoint format")
        if meta.get("version") != VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        conf = dict(meta["config"])
        key = conf.pop("layout_key")
        lam = conf.pop("lam")
        for name in ("gen_channels", "ext_channels", "head_channels"):
            conf[name] = tuple(conf[name])
        cfg = nets.NetConfig(**conf)
        dtype = getattr(torch, meta.get("dtype", "float32"))
        model = nets.TemplateModel.create(key, cfg, lam=lam, dtype=dtype)
        for net_name in _NETS:
            net = getattr(model, net_name)
            state = {}
            for k in net.state_dict():
                raw = zf.read(f"{net_name}/{k}.npy")
                state[k] = torch.from_numpy(np.load(io.BytesIO(raw), allow_pickle=False))
            net.load_state_dict(state)
        model.train_meta = meta.get("train_meta", {})
    return model


def load_model(path) -> nets.TemplateModel:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
