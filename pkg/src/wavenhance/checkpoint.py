"""Checkpoint directories: ``metadata.json`` plus one ``.npy`` blob per named tensor.

Tensor blobs live under ``tensors/`` and are named ``<namespace>.<param>.npy``
for parameters/buffers and ``optim.<namespace>.<param>.<slot>.npy`` for
optimizer moments. Namespaces are ``generator`` and the four discriminator
names.
"""

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError

FORMAT_VERSION = 1
METADATA = "metadata.json"


def _blob_name(*parts):
    return ".".join(parts) + ".npy"


def save_checkpoint(path, modules, optimizers=None, metadata=None):
    """Write ``modules`` (namespace -> nn.Module) and their Adam states atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent))
    try:
        tdir = tmp / "tensors"
        tdir.mkdir()
        index = {}
        for ns, module in modules.items():
            names = []
            for name, t in module.state_dict().items():
                np.save(tdir / _blob_name(ns, name), t.detach().cpu().numpy())
                names.append(name)
            index[ns] = names
        optim_index = {}
        for ns, opt in (optimizers or {}).items():
            names = dict(modules[ns].named_parameters())
            ids = {id(p): n for n, p in names.items()}
            slots = {}
            for p, state in opt.state.items():
                pname = ids[id(p)]
                for slot, value in state.items():
                    np.save(tdir / _blob_name("optim", ns, pname, slot), torch.as_tensor(value).cpu().numpy())
                slots[pname] = sorted(state)
            optim_index[ns] = {
                "slots": slots,
                "lr": [g["lr"] for g in opt.param_groups],
            }
        meta = dict(metadata or {})
        meta.update(format_version=FORMAT_VERSION, namespaces=index, optimizers=optim_index)
        with open(tmp / METADATA, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_metadata(path):
    meta_path = Path(path) / METADATA
    if not meta_path.exists():
        raise ConfigurationError(f"{path} is not a checkpoint (no {METADATA})")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{meta_path} is corrupt: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"{path}: unsupported checkpoint format {meta.get('format_version')!r} (expected {FORMAT_VERSION})"
        )
    return meta


def _load_blob(path):
    try:
        return torch.from_numpy(np.load(path))
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read tensor blob {path}: {exc}") from None


def load_modules(path, modules, optimizers=None, expected_config=None):
    """Restore ``modules`` (and optimizers) in place; returns the metadata dict.

    ``expected_config`` (a plain dict) must equal the stored config echo.
    """
    path = Path(path)
    meta = read_metadata(path)
    if expected_config is not None and meta.get("config") != expected_config:
        stored = meta.get("config") or {}
        diffs = sorted(k for k in set(stored) | set(expected_config) if stored.get(k) != expected_config.get(k))
        raise ConfigurationError(f"{path}: checkpoint config differs from the requested config in {diffs}")
    tdir = path / "tensors"
    for ns, module in modules.items():
        if ns not in meta["namespaces"]:
            raise ConfigurationError(f"{path}: checkpoint has no {ns!r} parameters")
        own = module.state_dict()
        stored = set(meta["namespaces"][ns])
        if stored != set(own):
            raise ConfigurationError(
                f"{path}: {ns} parameter names differ (missing {sorted(set(own) - stored)[:5]}, "
                f"unexpected {sorted(stored - set(own))[:5]})"
            )
        state = {}
        for name, ref in own.items():
            t = _load_blob(tdir / _blob_name(ns, name))
            if tuple(t.shape) != tuple(ref.shape):
                raise ConfigurationError(f"{path}: {ns}.{name} has shape {tuple(t.shape)}, expected {tuple(ref.shape)}")
            state[name] = t.to(ref.dtype)
        module.load_state_dict(state)
    for ns, opt in (optimizers or {}).items():
        info = meta["optimizers"].get(ns)
        if info is None:
            raise ConfigurationError(f"{path}: no optimizer state for {ns!r}")
        params = dict(modules[ns].named_parameters())
        opt.state.clear()
        for pname, slots in info["slots"].items():
            p = params[pname]
            opt.state[p] = {s: _load_blob(tdir / _blob_name("optim", ns, pname, s)) for s in slots}
        for group, lr in zip(opt.param_groups, info["lr"]):
            group["lr"] = lr
    return meta
