"""Checkpoint container: a ``.npz`` of named arrays mirroring the model's
parameter/buffer tree, optional optimizer momentum buffers under
``optim.momentum.*``, and a JSON metadata string under ``__meta__``.

Loading is strict by default: any missing or unexpected model array aborts
with the full name lists unless ``partial=True``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

META_KEY = "__meta__"
OPTIM_PREFIX = "optim.momentum."


class CheckpointError(RuntimeError):
    """Checkpoint file does not match the model it is loaded into."""


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> Path:
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    if optimizer is not None:
        param_names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                buf = optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None and id(p) in param_names:
                    arrays[OPTIM_PREFIX + param_names[id(p)]] = buf.detach().cpu().numpy()
    arrays[META_KEY] = np.array(json.dumps(meta or {}))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, model, optimizer=None, partial: bool = False) -> dict:
    """Load arrays into the model (and momentum buffers into the optimizer);
    returns the stored metadata dict."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}

    meta = json.loads(str(arrays.pop(META_KEY))) if META_KEY in arrays else {}
    optim_arrays = {
        k[len(OPTIM_PREFIX):]: arrays.pop(k) for k in list(arrays) if k.startswith(OPTIM_PREFIX)
    }

    state = model.state_dict()
    missing = sorted(set(state) - set(arrays))
    unexpected = sorted(set(arrays) - set(state))
    if (missing or unexpected) and not partial:
        raise CheckpointError(
            f"checkpoint/model mismatch: missing={missing or 'none'} "
            f"unexpected={unexpected or 'none'} (use partial load to override)"
        )
    for name in set(state) & set(arrays):
        arr = arrays[name]
        if tuple(state[name].shape) != tuple(arr.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: model {tuple(state[name].shape)} "
                f"vs file {tuple(arr.shape)}"
            )
        state[name] = torch.from_numpy(arr).to(state[name].dtype)
    model.load_state_dict(state, strict=True)

    if optimizer is not None and optim_arrays:
        name_params = dict(model.named_parameters())
        for name, arr in optim_arrays.items():
            p = name_params.get(name)
            if p is None:
                if not partial:
                    raise CheckpointError(f"momentum buffer for unknown parameter: {name}")
                continue
            optimizer.state[p]["momentum_buffer"] = torch.from_numpy(arr).to(p.dtype)
    return meta
