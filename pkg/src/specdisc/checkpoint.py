"""Checkpoints: a ``key = value`` text manifest plus a flat little-endian float64 file.

Manifest lines::

    format = specdisc-checkpoint-1
    data = run_000100.bin
    meta.iteration = 100
    tensor.generator.embedding.table = shape=12,32 offset=0

``offset`` is in bytes.  Tensors are stored in manifest order with no gaps, so
the data file is exactly ``8 * total elements`` long.  Metadata values are
strings; callers parse them.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .discriminators import Discriminator
from .generator import Generator
from .optim import Lookahead

FORMAT = "specdisc-checkpoint-1"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def manifest_path(path: str) -> str:
    """Accept a manifest path or its prefix."""
    return path if path.endswith(".manifest") else path + ".manifest"


def save(path: str, tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> str:
    """Write ``<prefix>.manifest`` and ``<prefix>.bin``; returns the manifest path."""
    man = manifest_path(path)
    prefix = man[: -len(".manifest")]
    bin_path = prefix + ".bin"
    lines = [f"format = {FORMAT}", f"data = {os.path.basename(bin_path)}"]
    for key, val in (meta or {}).items():
        text = str(val)
        if "\n" in text or "=" in key or " " in key:
            raise CheckpointError(f"metadata entry {key!r} cannot be written as one key = value line")
        lines.append(f"meta.{key} = {text}")
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if " " in name or "=" in name:
            raise CheckpointError(f"tensor name {name!r} contains a space or '='")
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor.{name} = shape={shape} offset={offset}")
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
        offset += arr.size * 8
    os.makedirs(os.path.dirname(os.path.abspath(man)), exist_ok=True)
    with open(bin_path, "wb") as fh:
        for c in chunks:
            fh.write(c)
    with open(man, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return man


def load(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Inverse of :func:`save`: ``(tensors, meta)`` with tensors in manifest order."""
    man = manifest_path(path)
    if not os.path.exists(man):
        raise FileNotFoundError(f"checkpoint manifest not found: {man}")
    entries: list[tuple[str, str]] = []
    with open(man) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition(" = ")
            if not sep:
                raise CheckpointError(f"{man}:{lineno}: expected 'key = value'")
            entries.append((key, val))
    head = dict(entries[:2])
    if head.get("format") != FORMAT:
        raise CheckpointError(f"{man}: unsupported format {head.get('format')!r}")
    bin_path = os.path.join(os.path.dirname(man), head.get("data", ""))
    raw_bytes = np.fromfile(bin_path, dtype=_DTYPE)
    meta, tensors, expected = {}, {}, 0
    for key, val in entries[2:]:
        if key.startswith("meta."):
            meta[key[5:]] = val
        elif key.startswith("tensor."):
            fields = dict(part.split("=", 1) for part in val.split())
            shape = tuple(int(d) for d in fields["shape"].split(",") if d)
            offset = int(fields["offset"])
            if offset != expected:
                raise CheckpointError(f"{man}: tensor {key[7:]} at offset {offset}, expected {expected}")
            n = int(np.prod(shape, dtype=np.int64))
            start = offset // 8
            if start + n > raw_bytes.size:
                raise CheckpointError(f"{man}: data file too short for {key[7:]}")
            tensors[key[7:]] = raw_bytes[start : start + n].astype(np.float64).reshape(shape)
            expected += n * 8
        else:
            raise CheckpointError(f"{man}: unknown key {key!r}")
    if expected != raw_bytes.size * 8:
        raise CheckpointError(f"{man}: data file has {raw_bytes.size * 8} bytes, manifest describes {expected}")
    return tensors, meta


# -- training state ---------------------------------------------------------------
def _optimizer_tensors(prefix: str, names: list[str], opt: Lookahead) -> dict[str, np.ndarray]:
    out = {}
    inner = opt.inner
    for kind, arrays in (("m", inner.m), ("v", inner.v), ("slow", opt.slow)):
        for name, arr in zip(names, arrays):
            out[f"{prefix}.{kind}.{name}"] = arr
    return out


def save_training_state(path: str, iteration: int, gen: Generator, disc: Discriminator | None,
                        opts: tuple[Lookahead, Lookahead | None], run_config: Mapping[str, object]) -> str:
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, object] = {"iteration": iteration}
    for key, val in run_config.items():
        meta[f"config.{key}"] = val
    modules = [("generator", gen, opts[0]), ("discriminator", disc, opts[1])]
    for tag, module, opt in modules:
        if module is None:
            continue
        named = list(module.named_parameters())
        tensors.update({f"{tag}.{n}": p.data for n, p in named})
        if opt is not None:
            tensors.update(_optimizer_tensors(f"opt.{tag}", [n for n, _ in named], opt))
            meta[f"opt.{tag}.t"] = opt.inner.t
            meta[f"opt.{tag}.counter"] = opt.counter
    return save(path, tensors, meta)


def run_config_from_meta(meta: Mapping[str, str]) -> dict[str, str]:
    return {k[7:]: v for k, v in meta.items() if k.startswith("config.")}


def restore_module(module, tensors: Mapping[str, np.ndarray], tag: str) -> None:
    state = {n: tensors[f"{tag}.{n}"] for n, _ in module.named_parameters() if f"{tag}.{n}" in tensors}
    module.load_state_dict(state)


def restore_training_state(tensors: Mapping[str, np.ndarray], meta: Mapping[str, str], gen: Generator,
                           disc: Discriminator | None, opts: tuple[Lookahead, Lookahead | None]) -> int:
    """Load parameters and optimizer state in place; returns the saved iteration."""
    for tag, module, opt in (("generator", gen, opts[0]), ("discriminator", disc, opts[1])):
        if module is None:
            continue
        restore_module(module, tensors, tag)
        if opt is None:
            continue
        names = [n for n, _ in module.named_parameters()]
        try:
            state = {kind: [tensors[f"opt.{tag}.{kind}.{n}"] for n in names] for kind in ("m", "v", "slow")}
            state["t"] = int(meta[f"opt.{tag}.t"])
            state["counter"] = int(meta[f"opt.{tag}.counter"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks optimizer state {exc}") from None
        opt.load_state_dict(state)
    return int(meta["iteration"])
