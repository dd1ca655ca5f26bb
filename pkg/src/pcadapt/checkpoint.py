"""Self-describing binary checkpoint container.

Layout::

    b"PCADCKPT"            8-byte magic
    uint16 LE              format version
    uint32 LE              header length n
    n bytes                UTF-8 JSON header (architecture, layer specs,
                           per-tensor dtype/shape, metadata)
    tensor payloads        raw little-endian bytes, in header order
    32 bytes               SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .nn import LayerParams, LayerSpec, Network, build_layers

MAGIC = b"PCADCKPT"
VERSION = 1
_DIGEST = 32


def save_checkpoint(net: Network, meta: dict | None, path) -> Path:
    path = Path(path)
    tensors, payload = [], []
    for i, prm in enumerate(net.params):
        for name in ("weights", "bias"):
            arr = getattr(prm, name)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            tensors.append({"layer": i, "name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
            payload.append(np.ascontiguousarray(le).tobytes())
    header = {
        "arch": net.arch,
        "arch_options": net.arch_options,
        "in_shape": list(net.in_shape),
        "boundaries": list(net.boundaries),
        "specs": [asdict(s) for s in net.specs],
        "tensors": tensors,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + b"".join(payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    return path


def _expected_shapes(arch: str, options: dict) -> list[tuple]:
    opts = {k: (tuple(v) if isinstance(v, list) else v) for k, v in options.items()}
    specs, _, _ = build_layers(arch, **opts)
    return [s.param_shapes() if s.trainable else ((0,), (0,)) for s in specs]


def read_checkpoint(path) -> tuple[dict, Network]:
    """Return ``(header, network)`` after validating magic, version, checksum and shapes."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("bad_magic", f"{path}: not a pcadapt checkpoint")
    if len(buf) < 14 + _DIGEST:
        raise CheckpointError("truncated", f"{path}: file too short")
    version, hlen = struct.unpack("<HI", buf[8:14])
    if version != VERSION:
        raise CheckpointError("version_mismatch", f"{path}: version {version}, expected {VERSION}")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum", f"{path}: checksum failure")
    header = json.loads(body[14:14 + hlen].decode("utf-8"))
    offset = 14 + hlen
    arrays = []
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"])) * dt.itemsize
        if offset + n > len(body):
            raise CheckpointError("truncated", f"{path}: tensor payload shorter than header claims")
        arrays.append(np.frombuffer(body, dtype=dt, count=int(np.prod(t["shape"])), offset=offset)
                      .reshape(t["shape"]).astype(dt.newbyteorder("="), copy=True))
        offset += n
    specs = [LayerSpec(**s) for s in header["specs"]]
    params = [LayerParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(specs))]
    net = Network(specs, params, header["boundaries"], tuple(header["in_shape"]), header["arch"],
                  header["arch_options"])
    if header["arch"] != "custom":
        _check_shapes(net, header["arch"], header["arch_options"])
    return header, net


def _check_shapes(net: Network, arch: str, options: dict):
    try:
        expected = _expected_shapes(arch, options)
    except ConfigError as exc:
        raise CheckpointError("arch_mismatch", str(exc)) from exc
    actual = [(p.weights.shape, p.bias.shape) for p in net.params]
    if len(expected) != len(actual) or any(tuple(e[0]) != a[0] or tuple(e[1]) != a[1]
                                           for e, a in zip(expected, actual)):
        raise CheckpointError("shape_mismatch", f"checkpoint tensors do not match architecture {arch!r}")


def load_checkpoint(path, arch: str | None = None) -> Network:
    """Load a network; if ``arch`` is given, the tensors must fit that architecture."""
    header, net = read_checkpoint(path)
    if arch is not None:
        _check_shapes(net, arch, header["arch_options"])
        if arch != header["arch"]:
            raise CheckpointError("arch_mismatch", f"checkpoint is {header['arch']!r}, config wants {arch!r}")
    return net


def checkpoint_meta(path) -> dict:
    return read_checkpoint(path)[0]["meta"]
