"""The ``.leno`` binary container.

Layout: magic ``LENO1`` (5 bytes), format version (u32 LE), header length
(u32 LE), UTF-8 JSON header, then the arrays listed in the header as
little-endian float64 in header order. The header records each array's name
and shape, the object kind, metadata, and the FNV-1a 64-bit hash of the
payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, ValidationError
from .hashing import fnv1a64

MAGIC = b"LENO1"
VERSION = 1
KINDS = ("basis", "traj", "dataset", "model")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if x is None or isinstance(x, (str, int, float, bool)):
        return x
    return repr(x)


def write_container(path, kind, arrays, meta=None):
    """Write ``arrays`` (name -> array) and ``meta``; returns the payload hash as hex."""
    if kind not in KINDS:
        raise ValidationError(f"unknown container kind {kind!r}")
    entries, chunks = [], []
    for name, a in arrays.items():
        a = np.asarray(a)
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f8", "source_dtype": a.dtype.str})
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    digest = f"{fnv1a64(payload):016x}"
    header = {"kind": kind, "arrays": entries, "meta": _jsonable(meta or {}), "hash": digest}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return digest


def read_container(path):
    """Return ``(kind, arrays, meta, header)`` after format and checksum validation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13 or blob[:5] != MAGIC:
        raise FormatError(f"{path}: not a .leno container (bad magic)")
    version, hlen = struct.unpack("<II", blob[5:13])
    if version != VERSION:
        raise FormatError(f"{path}: container version {version}, this reader supports {VERSION}")
    if len(blob) < 13 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[13:13 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    payload = blob[13 + hlen:]
    sizes = [int(np.prod(e["shape"], dtype=np.int64)) * 8 for e in header["arrays"]]
    if len(payload) != sum(sizes):
        kind = "truncated" if len(payload) < sum(sizes) else "oversized"
        raise FormatError(f"{path}: {kind} payload, {len(payload)} bytes for {sum(sizes)} declared")
    if f"{fnv1a64(payload):016x}" != header.get("hash"):
        raise FormatError(f"{path}: checksum mismatch")
    arrays, off = {}, 0
    for e, n in zip(header["arrays"], sizes):
        a = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=off).reshape(e["shape"])
        arrays[e["name"]] = a.astype(np.dtype(e.get("source_dtype", "<f8")).newbyteorder("="))
        off += n
    return header["kind"], arrays, header["meta"], header


def _save_basis(b, meta):
    arrays = {"lambdas": b.lambdas, "modes": b.modes, "weights": b.weights}
    if b.domain.mask is not None:
        arrays["mask"] = b.domain.mask.astype(float)
    dif = b.diffusion.to_dict()
    if dif["value"] is None:
        dom = b.domain
        pts = dom.coords()
        if b.diffusion.kind == "scalar-field":
            field = b.diffusion.value if not callable(b.diffusion.value) else b.diffusion._scalar_at(pts, dom)
        else:
            field = b.diffusion.value if not callable(b.diffusion.value) else b.diffusion._matrix_at(pts, dom)
        arrays["diffusion"] = np.asarray(field, dtype=float)
    return arrays, {**meta, "P": b.P, "domain": b.domain.to_dict(), "bc": b.bc, "diffusion": dif}


def _load_basis(arrays, meta):
    from .spectral_basis import DiffusionSpec, Domain, EigenBasis

    mask = arrays["mask"].astype(bool) if "mask" in arrays else None
    dom = Domain.from_dict(meta["domain"], mask)
    d = meta["diffusion"]
    value = arrays["diffusion"] if "diffusion" in arrays else d["value"]
    diff = DiffusionSpec(d["kind"], value)
    lam, modes = arrays["lambdas"], arrays["modes"]
    if meta["P"] != lam.size or meta["P"] != modes.shape[0]:
        raise FormatError(f"header declares P={meta['P']} but payload holds {modes.shape[0]} modes "
                          f"and {lam.size} eigenvalues")
    return EigenBasis(dom, meta["bc"], diff, lam, modes, arrays["weights"])


def _save_traj(t, meta):
    arrays = {"times": t.times, "samples": t.samples}
    prob = None
    if t.problem is not None:
        prob = t.problem.to_dict()
        if t.problem.domain.mask is not None:
            arrays["mask"] = t.problem.domain.mask.astype(float)
    extra = {k: v for k, v in t.meta.items() if not isinstance(v, np.ndarray)}
    for k, v in t.meta.items():
        if isinstance(v, np.ndarray):
            arrays["meta:" + k] = v
    return arrays, {**meta, "problem": prob, "seed": t.seed, "traj_meta": extra}


def _load_traj(arrays, meta):
    from .pde_lab import ProblemSpec, TrajectorySet

    prob = None
    pd = meta.get("problem")
    if pd is not None and pd["name"] != "custom":
        mask = arrays["mask"].astype(bool) if "mask" in arrays else None
        prob = ProblemSpec.from_dict(pd, mask)
    tmeta = dict(meta.get("traj_meta", {}))
    for k, v in arrays.items():
        if k.startswith("meta:"):
            tmeta[k[5:]] = v
    if pd is not None and prob is None:
        tmeta["problem"] = pd
    return TrajectorySet(prob, arrays["times"], arrays["samples"], meta.get("seed"), tmeta)


def _save_dataset(d, meta):
    arrays = {"times": d.times, "betas": d.betas, "residuals": d.residuals, "lambdas": d.lambdas}
    if d.lift is not None:
        arrays["lift"] = d.lift
    return arrays, {**meta, "c": d.c, "basis_ref": d.basis_ref, "provenance": d.provenance}


def _load_dataset(arrays, meta):
    from .dataset import CoeffDataset

    return CoeffDataset(arrays["times"], arrays["betas"], arrays["residuals"], arrays["lambdas"],
                        meta["c"], meta["basis_ref"], meta["provenance"], arrays.get("lift"))


def _save_model(net, meta, optimizer=None):
    optimizer = optimizer if optimizer is not None else net.optimizer
    arrays = {}
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    info = {**meta, "sizes": list(net.sizes), "seed": net.seed, "trainable": list(net.trainable)}
    if optimizer is not None and optimizer.m:
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
        info["adam"] = {k: getattr(optimizer, k) for k in ("lr0", "decay", "interval", "beta1", "beta2", "eps", "step")}
    return arrays, info


def _load_model(arrays, meta):
    from .neuralnet import AdamState, CoeffNet

    n = len(meta["sizes"]) - 1
    missing = [k for i in range(n) for k in (f"W{i}", f"b{i}") if k not in arrays]
    if missing:
        raise FormatError(f"model payload lacks {missing}")
    net = CoeffNet(tuple(meta["sizes"]), [arrays[f"W{i}"] for i in range(n)],
                   [arrays[f"b{i}"] for i in range(n)], meta.get("seed"), list(meta.get("trainable", [True] * n)))
    if "adam" in meta:
        k = len(net.parameters())
        net.optimizer = AdamState(**meta["adam"], m=[arrays[f"adam_m{i}"] for i in range(k)],
                                  v=[arrays[f"adam_v{i}"] for i in range(k)])
    return net


def save(obj, path, meta=None, optimizer=None):
    """Persist a basis, trajectory set, dataset or network; returns the payload hash."""
    from .dataset import CoeffDataset
    from .neuralnet import CoeffNet
    from .pde_lab import TrajectorySet
    from .spectral_basis import EigenBasis

    meta = dict(meta or {})
    if isinstance(obj, EigenBasis):
        kind, (arrays, info) = "basis", _save_basis(obj, meta)
    elif isinstance(obj, TrajectorySet):
        kind, (arrays, info) = "traj", _save_traj(obj, meta)
    elif isinstance(obj, CoeffDataset):
        kind, (arrays, info) = "dataset", _save_dataset(obj, meta)
    elif isinstance(obj, CoeffNet):
        kind, (arrays, info) = "model", _save_model(obj, meta, optimizer)
    else:
        raise ValidationError(f"cannot save objects of type {type(obj).__name__}")
    return write_container(path, kind, arrays, info)


def load(path, expect=None):
    """Load any container; ``expect`` optionally names the required kind."""
    kind, arrays, meta, _ = read_container(path)
    if expect is not None and kind != expect:
        raise FormatError(f"{path}: expected a {expect!r} container, found {kind!r}")
    loader = {"basis": _load_basis, "traj": _load_traj, "dataset": _load_dataset, "model": _load_model}[kind]
    try:
        return loader(arrays, meta)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed {kind} container ({exc})") from None


def load_meta(path):
    return read_container(path)[2]
