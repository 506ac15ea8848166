import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leno.container import load, load_meta, read_container, save, write_container
from leno.dataset import project_trajectories
from leno.errors import FormatError
from leno.hashing import fnv1a64
from leno.leno import TrainConfig, train
from leno.neuralnet import CoeffNet
from leno.pde_lab import builtin_problem, generate
from leno.spectral_basis import DiffusionSpec, Domain, build_basis

_PROB = builtin_problem("kpp", {"resolution": 32})
_BASIS = build_basis(_PROB.domain, "dirichlet", P=6)


def test_fnv1a64_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8
    long = bytes(range(256)) * 3
    h = 0xCBF29CE484222325
    for b in long:
        h = ((h ^ b) * 0x100000001B3) % 2 ** 64
    assert fnv1a64(long) == h


def test_basis_round_trip(tmp_path):
    p = tmp_path / "b.leno"
    save(_BASIS, p)
    b = load(p, "basis")
    for name in ("lambdas", "modes", "weights"):
        assert getattr(b, name).tobytes() == getattr(_BASIS, name).tobytes()
    assert b.fingerprint() == _BASIS.fingerprint()


def test_variable_diffusion_basis_round_trip(tmp_path):
    D = DiffusionSpec("scalar-field", lambda x: 2.0 + np.cos(np.pi * x))
    b = build_basis(Domain.interval(0, 1, 32), "dirichlet", D, P=4)
    save(b, tmp_path / "v.leno")
    back = load(tmp_path / "v.leno")
    assert back.modes.tobytes() == b.modes.tobytes()


def test_masked_basis_round_trip(tmp_path):
    mask = np.ones((8, 8), bool)
    mask[:2, :2] = False
    b = build_basis(Domain.masked(mask, [(0, 1), (0, 1)]), "neumann", P=4)
    save(b, tmp_path / "m.leno")
    back = load(tmp_path / "m.leno")
    assert np.array_equal(back.domain.mask, mask) and back.modes.tobytes() == b.modes.tobytes()


def test_trajectory_and_dataset_round_trip(tmp_path):
    traj = generate(_PROB, 2, seed=3, n_records=3)
    save(traj, tmp_path / "t.leno")
    t = load(tmp_path / "t.leno", "traj")
    assert t.samples.tobytes() == traj.samples.tobytes() and t.seed == 3
    assert t.problem.name == "kpp" and t.problem.domain == traj.problem.domain
    ds = project_trajectories(traj, [_BASIS])
    h1 = save(ds, tmp_path / "d.leno")
    d = load(tmp_path / "d.leno", "dataset")
    for name in ("times", "betas", "residuals", "lambdas"):
        assert getattr(d, name).tobytes() == getattr(ds, name).tobytes()
    assert d.basis_ref == ds.basis_ref
    assert save(d, tmp_path / "d2.leno") == h1


def test_model_round_trip_with_optimizer(tmp_path):
    ds = project_trajectories(generate(_PROB, 2, seed=3, n_records=3), [_BASIS])
    net, _ = train(CoeffNet.init((6, 8, 6), 0), ds, TrainConfig(epochs=3, dtype="float32"))
    save(net, tmp_path / "n.leno", meta={"note": "x"})
    back = load(tmp_path / "n.leno", "model")
    assert back.same_parameters(net) and back.dtype == np.float32
    assert back.optimizer.step == 3
    assert all(a.tobytes() == b.tobytes() for a, b in zip(back.optimizer.m, net.optimizer.m))
    assert load_meta(tmp_path / "n.leno")["note"] == "x"


@given(st.lists(st.integers(1, 5), min_size=0, max_size=3), st.integers(0, 2 ** 31))
def test_arbitrary_arrays_round_trip(shape, seed):
    import tempfile
    import os

    a = np.random.default_rng(seed).standard_normal(shape)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.leno")
        write_container(path, "basis", {"a": a}, {"k": 1})
        _, arrays, meta, _ = read_container(path)
    assert arrays["a"].tobytes() == a.tobytes() and meta == {"k": 1}


def _corrupt(path, offset, value):
    blob = bytearray(path.read_bytes())
    blob[offset] = value
    path.write_bytes(bytes(blob))


def test_corruptions_rejected(tmp_path):
    p = tmp_path / "b.leno"
    save(_BASIS, p)
    good = p.read_bytes()
    _corrupt(p, 0, ord("X"))
    with pytest.raises(FormatError, match="magic"):
        load(p)
    p.write_bytes(good[:5] + struct.pack("<I", 99) + good[9:])
    with pytest.raises(FormatError, match="version"):
        load(p)
    p.write_bytes(good[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load(p)
    p.write_bytes(good + b"\0" * 8)
    with pytest.raises(FormatError, match="oversized"):
        load(p)
    p.write_bytes(good)
    _corrupt(p, len(good) - 3, good[-3] ^ 0xFF)
    with pytest.raises(FormatError, match="checksum"):
        load(p)
    p.write_bytes(good)
    with pytest.raises(FormatError, match="expected"):
        load(p, "model")


def test_declared_mode_count_must_match_payload(tmp_path):
    p = tmp_path / "b.leno"
    save(_BASIS, p)
    _, arrays, meta, _ = read_container(p)
    arrays["modes"] = arrays["modes"][:-1]
    arrays["lambdas"] = arrays["lambdas"][:-1]
    write_container(p, "basis", arrays, meta)
    with pytest.raises(FormatError, match="P=6"):
        load(p)
