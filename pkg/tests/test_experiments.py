import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from leno.errors import ValidationError
from leno.experiments import (REPRO, ExperimentConfig, format_checks, kpp_config, run_experiment, run_repro,
                              transfer_problem)


@given(st.integers(1, 128), st.lists(st.integers(1, 64), min_size=1, max_size=3),
       st.sampled_from(["combined", "data-only", "residual-only"]), st.integers(0, 10 ** 6))
def test_config_json_round_trip(P, hidden, mode, seed):
    cfg = ExperimentConfig(P=P, hidden=hidden, mode=mode, seed=seed, overrides={"resolution": 64},
                           thresholds={"E_L2": 1e-3})
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"problme": "kpp"})
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="teacher")
    with pytest.raises(ValidationError):
        ExperimentConfig(P=0)


def test_bc_override_from_json():
    cfg = ExperimentConfig.from_dict({"overrides": {"bc": {"kind": "inhomogeneous-dirichlet", "data": 1.0},
                                                    "resolution": 32}})
    assert cfg.build_problem().bc.kind == "inhomogeneous-dirichlet"


def test_small_pipeline_end_to_end():
    cfg = kpp_config(P=8, hidden=[16], epochs=30, M=4, M_test=2, overrides={"resolution": 64})
    r = run_experiment(cfg)
    for rep in (r.report, r.test_report):
        assert rep.N == 10 and rep.E_Nonlinear is not None
    assert len(r.history) == 30
    again = run_experiment(cfg)
    assert again.net.same_parameters(r.net)


def test_repro_catalog_and_lines():
    assert set(REPRO) >= {"kpp-table", "kpp-criteria", "kpp-vary-p", "kpp-diffusion", "kpp-inhomogeneous",
                          "allen-cahn", "gray-scott", "schrodinger", "transfer"}
    with pytest.raises(ValidationError):
        run_repro("nope")
    lines = format_checks("x", [{"label": "E", "value": 0.5, "op": "<=", "limit": 1.0, "ok": True}])
    assert lines == ["PASS  x: E = 0.5 (need <= 1)"]


def test_transfer_domain_is_irregular():
    prob = transfer_problem(24)
    assert prob.domain.kind == "masked-grid" and prob.bc.kind == "neumann"
    assert 0 < prob.domain.mask.mean() < 0.9
