import json
import os
import pathlib

import numpy as np
import pytest

import kelp

DATA = pathlib.Path(os.environ.get("KELP_DATA_DIR", pathlib.Path(__file__).resolve().parents[2] / "data" / "demo"))


def pair_family():
    return kelp.Family(2, [("ind", [[0], [1]]), ("pair", [[0, 1]])])


def test_ebh_threshold():
    # n=3, alpha=0.5: R=2 needs e >= 3, R=3 needs e >= 2.
    assert kelp.ebh([4.0, 3.0, 1.0], 0.5) == [0, 1]
    assert kelp.ebh([1.0, 1.0], 0.1) == []


def test_focused_ebh_pair_example():
    out = kelp.focused_ebh(pair_family(), [[8.0, 0.0], [4.0]], 0.4)
    assert out["rejected"] == [("ind", 0)]
    assert out["self_consistent"] and out["disjoint"]


def test_elp_solvers_agree():
    family = pair_family()
    e = [[8.0, 8.0], [8.0]]
    objectives = {kelp.elp(family, e, 0.4, solver=s)["objective"] for s in ("exact", "dp", "bnb")}
    # Both singletons (weight 1 each) beat the pair (weight 1).
    assert objectives == {2.0}


def test_kelp_single_resolution_is_knockoff_filter():
    w = [10.0 - j for j in range(10)] + [-0.5] * 10
    family = kelp.Family(20, [("ind", [[j] for j in range(20)])])
    out = kelp.kelp(family, [w], 0.2, gamma="0.2", c=[20.0])
    assert [g for _, g in out["rejected"]] == kelp.knockoff_filter(w, 0.2)


def test_partial_conjunction_monotone():
    rng = np.random.default_rng(0)
    for _ in range(200):
        e = rng.exponential(size=5)
        assert kelp.partial_conjunction_evalue(list(e + rng.exponential(size=5)), 2) >= kelp.partial_conjunction_evalue(list(e), 2)


def test_knockoffs_shape_and_recipe():
    sigma = np.eye(5)
    assert kelp.equicorrelated_s(sigma) == pytest.approx(1.0)
    X = np.random.default_rng(1).standard_normal((30, 5))
    Xt = kelp.sample_knockoffs(X, sigma, 3)
    assert Xt.shape == (30, 5)
    np.testing.assert_array_equal(Xt, kelp.sample_knockoffs(X, sigma, 3))


def test_family_roundtrip_and_errors():
    family = kelp.Family.from_json((DATA / "family.json").read_text())
    assert family.p == 40
    assert kelp.Family.from_json(family.to_json()).resolutions == family.resolutions
    with pytest.raises(ValueError):
        kelp.Family(3, [("a", [[0, 1], [1, 2]])])
    with pytest.raises(kelp.InputError):
        kelp.ebh([1.0], 1.5)


def test_simulate_small_sweep():
    config = json.dumps({"design": "block-ar1", "p": 30, "n": 60, "sparsity": 0.1, "tau": 1,
                         "folds": 3, "n_lambda": 20, "methods": ["kelp"], "seed": 3})
    rows = kelp.simulate(config, replicates=2)
    fdp = [r for r in rows if r["method"] == "kelp" and r["metric"] == "fdp"]
    assert len(fdp) == 1 and fdp[0]["count"] == 2
    assert rows == kelp.simulate(config, replicates=2)


def test_cli_validate_demo():
    code, out, _ = kelp.cli(["validate", "--family", str(DATA / "family.json"), "--evalues", str(DATA / "evalues.csv")])
    assert code == 0
    assert "all checks passed" in out
