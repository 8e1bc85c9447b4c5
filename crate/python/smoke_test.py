"""Smoke test for the `rie` extension module.

Build and install first, e.g.:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/rie-*.whl
    python python/smoke_test.py
"""

import math

import rie


def check_fixture():
    # Non-intervened rows 0 and 1 get weights 1/0.5 and 1/0.25.
    ds = rie.Dataset([1.0, 2.0, 3.0, 4.0], {"a": [0.0, 0.0, 1.0, 1.0]}, {"x": [0.0, 1.0, 2.0, 3.0]})
    iv = ds.intervention("a", "set_binary", 0.0)
    est = rie.rie_ipw(ds, iv, [0.5, 0.25, 0.5, 0.5])
    assert abs(est.psi + 5.0 / 6.0) < 1e-12, est
    assert ds.nonintervened_indicator(iv) == [1.0, 1.0, 0.0, 0.0]


def check_pooling():
    ds = rie.Dataset([0.0, 1.0, 2.0, 3.0], {"a": [0.0, 1.0, 0.0, 1.0]}, {"x": [0.3, 1.0, 0.1, 2.0]})
    iv = ds.intervention("a", "set_binary", 0.0)
    base = rie.ols(ds, iv)
    pooled = rie.combine_imputations([base, base, base])
    assert pooled.psi == base.psi and abs(pooled.se - base.se) < 1e-12
    assert "imputations=3" in pooled.flags


def check_simplex():
    target = [1.0, 0.0, 1.0, 0.0]
    w = rie.solve_simplex_weights([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]], target)
    assert abs(w[0] - 1.0) < 1e-10 and abs(w[1]) < 1e-10, w


def check_pipeline():
    ds, y0, y1, p = rie.gen_data(n=300, noise_dims=2, run=0, seed=7)
    a = [1.0 - g for g in ds.nonintervened_indicator(ds.intervention("a", "set_binary", 0.0))]
    truth = sum(ai * (u - v) for ai, u, v in zip(a, y0, y1)) / ds.n
    iv = ds.intervention("a", "set_binary", 0.0)
    est, weights, ghat = rie.ensemble_ipw(ds, iv, folds=5, seed=1)
    assert math.isfinite(est.psi) and est.se > 0
    assert abs(sum(w for _, _, w in weights) - 1.0) < 1e-10
    assert all(0.0 < g < 1.0 for g in ghat)
    rows = rie.balance_table(ds, iv, ghat)
    assert {r["covariate"] for r in rows} == {"w1", "noise1", "noise2"}
    for f in (rie.ols, rie.naive_ipw, rie.matching):
        assert math.isfinite(f(ds, iv).psi)
    print(f"ensemble psi {est.psi:.3f} (truth {truth:.3f}), weights {weights}")


def check_errors():
    ds = rie.Dataset([1.0, 2.0], {"a": [0.0, 1.0]}, {"x": [0.0, 1.0]})
    try:
        ds.intervention("missing", "set_binary", 0.0)
    except ValueError as e:
        assert "missing" in str(e)
    else:
        raise AssertionError("expected ValueError")


def check_simulate():
    sd, rows = rie.simulate(runs=2, seed=3, n=100, noise_dims=[0], fast=True)
    assert sd > 0 and len(rows) == 4
    for method, noise, bias, se, rmse in rows:
        assert abs(rmse**2 - bias**2 - se**2) < 1e-9


if __name__ == "__main__":
    check_fixture()
    check_pooling()
    check_simplex()
    check_pipeline()
    check_errors()
    check_simulate()
    print("smoke test passed")
