"""Smoke test for the hierflow Python extension.

Build and install with `pip install --no-build-isolation ./crates/hierflow-py`
(requires maturin), then run `python python/smoke_test.py`.
"""

import math

import hierflow


def main():
    bc = hierflow.beta_critical(2)
    assert abs(bc - 2 * math.pi**2 / math.log(2)) < 1e-12

    cfg = hierflow.ModelConfig(2, 10.0, 2)
    assert not cfg.is_supercritical()
    gibbs = hierflow.gibbs_brute(cfg, 6, [(0, 0, 0.3), (0, 1, 0.3), (0, 2, 0.3)])
    for k, (cov, charge) in enumerate(gibbs):
        assert abs(hierflow.covariance_exact(cfg, k) - cov) < 1e-4
        assert abs(hierflow.charge_correlation_exact(cfg, 0.3, k) - charge) < 1e-4

    assert hierflow.verify_decomposition(cfg) < 1e-10

    lam = hierflow.fixed_point(2, 0.525)
    assert lam[0] == 1.0 and 0.0 < lam[1] < 1.0
    assert hierflow.fixed_point(2, 0.45) == [1.0]

    sub = hierflow.kappa_exponent(0.3, hierflow.ModelConfig(2, 25.0, 4))
    assert abs(sub["kappa"] - 4 * bc * 0.09 / 25.0) < 1e-14
    sup = hierflow.kappa_exponent(0.2, hierflow.ModelConfig(2, 35.0, 4))
    assert sup["t_star"] > 1.0

    est = hierflow.sample_pair(hierflow.ModelConfig(2, 20.0, 4), 1, 0.3, 20000, seed=1)
    mean, se = est["covariance"]
    exact = hierflow.covariance_exact(hierflow.ModelConfig(2, 20.0, 4), 1)
    assert abs(mean - exact) < 4 * se

    field = hierflow.sample_field(hierflow.ModelConfig(2, 20.0, 5), seed=3)
    assert len(field) == 32

    print("hierflow", hierflow.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
