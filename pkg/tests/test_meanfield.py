import warnings

import numpy as np
import pytest

from consensus.dynamics import DynamicsSpec
from consensus.integrator import TimeGrid
from consensus.meanfield import (
    ConvergenceConfig,
    StudyError,
    estimate_error,
    fit_loglog_slope,
    read_raw_csv,
    read_results_csv,
    report_from_raw,
    run_convergence_study,
    write_raw_csv,
    write_results_csv,
)


def toy_config(**kw):
    base = dict(J_list=(4, 8, 16), J_inf=64, M=3, grid=TimeGrid(0.01, 5), seed=3)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ConvergenceConfig(**base)


# --------------------------------------------------------------------------- estimator


def test_estimate_error_examples():
    assert estimate_error(np.zeros((4, 5))) == (0.0, 0.0)
    E, se = estimate_error([[1.0, 3.0]])
    assert E == 2.0 and np.isnan(se)


def test_estimate_error_matches_double_loop():
    rng = np.random.default_rng(0)
    table = rng.exponential(size=(7, 11))
    M, J = table.shape
    total = 0.0
    for m in range(M):
        for j in range(J):
            total += table[m, j]
    per_m = [sum(table[m]) / J for m in range(M)]
    mean = sum(per_m) / M
    sd = (sum((v - mean) ** 2 for v in per_m) / (M - 1)) ** 0.5
    E, se = estimate_error(table)
    assert E == pytest.approx(total / (M * J), rel=1e-14)
    assert se == pytest.approx(sd / M**0.5, rel=1e-12)


def test_estimate_error_rejects_bad_shapes():
    with pytest.raises(ValueError, match="shape"):
        estimate_error(np.zeros(3))
    with pytest.raises(ValueError, match="nonnegative"):
        estimate_error([[-1.0]])


# --------------------------------------------------------------------------- slope fit


def test_slope_examples():
    J = np.array([10, 20, 40])
    assert fit_loglog_slope(J, 1.0 / J) == pytest.approx(-1.0, abs=1e-12)
    assert fit_loglog_slope(J, np.full(3, 0.3)) == pytest.approx(0.0, abs=1e-12)


def test_slope_synthetic_noise():
    rng = np.random.default_rng(1)
    J = 10 * 2 ** np.arange(10)
    E = J**-0.5 * (1 + 0.01 * rng.standard_normal(J.size))
    assert fit_loglog_slope(J, E) == pytest.approx(-0.5, abs=0.05)


def test_slope_range_and_zero_points():
    J = np.array([1, 2, 4, 8, 16])
    E = np.array([5.0, 5.0, 1 / 4, 1 / 8, 1 / 16])
    assert fit_loglog_slope(J, E, J_min=4) == pytest.approx(-1.0, abs=1e-12)
    with pytest.warns(UserWarning, match="non-positive"):
        assert fit_loglog_slope([1, 2, 4], [0.0, 0.5, 0.25]) == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="two"), pytest.warns(UserWarning):
        fit_loglog_slope([1, 2], [0.0, 1.0])


# --------------------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValueError, match="ascending"):
        toy_config(J_list=(8, 4))
    with pytest.raises(ValueError, match="J_inf"):
        toy_config(J_list=(4, 128))
    with pytest.raises(ValueError, match="dimension"):
        toy_config(d=3)
    with pytest.warns(UserWarning, match="mean-field proxy"):
        ConvergenceConfig(J_list=(4, 32), J_inf=64)


def test_default_config_is_desk_scale_experiment():
    cfg = ConvergenceConfig()
    assert cfg.J_list == tuple(10 * 2**k for k in range(10))
    assert (cfg.J_inf, cfg.M, cfg.p, cfg.fit_min_J) == (32768, 20, 2.0, 160)
    assert cfg.spec.method == "cbo-iso" and cfg.spec.beta == 3.0
    assert cfg.spec.sigma == pytest.approx(0.2)
    assert (cfg.grid.dt, cfg.grid.steps) == (0.01, 100)
    assert cfg.objective == "ackley" and cfg.d == 2
    assert cfg.digest() == ConvergenceConfig().digest()
    assert cfg.digest() != ConvergenceConfig(seed=1).digest()


# --------------------------------------------------------------------------- study


def test_toy_study_and_regeneration(tmp_path):
    cfg = toy_config()
    rep = run_convergence_study(cfg)
    assert rep.J_list == [4, 8, 16]
    assert all(rep.raw[J].shape == (3, J) for J in rep.J_list)
    assert np.all(rep.E_hat > 0)
    lo, hi = rep.band
    np.testing.assert_allclose(hi - rep.E_hat, rep.E_hat - lo)
    write_raw_csv(rep, tmp_path / "raw.csv")
    raw = read_raw_csv(tmp_path / "raw.csv")
    again = report_from_raw(cfg, raw)
    np.testing.assert_array_equal(again.E_hat, rep.E_hat)
    np.testing.assert_array_equal(again.stderr, rep.stderr)
    for J in rep.J_list:
        E, _ = estimate_error(raw[J])
        assert E == rep.E_hat[rep.J_list.index(J)]


def test_study_entry_at_J_inf_is_zero():
    rep = run_convergence_study(toy_config(J_list=(4, 64)))
    assert rep.E_hat[-1] == 0.0


def test_results_csv_format(tmp_path):
    cfg = toy_config()
    rep = run_convergence_study(cfg)
    write_results_csv(rep, tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert text.startswith(f"# config_sha256={cfg.digest()} seed=3\nJ,E_hat,stderr,M,p,method,seed\n")
    rows = read_results_csv(tmp_path / "r.csv")
    assert [int(r["J"]) for r in rows] == [4, 8, 16]
    assert float(rows[0]["E_hat"]) == rep.E_hat[0]


def test_threads_do_not_change_results():
    cfg = toy_config(M=5)
    a = run_convergence_study(cfg, threads=1)
    b = run_convergence_study(cfg, threads=3)
    for J in cfg.J_list:
        assert np.array_equal(a.raw[J], b.raw[J])


def test_cbs_study_records_eigenvalues():
    rep = run_convergence_study(toy_config(spec=DynamicsSpec.cbs(1.0, "optimization"), objective="quadratic"))
    assert rep.min_eig_cov.shape == (3, 6)


def test_blow_up_is_reported_with_partial_results():
    # a huge step size makes the iterates explode
    cfg = toy_config(spec=DynamicsSpec.cbo(1.0, 200.0), grid=TimeGrid(5.0, 40), M=2)
    with pytest.raises(StudyError) as info:
        run_convergence_study(cfg)
    assert "blew up" in str(info.value)
