import numpy as np
import pytest

from shapeop.bench import (
    CoefficientOracle,
    ErrorCurve,
    derivative_decay_report,
    estimate_tail_exponent,
    evaluate_oracle_batch,
    fit_rate,
    make_test_set,
    mean_square_error,
    read_curve_csv,
    run_experiment,
    worst_case_error,
    write_curve_csv,
)
from shapeop.config import build_effective_atlas, build_problem_factory, validate_config
from shapeop.errors import BenchError
from shapeop.pullback import ManufacturedSineSource
from shapeop.shape_param import (
    IdentityField,
    SQUARE,
    WeightSequence,
    make_atlas,
    sine_feature_catalog,
)
from shapeop.surrogate_spectral import fit as fit_spectral


def small_cfg(**bench_overrides):
    bench = {"n_schedule": [8, 16, 32, 64], "h": 1 / 32, "h_coarse": 1 / 16,
             "n_sup": 40, "n_mc": 30, "fd_h": 1 / 16, "n_probe": 4}
    bench.update(bench_overrides)
    return validate_config({
        "seed": 5,
        "atlas": {"truncation_dim": 4},
        "frame": {"m_ref": 64},
        "bench": bench,
    })


# ---------------------------------------------------------------------------
# error measurement
# ---------------------------------------------------------------------------

def linear_oracle(y):
    a = np.array([0.5, -0.25, 0.125])
    return a * y[0] + 0.5 * a * y[1]


def test_worst_case_zero_for_exact_surrogate():
    surr = fit_spectral(linear_oracle, np.array([0.5, 0.25]), budget=12, m_out=3)
    nodes = surr.grid_points()
    assert worst_case_error(surr, linear_oracle, nodes) <= 1e-12


def test_worst_case_constant_surrogate_corner_extremes():
    # constant surrogate (= oracle at y = 0) against an oracle linear in y_1:
    # the sampled max sits at the +-e_1 corners of the test set
    def oracle(y):
        return np.array([0.5, -0.25, 0.125]) * y[0]

    surr = fit_spectral(oracle, np.array([0.5, 0.25]), budget=3, m_out=3)
    assert len(surr.index_set) == 1  # constant interpolant at the center
    test_ys = make_test_set(2, 10, seed=3)
    got = worst_case_error(surr, oracle, test_ys)
    corner_err = max(np.linalg.norm(oracle(y)) for y in test_ys[:4])
    assert got == pytest.approx(corner_err, rel=1e-12)


def test_mean_square_below_worst_case_same_samples():
    surr = fit_spectral(linear_oracle, np.array([0.5, 0.25]), budget=2, m_out=1)
    ys = make_test_set(2, 50, seed=9)
    vals = np.array([linear_oracle(y) for y in ys])
    sup = worst_case_error(surr, linear_oracle, ys, oracle_values=vals)
    ms = mean_square_error(surr, linear_oracle, len(ys), 0,
                           oracle_values=vals, ys=ys)
    assert ms.value <= sup + 1e-15


def test_mean_square_zero_for_exact_surrogate():
    surr = fit_spectral(linear_oracle, np.array([0.5, 0.25]), budget=12, m_out=3)
    ms = mean_square_error(surr, linear_oracle, 100, seed=4)
    assert ms.value <= 1e-12


def test_mean_square_mc_consistency():
    # doubling n_mc moves the estimate by at most ~2 standard errors
    surr = fit_spectral(linear_oracle, np.array([0.5, 0.25]), budget=1, m_out=3)
    a = mean_square_error(surr, linear_oracle, 400, seed=21)
    b = mean_square_error(surr, linear_oracle, 800, seed=22)
    assert abs(a.value - b.value) <= 2.5 * (a.stderr + b.stderr)


def test_mean_square_deterministic_per_seed():
    surr = fit_spectral(linear_oracle, np.array([0.5, 0.25]), budget=1, m_out=3)
    a = mean_square_error(surr, linear_oracle, 200, seed=7)
    b = mean_square_error(surr, linear_oracle, 200, seed=7)
    assert a.value == b.value


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

def synth_curve(errfn):
    curve = ErrorCurve()
    for N in (8, 16, 32, 64, 128):
        e = errfn(N)
        curve.add(N, e, e, N)
    return curve


def test_fit_rate_exact_power_law():
    curve = synth_curve(lambda N: 3.0 / N)
    model = fit_rate(curve)
    assert model.slope == pytest.approx(-1.0, abs=1e-10)
    assert model.rate == pytest.approx(1.0, abs=1e-10)
    assert model.constant == pytest.approx(3.0, rel=1e-9)


def test_fit_rate_constant_errors():
    model = fit_rate(synth_curve(lambda N: 0.5))
    assert model.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_exact_surrogate_flag():
    curve = ErrorCurve()
    for N in (8, 16, 32, 64):
        curve.add(N, 0.0, 0.0, N)
    model = fit_rate(curve)
    assert model.exact
    assert model.rate == np.inf


def test_fit_rate_requires_four_points():
    curve = ErrorCurve()
    for N in (8, 16, 32):
        curve.add(N, 1.0 / N, 1.0 / N, N)
    with pytest.raises(BenchError):
        fit_rate(curve)


def test_fit_rate_predicted_comparison():
    model = fit_rate(synth_curve(lambda N: 2.0 * N ** -1.5), predicted=1.5)
    assert model.satisfied
    model2 = fit_rate(synth_curve(lambda N: 2.0 * N ** -0.5), predicted=1.5)
    assert not model2.satisfied


def test_fit_rate_floor_filter():
    # decays until it hits a floor of 0.01; the flat region must not enter
    curve = synth_curve(lambda N: max(8.0 / N, 0.01))
    model = fit_rate(curve, floor=0.01 / 3.0 + 1e-9)
    assert model.rate >= 0.9


def test_rate_exponent_table():
    # s = 2, t = 3: worst-case exponent min{s-1, t} = 1,
    # mean-square exponent min{s-1/2, t} = 1.5
    s, t = 2.0, 3.0
    assert min(s - 1.0, t) == 1.0
    assert min(s - 0.5, t) == 1.5


def test_curve_requires_increasing_N():
    curve = ErrorCurve()
    curve.add(8, 1.0, 1.0, 1)
    with pytest.raises(BenchError):
        curve.add(8, 0.5, 0.5, 1)


def test_curve_csv_roundtrip(tmp_path):
    curve = synth_curve(lambda N: 1.7 / N ** 1.25)
    p = tmp_path / "c.csv"
    write_curve_csv(curve, str(p))
    back = read_curve_csv(str(p))
    assert back.points == curve.points


# ---------------------------------------------------------------------------
# tail exponent
# ---------------------------------------------------------------------------

def test_tail_exponent_synthetic():
    w = np.arange(1, 65, dtype=float) ** -2.0
    for t in (0.5, 1.0, 1.75):
        rows = np.abs(np.random.default_rng(0).normal(1.0, 0.001, size=(20, 64)))
        rows *= w ** t
        got = estimate_tail_exponent(rows, w)
        assert got == pytest.approx(t, abs=0.02)


# ---------------------------------------------------------------------------
# derivative decay
# ---------------------------------------------------------------------------

def test_decay_single_feature_row():
    atlas = make_atlas(SQUARE, IdentityField(), sine_feature_catalog(1),
                       WeightSequence((0.05,)), 1)
    table = derivative_decay_report(atlas, ManufacturedSineSource(), 1 / 16)
    assert len(table.rows) == 1
    k, fd, g, ratio = table.rows[0]
    assert k == 1 and np.isfinite(ratio) and ratio > 0


def test_decay_values_fall_with_weights():
    # w_k = k^-3 sine atlas: fd values drop by >= x4 from k=1 to k=4
    atlas = make_atlas(SQUARE, IdentityField(), sine_feature_catalog(4),
                       WeightSequence.power(0.1, 3.0, 4), 4)
    table = derivative_decay_report(atlas, ManufacturedSineSource(), 1 / 16)
    fd = [r[1] for r in table.rows]
    assert fd[0] / fd[3] >= 4.0


def test_decay_csv_format(tmp_path):
    atlas = make_atlas(SQUARE, IdentityField(), sine_feature_catalog(2),
                       WeightSequence((0.05, 0.03)), 2)
    table = derivative_decay_report(atlas, ManufacturedSineSource(), 1 / 8)
    p = tmp_path / "d.csv"
    table.to_csv(str(p))
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "k,fd_h1,gamma_k,ratio"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# oracle and experiment
# ---------------------------------------------------------------------------

def test_oracle_memoizes_and_parallel_matches_serial():
    cfg = small_cfg()
    atlas, _ = build_effective_atlas(cfg)
    oracle = CoefficientOracle(atlas, build_problem_factory(cfg), 1 / 16, m_ref=32)
    ys = make_test_set(4, 4, seed=1)
    serial = evaluate_oracle_batch(oracle, ys, 1)
    parallel = evaluate_oracle_batch(oracle, ys, 2)
    assert np.array_equal(serial, parallel)


def test_make_test_set_layout():
    ts = make_test_set(3, 10, seed=0)
    assert ts.shape == (16, 3)
    assert np.allclose(np.abs(ts[:6]).sum(axis=1), 1.0)
    assert np.all(np.abs(ts) <= 1.0)


def test_run_experiment_smoke(tmp_path):
    cfg = small_cfg()
    bundle = run_experiment(cfg, output_dir=str(tmp_path))
    assert (tmp_path / "curve_spectral.csv").exists()
    assert (tmp_path / "curve_spectral.svg").exists()
    assert (tmp_path / "derivative_decay.csv").exists()
    assert (tmp_path / "derivative_decay.svg").exists()
    assert (tmp_path / "summary.json").exists()
    assert len(bundle.curve.points) == 4
    sups = [p.error_sup for p in bundle.curve.points]
    assert all(b <= 1.5 * a for a, b in zip(sups, sups[1:]))
    ms = [p.error_ms for p in bundle.curve.points]
    assert all(m <= s for m, s in zip(ms, sups))


def test_run_experiment_deterministic_reruns(tmp_path):
    cfg = small_cfg(n_sup=20, n_mc=15)
    run_experiment(cfg, output_dir=str(tmp_path / "a"))
    run_experiment(cfg, output_dir=str(tmp_path / "b"))
    for f in ("curve_spectral.csv", "derivative_decay.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_run_experiment_records_failed_stage(tmp_path):
    import json
    from shapeop.errors import BenchError
    # m_ref far beyond the quadrature resolution: the oracle stage must fail
    cfg = small_cfg()
    cfg["frame"]["m_ref"] = 4096
    with pytest.raises(BenchError, match="oracle_test_set"):
        run_experiment(cfg, output_dir=str(tmp_path))
    summary = json.loads((tmp_path / "summary.json").read_text())
    failed = [s for s in summary["stages"] if s["status"] == "failed"]
    assert failed and failed[0]["stage"] == "oracle_test_set"
