import math

import numpy as np
import pytest

import bounded_sde as bs
from bounded_sde.convergence import (
    _fit_with_floor,
    rmse_from_squared_errors,
    rmse_standard_error,
    worker_count,
)

from test_core import toy_model


class TestGenerateLattice:
    def test_deterministic(self):
        grid = bs.TimeGrid(1.0, 64)
        a = bs.generate_lattice(2, grid, seed=42, realization_index=3)
        b = bs.generate_lattice(2, grid, seed=42, realization_index=3)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_distinct_indices_differ(self):
        grid = bs.TimeGrid(1.0, 64)
        a = bs.generate_lattice(1, grid, seed=42, realization_index=0)
        b = bs.generate_lattice(1, grid, seed=42, realization_index=1)
        assert not np.array_equal(a.increments, b.increments)

    def test_moments(self):
        grid = bs.TimeGrid(1.0, 100_000)
        lat = bs.generate_lattice(1, grid, seed=7, realization_index=0)
        dt = grid.dt
        n = lat.increments.size
        assert abs(lat.increments.mean()) < 4 * math.sqrt(dt / n)
        assert abs(lat.increments.var() / dt - 1.0) < 0.02

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            bs.generate_lattice(1, bs.TimeGrid(1.0, 0), 0, 0)
        with pytest.raises(ValueError):
            bs.generate_lattice(1, bs.TimeGrid(1.0, 4), -1, 0)


class TestCoarsen:
    def test_identity_factor(self):
        lat = bs.generate_lattice(1, bs.TimeGrid(1.0, 8), 0, 0)
        assert bs.coarsen(lat, 1) is lat

    def test_small_example(self):
        lat = bs.BrownianLattice(
            d=1, n_fine=2, dt_fine=0.5,
            increments=np.array([[0.1, -0.2]]), seed=0, realization_index=0,
        )
        out = bs.coarsen(lat, 2)
        assert out.increments.shape == (1, 1)
        assert out.increments[0, 0] == -0.1
        assert out.dt_fine == 1.0

    def test_total_sum_preserved_exactly_on_dyadic_values(self):
        # increments that are exact multiples of 2^-20 make every partial
        # sum exactly representable, so block summation must be lossless
        rng = np.random.default_rng(1)
        vals = rng.integers(-1000, 1000, size=(2, 512)) * 2.0**-20
        lat = bs.BrownianLattice(2, 512, 1 / 512, vals, 0, 0)
        for factor in (2, 8, 64, 512):
            out = bs.coarsen(lat, factor)
            np.testing.assert_array_equal(out.increments.sum(axis=1), vals.sum(axis=1))

    def test_total_sum_preserved_within_rounding(self):
        lat = bs.generate_lattice(3, bs.TimeGrid(1.0, 4096), 5, 0)
        for factor in (2, 16, 1024):
            out = bs.coarsen(lat, factor)
            np.testing.assert_allclose(
                out.increments.sum(axis=1), lat.increments.sum(axis=1),
                rtol=0, atol=1e-13,
            )

    def test_variance_scales_with_factor(self):
        lat = bs.generate_lattice(1, bs.TimeGrid(1.0, 2**16), 9, 0)
        out = bs.coarsen(lat, 16)
        assert abs(out.increments.var() / out.dt_fine - 1.0) < 0.05

    def test_rejects_nondivisible_factor(self):
        lat = bs.generate_lattice(1, bs.TimeGrid(1.0, 10), 0, 0)
        with pytest.raises(ValueError):
            bs.coarsen(lat, 3)


class TestErrorArithmetic:
    def test_rmse_of_injected_errors(self):
        # errors {0.3, 0.4}: mean square 0.125
        assert rmse_from_squared_errors([0.09, 0.16]) == pytest.approx(
            math.sqrt(0.125), rel=1e-15
        )

    def test_fit_order_on_exact_line(self):
        dts = [2.0**-2, 2.0**-3, 2.0**-4]
        order, intercept = bs.fit_order(dts, dts)
        assert order == pytest.approx(1.0, abs=1e-12)
        assert intercept == pytest.approx(0.0, abs=1e-12)

    def test_fit_order_needs_two_points(self):
        with pytest.raises(ValueError):
            bs.fit_order([0.5], [0.1])

    def test_stderr_zero_for_identical_errors(self):
        assert rmse_standard_error([0.04, 0.04, 0.04]) == 0.0

    def test_floor_exclusion_near_reference(self):
        # a reference only one halving finer than the smallest level is
        # distrusted: floor = 2.5e-3 * (2^-7 / 2^-6) = 1.25e-3, so levels
        # with rmse <= 1.25e-2 drop out; the two coarsest are retained
        ref = bs.SchemeReference(bs.SchemeConfig(scheme=bs.Scheme.MIL_MEAN), dt_ref=2.0**-7)
        dts = [2.0**-2, 2.0**-4, 2.0**-6]
        rmse = [4e-2, 1e-2, 2.5e-3]
        excluded, order, _ = _fit_with_floor(dts, rmse, ref)
        assert excluded == [2.0**-6]
        assert math.isfinite(order)

    def test_healthy_configuration_keeps_all_points(self):
        ref = bs.SchemeReference(bs.SchemeConfig(scheme=bs.Scheme.MIL_MEAN), dt_ref=2.0**-14)
        dts = [2.0**-k for k in range(4, 10)]
        rmse = [0.04 * dt for dt in dts]
        excluded, order, _ = _fit_with_floor(dts, rmse, ref)
        assert excluded == []
        assert order == pytest.approx(1.0, abs=1e-12)

    def test_exact_reference_never_excludes(self):
        ref = bs.ExactReference(lambda y0, t, w: w, "exact")
        excluded, order, _ = _fit_with_floor([0.5, 0.25], [1e-9, 5e-10], ref)
        assert excluded == []
        assert math.isfinite(order)


class TestCouplingAndReproducibility:
    def test_frozen_model_coupled_exactly_across_resolutions(self):
        m = toy_model(f=lambda y: np.zeros_like(y), g=lambda y: np.zeros_like(y))
        grid = bs.TimeGrid(1.0, 16)
        lat = bs.generate_lattice(1, grid, 3, 0)
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        fine = bs.simulate_path(m, cfg, [0.5], grid, lat.increments)
        coarse_lat = bs.coarsen(lat, 4)
        coarse = bs.simulate_path(m, cfg, [0.5], bs.TimeGrid(1.0, 4), coarse_lat.increments)
        assert fine.final_state[0] == coarse.final_state[0] == 0.5

    def test_report_independent_of_worker_count(self, monkeypatch):
        case = bs.benchmark_case("exact1")
        ref = bs.ExactReference(case.exact_solution, "exact")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)

        def report():
            return bs.rmse_experiment(case.model, cfg, case.x0, 4.0,
                                      [2.0**-4, 2.0**-5], 40, 11, ref)

        monkeypatch.setenv("BOUNDED_SDE_THREADS", "1")
        r1 = report()
        monkeypatch.setenv("BOUNDED_SDE_THREADS", "3")
        r2 = report()
        assert r1 == r2

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("BOUNDED_SDE_THREADS", "5")
        assert worker_count() == 5
        monkeypatch.setenv("BOUNDED_SDE_THREADS", "0")
        with pytest.raises(ValueError):
            worker_count()
        monkeypatch.delenv("BOUNDED_SDE_THREADS")
        assert worker_count() >= 1

    def test_brownian_consistency_across_levels(self):
        # per-step variance at every coarsening level matches its dt
        grid = bs.TimeGrid(1.0, 2**12)
        lats = [bs.generate_lattice(1, grid, 17, m) for m in range(64)]
        for factor in (1, 4, 64):
            pooled = np.concatenate(
                [bs.coarsen(l, factor).increments.ravel() for l in lats]
            )
            dt = grid.dt * factor
            n = pooled.size
            # chi-square concentration: var estimate within 3 standard errors
            assert abs(pooled.var() - dt) < 3 * dt * math.sqrt(2.0 / n)


class TestRmseExperiment:
    def test_grid_must_divide(self):
        case = bs.benchmark_case("exact1")
        ref = bs.ExactReference(case.exact_solution, "exact")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        with pytest.raises(ValueError, match="whole number"):
            bs.rmse_experiment(case.model, cfg, case.x0, 4.0, [0.3], 4, 0, ref)

    def test_reference_must_be_finer(self):
        case = bs.benchmark_case("trig2")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        ref = bs.SchemeReference(cfg, dt_ref=0.25)
        with pytest.raises(ValueError, match="finer"):
            bs.rmse_experiment(case.model, cfg, case.x0, 1.0, [0.25, 0.125], 4, 0, ref)

    def test_small_run_structure(self):
        case = bs.benchmark_case("exact1")
        ref = bs.ExactReference(case.exact_solution, "exact")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        rep = bs.rmse_experiment(case.model, cfg, case.x0, 4.0,
                                 [2.0**-3, 2.0**-4, 2.0**-5], 50, 5, ref)
        assert len(rep.rmse_list) == 3
        assert rep.dt_list == (2.0**-3, 2.0**-4, 2.0**-5)
        assert all(r > 0 for r in rep.rmse_list)
        assert math.isfinite(rep.fitted_order)
        assert rep.reference == "exact"
        assert rep.seed == 5 and rep.realizations == 50

    def test_scheme_reference_run(self):
        case = bs.benchmark_case("sis3b")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        ref = bs.SchemeReference(bs.SchemeConfig(scheme=bs.Scheme.MIL_MEAN), 2.0**-9)
        rep = bs.rmse_experiment(case.model, cfg, case.x0, 1.0,
                                 [2.0**-4, 2.0**-5], 30, 6, ref)
        assert all(r > 0 for r in rep.rmse_list)
        assert "mil-mean" in rep.reference

    def test_sup_error_dominates_final_error(self):
        case = bs.benchmark_case("exact1")
        ref = bs.ExactReference(case.exact_solution, "exact")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        args = (case.model, cfg, case.x0, 4.0, [2.0**-4, 2.0**-5], 30, 8, ref)
        final = bs.rmse_experiment(*args)
        sup = bs.rmse_experiment(*args, sup_error=True)
        assert all(s >= f for s, f in zip(sup.rmse_list, final.rmse_list))
        assert sup.error_at == "sup" and final.error_at == "final"

    def test_csv_and_json_round_trip(self, tmp_path):
        case = bs.benchmark_case("exact1")
        ref = bs.ExactReference(case.exact_solution, "exact")
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        rep = bs.rmse_experiment(case.model, cfg, case.x0, 4.0, [2.0**-4, 2.0**-5], 10, 9, ref)
        csv_path = tmp_path / "report.csv"
        json_path = tmp_path / "report.json"
        rep.write_csv(csv_path)
        rep.write_json(json_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "dt,rmse,stderr,realizations"
        for line, dt, rmse in zip(lines[1:], rep.dt_list, rep.rmse_list):
            fields = line.split(",")
            assert float(fields[0]) == dt
            assert float(fields[1]) == rmse
            assert int(fields[3]) == 10
        import json

        payload = json.loads(json_path.read_text())
        assert payload["fitted_order"] == rep.fitted_order
        assert payload["spec_version"] == 1
        assert payload["seed"] == 9


class TestLocalErrorProbe:
    def test_deterministic_model_exponent(self):
        # with no noise the one-step error is the Euler ODE error O(dt^2),
        # so the mean-square exponent approaches 4
        m = toy_model(
            f=lambda y: 1.2 * y * (1.0 - y),
            g=lambda y: np.zeros_like(y),
            g_deriv=lambda y: np.zeros_like(y),
        )
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        rep = bs.local_error_probe(m, cfg, [0.3], [2.0**-k for k in range(3, 8)],
                                   realizations=4, seed=1, substeps=400)
        assert rep.fitted_exponent >= 3.5

    def test_one_step_error_contracts_when_dt_halves(self):
        # mean-square one-step error should contract by at least 2^{1.4}
        m = bs.example1_model(beta=2.0)
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        rep = bs.local_error_probe(m, cfg, [0.5], [2.0**-k for k in range(4, 9)],
                                   realizations=3000, seed=2, substeps=500)
        ratios = np.array(rep.mean_sq_list[:-1]) / np.array(rep.mean_sq_list[1:])
        assert np.all(ratios >= 2.0**1.4)

    def test_needs_two_levels(self):
        with pytest.raises(ValueError):
            bs.local_error_probe(bs.example1_model(2.0),
                                 bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN),
                                 [0.5], [0.125], 10, 0)

    def test_probe_csv(self, tmp_path):
        m = bs.example1_model(beta=2.0)
        cfg = bs.SchemeConfig(scheme=bs.Scheme.EM_MEAN)
        rep = bs.local_error_probe(m, cfg, [0.5], [2.0**-4, 2.0**-5], 16, 3, substeps=50)
        path = tmp_path / "probe.csv"
        rep.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "dt,mean_sq_error,realizations"
        assert len(lines) == 3
