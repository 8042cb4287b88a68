import numpy as np
import pytest

import coupled_dipoles.ensemble as ensemble_mod
from coupled_dipoles import (
    GeometrySpec,
    GridSpec,
    RunConfig,
    UniformCylinder,
    bin_by_energy,
    derive_seed,
    merge_accumulators,
    run_ensemble,
    run_single_configuration,
)
from coupled_dipoles.ensemble import (
    EnsembleAccumulator,
    FailureBudgetError,
    _load_checkpoint,
    _save_checkpoint,
    splitmix64,
)

from oracles import rebin_means_bruteforce


def small_config(n_atoms=24, n_configs=6, seed=99, **overrides):
    geometry = GeometrySpec(
        shape=UniformCylinder(radius=np.pi, length=n_atoms / (0.3 * np.pi**3)),
        atom_count=n_atoms,
    )
    defaults = dict(
        geometry=geometry,
        n_configs=n_configs,
        master_seed=seed,
        coarse_grid=GridSpec(-15.0, 15.0, 0.5),
        fine_grid=GridSpec(-1.0, 1.0, 0.1),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def results_equal(a, b):
    pairs = [
        (a.spectrum.i_total, b.spectrum.i_total),
        (a.spectrum.i_coherent, b.spectrum.i_coherent),
        (a.spectrum.i_incoherent, b.spectrum.i_incoherent),
        (a.spectrum.excitation, b.spectrum.excitation),
        (a.dos.counts, b.dos.counts),
        (a.dos_fine.counts, b.dos_fine.counts),
        (a.capability.mean, b.capability.mean),
        (a.excitation_hist, b.excitation_hist),
        (a.fourier_map.mean_abs, b.fourier_map.mean_abs),
    ]
    pairs.extend(
        (ca.i_total, cb.i_total) for ca, cb in zip(a.angle_spectra, b.angle_spectra)
    )
    return all(np.array_equal(x, y, equal_nan=True) for x, y in pairs)


class TestSeedDerivation:
    def test_splitmix64_reference_stream(self):
        # first outputs of the splitmix64 stream seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4
        assert derive_seed(0, 0) == 0xE220A8397B1DCDAF
        assert derive_seed(0, 1) == 0x6E789E6AA1B965F4
        assert derive_seed(0, 2) == 0x06C45D188009454F

    def test_injectivity_over_a_run(self):
        seeds = {derive_seed(123456789, i) for i in range(10_000)}
        assert len(seeds) == 10_000

    def test_rejects_negative_index(self):
        with pytest.raises(ValueError):
            derive_seed(1, -1)


class TestSingleConfiguration:
    def test_bitwise_deterministic(self):
        config = small_config()
        a = run_single_configuration(config, 2)
        b = run_single_configuration(config, 2)
        assert a.seed == b.seed
        for attr in ("i_total", "i_coherent", "i_incoherent", "excitation",
                     "dos_counts", "dos_fine_counts", "capability_sum",
                     "p2_sum", "fourier_sum"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr)), attr

    def test_distinct_indices_use_distinct_clouds(self):
        config = small_config()
        a = run_single_configuration(config, 0)
        b = run_single_configuration(config, 1)
        assert a.seed != b.seed
        assert not np.array_equal(a.i_total, b.i_total)

    def test_index_out_of_range(self):
        config = small_config(n_configs=3)
        with pytest.raises(ValueError):
            run_single_configuration(config, 3)

    def test_positions_kept_only_when_dumping(self):
        config = small_config(dump_positions=True, n_configs=1)
        bundle = run_single_configuration(config, 0)
        assert bundle.positions.shape == (config.geometry.atom_count, 3)
        assert run_single_configuration(small_config(n_configs=1), 0).positions is None


class TestRunEnsemble:
    def test_single_configuration_run_matches_bundle(self):
        config = small_config(n_configs=1)
        bundle = run_single_configuration(config, 0)
        result = run_ensemble(config)
        assert result.config_count == 1
        assert np.array_equal(result.spectrum.i_total, bundle.i_total)
        assert np.array_equal(result.dos.counts, bundle.dos_counts)

    def test_worker_counts_agree_bitwise(self):
        config = small_config(n_configs=8, angles=(0.15,))
        serial = run_ensemble(config, n_workers=1)
        parallel = run_ensemble(config, n_workers=2)
        assert results_equal(serial, parallel)

    def test_failure_budget_enforced(self, monkeypatch):
        config = small_config(n_configs=8)
        real = ensemble_mod.run_single_configuration

        def flaky(cfg, index):
            if index in (2, 5):
                raise RuntimeError("synthetic failure")
            return real(cfg, index)

        monkeypatch.setattr(ensemble_mod, "run_single_configuration", flaky)
        with pytest.raises(FailureBudgetError):
            run_ensemble(config, n_workers=1)

    def test_failures_within_budget_are_recorded(self, monkeypatch):
        config = small_config(n_configs=120, n_atoms=6)
        real = ensemble_mod.run_single_configuration

        def flaky(cfg, index):
            if index == 7:
                raise RuntimeError("synthetic failure")
            return real(cfg, index)

        monkeypatch.setattr(ensemble_mod, "run_single_configuration", flaky)
        result = run_ensemble(config, n_workers=1)
        assert result.config_count == 119
        assert result.failed[0][0] == 7
        assert "synthetic failure" in result.failed[0][1]


class TestAccumulatorMerge:
    def test_merge_with_empty_is_identity(self):
        config = small_config(n_configs=3)
        acc = EnsembleAccumulator(config)
        for i in range(3):
            acc.add(run_single_configuration(config, i))
        merged = merge_accumulators(acc, EnsembleAccumulator(config))
        assert results_equal(acc.finalize(), merged.finalize())

    def test_two_singles_equal_sequential_pair(self):
        config = small_config(n_configs=2)
        a = EnsembleAccumulator(config)
        a.add(run_single_configuration(config, 0))
        b = EnsembleAccumulator(config)
        b.add(run_single_configuration(config, 1))
        merged = merge_accumulators(a, b)
        sequential = run_ensemble(config)
        assert results_equal(merged.finalize(), sequential)

    def test_split_invariance(self):
        config = small_config(n_configs=20, n_atoms=10)
        bundles = [run_single_configuration(config, i) for i in range(20)]

        def build(indices):
            acc = EnsembleAccumulator(config)
            for i in indices:
                acc.add(bundles[i])
            return acc

        uneven = merge_accumulators(build(range(7)), build(range(7, 20)))
        even = merge_accumulators(build(range(10)), build(range(10, 20)))
        assert results_equal(uneven.finalize(), even.finalize())

    def test_merge_rejects_mismatched_configs(self):
        acc_a = EnsembleAccumulator(small_config(seed=1))
        acc_b = EnsembleAccumulator(small_config(seed=2))
        with pytest.raises(ValueError):
            merge_accumulators(acc_a, acc_b)

    def test_merge_rejects_duplicate_indices(self):
        config = small_config(n_configs=2)
        acc_a = EnsembleAccumulator(config)
        acc_a.add(run_single_configuration(config, 0))
        acc_b = EnsembleAccumulator(config)
        acc_b.add(run_single_configuration(config, 0))
        with pytest.raises(ValueError):
            merge_accumulators(acc_a, acc_b)


class TestCheckpointing:
    def test_resume_matches_uninterrupted_run(self, tmp_path):
        config = small_config(n_configs=6)
        reference = run_ensemble(config)
        partial = EnsembleAccumulator(config)
        for i in range(3):
            partial.add(run_single_configuration(config, i))
        path = tmp_path / "checkpoint.pkl"
        _save_checkpoint(path, partial)
        resumed = run_ensemble(config, checkpoint_path=path, checkpoint_every=2)
        assert results_equal(reference, resumed)
        final = _load_checkpoint(path, config)
        assert final.config_count == 6

    def test_checkpoint_rejects_other_config(self, tmp_path):
        config = small_config(n_configs=2)
        acc = EnsembleAccumulator(config)
        acc.add(run_single_configuration(config, 0))
        path = tmp_path / "checkpoint.pkl"
        _save_checkpoint(path, acc)
        with pytest.raises(ValueError):
            run_ensemble(small_config(n_configs=2, seed=7777),
                         checkpoint_path=path, checkpoint_every=1)


class TestBinByEnergy:
    def test_constant_values(self):
        pairs = [(x, 3.5) for x in np.linspace(-1, 1, 50)]
        out = bin_by_energy(pairs, np.linspace(-1, 1.0001, 5))
        assert np.allclose(out.mean, 3.5)

    def test_two_values_average(self):
        out = bin_by_energy([(0.1, 1.0), (0.2, 2.0)], [0.0, 0.5, 1.0])
        assert out.mean[0] == pytest.approx(1.5)
        assert np.isnan(out.mean[1])
        assert out.count.tolist() == [2, 0]

    def test_against_bruteforce_rebinning(self):
        rng = np.random.default_rng(3)
        pairs = list(zip(rng.uniform(-5, 5, 400), rng.normal(size=400)))
        edges = np.linspace(-4.0, 4.0, 17)
        ours = bin_by_energy(pairs, edges)
        ref_means, ref_counts = rebin_means_bruteforce(pairs, edges)
        assert ours.count.tolist() == ref_counts
        for got, want in zip(ours.mean, ref_means):
            if np.isnan(want):
                assert np.isnan(got)
            else:
                assert got == pytest.approx(want, rel=1e-12)

    def test_rejects_bad_edges(self):
        with pytest.raises(ValueError):
            bin_by_energy([(0.0, 1.0)], [1.0, 0.0])


class TestRunConfigValidation:
    def test_rejects_fourier_without_modes(self):
        with pytest.raises(ValueError):
            small_config(modes_enabled=False, fourier_enabled=True)

    def test_rejects_bad_angles(self):
        with pytest.raises(ValueError):
            small_config(angles=(np.pi / 2,))

    def test_kf_grid_spacing_follows_cylinder_length(self):
        config = small_config()
        length = config.geometry.shape.length
        kf = config.kf_grid()
        assert kf[0] == 0.0
        assert np.allclose(np.diff(kf), 2 * np.pi / (8 * length))
        assert kf[-1] <= config.kf_max

    def test_merged_grid_contains_exact_zero_and_is_sorted(self):
        grid = small_config().detuning_grid()
        assert 0.0 in grid
        assert np.all(np.diff(grid) > 0)


@pytest.mark.slow
class TestConvergence:
    def test_sem_scales_as_inverse_sqrt(self):
        # standard error at the left peak detuning from one large sample,
        # evaluated on nested prefixes n = 250, 1000, 4000
        config = small_config(n_atoms=16, n_configs=4000, seed=4,
                              coarse_grid=GridSpec(-7.5, -7.1, 0.1),
                              fine_grid=None, modes_enabled=False,
                              fourier_enabled=False)
        grid = config.detuning_grid()
        col = int(np.flatnonzero(np.isclose(grid, -7.3))[0])
        values = np.array([
            run_single_configuration(config, i).i_total[col] for i in range(4000)
        ])
        sems = {n: values[:n].std(ddof=1) / np.sqrt(n) for n in (250, 1000, 4000)}
        for n_small, n_big in ((250, 1000), (1000, 4000)):
            expected = np.sqrt(n_big / n_small)
            ratio = sems[n_small] / sems[n_big]
            assert expected / 2 < ratio < expected * 2
