import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency, multivariate_normal

from mixlca.data import (CategoricalDataset, DataFormatError, DataValidationError,
                         GenerationError, SimulationSpec, bivariate_normal_cdf,
                         calibrate_latent_correlation, discrete_correlation, generate_dataset,
                         load_csv, load_dataset, log_odds_matrix, benchmark_design, preset_specs,
                         save_dataset)


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_binary_labels(self, tmp_path):
        data = load_csv(write(tmp_path, "y,n\nn,n\ny,y\n"))
        assert (data.n_obs, data.n_vars) == (3, 2)
        np.testing.assert_array_equal(data.num_categories, [2, 2])
        np.testing.assert_array_equal(data.values, [[1, 1], [2, 1], [1, 2]])

    def test_header_and_schema(self, tmp_path):
        path = write(tmp_path, "a,b\ny,lo\nn,hi\nn,mid\n")
        data = load_csv(path, header=True, schema={"b": ["lo", "mid", "hi"], 0: ["n", "y"]})
        assert data.column_names == ["a", "b"]
        np.testing.assert_array_equal(data.num_categories, [2, 3])
        np.testing.assert_array_equal(data.values, [[2, 1], [1, 3], [1, 2]])

    def test_constant_column(self, tmp_path):
        with pytest.raises(DataValidationError, match="fewer than 2 categories"):
            load_csv(write(tmp_path, "a,x\nb,x\n"))

    def test_ragged(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_csv(write(tmp_path, "a,b\na\n"))

    def test_missing_cell(self, tmp_path):
        with pytest.raises(DataValidationError, match="missing"):
            load_csv(write(tmp_path, "a,b\n,a\n"))

    def test_back_pain_shape(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.integers(0, 2, size=(425, 36))
        mat[0] = 0
        mat[1] = 1
        path = write(tmp_path, "\n".join(",".join(map(str, row)) for row in mat) + "\n")
        data = load_csv(path)
        assert (data.n_obs, data.n_vars) == (425, 36)
        assert np.all(data.num_categories == 2)


class TestDatasetInvariants:
    def test_rejects_bad_codes(self):
        with pytest.raises(DataValidationError):
            CategoricalDataset([[1, 3]], [2, 2])
        with pytest.raises(DataValidationError):
            CategoricalDataset([[1, 2]], [2, 2], true_labels=[1, 1])

    def test_one_hot(self):
        data = CategoricalDataset([[1, 3], [2, 1]], [2, 3])
        np.testing.assert_array_equal(data.one_hot(), [[1, 0, 0, 0, 1], [0, 1, 1, 0, 0]])

    def test_round_trip(self, tmp_path):
        data = generate_dataset(benchmark_design(0.3, num_obs=60, seed=3))
        sidecar = save_dataset(data, tmp_path / "sim.csv")
        meta = json.loads(sidecar.read_text())
        assert meta["schema_version"] == 1 and meta["num_categories"] == [2] * 30
        back = load_dataset(tmp_path / "sim.csv")
        np.testing.assert_array_equal(back.values, data.values)
        np.testing.assert_array_equal(back.true_labels, data.true_labels)


class TestBivariateNormal:
    @pytest.mark.parametrize("h,k,rho", [(0.0, 0.0, 0.5), (0.84, 0.84, 0.3), (-0.84, 0.84, 0.9),
                                         (1.5, -0.3, 0.99), (0.2, 0.1, 0.0)])
    def test_against_scipy(self, h, k, rho):
        want = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]]).cdf([h, k])
        assert bivariate_normal_cdf(h, k, rho) == pytest.approx(want, abs=1e-6)

    def test_orthant_closed_form(self):
        # P(Z1<=0, Z2<=0) = 1/4 + arcsin(rho)/(2 pi)
        for rho in (0.1, 0.5, 0.95):
            assert bivariate_normal_cdf(0.0, 0.0, rho) == pytest.approx(
                0.25 + np.arcsin(rho) / (2 * np.pi), abs=1e-12)


class TestCalibration:
    def test_hits_target(self):
        latent = calibrate_latent_correlation([0.8, 0.2], [0.8, 0.2], 0.3)
        assert abs(discrete_correlation([0.8, 0.2], [0.8, 0.2], latent) - 0.3) < 1e-4
        assert latent > 0.3  # discretization attenuates correlation

    def test_monte_carlo_oracle(self):
        latent = calibrate_latent_correlation([0.8, 0.2], [0.7, 0.3], 0.3)
        rng = np.random.default_rng(7)
        z = rng.multivariate_normal([0, 0], [[1, latent], [latent, 1]], size=400_000)
        y1 = z[:, 0] <= np.quantile(z[:, 0], 0.8)
        y2 = z[:, 1] <= np.quantile(z[:, 1], 0.7)
        assert abs(np.corrcoef(y1, y2)[0, 1] - 0.3) < 0.005

    def test_infeasible(self):
        # P=0.8 against P=0.2 caps the binary correlation at sqrt(0.04/0.64) = 0.25
        assert discrete_correlation([0.8, 0.2], [0.2, 0.8], 1 - 1e-10) == pytest.approx(0.25, abs=1e-3)
        with pytest.raises(GenerationError):
            calibrate_latent_correlation([0.8, 0.2], [0.2, 0.8], 0.3)
        with pytest.raises(GenerationError):
            generate_dataset(SimulationSpec(10, [[0.8, 0.2]], [[(0, 2, 0.3)]], [1.0]))


def _cluster_corr(values, labels, k, j1, j2):
    sub = values[labels == k]
    return np.corrcoef(sub[:, j1], sub[:, j2])[0, 1]


@pytest.fixture(scope="module")
def big_independent():
    return generate_dataset(benchmark_design(0.0, num_obs=30_000, seed=11))


@pytest.fixture(scope="module")
def big_correlated():
    return generate_dataset(benchmark_design(0.3, num_obs=30_000, seed=12))


class TestGenerate:
    def test_marginals(self, big_independent):
        d = big_independent
        table = np.array(benchmark_design(0.0).cluster_marginals)
        for k in range(3):
            emp = (d.values[d.true_labels == k + 1] == 1).mean(axis=0)
            assert np.all(np.abs(emp - table[k]) < 0.02)
        v1 = (d.values[d.true_labels == 1, 0] == 1).mean()
        assert abs(v1 - 0.8) < 0.02

    def test_independence_small_correlation(self, big_independent):
        d = big_independent
        vals = d.values[d.true_labels == 1][:10_000]
        corr = np.corrcoef(vals.T)
        off = corr[~np.eye(30, dtype=bool)]
        assert np.all(np.abs(off) < 0.03 + 0.01)  # 1e4 rows: sd about 0.01
        assert np.mean(np.abs(off) < 0.03) > 0.99

    def test_chi_square_independence(self, big_independent):
        d = big_independent
        vals = d.values[d.true_labels == 2][:10_000]
        pvals = []
        for a in range(30):
            for b in range(a + 1, 30):
                table = np.histogram2d(vals[:, a], vals[:, b], bins=[[0.5, 1.5, 2.5]] * 2)[0]
                pvals.append(chi2_contingency(table)[1])
        assert np.mean(np.asarray(pvals) >= 0.001) >= 0.95

    def test_block_correlation(self, big_correlated):
        d = big_correlated
        # cluster 1: V1..V15 correlated, V16.. independent
        assert abs(_cluster_corr(d.values, d.true_labels, 1, 0, 14) - 0.3) < 0.03
        assert abs(_cluster_corr(d.values, d.true_labels, 1, 2, 7) - 0.3) < 0.03
        assert abs(_cluster_corr(d.values, d.true_labels, 1, 0, 20)) < 0.03
        # cluster 2: middle ten
        assert abs(_cluster_corr(d.values, d.true_labels, 2, 10, 19) - 0.3) < 0.03
        assert abs(_cluster_corr(d.values, d.true_labels, 2, 9, 10)) < 0.03
        # cluster 3: blocks of five
        assert abs(_cluster_corr(d.values, d.true_labels, 3, 25, 29) - 0.3) < 0.03
        assert abs(_cluster_corr(d.values, d.true_labels, 3, 4, 5)) < 0.03

    def test_cluster_proportions(self):
        spec = SimulationSpec(num_obs=10_000, cluster_marginals=[[0.3, 0.6], [0.7, 0.5]],
                              correlation_blocks=[[], [(0, 2, 0.2)]],
                              cluster_weights=[0.3, 0.7], seed=5)
        d = generate_dataset(spec)
        p = np.mean(d.true_labels == 1)
        assert abs(p - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 10_000)

    def test_fixed_sizes(self):
        d = generate_dataset(benchmark_design(0.3, num_obs=500, seed=1))
        np.testing.assert_array_equal(np.sort(np.bincount(d.true_labels)[1:]), [166, 167, 167])

    def test_deterministic(self):
        a = generate_dataset(benchmark_design(0.3, num_obs=300, seed=9))
        b = generate_dataset(benchmark_design(0.3, num_obs=300, seed=9))
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.true_labels, b.true_labels)

    def test_multicategory(self):
        spec = SimulationSpec(num_obs=20_000,
                              cluster_marginals=[[[0.2, 0.3, 0.5], 0.6, [0.25, 0.25, 0.25, 0.25]]],
                              correlation_blocks=[[(0, 2, 0.25)]], cluster_weights=[1.0], seed=4)
        d = generate_dataset(spec)
        np.testing.assert_array_equal(d.num_categories, [3, 2, 4])
        freq = np.bincount(d.values[:, 0], minlength=4)[1:] / d.n_obs
        np.testing.assert_allclose(freq, [0.2, 0.3, 0.5], atol=0.015)
        assert abs(np.corrcoef(d.values[:, 0], d.values[:, 1])[0, 1] - 0.25) < 0.03

    def test_invalid_specs(self):
        with pytest.raises(GenerationError):
            SimulationSpec(10, [[0.5]], [[]], [0.5], seed=0)
        with pytest.raises(GenerationError):
            SimulationSpec(10, [[0.5, 0.5]], [[(0, 2, 0.3), (1, 2, 0.1)]], [1.0])
        with pytest.raises(GenerationError):
            SimulationSpec(10, [[0.5, 0.5]], [[(0, 2, 1.0)]], [1.0])

    @given(st.integers(0, 2**31 - 1), st.integers(1, 40),
           st.floats(0.0, 0.5), st.floats(0.1, 0.9))
    @settings(max_examples=25, deadline=None)
    def test_invariants_for_any_seed(self, seed, n, rho, p):
        spec = SimulationSpec(num_obs=n, cluster_marginals=[[p, 0.5, 0.3], [0.5, p, 0.7]],
                              correlation_blocks=[[(0, 2, rho)], []],
                              cluster_weights=[0.5, 0.5], seed=seed)
        d = generate_dataset(spec)
        assert d.values.shape == (n, 3)
        assert np.all((d.values >= 1) & (d.values <= 2))
        assert len(d.true_labels) == n

    def test_presets(self):
        specs = preset_specs("sim-rho03", base_seed=0)
        assert len(specs) == 30
        assert specs[0].num_obs == 500 and specs[0].n_vars == 30
        assert specs[0].correlation_blocks[0] == [(0, 15, 0.3)]
        assert all(b[2] == 0.0 for s in preset_specs("sim-rho00")[:1] for c in s.correlation_blocks for b in c)
        with pytest.raises(GenerationError):
            preset_specs("nope")


class TestLogOdds:
    def test_contingency_example(self):
        rows = [[1, 1]] * 40 + [[2, 2]] * 40 + [[1, 2]] * 10 + [[2, 1]] * 10
        lo = log_odds_matrix(CategoricalDataset(rows, [2, 2]))
        assert lo[0, 1] == pytest.approx(np.log(40.5 ** 2 / 10.5 ** 2))
        assert lo[0, 1] == pytest.approx(2.700, abs=5e-4)
        assert lo[0, 0] == lo[1, 1] == 0.0
        np.testing.assert_allclose(lo, lo.T)

    def test_independent_coins(self):
        rng = np.random.default_rng(3)
        d = CategoricalDataset(rng.integers(1, 3, size=(100_000, 4)), [2] * 4)
        lo = log_odds_matrix(d)
        assert np.all(np.abs(lo) < 0.05)

    def test_subset(self):
        d = CategoricalDataset([[1, 1], [2, 2], [1, 2]], [2, 2])
        sub = log_odds_matrix(d, subset=[0, 1])
        assert sub[0, 1] == pytest.approx(np.log(1.5 * 1.5 / (0.5 * 0.5)))

    def test_non_binary(self):
        with pytest.raises(NotImplementedError):
            log_odds_matrix(CategoricalDataset([[1, 3]], [2, 3]))
