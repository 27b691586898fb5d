import numpy as np
import pytest

from appcat.anomaly import (
    ConvergenceError,
    KernelSpec,
    OcSvmModel,
    binary_api_matrix,
    dual_objective,
    feature_list_hash,
    ocsvm_fit,
    ocsvm_score,
)
from appcat.vectorize import FeatureMatrix
from ocsvm_oracle import objective, solve_dual


def fm(data, ids=None):
    data = np.asarray(data, dtype=np.float64)
    if ids is None:
        ids = [f"r{i}" for i in range(data.shape[0])]
    return FeatureMatrix(row_ids=ids, data=data)


def random_dataset(rng, n, dim=2, spread=2.0):
    return fm(spread * rng.standard_normal((n, dim)))


class TestKernel:
    def test_rbf_default_gamma(self):
        spec = KernelSpec("rbf")
        assert spec.resolve_gamma(4) == pytest.approx(0.25)

    def test_rbf_values(self):
        spec = KernelSpec("rbf", gamma=1.0)
        a = np.array([[0.0, 0.0]])
        b = np.array([[1.0, 0.0], [0.0, 0.0]])
        values = spec.matrix(a, b)
        assert values[0, 0] == pytest.approx(np.exp(-1.0))
        assert values[0, 1] == pytest.approx(1.0)

    def test_linear(self):
        spec = KernelSpec("linear")
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0, 4.0]])
        assert spec.matrix(a, b)[0, 0] == pytest.approx(11.0)

    def test_unknown_kernel_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("poly")


class TestFit:
    def test_two_identical_points(self):
        matrix = fm([[1.0, 2.0], [1.0, 2.0]])
        for nu in (0.1, 0.5, 1.0):
            model = ocsvm_fit(matrix, nu=nu, kernel=KernelSpec("rbf", 1.0))
            assert model.alphas == pytest.approx([0.5, 0.5])
            scores, flags = ocsvm_score(model, matrix)
            assert scores[0] >= -1e-9
            assert not flags.all()

    def test_nu_zero_rejected(self):
        with pytest.raises(ValueError, match="nu"):
            ocsvm_fit(fm([[0.0], [1.0]]), nu=0.0)
        with pytest.raises(ValueError, match="nu"):
            ocsvm_fit(fm([[0.0], [1.0]]), nu=1.5)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ocsvm_fit(fm([[0.0], [float("nan")]]), nu=0.5)

    def test_sum_constraint_and_box(self):
        rng = np.random.default_rng(17)
        for nu in (0.1, 0.3, 0.8):
            matrix = random_dataset(rng, 30)
            model = ocsvm_fit(matrix, nu=nu, kernel=KernelSpec("rbf", 0.5))
            cap = 1.0 / (nu * 30)
            assert model.alphas.sum() == pytest.approx(1.0, abs=1e-8)
            assert np.all(model.alphas > 0)
            assert np.all(model.alphas <= cap + 1e-8)
            assert model.kkt_residual < 1e-4

    def test_objective_matches_oracle_small(self):
        rng = np.random.default_rng(23)
        for trial in range(25):
            n = int(rng.integers(4, 21))
            nu = 0.5
            matrix = random_dataset(rng, n)
            kernel = KernelSpec("rbf", 1.0)
            model = ocsvm_fit(matrix, nu=nu, kernel=kernel, tol=1e-6)
            gram = kernel.matrix(matrix.data, matrix.data)
            oracle_alpha = solve_dual(gram, nu)
            assert dual_objective(model) <= objective(gram, oracle_alpha) + 1e-3, (
                f"trial {trial}"
            )

    def test_linear_kernel_matches_oracle(self):
        rng = np.random.default_rng(29)
        matrix = fm(rng.standard_normal((12, 2)) + 3.0)
        kernel = KernelSpec("linear")
        model = ocsvm_fit(matrix, nu=0.4, kernel=kernel, tol=1e-6)
        gram = kernel.matrix(matrix.data, matrix.data)
        oracle_alpha = solve_dual(gram, 0.4)
        assert dual_objective(model) <= objective(gram, oracle_alpha) + 1e-3

    def test_non_convergence_reports_residual(self):
        rng = np.random.default_rng(31)
        matrix = random_dataset(rng, 40)
        with pytest.raises(ConvergenceError) as excinfo:
            ocsvm_fit(matrix, nu=0.2, max_iter=2)
        assert excinfo.value.residual > 0


class TestScore:
    def test_unbounded_support_vector_scores_near_zero(self):
        rng = np.random.default_rng(37)
        matrix = random_dataset(rng, 40)
        model = ocsvm_fit(matrix, nu=0.25, kernel=KernelSpec("rbf", 0.7), tol=1e-6)
        cap = 1.0 / (0.25 * 40)
        unbounded = (model.alphas > cap * 1e-4) & (model.alphas < cap * (1 - 1e-4))
        assert unbounded.any()
        scores, _ = ocsvm_score(model, fm(model.support_vectors[unbounded]))
        assert np.max(np.abs(scores)) < 1e-3

    def test_far_point_is_anomaly_with_score_near_minus_rho(self):
        rng = np.random.default_rng(41)
        matrix = random_dataset(rng, 30)
        model = ocsvm_fit(matrix, nu=0.2, kernel=KernelSpec("rbf", 1.0))
        far = fm([[500.0, 500.0]])
        scores, flags = ocsvm_score(model, far)
        assert flags[0]
        assert scores[0] == pytest.approx(-model.rho, abs=1e-9)
        assert model.rho > 0

    def test_dimension_mismatch(self):
        model = ocsvm_fit(fm([[0.0, 1.0], [1.0, 0.0]]), nu=0.5)
        with pytest.raises(ValueError, match="columns"):
            ocsvm_score(model, fm([[1.0, 2.0, 3.0]]))

    def test_scores_deterministic(self):
        rng = np.random.default_rng(43)
        matrix = random_dataset(rng, 25)
        model = ocsvm_fit(matrix, nu=0.3)
        a, _ = ocsvm_score(model, matrix)
        b, _ = ocsvm_score(model, matrix)
        assert np.array_equal(a, b)


class TestNuProperty:
    @pytest.mark.parametrize("nu", [0.1, 0.25, 0.5])
    def test_nu_bounds_over_seeds(self, nu):
        n = 60
        slack = 2.0 / n
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            matrix = random_dataset(rng, n)
            model = ocsvm_fit(matrix, nu=nu, kernel=KernelSpec("rbf", 0.5))
            scores, flags = ocsvm_score(model, matrix)
            outlier_fraction = float(flags.mean())
            sv_fraction = model.alphas.shape[0] / n
            assert outlier_fraction <= nu + slack, f"seed {seed}"
            assert sv_fraction >= nu - slack, f"seed {seed}"

    def test_training_anomaly_fraction_example(self):
        rng = np.random.default_rng(4242)
        matrix = random_dataset(rng, 60)
        model = ocsvm_fit(matrix, nu=0.2, kernel=KernelSpec("rbf", 0.5))
        _, flags = ocsvm_score(model, matrix)
        assert flags.mean() <= 0.2 + 2.0 / 60


class TestBinaryApiMatrix:
    def test_presence_bits(self):
        signatures = ("a.B.c", "d.E.f", "g.H.i")
        matrix = binary_api_matrix(
            [{"a.B.c": 3}, {"d.E.f": 1, "zz.Not.mapped": 9}, {}],
            signatures,
            ["x", "y", "z"],
        )
        assert matrix.data.tolist() == [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0],
        ]

    def test_feature_hash_changes_with_list(self):
        assert feature_list_hash(["a", "b"]) != feature_list_hash(["a", "c"])


class TestPersistence:
    def test_round_trip_scoring(self, tmp_path):
        rng = np.random.default_rng(47)
        matrix = random_dataset(rng, 20)
        model = ocsvm_fit(
            matrix, nu=0.3, kernel=KernelSpec("rbf", 0.9), cluster_id="7",
            feature_hash="abc123",
        )
        path = tmp_path / "ocsvm.json"
        model.save(path)
        loaded = OcSvmModel.load(path)
        assert loaded.cluster_id == "7"
        assert loaded.feature_hash == "abc123"
        assert loaded.nu == model.nu
        probe = random_dataset(rng, 5)
        original, _ = ocsvm_score(model, probe)
        restored, _ = ocsvm_score(loaded, probe)
        assert original == pytest.approx(restored, abs=1e-12)

    def test_alpha_sum_preserved(self, tmp_path):
        rng = np.random.default_rng(53)
        model = ocsvm_fit(random_dataset(rng, 15), nu=0.4)
        path = tmp_path / "m.json"
        model.save(path)
        assert OcSvmModel.load(path).alphas.sum() == pytest.approx(1.0, abs=1e-8)
