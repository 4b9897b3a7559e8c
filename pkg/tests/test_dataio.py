import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvcm.dataio import (
    RawTable,
    bin_domains,
    evaluate_column_expr,
    load_csv,
    minmax_scale,
    sigma_filter,
    split_target,
)
from dvcm.design import DomainSample
from dvcm.errors import DegenerateScaleError, ParseError, SchemaError


@pytest.fixture
def csv_file(tmp_path):
    def write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


class TestLoadCsv:
    def test_basic_three_rows(self, csv_file):
        path = csv_file("u,x1,y\n0.1,2,3\n0.2,4,5\n0.3,6,7\n")
        table = load_csv(path, "u", ["x1"], "y", add_intercept=False)
        assert table.n == 3
        assert table.headers == ("u", "x1", "y")
        assert np.allclose(table.u, [0.1, 0.2, 0.3])
        assert np.allclose(table.y, [3, 5, 7])

    def test_missing_column_named_in_error(self, csv_file):
        path = csv_file("u,x1,y\n0.1,2,3\n")
        with pytest.raises(SchemaError, match="wage"):
            load_csv(path, "u", ["x1"], "wage")

    def test_intercept_prepended(self, csv_file):
        path = csv_file("u,a,b,y\n0.1,2,3,4\n0.5,5,6,7\n")
        table = load_csv(path, "u", ["a", "b"], "y", add_intercept=True)
        assert table.x.shape == (2, 3)
        assert np.all(table.x[:, 0] == 1.0)

    def test_non_numeric_cell_located(self, csv_file):
        path = csv_file("u,x1,y\n0.1,2,3\n0.2,oops,5\n")
        with pytest.raises(ParseError, match=r"row 3.*x1"):
            load_csv(path, "u", ["x1"], "y")

    def test_u_expr(self, csv_file):
        path = csv_file("age,edu,x1,y\n30,10,1,2\n40,12,3,4\n")
        table = load_csv(path, None, ["x1"], "y", add_intercept=False,
                         u_expr="age - edu - 6")
        assert np.allclose(table.u, [14.0, 22.0])

    def test_u_col_xor_u_expr(self, csv_file):
        path = csv_file("u,x1,y\n0.1,2,3\n")
        with pytest.raises(ValueError):
            load_csv(path, "u", ["x1"], "y", u_expr="u + 1")
        with pytest.raises(ValueError):
            load_csv(path, None, ["x1"], "y")

    def test_missing_file(self):
        with pytest.raises(ParseError):
            load_csv("/nonexistent/file.csv", "u", ["x"], "y")


class TestColumnExpr:
    def test_arithmetic(self):
        data = np.array([[30.0, 10.0], [40.0, 12.0]])
        got = evaluate_column_expr("(age - edu) / 2 + 1", ["age", "edu"], data)
        assert np.allclose(got, [11.0, 15.0])

    def test_unknown_column(self):
        with pytest.raises(SchemaError):
            evaluate_column_expr("age + height", ["age"], np.ones((2, 1)))

    def test_bad_syntax(self):
        with pytest.raises(ValueError):
            evaluate_column_expr("age +", ["age"], np.ones((2, 1)))


class TestSigmaFilter:
    def test_all_kept_at_three_sigma(self):
        # sd (ddof=1) of (0,0,0,100) is 50; max deviation 75 < 150
        mask = sigma_filter([0.0, 0.0, 0.0, 100.0], k=3.0)
        assert mask.tolist() == [True, True, True, True]

    def test_symmetric_data_symmetric_mask(self):
        v = np.array([-5.0, -1.0, 0.0, 1.0, 5.0])
        mask = sigma_filter(v, k=1.0)
        assert mask.tolist() == mask[::-1].tolist()

    def test_k_zero_keeps_only_mean(self):
        mask = sigma_filter([1.0, 1.0, 4.0], k=0.0)
        assert mask.tolist() == [False, False, False]
        mask = sigma_filter([2.0, 2.0, 2.0, 5.0], k=0.0)
        assert not mask[3]

    def test_zero_variance_keeps_all(self):
        assert sigma_filter([3.0, 3.0, 3.0]).all()

    def test_needs_two_values(self):
        with pytest.raises(ValueError):
            sigma_filter([1.0])


class TestMinmaxScale:
    def test_basic(self):
        assert np.allclose(minmax_scale([2.0, 4.0, 6.0]), [0.0, 0.5, 1.0])

    def test_idempotent_once_unit_range(self):
        v = np.array([0.0, 0.25, 0.6, 1.0])
        assert np.allclose(minmax_scale(v), v)

    def test_negation_reverses(self):
        v = np.array([1.0, 3.0, 7.0, 10.0])
        assert np.allclose(minmax_scale(-v), 1.0 - minmax_scale(v))

    def test_constant_rejected(self):
        with pytest.raises(DegenerateScaleError):
            minmax_scale([2.0, 2.0])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_range_is_unit(self, values):
        v = np.asarray(values)
        if np.max(v) == np.min(v):
            return
        scaled = minmax_scale(v)
        assert np.min(scaled) == 0.0 and np.max(scaled) == 1.0


def table_from_u(us):
    us = np.asarray(us, dtype=float)
    n = us.size
    rows = np.column_stack([us, np.ones(n), np.arange(n, dtype=float)])
    return RawTable(headers=("u", "x", "y"), rows=rows)


class TestBinDomains:
    def test_interior_point(self):
        panel = bin_domains(table_from_u([0.23]), 10)
        assert panel.domains[0].u == pytest.approx(0.25)

    def test_left_boundary_goes_down(self):
        panel = bin_domains(table_from_u([0.2]), 10)
        assert panel.domains[0].u == pytest.approx(0.15)

    def test_zero_in_first_bin(self):
        panel = bin_domains(table_from_u([0.0]), 10)
        assert panel.domains[0].u == pytest.approx(0.05)

    def test_partition_is_exact(self):
        rng = np.random.default_rng(0)
        us = rng.uniform(0, 1, 200)
        panel = bin_domains(table_from_u(us), 10)
        assert sum(d.n for d in panel.domains) == 200
        mids = {round(0.05 + 0.1 * j, 2) for j in range(10)}
        assert {round(d.u, 2) for d in panel.domains} <= mids

    def test_rows_follow_their_bin(self):
        panel = bin_domains(table_from_u([0.95, 0.05, 0.5]), 10)
        by_mid = {round(d.u, 2): d for d in panel.domains}
        assert by_mid[0.05].y.tolist() == [1.0]
        assert by_mid[0.95].y.tolist() == [0.0]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            bin_domains(table_from_u([1.2]), 10)

    def test_min_bins(self):
        with pytest.raises(ValueError):
            bin_domains(table_from_u([0.5]), 1)


class TestSplitTarget:
    def make_target(self, n):
        rng = np.random.default_rng(1)
        return DomainSample(u=0.5, x=rng.normal(size=(n, 2)),
                            y=np.arange(n, dtype=float))

    def test_thirds_of_nine(self):
        parts = split_target(self.make_target(9), [1 / 3, 1 / 3, 1 / 3],
                             np.random.default_rng(0))
        assert [p.n for p in parts] == [3, 3, 3]

    def test_thirds_of_ten_remainder_to_earliest(self):
        parts = split_target(self.make_target(10), [1 / 3, 1 / 3, 1 / 3],
                             np.random.default_rng(0))
        assert [p.n for p in parts] == [4, 3, 3]

    def test_partition_disjoint_exhaustive(self):
        target = self.make_target(23)
        parts = split_target(target, [0.5, 0.25, 0.25], np.random.default_rng(5))
        ys = np.concatenate([p.y for p in parts])
        assert sorted(ys.tolist()) == target.y.tolist()

    def test_same_seed_same_partition(self):
        target = self.make_target(12)
        a = split_target(target, [0.5, 0.5], np.random.default_rng(9))
        b = split_target(target, [0.5, 0.5], np.random.default_rng(9))
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.y, pb.y)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            split_target(self.make_target(2), [0.4, 0.3, 0.3],
                         np.random.default_rng(0))

    def test_fraction_validation(self):
        target = self.make_target(6)
        with pytest.raises(ValueError):
            split_target(target, [0.5, 0.6], np.random.default_rng(0))
        with pytest.raises(ValueError):
            split_target(target, [1.2, -0.2], np.random.default_rng(0))
