import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lnpsnn.data import (LORENZ_SPLIT, ROSSLER_SPLIT, BlowUp, ParseError, SpecOverflow,
                         SplitSpec, TimeSeries, ZeroSignalPower, add_noise_snr, generate,
                         integrate, load_csv, lorenz63, lorenz_rhs, params_hash, rk4_step,
                         rossler, rossler_rhs, split)

from oracles import lorenz_f, rk4_butcher


class TestTimeSeries:
    def test_vector_becomes_column(self):
        ts = TimeSeries(np.arange(5.0))
        assert ts.values.shape == (5, 1) and ts.channels == 1 and len(ts) == 5

    def test_read_only(self):
        ts = TimeSeries(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            ts.values[0, 0] = 1.0

    def test_non_finite(self):
        with pytest.raises(ValueError):
            TimeSeries([1.0, np.inf])

    def test_csv(self, tmp_path):
        ts = TimeSeries([[0.1, 2.0], [3.0, -4.5]], dt=0.01)
        text = ts.to_csv(tmp_path / "x.csv", header=["x", "y"])
        assert text == "x,y\r\n0.1,2.0\r\n3.0,-4.5\r\n"
        assert (tmp_path / "x.csv").read_bytes() == text.encode()
        back = load_csv(tmp_path / "x.csv", dt=0.01)
        np.testing.assert_array_equal(back.values, ts.values)


class TestRK4:
    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_matches_butcher_oracle(self, seed):
        x = np.random.default_rng(seed).uniform([-20, -25, 0], [20, 25, 50])
        np.testing.assert_allclose(rk4_step(lorenz_rhs(), x, 0.01), rk4_butcher(lorenz_f, x, 0.01),
                                   rtol=0, atol=1e-12)

    def test_exact_for_cubic(self):
        # RK4 integrates x' = t^3 (autonomous via an extra clock state) exactly
        f = lambda s: np.array([s[1] ** 3, 1.0])
        out = integrate(f, [0.0, 0.0], 11, 0.1)
        np.testing.assert_allclose(out[-1, 0], 1.0 ** 4 / 4, atol=1e-14)

    def test_exponential_order(self):
        errs = []
        for dt in (0.1, 0.05):
            n = int(round(1.0 / dt)) + 1
            errs.append(abs(integrate(lambda x: -x, [1.0], n, dt)[-1, 0] - np.exp(-1.0)))
        assert 14 < errs[0] / errs[1] < 18

    def test_row_zero_is_x0(self):
        np.testing.assert_array_equal(integrate(lambda x: x, [3.0, 4.0], 3, 0.1)[0], [3.0, 4.0])

    def test_blow_up(self):
        with pytest.raises(BlowUp) as exc:
            integrate(lambda x: x * x, [1.0], 1000, 0.5)
        assert exc.value.step > 0

    def test_arguments(self):
        with pytest.raises(ValueError):
            integrate(lambda x: x, [1.0], 0, 0.1)
        with pytest.raises(ValueError):
            integrate(lambda x: x, [1.0], 5, 0.0)


class TestGenerators:
    def test_lorenz_defaults(self):
        ts = lorenz63()
        assert len(ts) == 20000 and ts.channels == 3 and ts.dt == 0.01
        np.testing.assert_array_equal(ts.values[0], [12.0, 2.0, 9.0])
        x = np.array([12.0, 2.0, 9.0])
        for _ in range(5):
            x = rk4_butcher(lorenz_f, x, 0.01)
        np.testing.assert_allclose(ts.values[5], x, atol=1e-12)

    def test_lorenz_on_attractor(self):
        v = lorenz63(5000).values[1000:]
        assert v[:, 2].min() > 0 and 20 < v[:, 2].mean() < 28
        assert np.abs(v[:, 0]).max() < 25

    def test_rossler(self):
        ts = rossler(n=500, discard=100)
        assert len(ts) == 500 and ts.dt == 0.03
        full = integrate(rossler_rhs(), [1.0, 1.0, 1.0], 600, 0.03)
        np.testing.assert_array_equal(ts.values, full[100:])

    def test_rossler_negative_discard(self):
        with pytest.raises(ValueError):
            rossler(n=10, discard=-1)

    def test_generate(self):
        np.testing.assert_array_equal(generate("lorenz63", n=10).values, lorenz63(10).values)
        with pytest.raises(ValueError):
            generate("henon")

    def test_params_hash(self):
        assert params_hash({"a": 1, "b": 2}) == params_hash({"b": 2, "a": 1})
        assert params_hash({"a": 1}) != params_hash({"a": 2})
        assert len(params_hash({})) == 12


class TestSplit:
    def test_default_sizes(self):
        assert LORENZ_SPLIT.total == 20000
        tr, va, te = split(lorenz63(), LORENZ_SPLIT)
        assert (len(tr), len(va), len(te)) == (11250, 3750, 5000)
        assert ROSSLER_SPLIT.total == 5000

    def test_contiguous(self):
        ts = TimeSeries(np.arange(20.0))
        tr, va, te = split(ts, SplitSpec(5, 3, 4, n_discard=2))
        np.testing.assert_array_equal(tr.values[:, 0], np.arange(2, 7))
        np.testing.assert_array_equal(va.values[:, 0], np.arange(7, 10))
        np.testing.assert_array_equal(te.values[:, 0], np.arange(10, 14))

    def test_overflow(self):
        with pytest.raises(SpecOverflow):
            split(TimeSeries(np.arange(10.0)), SplitSpec(5, 5, 5))

    def test_negative(self):
        with pytest.raises(ValueError):
            SplitSpec(-1, 0, 0)


class TestNoise:
    def test_infinite_snr_identity(self):
        ts = lorenz63(100)
        assert add_noise_snr(ts, float("inf")) is ts

    @pytest.mark.parametrize("snr", [0.0, 10.0, 30.0])
    def test_measured_snr(self, snr):
        ts = lorenz63(20000)
        noisy = add_noise_snr(ts, snr, seed=1)
        noise = noisy.values - ts.values
        measured = 10 * np.log10(np.mean(ts.values ** 2, 0) / np.mean(noise ** 2, 0))
        np.testing.assert_allclose(measured, snr, atol=0.1)

    def test_seeded(self):
        ts = lorenz63(100)
        np.testing.assert_array_equal(add_noise_snr(ts, 10, 3).values, add_noise_snr(ts, 10, 3).values)

    def test_zero_power(self):
        with pytest.raises(ZeroSignalPower):
            add_noise_snr(TimeSeries(np.zeros((10, 2))), 10.0)


class TestLoadCSV:
    def test_headerless(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(load_csv(p).values, [[1, 2], [3, 4]])

    def test_ragged(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("x,y\n1,2\n3\n")
        with pytest.raises(ParseError) as exc:
            load_csv(p)
        assert exc.value.row == 3

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,2\n3,abc\n")
        with pytest.raises(ParseError) as exc:
            load_csv(p)
        assert (exc.value.row, exc.value.col) == (2, 2)

    def test_empty(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("x,y\n")
        with pytest.raises(ParseError):
            load_csv(p)
