import numpy as np
import pytest

from floatfarm.wind import WindConfig, generate_wind_series, sample_wind


class TestWindSeries:
    def test_zero_sigma_constant(self):
        s = generate_wind_series(WindConfig((8.0, 0.0), 0.0, 3600.0, 3))
        np.testing.assert_array_equal(s.samples, np.tile([8.0, 0.0], (s.samples.shape[0], 1)))
        np.testing.assert_array_equal(s(1234.56), [8.0, 0.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_knot_bounds(self, seed):
        s = generate_wind_series(WindConfig((8.0, 0.0), 0.05, 3600.0, seed))
        assert np.all(np.abs(s.knot_velocities - [8.0, 0.0]) <= 0.4)

    def test_knot_spacing_and_grid(self):
        s = generate_wind_series(WindConfig(sigma=0.1, seed=1))
        np.testing.assert_array_equal(s.knot_times, np.arange(7) * 600.0)
        assert s.samples.shape == (36001, 2)

    def test_same_seed_bit_identical(self):
        a = generate_wind_series(WindConfig(sigma=0.2, seed=7))
        b = generate_wind_series(WindConfig(sigma=0.2, seed=7))
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_passes_through_knots(self):
        s = generate_wind_series(WindConfig(sigma=0.2, seed=2))
        np.testing.assert_array_equal(sample_wind(s, 600.0), s.knot_velocities[1])
        np.testing.assert_array_equal(sample_wind(s, 0.0), s.knot_velocities[0])

    def test_off_grid_uses_spline(self):
        s = generate_wind_series(WindConfig(sigma=0.2, seed=2))
        v = sample_wind(s, 300.05)
        assert np.all(np.isfinite(v))
        # between neighbouring grid samples, close to both
        assert np.all(np.abs(v - s.samples[3000]) < 0.01)

    def test_clamps_out_of_range(self, caplog):
        s = generate_wind_series(WindConfig(sigma=0.2, seed=2))
        np.testing.assert_array_equal(sample_wind(s, 1e5), s.samples[-1])
        assert "outside" in caplog.text

    def test_csv(self, tmp_path):
        s = generate_wind_series(WindConfig(sigma=0.1, duration=600.0, seed=0))
        s.to_csv(tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert lines[0] == "t_s,vx_ms,vy_ms" and len(lines) == 6002

    @pytest.mark.parametrize("bad", [dict(sigma=-0.1), dict(sigma=1.5), dict(duration=0.0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            WindConfig(**bad)
