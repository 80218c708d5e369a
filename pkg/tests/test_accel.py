import os
import subprocess
import sys

import numpy as np
import pytest

from ejdke import _accel
from ejdke.rng import derive_seed, make_rng


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("EJDKE_NO_NUMBA", None)
    if env_value is not None:
        env["EJDKE_NO_NUMBA"] = env_value
    out = subprocess.run(
        [sys.executable, "-c", "from ejdke import _accel; print(_accel.resolve())"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


class TestBackendSwitch:
    def test_env_flag_selects_numpy(self):
        assert _backend_in_subprocess("1") == "numpy"

    def test_default(self):
        expect = "numba" if _accel.HAS_NUMBA else "numpy"
        assert _backend_in_subprocess(None) == expect

    def test_explicit(self):
        assert _accel.resolve("numpy") == "numpy"
        with pytest.raises(ValueError):
            _accel.resolve("cuda")

    def test_threads(self, monkeypatch):
        monkeypatch.setenv("EJDKE_THREADS", "3")
        assert _accel.max_workers() == 3
        monkeypatch.setenv("EJDKE_THREADS", "0")
        assert _accel.max_workers() == 1
        monkeypatch.setenv("EJDKE_THREADS", "x")
        with pytest.raises(ValueError):
            _accel.max_workers()
        monkeypatch.delenv("EJDKE_THREADS")
        assert _accel.max_workers(2) == 2


class TestSeeds:
    def test_stable_and_distinct(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        seeds = {derive_seed(5, i, r) for i in range(3) for r in range(50)}
        assert len(seeds) == 150
        assert all(0 <= s < 2**64 for s in seeds)

    def test_streams(self):
        a = make_rng(derive_seed(1, 0)).standard_normal(5)
        b = make_rng(derive_seed(1, 0)).standard_normal(5)
        np.testing.assert_array_equal(a, b)
