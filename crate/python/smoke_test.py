"""Smoke test for the Python extension.

Build first:
    cargo build --release -p airsep-py --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libairsep_py.so]
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SECTOR = """
name = "smoke"
[route.0]
waypoints = [[0.0, 0.0], [24.0, 0.0]]
[route.1]
waypoints = [[12.0, -12.0], [12.0, 12.0]]
"""


def find_library():
    if len(sys.argv) > 1:
        return sys.argv[1]
    for profile in ("release", "debug"):
        for name in ("libairsep_py.so", "libairsep_py.dylib", "airsep_py.dll"):
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                return path
    sys.exit("extension not built; run cargo build --release -p airsep-py --features extension-module")


def load(lib, tmp):
    dest = os.path.join(tmp, "airsep_py.so")
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("airsep_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    tmp = tempfile.mkdtemp()
    try:
        ap = load(find_library(), tmp)
        cfg = os.path.join(tmp, "sector.toml")
        with open(cfg, "w") as f:
            f.write(SECTOR)

        assert ap.reward(5.0, 1) == -0.1 + 0.05 * 5.0
        assert ap.reward(12.0, 2) == -0.001
        assert ap.reward(2.9, 1) == -1.0
        adv = ap.compute_gae([0.0, 1.0], [0.0, 0.0, 0.0])
        assert abs(adv[0] - 0.9405) < 1e-12 and adv[1] == 1.0
        assert ap.detect_convergence([30.0] * 200, 30.0) == 149
        assert ap.detect_convergence([29.0] * 200, 30.0) is None

        sim = ap.Simulator(cfg, 4, seed=3)
        steps = 0
        while not sim.is_terminal():
            ids = sim.active_ids()
            for i in ids:
                own, intruders = sim.features(i)
                assert len(own) == 5 and all(len(x) == 7 for x in intruders)
            out = sim.step({i: 1 for i in ids})
            assert set(out) == set(ids)
            steps += 1
        assert 0 <= sim.score() <= 4
        assert sim.clock % 12 == 0 and steps > 0

        try:
            ap.Simulator(cfg, 4).step({0: 7})
        except ap.AirsepError as e:
            assert str(e).startswith("config:"), e
        else:
            raise AssertionError("bad action accepted")

        out = os.path.join(tmp, "run")
        scores = ap.train(cfg, out, 30, n_aircraft=3, seed=1)
        assert len(scores) == 30
        ckpt = os.path.join(out, "model.ckpt")
        scores, mean, std, median, actions = ap.evaluate(ckpt, cfg, episodes=10, n_aircraft=3)
        assert len(scores) == 10 and abs(mean - sum(scores) / 10) < 1e-9
        var = sum((s - mean) ** 2 for s in scores) / 9
        assert abs(std - math.sqrt(var)) < 1e-9
        assert sum(actions) > 0
        again = ap.evaluate(ckpt, cfg, episodes=10, n_aircraft=3)
        assert again[0] == scores
        print("python smoke test passed")
    finally:
        shutil.rmtree(tmp)


if __name__ == "__main__":
    main()
