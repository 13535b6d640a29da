"""Smoke test for the gridmc Python bindings.

Install first:  pip install --no-build-isolation -e crates/py
"""

import math
import sys
import tempfile
from pathlib import Path

import gridmc


def main():
    print("gridmc", gridmc.version())

    sv = gridmc.singular_values([[3.0, 0.0], [0.0, 4.0], [0.0, 0.0]])
    assert math.isclose(sv[0], 4.0) and math.isclose(sv[1], 3.0), sv

    mean, half = gridmc.confidence_interval([0.0, 2.0])
    assert math.isclose(mean, 1.0)
    assert abs(half - 12.706) < 1e-3, half

    err = gridmc.truncation_error(33, 1, 5)
    assert 0.0 < err < 1.0, err
    print(f"truncation error, 33 buses / 5 areas: {err:.4f}")

    cfg = gridmc.default_config(1)
    cfg["admm"]["max_iters"] = 50
    cfg["n_runs"] = 2
    with tempfile.TemporaryDirectory() as tmp:
        payload = gridmc.run_experiment(cfg, tmp)
        for name in ("results.json", "trace.csv", "spectrum.csv"):
            assert (Path(tmp) / name).is_file(), name
    again = gridmc.run_experiment(cfg, schedule_seed=7)
    assert payload == again, "results depend on the schedule"
    est = payload["estimate"]
    print(f"MAPE {est['mape_magnitude']:.3f}%  MAE {est['mae_angle']:.3f} deg  runs {est['n_runs']}")

    bad = dict(cfg, n_runs=0)
    try:
        gridmc.run_experiment(bad)
    except ValueError as e:
        print("rejected invalid config:", e)
    else:
        raise AssertionError("invalid config accepted")

    print("smoke test OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
