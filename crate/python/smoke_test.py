"""Smoke test for the mgfactor Python bindings.

Build the extension first:

    cargo build -p mgfactor-python --release --features extension-module

then run this script from the repository root.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load_extension():
    names = ["libmgfactor_py.so", "libmgfactor_py.dylib", "mgfactor_py.dll"]
    for profile in ["release", "debug"]:
        for name in names:
            built = ROOT / "target" / profile / name
            if built.exists():
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                target = pathlib.Path(tempfile.mkdtemp()) / f"mgfactor_py{suffix}"
                shutil.copy(built, target)
                spec = importlib.util.spec_from_file_location("mgfactor_py", target)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("extension not built; see the module docstring")


def shape(rows):
    return (len(rows), len(rows[0]) if rows else 0)


def main():
    mg = load_extension()

    sim = mg.simulate("B-300-n40-40", seed=7)
    assert len(sim.grid) == 60
    assert [shape(y) for y in sim.observed] == [(40, 60), (40, 60)]
    assert shape(sim.truth_loadings_shared) == (60, 3)
    assert all(v > 0 for v in sim.sigma2_eps)
    again = mg.simulate("B-300-n40-40", seed=7)
    assert again.observed == sim.observed

    fit = mg.fit(sim.grid, sim.observed, iterations=400, burn_in=200, seed=3, l_max=5, k_max=3)
    assert len(fit.configuration) == 3
    assert shape(fit.loadings_shared) == (60, fit.configuration[0])
    for s in range(2):
        assert shape(fit.curve_mean[s]) == (40, 60)
        lo, mid, hi = fit.curve_lower[s][0][0], fit.curve_mean[s][0][0], fit.curve_upper[s][0][0]
        assert lo <= hi and math.isfinite(mid)
        assert len(fit.sigma2_eps_trace[s]) == 200
    errors = [mg.mse(sim.truth_curves[s], fit.curve_mean[s]) for s in range(2)]
    assert all(0 <= e < 1 for e in errors), errors

    x = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    assert abs(mg.rv_coefficient(x, x) - 1.0) < 1e-12
    assert math.isfinite(mg.geweke(fit.sigma2_eps_trace[0]))

    for bad in [lambda: mg.simulate("Z-999"), lambda: mg.rv_coefficient([[1.0]], [[1.0], [2.0]])]:
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    print(f"smoke test passed: configuration {tuple(fit.configuration)}, curve MSE {errors[0]:.3f}/{errors[1]:.3f}")


if __name__ == "__main__":
    main()
