"""Smoke test for the mpinn_py extension module.

Uses an installed module if present, otherwise the library built by
`cargo build -p mpinn-python` under target/{release,debug}.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent

CONFIG = """
experiment = "py_smoke"
methods = ["data_driven", "pinn_darcy"]
seeds = [1]

[field]
source = "analytic"
nx = 32
ny = 16

[measurements]
n_k = 16
n_h = 16

[residuals]
n_f_h = 50

[residuals.boundary]
flow_inlet = 8
flow_lateral = 8
flow_outlet = 8
solute_outlet = 8
solute_lateral = 8
solute_inlet = 8

[architectures]
K = [8, 8]
h = [8]
C = [8]

[training.lbfgs]
max_iters = 50
"""


def load():
    try:
        import mpinn_py

        return mpinn_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libmpinn_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("mpinn_py", str(lib))
            spec = importlib.util.spec_from_loader("mpinn_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("mpinn_py not found; run `cargo build -p mpinn-python` first")


def main():
    m = load()

    assert m.param_count([10, 10, 10]) == 261
    assert m.param_count([100, 100, 100]) == 20601
    assert abs(m.analytic_k(0.125, 0.125) - 1.5) < 1e-12

    nx, ny = 32, 16
    k = m.lognormal_k(nx, ny, 0.2, 3)
    assert len(k) == nx * ny and all(v > 0 for v in k)
    h, c = m.solve_reference(k, nx, ny)
    assert len(h) == len(c) == nx * ny
    assert all(-1e-9 <= v <= 1 + 1e-9 for v in c)

    assert m.relative_error(k, k, nx, ny) == 0.0
    assert m.relative_error(k, [0.0] * (nx * ny), nx, ny) == 1.0

    cfg = m.ExperimentConfig.from_toml(CONFIG)
    assert cfg.methods == ["data_driven", "pinn_darcy"]
    assert m.ExperimentConfig.from_toml(cfg.to_toml()).to_toml() == cfg.to_toml()
    try:
        m.ExperimentConfig.from_toml(CONFIG.replace("n_k = 16", "n_k = 100000"))
        raise AssertionError("invalid configuration accepted")
    except ValueError:
        pass

    report = m.run_experiment(cfg)
    assert not report.partial
    for method in cfg.methods:
        eps = report.mean_error(method, "K")
        assert eps is not None and math.isfinite(eps)
    rows = report.csv().strip().splitlines()
    assert rows[0].startswith("experiment,method,field")
    assert len(rows) == 1 + 2 + 4
    print("mpinn_py smoke test passed")


if __name__ == "__main__":
    main()
