"""Smoke test for the Python bindings.

Build with `maturin develop -m crates/python/Cargo.toml`, or run
`cargo build -p thermalab-py` and this script picks up the shared library
from target/.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys
import tempfile


def load():
    try:
        import thermalab

        return thermalab
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        for name in ("libthermalab_py.so", "libthermalab_py.dylib", "thermalab_py.dll"):
            lib = root / "target" / profile / name
            if lib.exists():
                loader = importlib.machinery.ExtensionFileLoader("thermalab", str(lib))
                spec = importlib.util.spec_from_loader("thermalab", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                sys.modules["thermalab"] = module
                return module
    sys.exit("thermalab extension not found; build it first")


def main():
    tl = load()

    states = tl.catalog()
    assert len(states) == 64, len(states)
    yp = tl.catalog_state("Y_+")
    eps, v = tl.bloch_energy(yp.theta_over_pi, yp.phi_over_pi)
    assert abs(eps - yp.epsilon) < 1e-4 and abs(v - yp.v) < 1e-4

    basis = tl.Basis(12)
    assert len(basis) == basis.dim == 224, basis

    traj = tl.evolve("Y_+", 10, ["C2", "S1", "fid"], t_final=20.0)
    assert traj.complete and len(traj.times) == 201
    assert abs(traj["fid"][0] - 1.0) < 1e-12
    assert all(0.0 <= s <= 1.0 + 1e-12 for s in traj["S1"])

    table = tl.ThermalTable(8, l_max=2)
    beta = table.beta(traj.epsilon)
    assert abs(beta) < 1e-8, beta
    assert abs(table.expectation("S1", 0.0) - 1.0) < 1e-12
    assert table.mutual_information(0.0, 1, 1) < 1e-12

    t = [0.1 * i for i in range(1001)]
    y = [math.exp(-ti / 5.0) for ti in t]
    fit = tl.relaxation_time(t, y, (1.0, 30.0))
    assert abs(fit["tau"] - 5.0) < 1e-4 and fit["accepted"], fit

    assert abs(tl.page_entropy(1, 8) - 1.0) < 0.01

    with tempfile.TemporaryDirectory() as out:
        manifest = tl.run(
            f'states = ["Y_+"]\nsizes = [8]\nobservables = ["C1"]\noutput = "{out}"\n'
            '[krylov]\nt_final = 20.0\n[thermal]\nsites = 8\n'
        )
        statuses = [task["status"] for task in manifest["runs"][-1]["tasks"]]
        assert all(s in ("done", "reused") for s in statuses), statuses

    try:
        tl.catalog_state("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown state accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
