"""Smoke test for the `lhpf` extension module.

Uses an installed `lhpf` if importable, otherwise loads the cdylib from
target/{release,debug}. Build it first with `cargo build -p lhpf-py --release`.
"""

import importlib.util
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import lhpf

        return lhpf
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("liblhpf.so", "liblhpf.dylib", "lhpf.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = pathlib.Path(tempfile.mkdtemp()) / ("lhpf" + (".pyd" if name.endswith(".dll") else ".so"))
                shutil.copy(lib, tmp)
                spec = importlib.util.spec_from_file_location("lhpf", tmp)
                mod = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(mod)
                return mod
    sys.exit("lhpf extension not found; run `cargo build -p lhpf-py --release`")


def main():
    lhpf = load()
    kinds = lhpf.scenario_kinds()
    assert "straight" in kinds, kinds

    scenario = lhpf.generate_scenario("straight", 3)
    assert json.loads(scenario)["seed"] == 3

    report = lhpf.simulate_expert(scenario, "nonreactive")
    assert report["steps"] == 150, report
    assert report["composite_score"] == 100.0, report

    straight = [[0.1 * 10.0 * t, 0.0, 1.0, 0.0, 10.0, 0.0] for t in range(20)]
    assert lhpf.comfort_loss(straight) == 0.0

    plans = [[[x + 0.5 * (k % 2), 0.0, 1.0, 0.0, 1.0, 0.0] for x in range(k + 1, k + 9)] for k in range(6)]
    assert math.isclose(lhpf.plan_consistency(plans), 0.5, rel_tol=1e-12)
    try:
        lhpf.plan_consistency(plans[:1])
        raise AssertionError("single plan should be rejected")
    except ValueError:
        pass

    pool = lhpf.HistoryPool(20, 10)
    for t in range(0, 31):
        pool.push(t, [0], 1, 2, [float(t), 0.0])
    assert pool.frames() == [20, 30], pool.frames()

    planner = lhpf.Planner.desk(0)
    assert planner.num_parameters() > 0
    r = planner.simulate(scenario, "reactive", True)
    assert r["steps"] in range(0, 151)
    print("smoke ok:", len(kinds), "kinds,", planner.num_parameters(), "parameters, untrained composite", round(r["composite_score"], 2))


if __name__ == "__main__":
    main()
