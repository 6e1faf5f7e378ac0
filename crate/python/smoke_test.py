#!/usr/bin/env python3
"""Smoke test for the qnetsim_py extension module.

Build the module first (`cargo build -p qnetsim-py`), then run:

    python3 python/smoke_test.py
"""
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libqnetsim_py.so",
        REPO / "target" / "debug" / "libqnetsim_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("libqnetsim_py.so not found; run `cargo build -p qnetsim-py` first")
    staging = Path(tempfile.mkdtemp(prefix="qnetsim_py_"))
    shutil.copy(built, staging / "qnetsim_py.so")
    sys.path.insert(0, str(staging))
    import qnetsim_py

    return qnetsim_py


def approx(a, b, tol=1e-12):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def main():
    q = load_module()

    # channel calculators against closed-form values
    approx(q.swap_fidelity(0.9, 0.9), 0.81 + 0.01 / 3)
    f_out, p = q.purify_step(0.7)
    approx(p, 0.68)
    approx(f_out, 0.5 / 0.68)
    approx(q.depolarize_fidelity(1.0, 0.1), 0.925)
    approx(q.qber_from_fidelity(0.85), 0.1)
    approx(q.t_non_eb(0.8, 1.0), math.log(1.8))
    approx(q.memory_decay(0.8, math.log(1.8), 1.0), 2.0 / 3.0)

    # metrics
    approx(q.binary_entropy(0.5), 1.0)
    assert q.secret_key_rate(1000.0, 0.12) == 0.0
    assert q.secret_key_rate(1000.0, 0.05) > 0.0
    exact, linear = q.plob_capacity(0.5)
    approx(exact, 1.0)
    assert q.logical_error_rate(0.005, 0.01, 5) > q.logical_error_rate(0.005, 0.01, 9)
    approx(q.chain_success_probability([0.5, 0.5, 0.5], 1.0), 0.125)

    # utility shapes
    assert q.utility("dqc", 100.0, 0.94) == 0.0
    assert q.utility("dqc", 30.0, 0.96) > 0.0
    try:
        q.utility("teleportation-roulette", 1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown app_type should raise ValueError")

    # scenario pipeline: validate, run, determinism
    presets = q.hardware_presets()
    assert "trapped_ion" in presets
    examples = q.builtin_examples()
    config = examples["two_node_qkd"]
    q.validate_scenario(config)
    summary = json.loads(q.run_scenario(config))
    assert summary["pair_ledger_closed"] is True
    assert summary["decisions"][0]["admitted"] is True
    assert summary["per_request"][0]["effective_eps"]["mean"] > 0.0
    assert q.run_scenario_csv(config) == q.run_scenario_csv(config)

    bad = config.replace('"qkd"', '"qkd-but-wrong"')
    try:
        q.validate_scenario(bad)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config should raise ValueError")

    print("smoke test passed: 20+ binding checks OK")


if __name__ == "__main__":
    main()
