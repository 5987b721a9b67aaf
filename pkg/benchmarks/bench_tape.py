"""Compiled tape vs. pure-Python tape.

    python3 benchmarks/bench_tape.py [--repeat 5]

Three workloads: raw node push + reverse sweep, one gradient of the
accelerator MPC cost, and one full accelerator MPC solve. Prints the best
wall time per backend and the speedup.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from diffmpc.autodiff import BACKENDS, use_backend, value_and_grad
from diffmpc.autodiff.tape import MUL
from diffmpc.beamline import DEFAULT_INITIAL_SETPOINTS, DEFAULT_THETA_TRUE, BeamlinePlant
from diffmpc.config import default_accelerator_config
from diffmpc.mpc import mpc_cost, solve_mpc


def raw_tape(buffer_cls, n=200_000):
    buf = buffer_cls()
    buf.push(0, 1.0, -1, 0.0, -1, 0.0)
    for i in range(1, n):
        buf.push(MUL, 1.0, i - 1, 1.0, 0, 0.5)
    buf.reverse(n - 1)


def mpc_gradient():
    plant = BeamlinePlant()
    cfg = default_accelerator_config().mpc
    u0 = list(DEFAULT_INITIAL_SETPOINTS)
    flat = np.tile(u0, cfg.horizon)

    def cost(vs):
        plan = [vs[k * 7:(k + 1) * 7] for k in range(cfg.horizon)]
        return mpc_cost(plan, None, DEFAULT_THETA_TRUE, plant, cfg, u0)

    value_and_grad(cost, flat)


def mpc_solve():
    cfg = default_accelerator_config()
    solve_mpc(None, cfg.theta_init, None, BeamlinePlant(), cfg.mpc, cfg.u_init)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "cython" not in BACKENDS:
        print("compiled backend not built; only the Python tape is available")
    workloads = {
        "raw push+reverse (200k nodes)": lambda name: raw_tape(BACKENDS[name]),
        "accelerator MPC gradient": lambda name: mpc_gradient(),
        "accelerator MPC solve (50 iters)": lambda name: mpc_solve(),
    }
    print(f"{'workload':36s} " + " ".join(f"{b:>10s}" for b in BACKENDS) + "   speedup")
    for label, work in workloads.items():
        row = {}
        for name in BACKENDS:
            with use_backend(name):
                row[name] = best_of(lambda: work(name), args.repeat)
        speed = (f"{row['python'] / row['cython']:8.2f}x" if "cython" in row else "")
        print(f"{label:36s} " + " ".join(f"{row[b]:9.4f}s" for b in BACKENDS) + "  " + speed)


if __name__ == "__main__":
    main()
