"""Compare the numba kernels against the pure-numpy fallback.

Per-kernel timings import both backends directly; the end-to-end training
step is measured in subprocesses so each run binds its backend through the
STLCA_KERNELS environment variable, exactly as a user would.

    python3 benchmarks/kernel_benchmark.py            # full comparison
    python3 benchmarks/kernel_benchmark.py --step-only  # one backend, used internally
"""

import argparse
import os
import subprocess
import sys
from timeit import default_timer as timer

import numpy as np


def bench(fn, *args, repeat=200):
    fn(*args)  # warm-up (and jit compile)
    best = float("inf")
    for _ in range(5):
        t0 = timer()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (timer() - t0) / repeat)
    return best * 1e3  # ms


def compare_kernels():
    from stlca.kernels import numba_backend as nb
    from stlca.kernels import numpy_backend as npb

    rng = np.random.default_rng(0)
    rows = []

    xp = rng.standard_normal((16, 34, 34))
    args = (xp, 3, 3, 1, 1, 32, 32)
    rows.append(("im2col 16ch 32x32", bench(npb.im2col, *args), bench(nb.im2col, *args)))

    dcols = rng.standard_normal((16 * 9, 32 * 32))
    args = (dcols, 16, 34, 34, 3, 3, 1, 1, 32, 32)
    rows.append(("col2im 16ch 32x32", bench(npb.col2im, *args), bench(nb.col2im, *args)))

    x = rng.standard_normal((16, 9, 9))
    rows.append(("resize 9->17", bench(npb.resize_bilinear_fwd, x, 17, 17),
                 bench(nb.resize_bilinear_fwd, x, 17, 17)))

    img = rng.standard_normal((16, 64, 64))
    flow = rng.uniform(-4, 4, (64, 64, 2))
    rows.append(("warp 16ch 64x64", bench(npb.warp_bilinear_fwd, img, flow),
                 bench(nb.warp_bilinear_fwd, img, flow)))

    dout = rng.standard_normal((16, 64, 64))
    rows.append(("warp bwd 16ch 64x64",
                 bench(npb.warp_bilinear_bwd, dout, flow, 64, 64),
                 bench(nb.warp_bilinear_bwd, dout, flow, 64, 64)))

    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in rows:
        print(f"{name:24s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.2f}x")


def train_step_ms(steps=10):
    from stlca import losses as ls
    from stlca import nn
    from stlca.benchmark import BenchmarkProtocol
    from stlca.flow import SyntheticFlowProvider
    from stlca.network import InpaintingNetwork, masked_inputs
    from stlca.train import make_training_video

    proto = BenchmarkProtocol()
    settings = proto.train_settings("full", 0)
    seq = make_training_video(settings, 0)
    net = InpaintingNetwork(settings.model)
    extractor = ls.FixedRandomExtractor(seed=0)
    opt = nn.Adam(net.named_parameters(), lr=1e-3)
    provider = SyntheticFlowProvider()
    inputs = masked_inputs(seq)

    def one(t, state):
        result, state = net.inpaint_frame(seq, t, state, provider, inputs,
                                          train=True, composite=False)
        truth = np.transpose(seq.frames[t], (2, 0, 1))
        loss, _ = ls.total_loss([result.raw], [truth], [seq.masks[t]],
                                ls.LossWeights(), extractor)
        opt.zero_grad()
        loss.backward()
        opt.step()
        return state

    state = net.initial_state(seq.height, seq.width)
    state = one(0, state)  # warm-up / compile
    t0 = timer()
    for t in range(steps):
        state = one((t + 1) % len(seq), state)
    return (timer() - t0) / steps * 1e3


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--step-only", action="store_true",
                        help="print one training-step time for the active backend")
    args = parser.parse_args()

    if args.step_only:
        from stlca.kernels import backend_name

        print(f"{backend_name()}: {train_step_ms():.1f} ms / training step")
        return

    compare_kernels()
    print()
    for backend in ("numpy", "numba"):
        env = dict(os.environ, STLCA_KERNELS=backend)
        subprocess.run([sys.executable, __file__, "--step-only"], env=env, check=True)


if __name__ == "__main__":
    main()
