"""Time the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py`` after an editable install.  Each
case is timed with both backends swapped into the live module, so the
end-to-end rows include the surrounding autodiff overhead as well.
"""
import argparse
import contextlib
import timeit

import numpy as np

from churnsurv import _kernels
from churnsurv.models import BifurcatingModel, BMConfig

NAMES = ("enet_coordinate_descent", "lstm_gates_forward", "lstm_gates_backward")


@contextlib.contextmanager
def backend(name):
    impl = _kernels.get_backend(name)
    saved = {n: getattr(_kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(_kernels, n, getattr(impl, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(_kernels, n, f)


def case_gates(rng):
    n, H = 256, 100
    z0 = rng.normal(size=(n, 4 * H))
    c_prev = rng.normal(size=(n, H))
    bufs = [np.empty((n, H)) for _ in range(3)]
    dz, dc_prev = np.empty((n, 4 * H)), np.empty((n, H))
    dh, dc = rng.normal(size=(n, H)), rng.normal(size=(n, H))

    def run():
        z = z0.copy()
        _kernels.lstm_gates_forward(z, c_prev, *bufs)
        _kernels.lstm_gates_backward(z, c_prev, bufs[2], dh, dc, dz, dc_prev)
    return run


def case_enet(rng):
    X = np.asfortranarray(rng.normal(size=(2000, 60)))
    X -= X.mean(0)
    y = X[:, :10].sum(1) + rng.normal(size=2000)

    def run():
        _kernels.enet_coordinate_descent(np.zeros(60), X, y - y.mean(), 0.01, 0.5, 200, 1e-8)
    return run


def case_lstm_step(rng):
    B, T = 256, 20
    model = BifurcatingModel(4, config=BMConfig(), seed=0)
    seqs = rng.normal(size=(B, T, 5))
    lengths = rng.integers(1, T + 1, B)
    masks = np.arange(T)[None, :] < lengths[:, None]
    ctx = rng.integers(0, 4, B)
    surv = rng.uniform(1, 50, B)
    labels = rng.integers(0, 2, B).astype(float)
    step_rng = np.random.default_rng(1)

    def run():
        loss = model.loss(seqs, masks, ctx, surv, labels, "train", step_rng)
        for p in model.params.values():
            p.zero_grad()
        loss.backward()
    return run


CASES = {
    "lstm gates fwd+bwd (256x100)": case_gates,
    "elastic net CD (2000x60)": case_enet,
    "BM train step (batch 256, T=20)": case_lstm_step,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _kernels.available_backends()
    print(f"active backend at import: {_kernels.BACKEND}")
    print(f"{'case':34s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, make in CASES.items():
        best = {}
        for name in names:
            run = make(np.random.default_rng(0))
            with backend(name):
                run()
                number = max(1, int(0.2 / max(timeit.timeit(run, number=1), 1e-6)))
                best[name] = min(timeit.repeat(run, number=number, repeat=args.repeat)) / number
        row = f"{label:34s}" + "".join(f"{best[n] * 1e3:10.3f}ms" for n in names)
        if len(names) > 1:
            row += f"{best['python'] / best['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
