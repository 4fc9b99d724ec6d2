"""Smoke test for the undec extension module.

Build and install first, e.g.
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/undec-*.whl
"""

import math

import undec


def main():
    cfg = undec.GeneratorConfig(arch="i", depth=4, channels=8)
    assert cfg.output_shape == [1, 32, 32], cfg.output_shape
    assert cfg.param_count == len(undec.init_params(cfg, seed=1))

    zeros = [0.0] * cfg.param_count
    out = undec.forward(cfg, zeros)
    assert all(abs(v - 0.5) < 1e-15 for v in out)

    target = undec.forward(cfg, undec.init_params(cfg, seed=7))
    op = undec.LinearOperator.identity(len(target))
    res = undec.fit(cfg, op, target, reference=target, iterations=300, lr=0.01, seed=0)
    assert len(res.loss_trace) == 301
    assert res.loss_trace[-1] < res.loss_trace[0]
    assert res.psnr > 30.0, res.psnr

    a = undec.LinearOperator.gaussian(50, 64, seed=3)
    x = [math.sin(i) for i in range(64)]
    y = [math.cos(i) for i in range(50)]
    lhs = sum(p * q for p, q in zip(a.apply(x), y))
    rhs = sum(p * q for p, q in zip(x, a.adjoint(y)))
    assert abs(lhs - rhs) < 1e-10

    f = undec.LinearOperator.masked_fourier(16, 16, acceleration=4, center_fraction=0.125, seed=0)
    assert f.kind == "maskedfourier" and f.n == 256

    assert undec.hankel_identity_check(16, 3, trials=20) < 1e-12

    values, nonzero = undec.build_piecewise([(1, 2.0), (4, -1.0)], depth=4, initial=0.5)
    assert len(values) == 9 and nonzero <= 2 * 5 + 2 + 1
    assert abs(values[8] - (0.5 + 2.0 * 7 - 1.0 * 4)) < 1e-9

    img = undec.shepp_logan(32, 32)
    kept = undec.haar_threshold(img, [32, 32], 1024)
    assert max(abs(p - q) for p, q in zip(img, kept)) < 1e-10

    print("python smoke test passed")


if __name__ == "__main__":
    main()
