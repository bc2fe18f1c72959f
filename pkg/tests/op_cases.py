"""Randomized grad-check case generators, one per registered op kind.

Each generator returns (f, inputs) where f maps a list of Values to a
scalar Value. Inputs are sampled away from kinks (abs/relu at 0) and
domain edges (sqrt/log near 0) so central differences are valid.
Shared by the unit tests and the acceptance suite.
"""

import numpy as np

from maie import autodiff as ad


def _away_from_zero(rng, shape, low=0.1):
    x = rng.uniform(low, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _wrap(op):
    """Reduce an op output to a scalar with a curvature so grads are nontrivial."""

    def f(inputs, **kw):
        return op(inputs, **kw).square().sum()

    return f


def case_add(rng):
    if rng.random() < 0.5:
        s = (3, 2)
        return _wrap(lambda v: v[0] + v[1]), [rng.normal(size=s), rng.normal(size=s)]
    # row-broadcast bias, as used by batched affine layers
    return _wrap(lambda v: v[0] + v[1]), [rng.normal(size=(3, 2)), rng.normal(size=(2,))]


def case_sub(rng):
    s = (4,)
    return _wrap(lambda v: v[0] - v[1]), [rng.normal(size=s), rng.normal(size=s)]


def case_mul(rng):
    s = (3, 2)
    return _wrap(lambda v: v[0] * v[1]), [rng.normal(size=s), rng.normal(size=s)]


def case_div(rng):
    s = (4,)
    return _wrap(lambda v: v[0] / v[1]), [rng.normal(size=s), _away_from_zero(rng, s, low=0.5)]


def case_neg(rng):
    return _wrap(lambda v: -v[0]), [rng.normal(size=(5,))]


def case_matmul(rng):
    shapes = [((2, 3), (3, 2)), ((2, 3), (3,)), ((3,), (3, 2))]
    sa, sb = shapes[rng.integers(len(shapes))]
    return _wrap(lambda v: ad.matmul(v[0], v[1])), [rng.normal(size=sa), rng.normal(size=sb)]


def case_conv2d(rng):
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    xs = (2, 5, 5) if rng.random() < 0.5 else (2, 2, 5, 5)

    def f(v):
        return ad.conv2d(v[0], v[1], v[2], stride=stride, padding=padding).square().sum()

    return f, [rng.normal(size=xs), rng.normal(size=(3, 2, 3, 3)) * 0.5, rng.normal(size=(3,))]


def case_concat(rng):
    axis = int(rng.integers(0, 2))

    def f(v):
        return ad.concat([v[0], v[1], v[2]], axis=axis).square().sum()

    sizes = [(2, 3), (2, 3), (2, 3)]
    return f, [rng.normal(size=s) for s in sizes]


def case_slice(rng):
    if rng.random() < 0.5:
        key = (slice(1, 3), slice(0, 2))
    else:
        key = (slice(None), np.array([0, 2, 0]))  # repeated index must accumulate
    return _wrap(lambda v: v[0][key]), [rng.normal(size=(4, 3))]


def case_reshape(rng):
    return _wrap(lambda v: v[0].reshape((6,))), [rng.normal(size=(2, 3))]


def case_transpose(rng):
    return _wrap(lambda v: ad.transpose(v[0], (1, 2, 0))), [rng.normal(size=(2, 3, 2))]


def case_softmax_axis(rng):
    axis = int(rng.integers(0, 2))

    def f(v):
        return (ad.softmax(v[0], axis=axis) * v[1]).sum()

    return f, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]


def case_abs(rng):
    return _wrap(lambda v: v[0].abs()), [_away_from_zero(rng, (6,))]


def case_relu(rng):
    return _wrap(lambda v: v[0].relu()), [_away_from_zero(rng, (3, 3))]


def case_tanh(rng):
    return _wrap(lambda v: v[0].tanh()), [rng.normal(size=(5,))]


def case_sigmoid(rng):
    return _wrap(lambda v: v[0].sigmoid()), [rng.normal(size=(5,))]


def case_sum(rng):
    if rng.random() < 0.5:
        return (lambda v: v[0].sum().square()), [rng.normal(size=(3, 2))]
    return _wrap(lambda v: v[0].sum(axis=1)), [rng.normal(size=(3, 2))]


def case_mean(rng):
    return (lambda v: v[0].mean().square()), [rng.normal(size=(4, 2))]


def case_square(rng):
    return (lambda v: v[0].square().sum()), [rng.normal(size=(5,))]


def case_sqrt(rng):
    return _wrap(lambda v: v[0].sqrt()), [rng.uniform(0.2, 2.0, size=(5,))]


def case_log(rng):
    return _wrap(lambda v: v[0].log()), [rng.uniform(0.2, 3.0, size=(5,))]


def case_stop_gradient(rng):
    # stop_gradient defines the checked function: its argument is held as a
    # captured constant, so analytic and numeric agree on the live input.
    const = ad.Value(rng.normal(size=(4,)))

    def f(v):
        return (ad.stop_gradient(const) * v[0]).square().sum()

    return f, [rng.normal(size=(4,))]


def case_lstm_cell(rng):
    hd = 4

    def f(v):
        return ad.lstm_cell(v[0], v[1], v[2], v[3]).square().sum()

    return f, [
        rng.normal(size=(4 * hd,)),
        rng.normal(size=(4 * hd, hd)) * 0.5,
        rng.normal(size=(hd,)) * 0.5,
        rng.normal(size=(hd,)) * 0.5,
    ]


CASES = {
    "add": case_add,
    "sub": case_sub,
    "mul": case_mul,
    "div": case_div,
    "neg": case_neg,
    "matmul": case_matmul,
    "conv2d": case_conv2d,
    "concat": case_concat,
    "slice": case_slice,
    "reshape": case_reshape,
    "transpose": case_transpose,
    "softmax_axis": case_softmax_axis,
    "abs": case_abs,
    "relu": case_relu,
    "tanh": case_tanh,
    "sigmoid": case_sigmoid,
    "sum": case_sum,
    "mean": case_mean,
    "square": case_square,
    "sqrt": case_sqrt,
    "log": case_log,
    "stop_gradient": case_stop_gradient,
    "lstm_cell": case_lstm_cell,
}


def check_op(kind: str, n_cases: int, seed: int = 0, rel_tol: float = 1e-4, step: float = 1e-5) -> float:
    """Run n random grad checks for one op kind; returns worst relative error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        f, inputs = CASES[kind](rng)
        report = ad.grad_check(f, inputs, step=step, rel_tol=rel_tol)
        worst = max(worst, report.max_rel_err)
        assert report.ok, f"{kind}: max rel err {report.max_rel_err:.3e} >= {rel_tol}"
    return worst
