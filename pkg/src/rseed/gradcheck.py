"""Finite-difference verification of every differentiable op.

Each case builds a function of a few small float64 tensors.  Its output is
projected onto fixed random weights ``w``: the reverse pass starts from
``w`` and the central differences (step ``h``) are taken of ``sum(w * out)``
in plain numpy, so the projection never runs through an op under test.  An element passes when
``|analytic - numeric| <= abs_tol`` or ``<= rel_tol * |numeric|``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from . import tensor as T
from .losses import LossWeights, compute_losses, illumination_target
from .retinex import RetinexState

H_STEP = 1e-3
REL_TOL = 1e-3
ABS_TOL = 1e-5
MIN_STEP = 1e-6
KINK_MARGIN = 0.05


@dataclass
class CaseResult:
    op: str
    instance: int
    passed: bool
    max_rel_err: float
    max_abs_err: float
    worst_input: int = -1
    worst_index: tuple = ()
    refined: int = 0


@dataclass
class Report:
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def by_op(self):
        ops = {}
        for r in self.results:
            ops.setdefault(r.op, []).append(r)
        return ops

    def lines(self):
        out = []
        for op, rs in self.by_op().items():
            failed = [r for r in rs if not r.passed]
            worst = max(rs, key=lambda r: r.max_rel_err)
            status = "PASS" if not failed else "FAIL"
            line = f"{status} {op:<24} n={len(rs):<3} max_rel_err={worst.max_rel_err:.3e} max_abs_err={max(r.max_abs_err for r in rs):.3e} refined={sum(r.refined for r in rs)}"
            if failed:
                f = max(failed, key=lambda r: r.max_rel_err)
                line += f" worst_failure=instance {f.instance} input {f.worst_input} index {f.worst_index}"
            out.append(line)
        return out


def _away_from_zero(rng, shape, margin=KINK_MARGIN):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _elementwise_cases():
    def unary(op, sample=None):
        def build(rng):
            shape = (2, 3, 4)
            x = sample(rng, shape) if sample else rng.standard_normal(shape)
            return (lambda t: op(t[0])), [x]
        return build

    cases = {
        "add": lambda rng: (lambda t: t[0] + t[1],
                            [rng.standard_normal((3, 4, 4)), rng.standard_normal((1, 4, 4))]),
        "sub": lambda rng: (lambda t: t[0] - t[1],
                            [rng.standard_normal((3, 4, 4)), rng.standard_normal(())]),
        "mul": lambda rng: (lambda t: t[0] * t[1],
                            [rng.standard_normal((3, 4, 4)), rng.standard_normal((1, 4, 4))]),
        "div": lambda rng: (lambda t: t[0] / t[1],
                            [rng.standard_normal((3, 4, 4)), rng.uniform(0.5, 2.0, (3, 4, 4))]),
        "neg": unary(T.neg),
        "pow_scalar": lambda rng: (lambda t: T.pow_scalar(t[0], 1.7),
                                   [rng.uniform(0.2, 2.0, (2, 3, 4))]),
        "pow": lambda rng: (lambda t: T.pow_tensor(t[0], t[1]),
                            [rng.uniform(0.05, 0.95, (1, 4, 4)), rng.uniform(0.1, 2.0, ())]),
        "exp": unary(T.exp),
        "abs": unary(T.absolute, _away_from_zero),
        "sigmoid": unary(T.sigmoid),
        "leaky_relu": unary(lambda x: T.leaky_relu(x, 0.2), _away_from_zero),
    }
    return cases


def _structural_cases():
    def conv(layout, padding, k):
        def build(rng):
            C, O, H, W = 2, 3, 5, 6
            x = rng.standard_normal((C, H, W) if layout == "chw" else (H, W, C))
            w = rng.standard_normal((O, C, k, k))
            b = rng.standard_normal(O)
            return (lambda t: T.conv2d(t[0], t[1], t[2], padding=padding, layout=layout)), [x, w, b]
        return build

    def conv_batched(rng):
        x = rng.standard_normal((2, 4, 4, 3))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        return (lambda t: T.conv2d(t[0], t[1], t[2], layout="hwc")), [x, w, b]

    return {
        "conv2d[chw,reflect,3]": conv("chw", "reflect", 3),
        "conv2d[chw,zero,5]": conv("chw", "zero", 5),
        "conv2d[hwc,reflect,3]": conv("hwc", "reflect", 3),
        "conv2d[hwc,zero,1]": conv("hwc", "zero", 1),
        "conv2d[hwc,batched]": conv_batched,
        "upsample_nearest2x[chw]": lambda rng: (
            lambda t: T.upsample_nearest2x(t[0]), [rng.standard_normal((2, 3, 4))]),
        "upsample_nearest2x[hwc]": lambda rng: (
            lambda t: T.upsample_nearest2x(t[0], layout="hwc"),
            [rng.standard_normal((3, 4, 2))]),
        "spatial_gradient": lambda rng: (
            lambda t: T.spatial_gradient(t[0]), [rng.standard_normal((2, 4, 5))]),
        "sum": lambda rng: (lambda t: T.sum_(t[0]), [rng.standard_normal((2, 3, 3))]),
        "mean": lambda rng: (lambda t: T.mean(t[0]), [rng.standard_normal((2, 3, 3))]),
        "mean[axis]": lambda rng: (
            lambda t: T.mean(t[0], axis=1), [rng.standard_normal((2, 3, 4))]),
        "reshape": lambda rng: (
            lambda t: T.reshape(t[0], (3, 2, 4)), [rng.standard_normal((2, 3, 4))]),
        "permute": lambda rng: (
            lambda t: T.permute(t[0], (1, 2, 0)), [rng.standard_normal((2, 3, 4))]),
        "stack": lambda rng: (
            lambda t: T.stack([t[0], t[1]]),
            [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]),
    }


_TINY_ARCH = dec.Arch(n_stages=2, seed_channels=2, stage_channels=(4, 3), out_channels=3)


def _composite_case(rng):
    """Total loss of the enhancement objective on an 8 x 8 image w.r.t. both seeds and gamma."""
    image = rng.uniform(0.02, 0.4, (3, 8, 8))
    w_r = dec.init_random(_TINY_ARCH, int(rng.integers(2**31)))
    w_l = dec.init_random(_TINY_ARCH.with_out(1), int(rng.integers(2**31)))
    for w in (w_r, w_l):
        for name, t in w.layers.items():
            t.data = t.data.astype(np.float64)
            if name.endswith("bias"):
                t.data = rng.standard_normal(t.shape) * 0.1
    img = T.Tensor(image, dtype=np.float64)
    target = T.Tensor(illumination_target(image).data.astype(np.float64), dtype=np.float64)
    weights = LossWeights(tau=0.6)
    z_r = rng.standard_normal((2, 2, 2))
    z_l = rng.standard_normal((2, 2, 2))
    gamma = np.array(rng.uniform(0.3, 1.5))

    def f(t):
        state = RetinexState(dec.decode(t[0], w_r), dec.decode(t[1], w_l), t[2])
        total, _ = compute_losses(img, target, state, weights)
        return total

    return f, [z_r, z_l, gamma]


def all_cases():
    cases = {}
    cases.update(_elementwise_cases())
    cases.update(_structural_cases())
    cases["composite_total_loss"] = _composite_case
    return cases


def _central(fn, w, inputs, i, idx, h):
    vals = []
    for sign in (1, -1):
        pert = [np.array(x, dtype=np.float64) for x in inputs]
        pert[i][idx] += sign * h
        out = fn([T.Tensor(p, dtype=np.float64) for p in pert]).data
        vals.append(float(np.sum(w * out)))
    return (vals[0] - vals[1]) / (2 * h)


def _close(a, numeric):
    err = abs(a - numeric)
    return err <= ABS_TOL or err <= REL_TOL * abs(numeric), err


def check_case(fn, inputs, proj_seed=0, h=H_STEP, min_h=MIN_STEP):
    """Returns (max_rel, max_abs, worst_input, worst_index, ok, refined).

    An element that fails at ``h`` is retried with h/10, h/100, ... down to
    ``min_h``: a piecewise-linear kink (abs, leaky ReLU) inside the stencil
    spoils the central difference but not a correct derivative.  ``refined``
    counts elements that needed a smaller step.
    """
    tensors = [T.Tensor(np.array(x, dtype=np.float64), requires_grad=True, dtype=np.float64) for x in inputs]
    out = fn(tensors)
    w = np.random.default_rng(proj_seed).standard_normal(out.shape)
    out.backward(w)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = (-1.0, 0.0, -1, ())
    ok, refined = True, 0
    with T.no_grad():
        for i, base in enumerate(inputs):
            for idx in np.ndindex(np.shape(base)):
                a = float(np.asarray(analytic[i])[idx])
                step = h
                numeric = _central(fn, w, inputs, i, idx, step)
                good, err = _close(a, numeric)
                while not good and step / 10 >= min_h * (1 - 1e-9):
                    step /= 10
                    numeric = _central(fn, w, inputs, i, idx, step)
                    good, err = _close(a, numeric)
                if step != h:
                    refined += 1
                ok &= good
                rel = err / max(abs(numeric), 1e-300)
                if min(rel, err * REL_TOL / ABS_TOL) > worst[0]:
                    worst = (min(rel, err * REL_TOL / ABS_TOL), err, i, idx)
                    worst_rel = rel
    return worst_rel, worst[1], worst[2], worst[3], ok, refined


def run_checks(seed=0, instances=20, ops=None):
    cases = all_cases()
    if ops:
        unknown = set(ops) - set(cases)
        if unknown:
            raise KeyError(f"unknown ops: {sorted(unknown)}")
        cases = {k: v for k, v in cases.items() if k in ops}
    report = Report()
    root = np.random.SeedSequence(seed)
    for op, children in zip(cases, root.spawn(len(cases))):
        for inst, child in enumerate(children.spawn(instances)):
            rng = np.random.default_rng(child)
            fn, inputs = cases[op](rng)
            rel, err, wi, widx, ok, refined = check_case(fn, inputs, int(rng.integers(2**63)))
            report.results.append(CaseResult(op, inst, ok, rel, err, wi, widx, refined))
    return report
