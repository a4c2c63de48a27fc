"""Finite-difference certification of every hand-written backward.

``grad_check`` compares an analytic gradient against central differences
(f(p+h) - f(p-h)) / 2h coordinate by coordinate, reporting the max of
|analytic - numeric| / max(1, |analytic|, |numeric|) over the sampled
coordinates. Steps h in [1e-6, 1e-4] are appropriate for float64.

The suite runners below drive the check across all primitives and the
end-to-end toy model; the CLI ``gradcheck`` command and the acceptance
tests are thin wrappers around them.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import EvactError
from .tensor import Tensor


class OracleError(EvactError):
    """The function under test returned a non-finite value during checking."""


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_coord: int
    coords_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def grad_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-5,
    *,
    grads: dict[str, np.ndarray] | None = None,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check analytic gradients of a scalar function against central differences.

    ``f`` is a zero-argument callable evaluating the scalar from the current
    ``params`` data (which is perturbed in place and restored). Analytic
    gradients are read from ``grads[name]`` when given, else from
    ``params[name].grad``.

    ``max_coords_per_param`` caps how many coordinates of each parameter are
    probed (sampled without replacement via ``rng``); None checks all.
    """
    base = float(f())
    if not math.isfinite(base):
        raise OracleError(f"function value is not finite at the base point: {base}")

    worst = 0.0
    worst_param = ""
    worst_coord = -1
    checked = 0
    per_param: dict[str, float] = {}
    if rng is None:
        rng = np.random.default_rng(0)

    for name, tensor in params.items():
        analytic = grads[name] if grads is not None else tensor.grad
        if analytic is None:
            raise OracleError(f"no analytic gradient available for parameter {name!r}")
        analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
        flat = tensor.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            coords = range(n)
        local_worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f())
            flat[i] = orig - h
            fm = float(f())
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise OracleError(f"non-finite value while perturbing {name}[{i}]: f+={fp}, f-={fm}")
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            checked += 1
            if rel > local_worst:
                local_worst = rel
            if rel > worst:
                worst, worst_param, worst_coord = rel, name, int(i)
        per_param[name] = local_worst
    return GradCheckReport(worst, worst_param, worst_coord, checked, per_param)


# ---------------------------------------------------------------------------
# primitive suite
# ---------------------------------------------------------------------------

@dataclass
class SuiteEntry:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _weighted(y: np.ndarray, r: np.ndarray) -> float:
    """Scalarize an op output with a fixed random projection."""
    return float((y * r).sum())


def _rand_shape(rng: np.random.Generator, ndim: int) -> tuple[int, ...]:
    return tuple(int(rng.integers(1, 7)) for _ in range(ndim))


def _check_primitive(name: str, rng: np.random.Generator, h: float) -> float:
    """One randomized finite-difference check of a primitive; returns max rel err.

    Ops are resolved through the module namespace at call time so tests can
    inject faults into a backward and watch the suite name the culprit.
    """
    if name == "matmul":
        m, k, n = _rand_shape(rng, 3)
        a, b = Tensor(rng.normal(size=(m, k))), Tensor(rng.normal(size=(k, n)))
        r = rng.normal(size=(m, n))
        ga, gb = ops.matmul_backward(r, a.data, b.data)
        rep = grad_check(lambda: _weighted(ops.matmul(a.data, b.data), r), {"a": a, "b": b}, h, grads={"a": ga, "b": gb})
    elif name == "add":
        shp = _rand_shape(rng, 2)
        a, b = Tensor(rng.normal(size=shp)), Tensor(rng.normal(size=shp))
        r = rng.normal(size=shp)
        ga, gb = ops.add_backward(r)
        rep = grad_check(lambda: _weighted(ops.add(a.data, b.data), r), {"a": a, "b": b}, h, grads={"a": ga, "b": gb})
    elif name == "bias_add":
        n, d = _rand_shape(rng, 2)
        x, b = Tensor(rng.normal(size=(n, d))), Tensor(rng.normal(size=d))
        r = rng.normal(size=(n, d))
        gx, gb = ops.bias_add_backward(r)
        rep = grad_check(lambda: _weighted(ops.bias_add(x.data, b.data), r), {"x": x, "b": b}, h, grads={"x": gx, "b": gb})
    elif name == "scale":
        shp = _rand_shape(rng, 2)
        s = float(rng.normal())
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=shp)
        rep = grad_check(lambda: _weighted(ops.scale(x.data, s), r), {"x": x}, h, grads={"x": ops.scale_backward(r, s)})
    elif name == "relu":
        shp = _rand_shape(rng, 2)
        # keep entries away from the kink, where the derivative is undefined
        x = Tensor(np.where(np.abs(z := rng.normal(size=shp)) < 0.05, 0.1, z))
        r = rng.normal(size=shp)
        rep = grad_check(lambda: _weighted(ops.relu(x.data), r), {"x": x}, h, grads={"x": ops.relu_backward(r, x.data)})
    elif name == "gelu":
        shp = _rand_shape(rng, 2)
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=shp)
        rep = grad_check(lambda: _weighted(ops.gelu(x.data), r), {"x": x}, h, grads={"x": ops.gelu_backward(r, x.data)})
    elif name == "softmax_rows":
        shp = _rand_shape(rng, 2)
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=shp)

        def gsoft():
            return ops.softmax_rows_backward(r, ops.softmax_rows(x.data))

        rep = grad_check(lambda: _weighted(ops.softmax_rows(x.data), r), {"x": x}, h, grads={"x": gsoft()})
    elif name == "layer_norm":
        n, d = int(rng.integers(1, 7)), int(rng.integers(2, 7))
        x = Tensor(rng.normal(size=(n, d)) * 2.0)
        gamma, beta = Tensor(rng.normal(size=d)), Tensor(rng.normal(size=d))
        r = rng.normal(size=(n, d))

        def fwd():
            y, _ = ops.layer_norm(x.data, gamma.data, beta.data)
            return _weighted(y, r)

        _, cache = ops.layer_norm(x.data, gamma.data, beta.data)
        gx, gg, gb = ops.layer_norm_backward(r, cache)
        rep = grad_check(fwd, {"x": x, "gamma": gamma, "beta": beta}, h, grads={"x": gx, "gamma": gg, "beta": gb})
    elif name == "conv2d":
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hh, ww = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        kh = kw = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = Tensor(rng.normal(size=(c_in, hh, ww)))
        w = Tensor(rng.normal(size=(c_out, c_in, kh, kw)))
        r = rng.normal(size=ops.conv2d(x.data, w.data, stride, padding).shape)

        def gconv():
            return ops.conv2d_backward(r, x.data, w.data, stride, padding)

        gx, gw = gconv()
        rep = grad_check(
            lambda: _weighted(ops.conv2d(x.data, w.data, stride, padding), r), {"x": x, "w": w}, h,
            grads={"x": gx, "w": gw},
        )
    elif name == "reshape":
        n, d = _rand_shape(rng, 2)
        x = Tensor(rng.normal(size=(n, d)))
        r = rng.normal(size=n * d)
        rep = grad_check(
            lambda: _weighted(ops.reshape(x.data, (n * d,)), r), {"x": x}, h,
            grads={"x": ops.reshape_backward(r, (n, d))},
        )
    elif name == "transpose":
        shp = _rand_shape(rng, 3)
        axes = tuple(np.random.default_rng(int(rng.integers(1 << 30))).permutation(3))
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=ops.transpose(x.data, axes).shape)
        rep = grad_check(
            lambda: _weighted(ops.transpose(x.data, axes), r), {"x": x}, h,
            grads={"x": ops.transpose_backward(r, axes)},
        )
    elif name == "concat":
        d = int(rng.integers(1, 5))
        n1, n2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        a, b = Tensor(rng.normal(size=(n1, d))), Tensor(rng.normal(size=(n2, d)))
        r = rng.normal(size=(n1 + n2, d))
        ga, gb = ops.concat_backward(r, [n1, n2], 0)
        rep = grad_check(
            lambda: _weighted(ops.concat([a.data, b.data], 0), r), {"a": a, "b": b}, h,
            grads={"a": ga, "b": gb},
        )
    elif name == "sum_axis":
        shp = _rand_shape(rng, 3)
        axis = int(rng.integers(0, 3))
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=ops.sum_axis(x.data, axis).shape)
        rep = grad_check(
            lambda: _weighted(ops.sum_axis(x.data, axis), r), {"x": x}, h,
            grads={"x": ops.sum_axis_backward(r, shp, axis)},
        )
    elif name == "mean_axis":
        shp = _rand_shape(rng, 3)
        axis = int(rng.integers(0, 3))
        x = Tensor(rng.normal(size=shp))
        r = rng.normal(size=ops.mean_axis(x.data, axis).shape)
        rep = grad_check(
            lambda: _weighted(ops.mean_axis(x.data, axis), r), {"x": x}, h,
            grads={"x": ops.mean_axis_backward(r, shp, axis)},
        )
    else:
        raise ValueError(f"unknown primitive {name!r}")
    return rep.max_rel_err


PRIMITIVES = (
    "matmul", "add", "bias_add", "scale", "relu", "gelu", "softmax_rows",
    "layer_norm", "conv2d", "reshape", "transpose", "concat", "sum_axis", "mean_axis",
)


def run_primitive_suite(seeds: int = 100, tol: float = 1e-4, h: float = 1e-5) -> list[SuiteEntry]:
    """Finite-difference check of every primitive over randomized small shapes."""
    entries = []
    for name in PRIMITIVES:
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng((zlib.crc32(name.encode()), seed))
            worst = max(worst, _check_primitive(name, rng, h))
        entries.append(SuiteEntry(name, worst, tol))
    return entries


def run_model_check(tol: float = 1e-4, h: float = 1e-5, seed: int = 0,
                    max_coords_per_param: int | None = 40) -> SuiteEntry:
    """End-to-end check: loss of the toy model on a 2-sample batch."""
    from . import model as model_mod
    from .train import cross_entropy, cross_entropy_with_grad

    cfg = model_mod.toy_config()
    params = model_mod.init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = rng.random((2, cfg.frames, 2, cfg.input_size, cfg.input_size))
    labels = [0, 2]

    def loss():
        logits = np.stack([model_mod.forward(frames[i], params, cfg) for i in range(2)])
        return cross_entropy(logits, labels)

    params.zero_grad()
    outs = [model_mod.forward_with_cache(frames[i], params, cfg) for i in range(2)]
    logits = np.stack([o[0] for o in outs])
    _, dlogits = cross_entropy_with_grad(logits, labels)
    for i, (_, cache) in enumerate(outs):
        model_mod.backward(dlogits[i], cache, params, cfg)

    rep = grad_check(loss, params.as_dict(), h,
                     max_coords_per_param=max_coords_per_param,
                     rng=np.random.default_rng(seed + 2))
    return SuiteEntry("estf_toy_model", rep.max_rel_err, tol)
