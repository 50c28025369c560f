"""Finite-difference verification of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import GraphError


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    checked: int = 0
    worst: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_error <= self.tolerance

    def summary(self):
        return (
            f"checked {self.checked}, skipped {len(self.skipped)} (kink-adjacent), "
            f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.0e})"
        )


def _named_tensors(params):
    if hasattr(params, "items"):
        return list(params.items())
    return [(t.name or f"t{i}", t) for i, t in enumerate(params)]


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(f, params, samples=20, step=1e-3, tolerance=1e-4, seed=0, floor=1e-8):
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic.  Coordinates are drawn by picking a tensor
    uniformly, then an element uniformly, until ``samples`` coordinates have
    been compared (at most ``5 * samples`` draws).  A coordinate is skipped
    when ``f`` is not smooth within one step of it: either the one-sided
    difference quotients disagree by the same amount at ``step`` and
    ``step / 10`` (a kink at the point), or the central estimates at the two
    step sizes disagree (a kink inside the step).  Neither test looks at the
    analytic gradient.
    """
    named = _named_tensors(params)
    for _, t in named:
        t.grad = None
    loss = f()
    T.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in named}

    def evaluate():
        with T.no_grad():
            value = f().item()
        if not np.isfinite(value):
            raise GraphError(f"function value is not finite ({value}) during gradient check")
        return value

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    f0 = evaluate()
    rows = []
    for _ in range(5 * samples):
        if len(rows) == samples:
            break
        name, t = named[int(rng.integers(len(named)))]
        flat = t.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        values = {}
        for h in (step, step / 10):
            flat[idx] = orig + h
            fp = evaluate()
            flat[idx] = orig - h
            fm = evaluate()
            values[h] = ((fp - fm) / (2 * h), abs((fp - f0) - (f0 - fm)) / h)
        flat[idx] = orig
        (cd, gap), (cd_fine, gap_fine) = values[step], values[step / 10]
        a = float(analytic[name].reshape(-1)[idx])
        noise = 1e-9 * (1 + abs(f0))
        kink_at_point = gap > noise and gap_fine > 0.5 * gap
        kink_in_step = relative_error(cd, cd_fine, floor) > tolerance
        if kink_at_point or kink_in_step:
            report.skipped.append((name, idx))
            continue
        err = relative_error(a, cd, floor)
        rows.append({"name": name, "index": idx, "analytic": a, "numeric": cd, "rel_error": err})
    rows.sort(key=lambda r: -r["rel_error"])
    report.checked = len(rows)
    report.worst = rows[:5]
    report.max_rel_error = rows[0]["rel_error"] if rows else 0.0
    return report


# the suite run by the ``gradcheck`` command ----------------------------------

SUITE_MODULES = ("conv", "loss", "model")


def _projected(out, weights):
    """Scalar probe of an array-valued output: mean(out * W) for a fixed random W."""
    return T.mean(T.mul(out, weights))


def _param(rng, shape, name, scale=1.0):
    return T.Tensor(rng.normal(0.0, scale, shape), requires_grad=True, name=name)


def _layer_cases(rng):
    from .conv import BatchNormState, ConvSpec, batch_norm2d, conv2d, conv_transpose2d

    cases = []
    for stride in (1, 2):
        for pad in (0, 1):
            spec = ConvSpec(stride, pad)
            x = _param(rng, (1, 4, 16, 16), "x")
            k = _param(rng, (3, 4, 4, 4), "kernel", 0.3)
            b = _param(rng, (3,), "bias")
            oh, ow = spec.output_extent((16, 16), (4, 4))
            w = T.Tensor(rng.normal(size=(1, 3, oh, ow)))
            cases.append((f"conv2d s{stride} p{pad}", lambda x=x, k=k, b=b, w=w, spec=spec: _projected(conv2d(x, k, b, spec), w), [x, k, b]))

            xt = _param(rng, (1, 4, 8, 8), "x")
            kt = _param(rng, (4, 3, 4, 4), "kernel", 0.3)
            bt = _param(rng, (3,), "bias")
            th, tw = spec.transpose_extent((8, 8), (4, 4))
            wt = T.Tensor(rng.normal(size=(1, 3, th, tw)))
            cases.append((f"conv_transpose2d s{stride} p{pad}", lambda x=xt, k=kt, b=bt, w=wt, spec=spec: _projected(conv_transpose2d(x, k, b, spec), w), [xt, kt, bt]))

    x = _param(rng, (1, 4, 8, 8), "x")
    gamma = _param(rng, (4,), "gamma")
    beta = _param(rng, (4,), "beta")
    w = T.Tensor(rng.normal(size=(1, 4, 8, 8)))
    state = BatchNormState(4, dtype=np.float64)
    cases.append(("batch_norm2d train", lambda: _projected(batch_norm2d(x, gamma, beta, state, "train"), w), [x, gamma, beta]))

    for kind in ("relu", "leaky_relu", "sigmoid", "tanh"):
        a = _param(rng, (1, 4, 16, 16), "x")
        wa = T.Tensor(rng.normal(size=a.shape))
        cases.append((kind, lambda a=a, wa=wa, kind=kind: _projected(T.activation(a, kind), wa), [a]))

    a = _param(rng, (1, 2, 8, 8), "a")
    c = _param(rng, (1, 3, 8, 8), "b")
    wc = T.Tensor(rng.normal(size=(1, 5, 8, 8)))
    cases.append(("concat_channels", lambda: _projected(T.concat_channels(a, c), wc), [a, c]))

    p = T.Tensor(rng.uniform(0.1, 2.0, (1, 1, 8, 8)), requires_grad=True, name="p")
    wp = T.Tensor(rng.normal(size=p.shape))
    cases.append(("log / clamp / abs", lambda: _projected(T.abs_(T.log(T.clamp(p, 0.2, 1.8))), wp), [p]))
    return cases


def _loss_cases(rng):
    from .objective import ObjectiveConfig, discriminator_loss, generator_loss

    def scores(name):
        return T.Tensor(rng.uniform(0.2, 0.8, (1, 1, 4, 4)), requires_grad=True, name=name)

    real, fake = scores("real_scores"), scores("fake_scores")
    y = T.Tensor((rng.uniform(size=(1, 1, 16, 16)) > 0.7).astype(np.float64))
    y_hat = T.Tensor(rng.uniform(0.05, 0.95, (1, 1, 16, 16)), requires_grad=True, name="y_hat")
    g_scores = scores("g_scores")
    cases = [("discriminator loss", lambda: discriminator_loss(real, fake)[0], [real, fake])]
    for saturating in (False, True):
        cfg = ObjectiveConfig(saturating=saturating)
        label = "generator loss" + (" (saturating)" if saturating else "")
        cases.append((label, lambda cfg=cfg: generator_loss(g_scores, y, y_hat, cfg)[0], [g_scores, y_hat]))
    return cases


def _model_cases(rng):
    from .models import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator
    from .models import discriminator_forward, generator_forward

    with T.precision(np.float64):
        G = build_generator(GeneratorConfig(depth=3, base_channels=4), seed=1)
        D = build_discriminator(DiscriminatorConfig(depth=2, base_channels=4), seed=2)
    x = T.Tensor(rng.uniform(size=(1, 3, 16, 16)))
    z = T.Tensor(rng.standard_normal((1, 1, 16, 16)))
    y = T.Tensor(rng.uniform(size=(1, 1, 16, 16)))
    wg = T.Tensor(rng.normal(size=(1, 1, 16, 16)))
    grid = D.config.patch_grid(16, 16)
    wd = T.Tensor(rng.normal(size=(1, 1, *grid)))
    return [
        ("generator forward", lambda: _projected(generator_forward(G, x, z), wg), G),
        ("discriminator forward", lambda: _projected(discriminator_forward(D, x, y), wd), D),
    ]


def run_suite(module="all", samples=40, step=1e-3, tolerance=1e-4, seed=0):
    """Gradient-check every layer, loss and model in float64; returns [(label, report)]."""
    builders = {"conv": _layer_cases, "loss": _loss_cases, "model": _model_cases}
    chosen = SUITE_MODULES if module == "all" else (module,)
    if any(m not in builders for m in chosen):
        raise ValueError(f"unknown gradcheck module {module!r}; choose all, conv, loss or model")
    results = []
    with T.precision(np.float64):
        rng = np.random.default_rng(seed)
        for m in chosen:
            for label, f, params in builders[m](rng):
                results.append((f"{m}: {label}", grad_check(f, params, samples=samples, step=step, tolerance=tolerance, seed=seed)))
    return results
