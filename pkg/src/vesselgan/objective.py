"""Adversarial + L1 training losses.

The minimax game is split into the two losses each network minimizes:

    discriminator:  -log D(x, y) - log(1 - D(x, G(x, z)))
    generator:      -log D(x, G(x, z)) + lambda * |y - G(x, z)|_1

with expectations taken as means over the minibatch and over patch scores
(or pixels, for the L1 term).  ``saturating=True`` swaps the generator's
adversarial term for the literal ``log(1 - D(x, G(x, z)))``.
"""
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, GraphError, ShapeError


@dataclass
class ObjectiveConfig:
    lam: float = 10.0
    bce_clamp: float = 1e-7
    saturating: bool = False

    def validate(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if not 0 < self.bce_clamp < 0.5:
            raise ConfigError(f"bce_clamp must lie in (0, 0.5), got {self.bce_clamp}")


@dataclass
class LossReport:
    step: int = 0
    d_loss_real: float = 0.0
    d_loss_fake: float = 0.0
    d_loss_total: float = 0.0
    g_adv_loss: float = 0.0
    g_l1_loss: float = 0.0
    g_total: float = 0.0


def l1_loss(y, y_hat):
    """Mean absolute difference over every element."""
    y, y_hat = T.as_tensor(y), T.as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"l1_loss: shapes {y.shape} and {y_hat.shape} differ")
    return T.mean(T.abs_(T.sub(y, y_hat)))


def bce(score, target, eps=1e-7):
    """Mean binary cross-entropy of scores against a constant 0/1 target."""
    if target not in (0, 1):
        raise ValueError(f"bce target must be 0 or 1, got {target!r}")
    s = T.clamp(T.as_tensor(score), eps, 1 - eps)
    if target == 1:
        return T.mul(T.mean(T.log(s)), -1.0)
    return T.mul(T.mean(T.log(T.sub(1.0, s))), -1.0)


def discriminator_loss(real_scores, fake_scores, eps=1e-7, generator_prefix="gen/"):
    """bce(real, 1) + bce(fake, 0); returns (loss, d_loss_real, d_loss_fake).

    The fake scores must come from a detached generator output, otherwise a
    discriminator update would leak gradient into the generator.
    """
    if real_scores.shape != fake_scores.shape:
        raise ShapeError(f"real scores {real_scores.shape} and fake scores {fake_scores.shape} differ")
    linked = [t.name for t in T.leaves(fake_scores) if t.name and t.name.startswith(generator_prefix)]
    if linked:
        raise GraphError(f"fake scores still depend on generator parameters (e.g. {linked[0]}); detach G(x, z) first")
    real = bce(real_scores, 1, eps)
    fake = bce(fake_scores, 0, eps)
    return T.add(real, fake), real, fake


def generator_loss(fake_scores, y, y_hat, cfg=None):
    """Adversarial term + lambda * L1; returns (loss, adversarial, l1)."""
    cfg = cfg or ObjectiveConfig()
    if T.grad_enabled() and not fake_scores.requires_grad:
        raise GraphError("fake scores carry no gradient; the generator cannot learn from them")
    if cfg.saturating:
        s = T.clamp(fake_scores, cfg.bce_clamp, 1 - cfg.bce_clamp)
        adv = T.mean(T.log(T.sub(1.0, s)))
    else:
        adv = bce(fake_scores, 1, cfg.bce_clamp)
    l1 = l1_loss(y, y_hat)
    if cfg.lam == 0:
        return adv, adv, l1
    return T.add(adv, T.mul(l1, cfg.lam)), adv, l1


def aggregate_patch_scores(scores):
    """Mean of all patch scores: one realness number per call."""
    data = scores.data if isinstance(scores, T.Tensor) else scores
    if data.size == 0:
        raise ShapeError("cannot aggregate an empty score map")
    return float(data.mean(dtype="float64"))


def make_report(step, d_real, d_fake, g_adv, g_l1, lam):
    """Float-valued step report; totals are recomputed so they add up exactly."""
    d_real, d_fake = float(d_real), float(d_fake)
    g_adv, g_l1 = float(g_adv), float(g_l1)
    return LossReport(
        step=step,
        d_loss_real=d_real,
        d_loss_fake=d_fake,
        d_loss_total=d_real + d_fake,
        g_adv_loss=g_adv,
        g_l1_loss=g_l1,
        g_total=g_adv + lam * g_l1,
    )
