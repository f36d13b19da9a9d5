"""Convex losses and their score functions."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig

SQUARED, QUANTILE, HUBER = 0, 1, 2


@dataclass(frozen=True)
class LossSpec:
    """One of ``Quantile(tau)``, ``HuberType(c)`` or ``Squared()``.

    Build instances with the helper constructors below rather than directly.
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind == "quantile":
            if not 0.0 < self.param < 1.0:
                raise InvalidConfig(f"tau must lie in (0, 1), got {self.param}")
        elif self.kind == "huber":
            if not self.param > 0.0:
                raise InvalidConfig(f"huber c must be positive, got {self.param}")
        elif self.kind != "squared":
            raise InvalidConfig(f"unknown loss {self.kind!r}")

    @property
    def code(self):
        return {"squared": SQUARED, "quantile": QUANTILE, "huber": HUBER}[self.kind]

    @property
    def tau(self):
        return self.param if self.kind == "quantile" else None

    @property
    def c(self):
        return self.param if self.kind == "huber" else None

    def __call__(self, z):
        return loss_value(self, z)

    def to_dict(self):
        out = {"loss": self.kind}
        if self.kind == "quantile":
            out["tau"] = self.param
        elif self.kind == "huber":
            out["huber_c"] = self.param
        return out


def Quantile(tau):
    return LossSpec("quantile", float(tau))


def HuberType(c):
    return LossSpec("huber", float(c))


def Squared():
    return LossSpec("squared")


def loss_value(spec, z):
    """rho(z); scalar in, float out, arrays elementwise."""
    z = np.asarray(z, dtype=float)
    if spec.kind == "quantile":
        out = np.abs(z) + (2.0 * spec.param - 1.0) * z
    elif spec.kind == "huber":
        c = spec.param
        a = np.abs(z)
        out = np.where(a <= c, z * z / (2.0 * c), a - 0.5 * c)
    else:
        out = z * z
    return float(out) if out.ndim == 0 else out


def score(spec, z):
    """An element of the subdifferential of rho at z (midpoint at kinks)."""
    z = np.asarray(z, dtype=float)
    if spec.kind == "quantile":
        tau = spec.param
        out = np.where(z > 0, 2.0 * tau, np.where(z < 0, 2.0 * (tau - 1.0), 2.0 * tau - 1.0))
    elif spec.kind == "huber":
        out = np.clip(z / spec.param, -1.0, 1.0)
    else:
        out = 2.0 * z
    return float(out) if out.ndim == 0 else out


def parse_loss(kind, tau=0.5, huber_c=1.345):
    kind = kind.lower()
    if kind == "quantile":
        return Quantile(tau)
    if kind == "huber":
        return HuberType(huber_c)
    if kind == "squared":
        return Squared()
    raise InvalidConfig(f"unknown loss {kind!r}")
