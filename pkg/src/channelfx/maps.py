"""Catalog of analytic maps ``u + i v = F(z)`` defining conjugate-pair channels.

Each map provides the forward map ``F``, its derivative (so that
``|grad v| = |F'(z)|``), and the inverse ``G = F^{-1}`` with two
derivatives, which parametrizes the channel as ``z = G(u + i v)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAP_IDS = ("strip", "log-wedge", "power")


@dataclass(frozen=True)
class ConformalMap:
    map_id: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.map_id not in MAP_IDS:
            raise ValidationError(f"unknown map {self.map_id!r}; expected one of {MAP_IDS}")
        if self.map_id == "power" and not (0.0 < self.alpha <= 4.0):
            raise ValidationError("power map exponent must lie in (0, 4]")

    # forward map, z -> zeta
    def forward(self, z):
        z = np.asarray(z, dtype=complex)
        if self.map_id == "strip":
            return z
        if self.map_id == "log-wedge":
            return np.log(z)
        return np.exp(self.alpha * np.log(z))

    def forward_d1(self, z):
        z = np.asarray(z, dtype=complex)
        if self.map_id == "strip":
            return np.ones_like(z)
        if self.map_id == "log-wedge":
            return 1.0 / z
        return self.alpha * np.exp((self.alpha - 1.0) * np.log(z))

    # inverse map, zeta -> z
    def inverse(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        if self.map_id == "strip":
            return zeta
        if self.map_id == "log-wedge":
            return np.exp(zeta)
        return np.exp(np.log(zeta) / self.alpha)

    def inverse_d1(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        if self.map_id == "strip":
            return np.ones_like(zeta)
        if self.map_id == "log-wedge":
            return np.exp(zeta)
        return self.inverse(zeta) / (self.alpha * zeta)

    def inverse_d2(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        if self.map_id == "strip":
            return np.zeros_like(zeta)
        if self.map_id == "log-wedge":
            return np.exp(zeta)
        p = 1.0 / self.alpha
        return p * (p - 1.0) * self.inverse(zeta) / zeta**2

    def check_rectangle(self, u_range, v_range):
        """Reject parameter rectangles on which the map is not injective."""
        (a, b), (v1, v2) = u_range, v_range
        if self.map_id == "log-wedge":
            if not (-np.pi < v1 and v2 < np.pi):
                raise ValidationError("log-wedge angular range must lie inside (-pi, pi)")
        elif self.map_id == "power":
            if v1 <= 0.0 <= v2 and a <= 0.0:
                raise ValidationError("power-map rectangle touches the branch cut Re<=0, Im=0")
            corners = np.array([complex(a, v1), complex(a, v2), complex(b, v1), complex(b, v2)])
            if np.max(np.abs(np.angle(corners))) >= self.alpha * np.pi:
                raise ValidationError("power-map rectangle is not covered injectively by z^alpha")
