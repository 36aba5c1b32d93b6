"""Vectorized forward-mode Taylor arithmetic up to second order.

A :class:`Taylor` value carries a batch of scalars together with their
gradient (and optionally Hessian) with respect to a fixed set of seed
directions. Arithmetic propagates the derivatives exactly, so evaluating an
acceleration map on seeded inputs yields its first and second derivatives in
one pass. ``sin``/``cos`` below dispatch on the operand type, which lets the
same source expression run on plain arrays or on Taylor values.
"""

from __future__ import annotations

import numpy as np


class Taylor:
    """Batched scalar with derivative blocks.

    ``val`` has shape (...,), ``grad`` shape (..., n) over n seed directions,
    and ``hess`` shape (..., n, n) or None for first-order-only propagation.
    """

    __slots__ = ("val", "grad", "hess")

    def __init__(self, val, grad, hess=None):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = None if hess is None else np.asarray(hess, dtype=float)

    @classmethod
    def seed(cls, values, direction: int, n_dirs: int, second_order: bool) -> "Taylor":
        """An independent variable with unit derivative along ``direction``."""
        val = np.asarray(values, dtype=float)
        grad = np.zeros(val.shape + (n_dirs,))
        grad[..., direction] = 1.0
        hess = np.zeros(val.shape + (n_dirs, n_dirs)) if second_order else None
        return cls(val, grad, hess)

    @property
    def n_dirs(self) -> int:
        return self.grad.shape[-1]

    def _lift(self, other) -> "Taylor":
        """Promote a plain scalar/array to a constant Taylor value."""
        val = np.broadcast_to(np.asarray(other, dtype=float), self.val.shape)
        grad = np.zeros(val.shape + (self.n_dirs,))
        hess = None if self.hess is None else np.zeros(val.shape + (self.n_dirs, self.n_dirs))
        return Taylor(val, grad, hess)

    def __add__(self, other):
        if not isinstance(other, Taylor):
            return Taylor(self.val + other, self.grad, self.hess)
        hess = None
        if self.hess is not None:
            hess = self.hess + other.hess
        return Taylor(self.val + other.val, self.grad + other.grad, hess)

    __radd__ = __add__

    def __neg__(self):
        return Taylor(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __sub__(self, other):
        if not isinstance(other, Taylor):
            return Taylor(self.val - other, self.grad, self.hess)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Taylor):
            c = np.asarray(other, dtype=float)
            return Taylor(
                self.val * c,
                self.grad * c[..., None] if c.ndim else self.grad * c,
                None if self.hess is None else (self.hess * c[..., None, None] if c.ndim else self.hess * c),
            )
        val = self.val * other.val
        grad = self.val[..., None] * other.grad + other.val[..., None] * self.grad
        hess = None
        if self.hess is not None:
            cross = self.grad[..., :, None] * other.grad[..., None, :]
            hess = (
                self.val[..., None, None] * other.hess
                + other.val[..., None, None] * self.hess
                + cross
                + np.swapaxes(cross, -1, -2)
            )
        return Taylor(val, grad, hess)

    __rmul__ = __mul__

    def reciprocal(self) -> "Taylor":
        v = self.val
        return self._unary(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))

    def __truediv__(self, other):
        if not isinstance(other, Taylor):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def _unary(self, f, df, d2f) -> "Taylor":
        grad = df[..., None] * self.grad
        hess = None
        if self.hess is not None:
            outer = self.grad[..., :, None] * self.grad[..., None, :]
            hess = df[..., None, None] * self.hess + d2f[..., None, None] * outer
        return Taylor(f, grad, hess)


def sin(x):
    if isinstance(x, Taylor):
        v = x.val
        return x._unary(np.sin(v), np.cos(v), -np.sin(v))
    return np.sin(x)


def cos(x):
    if isinstance(x, Taylor):
        v = x.val
        return x._unary(np.cos(v), -np.sin(v), -np.cos(v))
    return np.cos(x)
