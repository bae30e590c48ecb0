"""Exact arithmetic in Q(zeta), zeta = exp(i pi/4), basis 1, zeta, zeta^2, zeta^3."""

from __future__ import annotations

from fractions import Fraction

def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _surd(a: Fraction, b: Fraction) -> float:
    """a + b sqrt2 rounded once, free of cancellation."""
    if a * b >= 0:
        return float(a) + float(b) * 2 ** 0.5
    return float(a * a - 2 * b * b) / (float(a) - float(b) * 2 ** 0.5)


class CycloNumber:
    __slots__ = ("c",)

    def __init__(self, c0=0, c1=0, c2=0, c3=0):
        self.c = (_frac(c0), _frac(c1), _frac(c2), _frac(c3))

    @classmethod
    def zeta_pow(cls, k: int) -> "CycloNumber":
        k %= 8
        sign = -1 if k >= 4 else 1
        c = [0, 0, 0, 0]
        c[k % 4] = sign
        return cls(*c)

    @classmethod
    def coerce(cls, x) -> "CycloNumber":
        if isinstance(x, CycloNumber):
            return x
        if isinstance(x, (int, Fraction)):
            return cls(x)
        raise TypeError(f"cannot coerce {type(x).__name__} to CycloNumber")

    def __add__(self, o):
        try:
            o = CycloNumber.coerce(o)
        except TypeError:
            return NotImplemented
        return CycloNumber(*(a + b for a, b in zip(self.c, o.c)))

    __radd__ = __add__

    def __neg__(self):
        return CycloNumber(*(-a for a in self.c))

    def __sub__(self, o):
        try:
            o = CycloNumber.coerce(o)
        except TypeError:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, o):
        return CycloNumber.coerce(o) - self

    def __mul__(self, o):
        try:
            o = CycloNumber.coerce(o)
        except TypeError:
            return NotImplemented
        a, b = self.c, o.c
        r = [Fraction(0)] * 4
        for i in range(4):
            if a[i] == 0:
                continue
            for j in range(4):
                if b[j] == 0:
                    continue
                k = i + j
                if k >= 4:
                    r[k - 4] -= a[i] * b[j]
                else:
                    r[k] += a[i] * b[j]
        return CycloNumber(*r)

    __rmul__ = __mul__

    def galois(self, k: int) -> "CycloNumber":
        """Image under zeta -> zeta^k, k odd."""
        out = CycloNumber()
        for j, a in enumerate(self.c):
            if a:
                out = out + CycloNumber.zeta_pow(j * k) * a
        return out

    def conjugate(self) -> "CycloNumber":
        return self.galois(7)

    def norm(self) -> Fraction:
        n = self * self.galois(3) * self.galois(5) * self.galois(7)
        assert n.c[1] == n.c[2] == n.c[3] == 0
        return n.c[0]

    def inverse(self) -> "CycloNumber":
        if self.is_zero():
            raise ZeroDivisionError("inverse of zero in Q(zeta8)")
        rest = self.galois(3) * self.galois(5) * self.galois(7)
        n = (self * rest).c[0]
        return CycloNumber(*(a / n for a in rest.c))

    def __truediv__(self, o):
        o = CycloNumber.coerce(o)
        return self * o.inverse()

    def __rtruediv__(self, o):
        return CycloNumber.coerce(o) * self.inverse()

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        out, base = CycloNumber(1), self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, o):
        try:
            o = CycloNumber.coerce(o)
        except TypeError:
            return NotImplemented
        return self.c == o.c

    def __hash__(self):
        return hash(self.c)

    def is_zero(self) -> bool:
        return not any(self.c)

    def is_real(self) -> bool:
        return self.c[2] == 0 and self.c[1] == -self.c[3]

    def real_sign(self) -> int:
        """Sign of a real element a + b*sqrt2 (exact)."""
        if not self.is_real():
            raise ValueError("element is not real")
        a, b = self.c[0], self.c[1]
        if b == 0 or a * b >= 0:
            s = a if a != 0 else b
        else:
            # compare a^2 with 2 b^2
            s = a if a * a > 2 * b * b else b
        return (s > 0) - (s < 0)

    def __complex__(self):
        c0, c1, c2, c3 = self.c
        return complex(_surd(c0, (c1 - c3) / 2), _surd(c2, (c1 + c3) / 2))

    def __repr__(self):
        return "CycloNumber({})".format(", ".join(str(a) for a in self.c))


ZETA = CycloNumber(0, 1)
SQRT2 = ZETA - CycloNumber.zeta_pow(3)
X_CRIT = SQRT2 - 1
