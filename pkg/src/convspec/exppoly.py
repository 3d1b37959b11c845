"""Semi-symbolic sums of ``coeff * exp(quadratic form)`` and their box integrals.

The algebra is deliberately narrow: exponents are polynomials of total
degree at most two over named variables, at most two variables are
integrated, and integration limits are -inf, +inf, or affine expressions
in variables that are not themselves integrated.  Within those limits
every integral has a closed form: a doubly infinite integration yields a
plain Gaussian factor, a half-line or finite integration yields erf
factors, and a second integration against a surviving erf factor yields
bivariate normal CDF terms.

Typical construction mirrors direct kernel algebra::

    expr = ExpQuadSum(-(const(a) * (var("t") - var("tau")) ** 2))
    value = expr.integrate_box(("tau", -np.inf, var("t")), t=grid)
"""

from __future__ import annotations

import math
import numbers

import numpy as np

from .numerics import bvn_cdf, erf, std_normal_cdf

__all__ = [
    "DivergentIntegralError",
    "QuadForm",
    "ExpQuadSum",
    "AffineLimit",
    "var",
    "const",
    "eq_multiply",
    "eq_substitute",
    "eq_integrate_box",
]

# Eigenvalues of the quadratic part over integration variables must lie
# below this threshold or the integral is declared divergent.
_NEG_DEF_TOL = -1e-10


class DivergentIntegralError(ValueError):
    """The quadratic part over integration variables is not negative definite."""


def _coerce(value):
    if isinstance(value, QuadForm):
        return value
    if isinstance(value, numbers.Real):
        return QuadForm(const=float(value))
    return NotImplemented


class QuadForm:
    """Polynomial of total degree <= 2 over named real variables.

    Stored as a constant, a linear map var -> coefficient, and a
    quadratic map over sorted variable pairs -> monomial coefficient
    (the coefficient of ``x*y`` as written once, or of ``x**2`` on the
    diagonal).  The symmetric-map view ``quad_coeff(a, b)`` halves the
    off-diagonal monomial coefficients.
    """

    __slots__ = ("const", "lin", "quad")

    def __init__(self, const=0.0, lin=None, quad=None):
        self.const = float(const)
        self.lin = {v: float(c) for v, c in (lin or {}).items() if c != 0.0}
        q = {}
        for key, c in (quad or {}).items():
            a, b = key
            key = (a, b) if a <= b else (b, a)
            q[key] = q.get(key, 0.0) + float(c)
        self.quad = {k: c for k, c in q.items() if c != 0.0}

    @property
    def vars(self):
        names = set(self.lin)
        for a, b in self.quad:
            names.add(a)
            names.add(b)
        return names

    @property
    def degree(self):
        if self.quad:
            return 2
        if self.lin:
            return 1
        return 0

    def quad_coeff(self, a, b):
        """Symmetric quadratic-map coefficient for the pair (a, b)."""
        key = (a, b) if a <= b else (b, a)
        c = self.quad.get(key, 0.0)
        return c if a == b else 0.5 * c

    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        lin = dict(self.lin)
        for v, c in other.lin.items():
            lin[v] = lin.get(v, 0.0) + c
        quad = dict(self.quad)
        for k, c in other.quad.items():
            quad[k] = quad.get(k, 0.0) + c
        return QuadForm(self.const + other.const, lin, quad)

    __radd__ = __add__

    def __neg__(self):
        return QuadForm(-self.const, {v: -c for v, c in self.lin.items()},
                        {k: -c for k, c in self.quad.items()})

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.degree + other.degree > 2:
            raise ValueError("product exceeds total degree 2")
        out = QuadForm(self.const * other.const)
        lin = {}
        for v, c in self.lin.items():
            lin[v] = lin.get(v, 0.0) + c * other.const
        for v, c in other.lin.items():
            lin[v] = lin.get(v, 0.0) + c * self.const
        quad = {}
        for k, c in self.quad.items():
            quad[k] = quad.get(k, 0.0) + c * other.const
        for k, c in other.quad.items():
            quad[k] = quad.get(k, 0.0) + c * self.const
        for va, ca in self.lin.items():
            for vb, cb in other.lin.items():
                key = (va, vb) if va <= vb else (vb, va)
                quad[key] = quad.get(key, 0.0) + ca * cb
        return QuadForm(out.const, lin, quad)

    __rmul__ = __mul__

    def __pow__(self, exponent):
        if exponent == 2:
            return self * self
        if exponent == 1:
            return self
        if exponent == 0:
            return QuadForm(1.0)
        raise ValueError("only powers 0, 1, 2 are supported")

    def substitute(self, name, replacement):
        """Replace a variable by an affine expression over other variables."""
        replacement = _coerce(replacement)
        if replacement is NotImplemented:
            raise TypeError("replacement must be a QuadForm or a number")
        if replacement.degree > 1:
            raise ValueError("substitution requires an affine replacement")
        if name in replacement.vars:
            raise ValueError("replacement must not mention the substituted "
                             "variable")
        out = QuadForm(self.const)
        for v, c in self.lin.items():
            out = out + (c * replacement if v == name else
                         QuadForm(lin={v: c}))
        for (a, b), c in self.quad.items():
            fa = replacement if a == name else QuadForm(lin={a: 1.0})
            fb = replacement if b == name else QuadForm(lin={b: 1.0})
            out = out + c * (fa * fb)
        return out

    def evaluate(self, bindings):
        """Evaluate at numeric bindings with broadcasting."""
        missing = self.vars - set(bindings)
        if missing:
            raise ValueError(f"unbound variables: {sorted(missing)}")
        out = np.asarray(self.const, dtype=float)
        for v, c in self.lin.items():
            out = out + c * np.asarray(bindings[v], dtype=float)
        for (a, b), c in self.quad.items():
            out = out + c * (np.asarray(bindings[a], dtype=float)
                             * np.asarray(bindings[b], dtype=float))
        return out

    def split_var(self, name):
        """Write the form as ``q*name**2 + lin(name)*name + rest``.

        Returns ``(q, lin, rest)`` with ``lin`` affine and ``rest`` free
        of ``name``.
        """
        q = self.quad.get((name, name), 0.0)
        lin = QuadForm(const=self.lin.get(name, 0.0))
        rest_lin = {v: c for v, c in self.lin.items() if v != name}
        rest_quad = {}
        for (a, b), c in self.quad.items():
            if a == name and b == name:
                continue
            if a == name:
                lin = lin + QuadForm(lin={b: c})
            elif b == name:
                lin = lin + QuadForm(lin={a: c})
            else:
                rest_quad[(a, b)] = c
        return q, lin, QuadForm(self.const, rest_lin, rest_quad)

    def __repr__(self):
        parts = []
        if self.const:
            parts.append(f"{self.const:g}")
        parts += [f"{c:g}*{v}" for v, c in sorted(self.lin.items())]
        parts += [f"{c:g}*{a}*{b}" for (a, b), c in sorted(self.quad.items())]
        return "QuadForm(" + (" + ".join(parts) or "0") + ")"


def var(name):
    """A fresh variable as a degree-1 form."""
    return QuadForm(lin={name: 1.0})


def const(value):
    """A constant form."""
    return QuadForm(const=float(value))


class AffineLimit:
    """An integration limit: -inf, +inf, or an affine form in bound variables."""

    __slots__ = ("kind", "form")

    def __init__(self, kind, form=None):
        if kind not in ("neg_inf", "pos_inf", "affine"):
            raise ValueError(f"unknown limit kind {kind!r}")
        if kind == "affine":
            form = _coerce(form)
            if form is NotImplemented or form.degree > 1:
                raise ValueError("affine limits must have degree <= 1")
        else:
            form = None
        self.kind = kind
        self.form = form

    @classmethod
    def coerce(cls, obj):
        if isinstance(obj, AffineLimit):
            return obj
        if isinstance(obj, QuadForm):
            return cls("affine", obj)
        if isinstance(obj, numbers.Real):
            if math.isinf(obj):
                return cls("pos_inf" if obj > 0 else "neg_inf")
            return cls("affine", QuadForm(const=float(obj)))
        raise TypeError(f"cannot interpret {obj!r} as an integration limit")

    @property
    def vars(self):
        return self.form.vars if self.kind == "affine" else set()


class _Term:
    """coeff * exp(quad) * prod(erf(factor)) with affine erf factors."""

    __slots__ = ("coeff", "quad", "erfs")

    def __init__(self, coeff, quad, erfs=()):
        self.coeff = float(coeff)
        self.quad = quad
        self.erfs = tuple(erfs)


class ExpQuadSum:
    """A finite sum of ``coeff * exp(QuadForm)`` terms.

    Construct from a single exponent (``ExpQuadSum(q)``) or from explicit
    ``(coeff, exponent)`` pairs via :meth:`from_terms`.  Supports ``+``,
    ``*`` (by scalars and other sums), substitution, pointwise
    evaluation, and closed-form box integration.
    """

    __slots__ = ("terms",)

    def __init__(self, exponent=None):
        if exponent is None:
            self.terms = ()
        else:
            exponent = _coerce(exponent)
            if exponent is NotImplemented:
                raise TypeError("exponent must be a QuadForm or number")
            self.terms = ((1.0, exponent),)

    @classmethod
    def from_terms(cls, terms):
        out = cls()
        out.terms = tuple(
            (float(c), q) for c, q in terms if float(c) != 0.0)
        return out

    @property
    def vars(self):
        names = set()
        for _, q in self.terms:
            names |= q.vars
        return names

    def __add__(self, other):
        if not isinstance(other, ExpQuadSum):
            return NotImplemented
        return ExpQuadSum.from_terms(self.terms + other.terms)

    def __mul__(self, other):
        if isinstance(other, ExpQuadSum):
            return ExpQuadSum.from_terms(
                (ca * cb, qa + qb)
                for ca, qa in self.terms for cb, qb in other.terms)
        if isinstance(other, numbers.Real):
            return ExpQuadSum.from_terms(
                (float(other) * c, q) for c, q in self.terms)
        return NotImplemented

    __rmul__ = __mul__

    def substitute(self, name, replacement):
        return ExpQuadSum.from_terms(
            (c, q.substitute(name, replacement)) for c, q in self.terms)

    def evaluate(self, bindings):
        out = np.asarray(0.0)
        for c, q in self.terms:
            out = out + c * np.exp(q.evaluate(bindings))
        return out

    def integrate_box(self, *specs, **bindings):
        """Integrate over an ordered sequence of ``(var, lower, upper)``.

        Returns the closed-form result evaluated at the numeric bindings
        of all remaining variables, broadcast over their shapes.
        """
        return eq_integrate_box(self, specs, bindings)

    def __repr__(self):
        return ("ExpQuadSum(" + " + ".join(
            f"{c:g}*exp({q!r})" for c, q in self.terms) + ")")


def eq_multiply(a, b):
    """Product of two sums; term count multiplies, exponents add."""
    return a * b


def eq_substitute(e, name, replacement):
    """Substitute an affine expression for a variable throughout a sum."""
    return e.substitute(name, replacement)


def _check_negative_definite(term, int_vars):
    order = sorted(int_vars)
    n = len(order)
    mat = np.zeros((n, n))
    for i, a in enumerate(order):
        for j, b in enumerate(order):
            mat[i, j] = term.quad.quad_coeff(a, b)
    eigmax = float(np.max(np.linalg.eigvalsh(mat))) if n else -np.inf
    if eigmax > _NEG_DEF_TOL:
        raise DivergentIntegralError(
            f"quadratic part over {order} has eigenvalue {eigmax:.3e} "
            f"above {_NEG_DEF_TOL:.0e}; integral diverges")


def _integrate_plain(term, name, lower, upper):
    """Integrate a term with no erf factor in ``name``; symbolic output."""
    a_mono, lin, rest = term.quad.split_var(name)
    a = -a_mono
    if a <= 0.0:
        raise DivergentIntegralError(
            f"coefficient of {name}**2 must be negative, got {a_mono:g}")
    m = (1.0 / (2.0 * a)) * lin
    new_quad = rest + a * (m * m)
    base = term.coeff * 0.5 * math.sqrt(math.pi / a)
    out = []
    for limit, sign in ((upper, 1.0), (lower, -1.0)):
        if limit.kind == "pos_inf":
            out.append(_Term(base * sign, new_quad, term.erfs))
        elif limit.kind == "neg_inf":
            out.append(_Term(-base * sign, new_quad, term.erfs))
        else:
            factor = math.sqrt(a) * (limit.form - m)
            out.append(_Term(base * sign, new_quad,
                             term.erfs + (factor,)))
    return out


def _integrate_with_erf(term, name, lower, upper, bindings):
    """Integrate a term whose erf factors include ``name``; numeric output."""
    hits = [f for f in term.erfs if name in f.vars]
    keep = [f for f in term.erfs if name not in f.vars]
    if len(hits) != 1:
        raise DivergentIntegralError(
            "at most one erf factor may involve the variable being "
            "integrated; rework the integration order")
    if any(name in f.vars for f in keep):  # pragma: no cover - defensive
        raise AssertionError
    factor = hits[0]

    a_mono, lin, rest = term.quad.split_var(name)
    a = -a_mono
    if a <= 0.0:
        raise DivergentIntegralError(
            f"coefficient of {name}**2 must be negative, got {a_mono:g}")
    m = (1.0 / (2.0 * a)) * lin
    new_quad = rest + a * (m * m)

    p = factor.lin.get(name, 0.0)
    e0 = factor - QuadForm(lin={name: p})
    if name in e0.vars:  # pragma: no cover - affine factors only
        raise AssertionError

    m_val = m.evaluate(bindings)
    amp = term.coeff * np.exp(new_quad.evaluate(bindings))
    for f in keep:
        amp = amp * erf(f.evaluate(bindings))

    # Standardize: sigma = sqrt(2a)(v - m); the erf factor becomes
    # erf((A + B sigma)/sqrt(2)) with the constants below.
    big_a = math.sqrt(2.0) * (p * m_val + e0.evaluate(bindings))
    big_b = p / math.sqrt(a)
    denom = math.sqrt(1.0 + big_b * big_b)
    kk = big_a / denom
    rho = -big_b / denom

    def lam(limit):
        if limit.kind == "pos_inf":
            return std_normal_cdf(kk), 1.0
        if limit.kind == "neg_inf":
            return np.asarray(0.0), 0.0
        x = math.sqrt(2.0 * a) * (limit.form.evaluate(bindings) - m_val)
        return bvn_cdf(x, kk, rho), std_normal_cdf(x)

    lam_u, phi_u = lam(upper)
    lam_l, phi_l = lam(lower)
    g = math.sqrt(math.pi / a) * (
        2.0 * (lam_u - lam_l) - (phi_u - phi_l))
    return amp * g


def eq_integrate_box(e, specs, bindings):
    """Closed-form box integral of a sum, evaluated at numeric bindings.

    ``specs`` is an ordered sequence of ``(var, lower, upper)``; the
    first entry is integrated first.  Limits may be +-inf or affine in
    variables that are not integrated.
    """
    specs = [(name, AffineLimit.coerce(lo), AffineLimit.coerce(hi))
             for name, lo, hi in specs]
    if len(specs) > 2:
        raise ValueError("at most two integration variables are supported")
    int_vars = {name for name, _, _ in specs}
    if len(int_vars) != len(specs):
        raise ValueError("duplicate integration variable")
    for name, lo, hi in specs:
        bad = (lo.vars | hi.vars) & int_vars
        if bad:
            raise ValueError(
                f"limits of {name!r} reference integration variables "
                f"{sorted(bad)}")

    terms = [_Term(c, q) for c, q in e.terms]
    for term in terms:
        _check_negative_definite(term, int_vars)

    numeric = np.asarray(0.0)
    for i, (name, lo, hi) in enumerate(specs):
        is_last = i == len(specs) - 1
        next_terms = []
        for term in terms:
            if any(name in f.vars for f in term.erfs):
                if not is_last:  # pragma: no cover - impossible with <= 2 vars
                    raise DivergentIntegralError(
                        "erf factor involves a variable that is not "
                        "integrated last")
                numeric = numeric + _integrate_with_erf(
                    term, name, lo, hi, bindings)
            else:
                next_terms.extend(_integrate_plain(term, name, lo, hi))
        terms = [t for t in next_terms if t.coeff != 0.0]

    out = numeric
    for term in terms:
        val = term.coeff * np.exp(term.quad.evaluate(bindings))
        for f in term.erfs:
            val = val * erf(f.evaluate(bindings))
        out = out + val
    return out
