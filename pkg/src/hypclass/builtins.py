"""Closed-form example symbols used throughout the tests and the CLI.

* ``rei1``: -xi0^2 + (1+theta(x)) xi1^2 + (x0+x1)^2 xin^2
* ``rei2``: -xi0^2 + xi1^2 + (x0+x1-x0 x2^k/k)^2 xin^2 + xi2^2, given as a
  plain sum of squares; ``rei2_normal`` is the same symbol in normal form.
* ``rei3``: -xi0^2 + (xi1+x0 xin)^2 + x1^2 (1+x1^k+nu(x)) xin^2 in normal form.
"""

from __future__ import annotations

import re

from .expr import parse
from .spectral import SymbolSystem

__all__ = ["rei1", "rei2", "rei2_normal", "rei3", "from_spec", "BUILTIN_NAMES"]

BUILTIN_NAMES = ("rei1", "rei2", "rei2n", "rei3")


def rei1(theta: str = "0", n: int = 2) -> SymbolSystem:
    if n < 2:
        raise ValueError("rei1 needs n >= 2")
    phis = [parse("xi1", n=n), parse("(x0 + x1)*xin", n=n)]
    th = parse(theta, n=n)
    return SymbolSystem(n, phis, theta=th, name=f"rei1 theta={theta}",
                        params={"theta": theta}, r=2)


def rei2(k: int = 3, n: int = 3) -> SymbolSystem:
    if n < 3 or k < 1:
        raise ValueError("rei2 needs n >= 3 and k >= 1")
    prm = {"k": k}
    phis = [parse("xi1", n=n), parse("(x0 + x1 - x0*x2^k/k)*xin", prm, n), parse("xi2", n=n)]
    return SymbolSystem(n, phis, name=f"rei2 k={k}", params=prm)


def rei2_theta_text() -> str:
    return "(2*x2^k/k + x0^2*x2^(2*k - 2) - x2^(2*k)/k^2)/(1 - x2^k/k)^2"


def rei2_normal(k: int = 3, n: int = 3, theta: str | None = None,
                params: dict | None = None) -> SymbolSystem:
    """Normal-form frame of ``rei2``; ``theta`` overrides the exact theta."""
    if n < 3 or k < 1:
        raise ValueError("rei2 needs n >= 3 and k >= 1")
    prm = {"k": k, **(params or {})}
    phi1 = "(1 - x2^k/k)*(xi1 - x0*x2^(k - 1)*xi2)/(1 + x0^2*x2^(2*k - 2))"
    phi2 = "(x0 + x1 - x0*x2^k/k)*xin"
    phi3 = "(x0*x2^(k - 1)*xi1 + xi2)/sqrt(1 + x0^2*x2^(2*k - 2))"
    th = parse(theta if theta is not None else rei2_theta_text(), prm, n)
    name = f"rei2n k={k}" + ("" if theta is None else f" theta={theta}")
    return SymbolSystem(n, [parse(phi1, prm, n), parse(phi2, prm, n), parse(phi3, prm, n)],
                        theta=th, name=name, params=prm, r=2)


def rei3(k: int = 1, nu: str = "0", n: int = 3) -> SymbolSystem:
    if n < 3 or k < 1:
        raise ValueError("rei3 needs n >= 3 and k >= 1")
    prm = {"k": k}
    alpha = "(1 + x1^k)/(1 + (1 + k/2)*x1^k)"
    phi1 = parse(f"-x1*{alpha}*xin", prm, n)
    phi2 = parse("xi1 + x0*xin", prm, n)
    nu_e = parse(nu, prm, n)
    theta = parse(f"(1 + k)*x1^k + k^2*x1^(2*k)/(4*(1 + x1^k)) + ({nu})/({alpha})^2", prm, n)
    return SymbolSystem(n, [phi1, phi2], theta=theta, name=f"rei3 k={k} nu={nu}",
                        params=prm, extras={"nu": nu_e}, r=2)


_ARG = re.compile(r"^([A-Za-z_]+)=(.*)$")


def from_spec(spec: str, k: int | None = None) -> SymbolSystem:
    """Build a built-in from text like ``"rei2 k=3"`` or ``"rei3 k=1 nu=x2^2"``."""
    parts = spec.split()
    if not parts:
        raise ValueError("empty built-in name")
    name, args = parts[0], {}
    for tok in parts[1:]:
        m = _ARG.match(tok)
        if not m:
            raise ValueError(f"bad built-in argument {tok!r} (expected key=value)")
        args[m.group(1)] = m.group(2)
    if k is not None:
        args["k"] = str(k)
    kk = int(args.pop("k", 3 if name in ("rei2", "rei2n") else 1))
    n = int(args.pop("n", 2 if name == "rei1" else 3))
    if name == "rei1":
        out = rei1(args.pop("theta", "0"), n=n)
    elif name == "rei2":
        out = rei2(kk, n=n)
    elif name == "rei2n":
        out = rei2_normal(kk, n=n, theta=args.pop("theta", None))
    elif name == "rei3":
        out = rei3(kk, args.pop("nu", "0"), n=n)
    else:
        raise ValueError(f"unknown built-in {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    if args:
        raise ValueError(f"unused built-in arguments: {sorted(args)}")
    return out
