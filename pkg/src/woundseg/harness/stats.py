"""Shapiro-Wilk normality test, Mann-Whitney U test and pairwise condition comparison."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np
from numpy.polynomial import polynomial as P

from ..core import InvalidInputError

_N01 = NormalDist()


class DegenerateSampleError(InvalidInputError):
    pass


def _norm_sf(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# Royston's polynomial approximations (coefficients in ascending powers)
_C1 = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056]
_C2 = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633]
_C3 = [0.5440, -0.39978, 0.025054, -6.714e-4]
_C4 = [1.3822, -0.77857, 0.062767, -0.0020322]
_C5 = [-1.5861, -0.31082, -0.083751, 0.0038915]
_C6 = [-0.4803, -0.082676, 0.0030302]
_G = [-2.273, 0.459]


def _sw_coefficients(n):
    """Antisymmetric weights for the n order statistics (lowest first)."""
    half = n // 2
    if n == 3:
        lo = np.array([math.sqrt(0.5)])
    else:
        m = np.array([_N01.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
        summ2 = 2 * float(m @ m)
        ssumm2 = math.sqrt(summ2)
        u = 1 / math.sqrt(n)
        a = -m / ssumm2
        a[0] = P.polyval(u, _C1) - m[0] / ssumm2
        if n > 5:
            a[1] = P.polyval(u, _C2) - m[1] / ssumm2
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a[0] ** 2 - 2 * a[1] ** 2))
            a[2:] = -m[2:] / fac
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a[0] ** 2))
            a[1:] = -m[1:] / fac
        lo = a
    full = np.zeros(n)
    full[:half] = lo
    full[n - half:] = -lo[::-1]
    return full


def shapiro_wilk(sample):
    """Shapiro-Wilk W and its p-value (Royston's approximation, 3 <= n <= 5000)."""
    x = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    n = len(x)
    if n < 3 or n > 5000:
        raise InvalidInputError(f"shapiro_wilk needs 3 <= n <= 5000, got n={n}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("shapiro_wilk: sample contains non-finite values")
    if x[-1] - x[0] <= 0:
        raise DegenerateSampleError("shapiro_wilk: sample is constant")
    a = _sw_coefficients(n)
    xc = (x - x.mean()) / (x[-1] - x[0])
    ac = a - a.mean()
    sax = float(ac @ xc)
    ssa, ssx = float(ac @ ac), float(xc @ xc)
    w = min(1.0, sax * sax / (ssa * ssx))
    if n == 3:
        p = (6 / math.pi) * (math.asin(math.sqrt(w)) - math.pi / 3)
        return w, min(1.0, max(0.0, p))
    y = math.log1p(-w) if w < 1 else -math.inf
    if n <= 11:
        gamma = P.polyval(n, _G)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        mu, sigma = P.polyval(n, _C3), math.exp(P.polyval(n, _C4))
    else:
        ln = math.log(n)
        mu, sigma = P.polyval(ln, _C5), math.exp(P.polyval(ln, _C6))
    if y == -math.inf:
        return w, 1.0
    return w, _norm_sf((y - mu) / sigma)


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_u_distribution(n1, n2):
    """Counts of U = 0..n1*n2 over all C(n1+n2, n1) rank assignments."""
    counts = np.zeros(n1 * n2 + 1, dtype=np.int64)
    base = n1 * (n1 + 1) // 2
    for pos in itertools.combinations(range(1, n1 + n2 + 1), n1):
        counts[sum(pos) - base] += 1
    return counts


def mann_whitney_u(a, b, alternative="two_sided"):
    """Mann-Whitney U for sample ``a`` against ``b``; returns ``(U_a, p)``.

    Exact p by enumeration when ``len(a) + len(b) <= 12`` and there are no
    ties; otherwise the normal approximation with tie and continuity
    corrections.
    """
    if alternative not in ("two_sided", "less", "greater"):
        raise InvalidInputError(f"unknown alternative {alternative!r}")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise InvalidInputError("mann_whitney_u needs non-empty samples")
    both = np.concatenate([a, b])
    ranks = _midranks(both)
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2)
    u2 = n1 * n2 - u1
    n = n1 + n2
    _, tie_counts = np.unique(both, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))
    if n <= 12 and not has_ties:
        counts = _exact_u_distribution(n1, n2)
        total = counts.sum()
        k = int(round(u1))
        p_le = counts[:k + 1].sum() / total
        p_ge = counts[k:].sum() / total
        if alternative == "less":
            p = p_le
        elif alternative == "greater":
            p = p_ge
        else:
            p = min(1.0, 2 * min(p_le, p_ge))
        return u1, float(p)
    mu = n1 * n2 / 2
    tie_term = float(((tie_counts ** 3) - tie_counts).sum()) / (n * (n - 1))
    sigma = math.sqrt(n1 * n2 / 12 * ((n + 1) - tie_term))
    if sigma == 0:
        return u1, 1.0
    if alternative == "two_sided":
        z = (max(u1, u2) - mu - 0.5) / sigma
        p = 2 * _norm_sf(z)
    elif alternative == "greater":
        p = _norm_sf((u1 - mu - 0.5) / sigma)
    else:
        p = _norm_sf((u2 - mu - 0.5) / sigma)
    return u1, float(min(1.0, max(0.0, p)))


@dataclass
class Comparison:
    a: str
    b: str
    u: float
    p: float
    threshold: float
    significant: bool
    shapiro_a: list | None
    shapiro_b: list | None

    def to_dict(self):
        return asdict(self)


def _normality(v):
    try:
        w, p = shapiro_wilk(v)
        return [w, p]
    except InvalidInputError:
        return None


def compare_conditions(vectors, alpha=0.05, m=None):
    """Pairwise Mann-Whitney comparisons with a Bonferroni threshold ``alpha / m``.

    ``vectors`` maps a label to its per-fold metric vector (or to a report
    with ``fold_values()``). ``m`` defaults to the number of pairs.
    Shapiro-Wilk results are recorded per vector (None when undefined).
    """
    items = [(k, np.asarray(v.fold_values() if hasattr(v, "fold_values") else v, dtype=np.float64))
             for k, v in vectors.items()]
    if len(items) < 2:
        raise InvalidInputError("compare_conditions needs at least two vectors")
    pairs = list(itertools.combinations(items, 2))
    m = len(pairs) if m is None else m
    if m < 1:
        raise InvalidInputError("comparison count m must be >= 1")
    threshold = alpha / m
    rows = []
    for (ka, va), (kb, vb) in pairs:
        u, p = mann_whitney_u(va, vb)
        rows.append(Comparison(ka, kb, u, p, threshold, p < threshold, _normality(va), _normality(vb)))
    return rows
