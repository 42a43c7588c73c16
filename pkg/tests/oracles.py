"""Independent reference implementations, evaluated in 60-digit arithmetic.

Written straight from the textbook formulas and sharing no code with the
package: sums are exact-ish mpf sums, and the F tail comes from mpmath's own
regularized incomplete beta.
"""
import mpmath

mpmath.mp.dps = 60


def _mean(xs):
    return mpmath.fsum(xs) / len(xs)


def _median(xs):
    xs = sorted(xs)
    n = len(xs)
    mid = n // 2
    return xs[mid] if n % 2 else (xs[mid - 1] + xs[mid]) / 2


def anova(groups):
    """Return (F, df_between, df_within, p) for a one-way ANOVA."""
    groups = [[mpmath.mpf(x) for x in g] for g in groups]
    k = len(groups)
    n = sum(len(g) for g in groups)
    grand = _mean([x for g in groups for x in g])
    ssb = mpmath.fsum(len(g) * (_mean(g) - grand) ** 2 for g in groups)
    ssw = mpmath.fsum((x - _mean(g)) ** 2 for g in groups for x in g)
    d1, d2 = k - 1, n - k
    f = (ssb / d1) / (ssw / d2)
    # P(F > f) = I_{d1 f / (d1 f + d2)} upper part = 1 - I_x(d1/2, d2/2)
    x = d1 * f / (d1 * f + d2)
    p = mpmath.betainc(mpmath.mpf(d1) / 2, mpmath.mpf(d2) / 2, x, 1, regularized=True)
    return f, d1, d2, p


def levene(groups, center="mean"):
    centre = _mean if center == "mean" else _median
    devs = []
    for g in groups:
        g = [mpmath.mpf(x) for x in g]
        c = centre(g)
        devs.append([abs(x - c) for x in g])
    return anova(devs)


def reversion(a_first, a_mean, a_final):
    a_first, a_mean, a_final = (mpmath.mpf(v) for v in (a_first, a_mean, a_final))
    return (a_mean - a_final) / (a_mean - a_first)
