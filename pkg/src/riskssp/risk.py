"""One-step coherent risk evaluators over finite next-state distributions.

Three measures are supported, all reducing to the expectation at
confidence epsilon = 1:

* expectation: plain probability-weighted mean;
* CVaR(eps):   mean of the worst eps-tail.  Computed exactly through
  the dual representation (reweight each atom by at most 1/eps, push as
  much mass as possible onto the largest values: a fractional knapsack
  over atoms sorted by value).  The primal quantile form is kept as an
  independent cross-check.
* EVaR(eps):   the Chernoff-tightest upper bound on the tail, the
  infimum over z > 0 of (log E[exp(z v)] - log eps) / z, located by
  golden-section search on an auto-expanding bracket and clamped into
  the analytic sandwich [CVaR(eps), max(v)].

Evaluators are pure functions; they are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .rng import SplitMix64

PROB_SUM_TOL = 1e-12

EVAR_HARD_BRACKET = (1e-8, 1e8)
EVAR_DEFAULT_BRACKET = (1e-4, 1e2)


class RiskKind(str, Enum):
    EXPECTATION = "expectation"
    CVAR = "cvar"
    EVAR = "evar"


@dataclass(frozen=True)
class RiskSpec:
    """Which one-step risk measure to apply, and its numeric knobs.

    epsilon is ignored for the expectation.  evar_bracket is the
    initial search interval for the EVaR minimizer; it is expanded
    geometrically up to EVAR_HARD_BRACKET when the minimum lies
    outside.  tol is the relative golden-section tolerance on z.
    """
    kind: RiskKind
    epsilon: float = 1.0
    evar_bracket: tuple = EVAR_DEFAULT_BRACKET
    tol: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon out of range (0,1]: {self.epsilon}")
        lo, hi = self.evar_bracket
        if not (0.0 < lo < hi):
            raise ValueError(f"invalid evar bracket: {self.evar_bracket}")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")

    @classmethod
    def parse(cls, text: str) -> "RiskSpec":
        """Parse command-line syntax: "expectation", "cvar:0.3", "evar:0.7"."""
        name, _, eps_text = text.strip().lower().partition(":")
        try:
            kind = RiskKind(name)
        except ValueError:
            raise ValueError(f"unknown risk kind: {name!r} "
                             "(expected expectation, cvar, or evar)") from None
        if kind is RiskKind.EXPECTATION:
            if eps_text:
                raise ValueError("expectation takes no epsilon")
            return cls(kind)
        if not eps_text:
            raise ValueError(f"{name} requires an epsilon, e.g. {name}:0.3")
        return cls(kind, float(eps_text))

    @property
    def label(self) -> str:
        if self.kind is RiskKind.EXPECTATION:
            return "expectation"
        return f"{self.kind.value}:{self.epsilon:g}"

    @property
    def file_label(self) -> str:
        return self.label.replace(":", "_")


@dataclass(frozen=True)
class Distribution:
    """A finite value/probability pairing fed to the evaluators."""
    values: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs must have equal length")
        if not self.values:
            raise ValueError("distribution must have at least one atom")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if abs(math.fsum(self.probs) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(self.probs)!r}, not 1")


# -- kernels on raw sequences (hot path, no Distribution overhead) ----


def _expectation_kernel(values, probs) -> float:
    acc = 0.0
    for v, p in zip(values, probs):
        acc += p * v
    return acc


def _cvar_kernel(values, probs, eps: float) -> float:
    """Dual fractional knapsack: cap each atom's weight at prob/eps,
    fill from the largest value down.  Exact and branch-free enough to
    live in the solver's inner loop.  Ties in the sort are broken by
    original index (stable sort); the result only depends on the
    multiset of (value, prob) pairs.
    """
    if len(values) == 1:
        return values[0]
    if eps >= 1.0:
        return _expectation_kernel(values, probs)
    order = sorted(range(len(values)), key=lambda i: -values[i])
    inv = 1.0 / eps
    remaining = 1.0
    acc = 0.0
    last = order[0]
    for i in order:
        cap = probs[i] * inv
        take = cap if cap < remaining else remaining
        acc += take * values[i]
        remaining -= take
        last = i
        if remaining <= 0.0:
            break
    if remaining > 0.0:
        # float drift in the caps; park the leftover on the last atom
        acc += remaining * values[last]
    return acc


def _cvar_primal_kernel(values, probs, eps: float) -> float:
    """Quantile form: min over thresholds z of z + E[(v - z)+] / eps.

    The objective is piecewise linear with kinks exactly at the distinct
    values, so evaluating it there and taking the minimum is exact.
    """
    if len(values) == 1:
        return values[0]
    best = math.inf
    for z in set(values):
        acc = 0.0
        for v, p in zip(values, probs):
            if v > z:
                acc += p * (v - z)
        obj = z + acc / eps
        if obj < best:
            best = obj
    return best


@dataclass
class EvarResult:
    value: float
    zeta: float
    bracket_failed: bool  # infimum pinned at the hard bracket edge


def _golden_section(h, a: float, b: float, fa: float, fb: float, rtol: float):
    """Minimize unimodal h on [a, b]; terminates at relative width rtol."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = h(c), h(d)
    best_z, best_f = (c, fc) if fc < fd else (d, fd)
    while (b - a) > rtol * b:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = h(c)
            if fc < best_f:
                best_z, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = h(d)
            if fd < best_f:
                best_z, best_f = d, fd
    return best_z, best_f


def _evar_minimize(values, probs, eps: float, bracket, rtol: float) -> EvarResult:
    """Locate inf over z > 0 of (log sum p exp(z v) - log eps) / z.

    The moment generating function is evaluated with the values shifted
    by their maximum, so the exponentials never overflow.  The search
    bracket grows by decades while the coarse-grid minimum sits on its
    edge; if it still does at the hard limits the infimum is taken at
    the boundary (h is then monotone) and the result is flagged rather
    than raised, because the sandwich clamp downstream recovers the
    exact limit value.
    """
    vmax = max(values)
    shifted = [v - vmax for v in values]
    log_inv_eps = -math.log(eps)
    exp = math.exp
    log = math.log
    pairs = list(zip(probs, shifted))

    def h(z: float) -> float:
        acc = 0.0
        for p, d in pairs:
            acc += p * exp(z * d)
        return vmax + (log(acc) + log_inv_eps) / z

    hard_lo, hard_hi = EVAR_HARD_BRACKET
    lo = max(bracket[0], hard_lo)
    hi = min(bracket[1], hard_hi)
    n0 = 13
    ratio = (hi / lo) ** (1.0 / (n0 - 1))
    zs = [lo * ratio ** k for k in range(n0)]
    fs = [h(z) for z in zs]

    while True:
        i = min(range(len(zs)), key=fs.__getitem__)
        if i == 0 and zs[0] > hard_lo * (1 + 1e-9):
            z = max(zs[0] / 10.0, hard_lo)
            zs.insert(0, z)
            fs.insert(0, h(z))
        elif i == len(zs) - 1 and zs[-1] < hard_hi * (1 - 1e-9):
            z = min(zs[-1] * 10.0, hard_hi)
            zs.append(z)
            fs.append(h(z))
        else:
            break

    if i == 0 or i == len(zs) - 1:
        return EvarResult(fs[i], zs[i], bracket_failed=True)
    a, b = zs[i - 1], zs[i + 1]
    z_star, f_star = _golden_section(h, a, b, fs[i - 1], fs[i + 1], rtol)
    if fs[i] < f_star:
        z_star, f_star = zs[i], fs[i]
    return EvarResult(f_star, z_star, bracket_failed=False)


def _evar_kernel(values, probs, eps: float,
                 bracket=EVAR_DEFAULT_BRACKET, rtol: float = 1e-10) -> float:
    if len(values) == 1:
        return values[0]
    if eps >= 1.0:
        # defined as the z -> 0 limit of the bound, which is the mean
        return _expectation_kernel(values, probs)
    vmax = max(values)
    if vmax == min(values):
        return vmax
    result = _evar_minimize(values, probs, eps, bracket, rtol)
    lo = _cvar_kernel(values, probs, eps)
    return min(max(result.value, lo), vmax)


# -- public evaluator surface -----------------------------------------


def sigma_expectation(d: Distribution) -> float:
    return _expectation_kernel(d.values, d.probs)


def sigma_cvar(d: Distribution, eps: float) -> float:
    _check_eps(eps)
    return _cvar_kernel(d.values, d.probs, eps)


def sigma_cvar_primal(d: Distribution, eps: float) -> float:
    _check_eps(eps)
    return _cvar_primal_kernel(d.values, d.probs, eps)


def sigma_evar(d: Distribution, eps: float,
               bracket=EVAR_DEFAULT_BRACKET, tol: float = 1e-10) -> float:
    _check_eps(eps)
    return _evar_kernel(d.values, d.probs, eps, bracket, tol)


def evar_details(d: Distribution, eps: float,
                 bracket=EVAR_DEFAULT_BRACKET, tol: float = 1e-10) -> EvarResult:
    """As sigma_evar, but exposing the minimizer and the boundary flag.
    The returned value is already clamped into [CVaR, max]."""
    _check_eps(eps)
    if len(d.values) == 1 or eps >= 1.0 or max(d.values) == min(d.values):
        return EvarResult(_evar_kernel(d.values, d.probs, eps, bracket, tol),
                          math.nan, bracket_failed=False)
    result = _evar_minimize(d.values, d.probs, eps, bracket, tol)
    lo = _cvar_kernel(d.values, d.probs, eps)
    result.value = min(max(result.value, lo), max(d.values))
    return result


def sigma(d: Distribution, spec: RiskSpec) -> float:
    """Single dispatching entry point used by the solver."""
    return make_sigma_kernel(spec)(d.values, d.probs)


def make_sigma_kernel(spec: RiskSpec):
    """Bind a RiskSpec to a raw (values, probs) -> float callable."""
    if spec.kind is RiskKind.EXPECTATION:
        return _expectation_kernel
    if spec.kind is RiskKind.CVAR:
        eps = spec.epsilon
        return lambda values, probs: _cvar_kernel(values, probs, eps)
    eps, bracket, tol = spec.epsilon, spec.evar_bracket, spec.tol
    return lambda values, probs: _evar_kernel(values, probs, eps, bracket, tol)


def _brent_min(h, a, b, x, fx, rtol, max_iter=60):
    """Brent's minimization on [a, b] from best point x = argmin so far.

    Safeguarded parabolic interpolation with golden fallback; converges
    superlinearly on the smooth unimodal objectives this module
    produces, which is why the solver's per-state-action searches use
    it instead of plain golden section.
    """
    golden = 0.3819660112501051
    w = v = x
    fw = fv = fx
    d = e = 0.0
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        tol = rtol * abs(x) + 1e-300
        tol2 = 2.0 * tol
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        use_golden = True
        if abs(e) > tol:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e = d
                d = p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol if x < m else -tol
                use_golden = False
        if use_golden:
            e = (b - x) if x < m else (a - x)
            d = golden * e
        u = x + d if abs(d) >= tol else x + (tol if d > 0.0 else -tol)
        fu = h(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv = w, fw
            w, fw = x, fx
            x, fx = u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv = w, fw
                w, fw = u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


def _evar_warm(values, probs, eps, z_prev, rtol):
    """EVaR with a warm-started bracket around the previous minimizer.

    Returns (value, zeta); value is not yet clamped.  Falls back to the
    boundary value when the downhill direction runs into the hard
    bracket limits (the caller's clamp recovers the exact limit then).
    """
    vmax = max(values)
    shifted = [v - vmax for v in values]
    log_inv_eps = -math.log(eps)
    exp = math.exp
    log = math.log
    pairs = list(zip(probs, shifted))

    def h(z):
        acc = 0.0
        for p, d in pairs:
            acc += p * exp(z * d)
        return vmax + (log(acc) + log_inv_eps) / z

    hard_lo, hard_hi = EVAR_HARD_BRACKET
    m = min(max(z_prev, hard_lo * 2), hard_hi / 2)
    a, b = m / 2.0, m * 2.0
    fa, fm, fb = h(a), h(m), h(b)
    # walk the bracket downhill until the center is the smallest
    while fm > fa or fm > fb:
        if fa < fb:
            if a <= hard_lo:
                return fa, a
            b, fb = m, fm
            m, fm = a, fa
            a = max(a / 4.0, hard_lo)
            fa = h(a)
        else:
            if b >= hard_hi:
                return fb, b
            a, fa = m, fm
            m, fm = b, fb
            b = min(b * 4.0, hard_hi)
            fb = h(b)
    z, fz = _brent_min(h, a, b, m, fm, rtol)
    return fz, z


def make_slot_sigma_kernel(spec: RiskSpec, n_slots: int):
    """Kernel variant for solver sweeps: callable(values, probs, slot).

    Behaves like make_sigma_kernel but, for EVaR, keeps the last
    minimizer per slot (one slot per state-action pair) to warm-start
    the next sweep's one-dimensional search.  The memo is confined to
    the returned closure, so each solve owns its own cache and the
    kernel stays safe for concurrent solves.
    """
    if spec.kind is RiskKind.EXPECTATION:
        return lambda values, probs, slot: _expectation_kernel(values, probs)
    if spec.kind is RiskKind.CVAR:
        eps = spec.epsilon
        return lambda values, probs, slot: _cvar_kernel(values, probs, eps)

    eps, bracket, tol = spec.epsilon, spec.evar_bracket, spec.tol
    zetas = [0.0] * n_slots

    def kernel(values, probs, slot):
        if len(values) == 1:
            return values[0]
        if eps >= 1.0:
            return _expectation_kernel(values, probs)
        vmax = max(values)
        if vmax == min(values):
            return vmax
        z_prev = zetas[slot]
        if z_prev > 0.0:
            raw, zeta = _evar_warm(values, probs, eps, z_prev, tol)
        else:
            result = _evar_minimize(values, probs, eps, bracket, tol)
            raw, zeta = result.value, result.zeta
        zetas[slot] = zeta
        lo = _cvar_kernel(values, probs, eps)
        return min(max(raw, lo), vmax)

    return kernel


def _check_eps(eps: float) -> None:
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"epsilon out of range (0,1]: {eps}")


# -- coherence axioms probe -------------------------------------------


@dataclass
class Violation:
    check: str
    witness: dict


@dataclass
class PropertyReport:
    trials: int
    checks: int
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def random_distribution(rng: SplitMix64, max_support: int = 8,
                        lo: float = -10.0, hi: float = 10.0) -> Distribution:
    k = 2 + rng.randrange(max_support - 1)
    values = [rng.uniform(lo, hi) for _ in range(k)]
    weights = [-math.log(1.0 - rng.random()) + 1e-12 for _ in range(k)]
    total = math.fsum(weights)
    return Distribution(values, [w / total for w in weights])


def _leq(a: float, b: float, tol: float) -> bool:
    return a <= b + tol * max(1.0, abs(a), abs(b))


def _near(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def coherence_probe(sigma_fn, trials: int, rng_seed: int,
                    rel_tol: float = 1e-9) -> PropertyReport:
    """Randomized test of the four coherence axioms for an evaluator.

    sigma_fn maps a Distribution to a real.  Each trial draws a
    distribution and checks, on its probability weights:
    convexity (random mixing weight), monotonicity (random dominating
    vector), translational invariance (random shift), and positive
    homogeneity (random non-negative scale).  Violations carry full
    witnesses so a failure can be replayed.
    """
    rng = SplitMix64(rng_seed)
    report = PropertyReport(trials=trials, checks=0)
    for _ in range(trials):
        d = random_distribution(rng)
        v2 = tuple(rng.uniform(-10.0, 10.0) for _ in d.values)
        lam = rng.random()
        kappa = rng.uniform(-5.0, 5.0)
        beta = rng.uniform(0.0, 3.0)
        bump = tuple(rng.uniform(0.0, 5.0) for _ in d.values)

        s_v = sigma_fn(d)
        s_w = sigma_fn(Distribution(v2, d.probs))

        mix = tuple(lam * a + (1.0 - lam) * b for a, b in zip(d.values, v2))
        s_mix = sigma_fn(Distribution(mix, d.probs))
        report.checks += 1
        if not _leq(s_mix, lam * s_v + (1.0 - lam) * s_w, rel_tol):
            report.violations.append(Violation("convexity", {
                "values": d.values, "values2": v2, "probs": d.probs,
                "lambda": lam, "lhs": s_mix,
                "rhs": lam * s_v + (1.0 - lam) * s_w}))

        dominated = tuple(a + u for a, u in zip(d.values, bump))
        s_dom = sigma_fn(Distribution(dominated, d.probs))
        report.checks += 1
        if not _leq(s_v, s_dom, rel_tol):
            report.violations.append(Violation("monotonicity", {
                "values": d.values, "dominating": dominated, "probs": d.probs,
                "lhs": s_v, "rhs": s_dom}))

        shifted = tuple(a + kappa for a in d.values)
        s_shift = sigma_fn(Distribution(shifted, d.probs))
        report.checks += 1
        if not _near(s_shift, s_v + kappa, rel_tol):
            report.violations.append(Violation("translational-invariance", {
                "values": d.values, "probs": d.probs, "kappa": kappa,
                "lhs": s_shift, "rhs": s_v + kappa}))

        scaled = tuple(beta * a for a in d.values)
        s_scaled = sigma_fn(Distribution(scaled, d.probs))
        report.checks += 1
        if not _near(s_scaled, beta * s_v, rel_tol):
            report.violations.append(Violation("positive-homogeneity", {
                "values": d.values, "probs": d.probs, "beta": beta,
                "lhs": s_scaled, "rhs": beta * s_v}))
    return report
