"""Parameter sweeps with log-log slope fits.

Each sweep varies one of ``eps``, ``h`` (with the scaling schedule) or
``delta`` along a strictly decreasing geometric ladder, runs the scenario for
every value and fits ``log(metric)`` against ``log(value)``.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, with_overrides
from .errors import ConfigError, NsfpError, NumericalError

WORKERS_ENV = "NSFP_WORKERS"


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    used: int

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def fit_slope(xs, ys):
    """Least-squares slope of ``log y`` against ``log x``.

    Pairs with a nonpositive entry are dropped with a warning; fewer than three
    surviving pairs is an error. Returns ``(slope, intercept, r2)``.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError("xs and ys must have the same length")
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if not np.all(keep):
        warnings.warn(f"dropping {int((~keep).sum())} nonpositive or non-finite points from the fit")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if lx.size < 3:
        raise NumericalError(f"need at least 3 positive points to fit a slope, have {lx.size}")
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, int(lx.size))


# ------------------------------------------------------------------ plans

PARAMS = ("eps", "h", "delta")
DEFAULT_METRICS = {
    "eps": ("penalty_integral",),
    "h": ("A1", "A2", "A3", "A4"),
    "delta": ("artificial_energy",),
}


def theoretical_exponents(alpha):
    """Upper-bound decay exponents for the h-sweep, reported for context only."""
    return {"A1": 46.0 / 9.0, "A2": (22.0 * alpha - 6.0) / (18.0 * (alpha + 1.0))}


@dataclass(frozen=True)
class SweepPlan:
    param: str
    values: tuple
    metrics: tuple
    min_slope: float
    min_r2: float = 0.0
    scenario: str = "reference"
    strict: bool = False

    def __post_init__(self):
        if isinstance(self.param, (tuple, list)) or "," in str(self.param):
            raise ConfigError("sweeps vary one parameter at a time; eps and h are taken to their limits "
                              "in sequence, never together")
        if self.param not in PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.param!r}; choose from {PARAMS}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 4:
            raise ConfigError("a sweep needs at least 4 values")
        if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be positive and strictly decreasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_config(cls, cfg: RunConfig, param):
        sw = cfg.sweep
        if param == "eps":
            return cls("eps", sw.eps_values, DEFAULT_METRICS["eps"], sw.eps_min_slope)
        if param == "h":
            return cls("h", sw.h_values, DEFAULT_METRICS["h"], sw.h_min_slope, sw.h_min_r2, strict=True)
        if param == "delta":
            return cls("delta", sw.delta_values, DEFAULT_METRICS["delta"], sw.delta_min_slope)
        return cls(param, (), (), 0.0)

    def member_config(self, cfg: RunConfig, value):
        return with_overrides(cfg, penalty={self.param: value})


@dataclass
class MetricVerdict:
    name: str
    fit: SlopeFit
    passed: bool
    theory: float | None = None

    def line(self):
        extra = f"  (theoretical bound exponent {self.theory:.4g}, not enforced)" if self.theory else ""
        return (f"{self.name:>18s}: slope {self.fit.slope:+.4f}  intercept {self.fit.intercept:+.4f}  "
                f"r2 {self.fit.r2:.4f}  {'PASS' if self.passed else 'FAIL'}{extra}")


@dataclass
class SweepReport:
    plan: SweepPlan
    values: list
    metrics: dict
    verdicts: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    failure: str | None = None

    @property
    def passed(self):
        return self.failure is None and all(v.passed for v in self.verdicts)

    def format(self):
        out = [f"sweep over {self.plan.param}: {', '.join(f'{v:g}' for v in self.plan.values)}"]
        if self.failure:
            out.append(f"member run failed: {self.failure}")
        for s in self.summaries:
            out.append("  " + s)
        for v in self.verdicts:
            out.append(v.line())
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(out)

    def csv_text(self):
        names = list(self.metrics)
        lines = [",".join([self.plan.param] + names)]
        for i, v in enumerate(self.values):
            lines.append(",".join([repr(float(v))] + [repr(float(self.metrics[n][i])) for n in names]))
        return "\n".join(lines) + "\n"


def _member(args):
    """Run one sweep member; module-level so process pools can pickle it."""
    from .scenarios import simulate

    cfg, metrics = args
    res = simulate(cfg)
    fin = res.final
    row = {m: float(getattr(fin, m)) for m in metrics}
    summary = (f"steps {res.simulation.step_count}, mass {fin.mass:.6g}, "
               f"max residual {np.nanmax(res.recorder.residuals()):.3e}, {res.elapsed:.1f} s")
    return row, summary


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def run_sweep(plan: SweepPlan, cfg: RunConfig, workers=None, runner=None):
    """Run every member of ``plan`` and fit the slopes.

    ``runner`` maps a member config to ``(metric dict, summary line)``; by
    default the scenario is simulated. Member runs may go to a process pool;
    the report is assembled in plan order either way.
    """
    configs = [plan.member_config(cfg, v) for v in plan.values]
    n = worker_count() if workers is None else workers
    report = SweepReport(plan, list(plan.values), {m: [] for m in plan.metrics})
    try:
        if runner is None and n > 1:
            with ProcessPoolExecutor(max_workers=n) as pool:
                results = list(pool.map(_member, [(c, plan.metrics) for c in configs]))
        else:
            run = runner or (lambda c: _member((c, plan.metrics)))
            results = []
            for c, v in zip(configs, plan.values):
                try:
                    results.append(run(c))
                except NsfpError as exc:
                    raise type(exc)(f"{plan.param} = {v:g}: {exc}") from exc
    except NsfpError as exc:
        report.failure = str(exc)
        return report
    rows, summaries = [], []
    for (row, summary), v in zip(results, plan.values):
        rows.append(row)
        summaries.append(f"{plan.param} = {v:g}: {summary}")
    report.summaries = summaries
    theory = theoretical_exponents(cfg.transport.alpha) if plan.param == "h" else {}
    for m in plan.metrics:
        ys = [r[m] for r in rows]
        report.metrics[m] = ys
        fit = fit_slope(plan.values, ys)
        ok = fit.slope > plan.min_slope if plan.strict else fit.slope >= plan.min_slope
        ok = ok and fit.r2 >= plan.min_r2
        report.verdicts.append(MetricVerdict(m, fit, ok, theory.get(m)))
    return report
