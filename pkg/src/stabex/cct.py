"""Ground-truth critical clearing times and report generation.

The step-by-step (SBS) oracle bisects on clearing time with a simulation
verdict; everything else in the toolkit is judged against it.  Report rows
follow the fault / step-by-step / direct-method / per-iteration-expansion
schema with arithmetic averages and population standard deviations in the
footer.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .direct import (
    CriticalValue,
    bcu_critical_value,
    fault_on_trajectory,
    pebs_critical_value,
    real_exit_point,
)
from .dynamics import IntegratorControls, integrate
from .errors import (
    DivergenceError,
    NoInstabilityError,
    StabexError,
    VerdictTimeoutError,
)
from .expansion import ExpandedFunction, improve_cct
from .models import FaultScenario, StudySystem

#: Pairwise angle separation beyond pi plus this margin flags instability.
SEPARATION_MARGIN = 0.5
#: Convergence ball radius around the stable point.
CONVERGENCE_BALL = 0.05
#: Dwell time inside the ball required for a stable verdict.
DWELL_TIME = 2.0
#: Horizon doubling cap for inconclusive verdicts.
MAX_HORIZON = 60.0


def stability_verdict(
    study: StudySystem,
    x_clear: np.ndarray,
    horizon: float = 15.0,
    ball: float = CONVERGENCE_BALL,
    dwell: float = DWELL_TIME,
    controls: IntegratorControls | None = None,
) -> str:
    """"stable" or "unstable" for the post-fault state, by simulation.

    Unstable: pairwise angle separation beyond pi + margin, escape to the
    integrator's divergence radius, or settling at an attractor away from
    the stable point.  Stable: entering and dwelling inside the
    convergence ball.  Anything still inconclusive doubles the horizon up
    to the cap and then raises rather than guessing.
    """
    x_clear = np.asarray(x_clear, dtype=float)
    if study.verdict_hook is not None:
        out = study.verdict_hook(x_clear, horizon)
        if out is not None:
            return out

    sep_limit = math.pi + SEPARATION_MARGIN
    h = horizon
    while True:
        entered = [None]
        outcome: list[str | None] = [None]

        def done(t, x):
            if study.spread is not None and study.spread(x) > sep_limit:
                outcome[0] = "unstable"
                return True
            if np.linalg.norm(x - study.sep) < ball:
                if entered[0] is None:
                    entered[0] = t
                elif t - entered[0] >= dwell:
                    outcome[0] = "stable"
                    return True
            else:
                entered[0] = None
                if t > 0 and np.linalg.norm(study.system.field(x)) < 1e-9:
                    outcome[0] = "unstable"
                    return True
            return False

        if done(0.0, x_clear):
            return outcome[0]
        try:
            integrate(study.system, x_clear, h, controls, terminal=done)
        except DivergenceError:
            return "unstable"
        if outcome[0] is not None:
            return outcome[0]
        if h >= MAX_HORIZON:
            raise VerdictTimeoutError(h)
        h = min(2 * h, MAX_HORIZON)


@dataclass(frozen=True)
class SBSResult:
    cct: float
    v_cr_true: float
    bracket: tuple[float, float]
    verdicts: int
    wall_time: float


def sbs_cct(
    scenario: FaultScenario,
    t_lo: float = 0.0,
    t_hi: float | None = None,
    tol: float = 1e-3,
    scan_max: float = 5.0,
    horizon: float = 15.0,
) -> SBSResult:
    """Step-by-step critical clearing time by bisection on clearing time.

    The bracket is auto-expanded when ``t_hi`` is not supplied or not yet
    unstable.  ``v_cr_true`` is the post-fault energy at the fault-on state
    at the returned time.
    """
    t0 = time.perf_counter()
    post = scenario.post
    traj = fault_on_trajectory(scenario, scan_max)
    count = [0]

    def verdict_at(tc: float) -> str:
        count[0] += 1
        if tc > traj.t_end:
            # fault-on trajectory itself diverged before tc
            return "unstable"
        return stability_verdict(post, traj.interpolate(tc), horizon)

    lo = t_lo
    if verdict_at(lo) != "stable":
        raise NoInstabilityError(scan_max)
    hi = t_hi if t_hi is not None else max(0.1, 2 * lo)
    while verdict_at(hi) == "stable":
        lo = hi
        hi *= 2.0
        if hi > scan_max:
            raise NoInstabilityError(scan_max)

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if verdict_at(mid) == "stable":
            lo = mid
        else:
            hi = mid
    cct = 0.5 * (lo + hi)
    v_true = float(post.energy.value(traj.interpolate(cct)))
    return SBSResult(
        cct=cct,
        v_cr_true=v_true,
        bracket=(lo, hi),
        verdicts=count[0],
        wall_time=time.perf_counter() - t0,
    )


def cct_error(estimated: float, real: float) -> float:
    """Relative error of a CCT estimate, in percent."""
    if real <= 0:
        raise ValueError("real CCT must be positive")
    return (estimated - real) / real * 100.0


@dataclass(frozen=True)
class CCTReport:
    """One fault's row: oracle, direct method, and per-iteration expansion."""

    fault_bus: int | str
    sbs_v_cr: float
    sbs_cct: float
    method: str
    method_v_cr: float
    method_cct: float
    method_error_pct: float
    method_wall_time: float
    expansion: tuple[dict, ...] = ()
    status: str = "ok"

    def __post_init__(self):
        its = [e["iteration"] for e in self.expansion]
        if its != sorted(set(its)):
            raise ValueError("expansion iterations must be strictly increasing")
        incs = [e["wall_time_increase"] for e in self.expansion]
        if any(b < a - 1e-12 for a, b in zip(incs, incs[1:])):
            raise ValueError("cumulative wall time increase must be non-decreasing")


@dataclass(frozen=True)
class FailedFault:
    fault_bus: int | str
    status: str


@dataclass(frozen=True)
class ReportBundle:
    rows: tuple
    aggregate: dict

    def ok_rows(self) -> list[CCTReport]:
        return [r for r in self.rows if isinstance(r, CCTReport)]


def assess_fault(
    scenario: FaultScenario,
    method: str = "bcu",
    expand: int = 6,
    h: float = 0.2,
    scheme=None,
    cct_tol: float = 1e-3,
    fault_horizon: float = 2.0,
    sbs_horizon: float = 15.0,
    scan_max: float = 5.0,
) -> CCTReport:
    """Full pipeline for one fault: oracle, selector, expansion iterations."""
    from .dynamics import RK3

    scheme = scheme or RK3
    sbs = sbs_cct(scenario, tol=cct_tol, scan_max=scan_max, horizon=sbs_horizon)
    traj = fault_on_trajectory(scenario, max(fault_horizon, sbs.cct * 1.5))
    if method == "bcu":
        crit = bcu_critical_value(scenario, traj)
    elif method == "pebs":
        crit = pebs_critical_value(scenario, traj)
    else:
        raise ValueError(f"unknown method {method!r}")

    exp = ExpandedFunction(
        base=scenario.post.energy,
        model=scenario.post.system,
        scheme=scheme,
        h=h,
        M=expand,
    )
    seq = improve_cct(scenario, exp, crit.v_cr, M=expand, traj=traj)
    rows = []
    for k in range(1, expand + 1):
        rows.append(
            {
                "iteration": k,
                "cct": seq.times[k],
                "error_pct": cct_error(seq.times[k], sbs.cct),
                "wall_time_increase": seq.wall_time_cumulative[k],
            }
        )
    return CCTReport(
        fault_bus=scenario.faulted_bus if scenario.faulted_bus is not None else "-",
        sbs_v_cr=sbs.v_cr_true,
        sbs_cct=sbs.cct,
        method=method,
        method_v_cr=crit.v_cr,
        method_cct=seq.times[0],
        method_error_pct=cct_error(seq.times[0], sbs.cct),
        method_wall_time=crit.wall_time,
        expansion=tuple(rows),
    )


def build_report(
    scenarios: dict,
    method: str = "bcu",
    expand: int = 6,
    h: float = 0.2,
    scheme=None,
    **kwargs,
) -> ReportBundle:
    """Per-fault reports plus AVE/VAR aggregates (population std).

    ``scenarios`` maps fault label to FaultScenario.  Per-fault failures
    become flagged rows and are excluded from the aggregates.
    """
    rows = []
    for bus, scenario in scenarios.items():
        try:
            rows.append(
                assess_fault(scenario, method=method, expand=expand, h=h,
                             scheme=scheme, **kwargs)
            )
        except (StabexError, ValueError) as exc:
            rows.append(FailedFault(fault_bus=bus, status=f"failed: {exc}"))
    ok = [r for r in rows if isinstance(r, CCTReport)]
    aggregate: dict = {}
    if ok:
        aggregate["error_pct"] = {
            "initial": _ave_var([r.method_error_pct for r in ok]),
            "per_iteration": [
                _ave_var([r.expansion[k]["error_pct"] for r in ok])
                for k in range(expand)
            ],
        }
        aggregate["wall_time_increase"] = {
            "per_iteration": [
                _ave_var([r.expansion[k]["wall_time_increase"] for r in ok])
                for k in range(expand)
            ],
        }
    return ReportBundle(rows=tuple(rows), aggregate=aggregate)


def _ave_var(values) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"ave": float(arr.mean()), "var": float(arr.std(ddof=0))}


def report_csv(bundle: ReportBundle, include_timings: bool = True) -> str:
    """Table-shaped CSV: one fault per row, AVE/VAR footer rows."""
    ok = bundle.ok_rows()
    n_exp = max((len(r.expansion) for r in ok), default=0)
    header = ["fault_bus", "sbs_vcr", "sbs_cct", "method", "method_vcr",
              "method_cct", "error_pct", "tc_s"]
    for k in range(1, n_exp + 1):
        header += [f"cct_n{k}", f"error_n{k}", f"tcinc_n{k}"]
    header.append("status")

    def fmt_time(x: float) -> str:
        return f"{x:.3f}" if include_timings else ""

    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in bundle.rows:
        if isinstance(r, FailedFault):
            w.writerow([r.fault_bus] + [""] * (len(header) - 2) + [r.status])
            continue
        row = [
            r.fault_bus,
            f"{r.sbs_v_cr:.4f}",
            f"{r.sbs_cct:.4f}",
            r.method,
            f"{r.method_v_cr:.4f}",
            f"{r.method_cct:.4f}",
            f"{r.method_error_pct:.2f}",
            fmt_time(r.method_wall_time),
        ]
        for e in r.expansion:
            row += [
                f"{e['cct']:.4f}",
                f"{e['error_pct']:.2f}",
                fmt_time(e["wall_time_increase"]),
            ]
        row += [""] * (len(header) - 1 - len(row))
        row.append(r.status)
        w.writerow(row)
    if bundle.aggregate:
        for stat in ("ave", "var"):
            row = [stat.upper(), "", "", "", "", "",
                   f"{bundle.aggregate['error_pct']['initial'][stat]:.2f}", ""]
            for k in range(n_exp):
                err = bundle.aggregate["error_pct"]["per_iteration"][k][stat]
                tci = bundle.aggregate["wall_time_increase"]["per_iteration"][k][stat]
                row += ["", f"{err:.2f}", fmt_time(tci)]
            row.append("")
            w.writerow(row)
    return out.getvalue()


def report_json(bundle: ReportBundle, include_timings: bool = True) -> str:
    """JSON mirror of the CSV report."""
    rows = []
    for r in bundle.rows:
        if isinstance(r, FailedFault):
            rows.append({"fault_bus": r.fault_bus, "status": r.status})
            continue
        d = {
            "fault_bus": r.fault_bus,
            "sbs": {"v_cr": r.sbs_v_cr, "cct": r.sbs_cct},
            "method": r.method,
            "direct": {
                "v_cr": r.method_v_cr,
                "cct": r.method_cct,
                "error_pct": r.method_error_pct,
            },
            "expansion": [dict(e) for e in r.expansion],
            "status": r.status,
        }
        if include_timings:
            d["direct"]["wall_time"] = r.method_wall_time
        else:
            for e in d["expansion"]:
                e.pop("wall_time_increase", None)
        rows.append(d)
    return json.dumps({"rows": rows, "aggregate": bundle.aggregate}, indent=1)
