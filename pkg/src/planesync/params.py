"""Static system parameters, the TT-slot schedule, and derived constants.

Everything downstream (filters, guarded conditions, the simulator, the
statistical harness) reads its constants from a single resolved parameter
bundle built here.  Probabilities and time quantities are exact rationals
so that RNG thresholds and event times reproduce bit-identically per seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import yaml

from .errors import ConfigurationError
from .ring import wrap_sub

__all__ = [
    "as_fraction",
    "SystemParams",
    "TTSchedule",
    "DerivedParams",
    "ValidationReport",
    "Resolved",
    "validate",
    "derive",
    "resolve",
    "load_system_config",
    "SCENARIO_ENV_VAR",
]

SCENARIO_ENV_VAR = "PLANESYNC_CONFIG"


def as_fraction(x: Any) -> Fraction:
    """Exact rational from int, Fraction, decimal string, 'p/q' string, or float.

    Floats go through their shortest decimal repr, so 0.01 becomes 1/100.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    if isinstance(x, str):
        return Fraction(x)
    raise ConfigurationError(f"cannot interpret {x!r} as an exact rational")


@dataclass(frozen=True)
class TTSchedule:
    """Per-slot (begin, end) tick offsets from the round start.

    Slot order within one round: the terminal nodes upload their records
    (vc_send), the master switch collects them (mc_recv), distributes its
    new clock (c_send), and the terminals receive it (c_recv).
    """

    vc_send: tuple[int, int]
    mc_recv: tuple[int, int]
    c_send: tuple[int, int]
    c_recv: tuple[int, int]

    def bounds(self) -> list[int]:
        return [*self.vc_send, *self.mc_recv, *self.c_send, *self.c_recv]


@dataclass(frozen=True)
class SystemParams:
    n0: int                      # terminal (MES) node count
    n1: int                      # switch plane count
    f0: int                      # tolerated Byzantine MES nodes
    f1: int                      # tolerated Byzantine planes
    tau_max: int                 # ring modulus, ticks
    T_H: Fraction                # nominal tick duration, simulated time units
    rho: Fraction                # max hardware clock drift rate
    d_max: Fraction              # max end-to-end message delay, time units
    T0: int                      # max basic round cycle, ticks
    a0: int = 3                  # accuracy-counter cap
    eps0: int | None = None      # target precision, ticks
    eps1: int | None = None      # stability-condition window, ticks
    eps2: int | None = None      # weak-condition window, ticks
    eps_rnd: Fraction | None = None  # intra-plane round-start skew bound, time
    min_delay: Fraction = Fraction(0)  # delivery delays lie in (min_delay, d_max]
    q0: Fraction | None = None   # coin head probability
    p0: Fraction | None = None   # deterministic branch probability of RFT


@dataclass(frozen=True)
class DerivedParams:
    c0: int | None               # per-round contraction base (None when f0 = 0)
    k0: int                      # contraction round count
    g0: int                      # grandmaster lifetime, rounds
    q0: Fraction
    p0: Fraction
    T: int                       # nominal SIG cycle, ticks
    delta_tt0: int
    delta_tt1: int
    delta_tt2: int
    delta_tt3: int
    q1_bound: Fraction           # per-attempt stabilization probability bound
    T_max: Fraction              # window length 2*T*(1+rho), ticks
    stb_exp_windows: Fraction    # expected stabilization bound, 2/q1 + 4 windows
    # Resolved inputs carried along for convenience:
    eps0: int
    eps1: int
    eps2: int
    d_max_ticks: int
    eps_rnd: Fraction
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...] = ()

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "fail:\n" + "\n".join(f"  - {v}" for v in self.violations)


def _d_max_ticks(p: SystemParams) -> int:
    return math.ceil(Fraction(p.d_max) / ((1 - p.rho) * p.T_H))


def _resolve_eps(p: SystemParams) -> tuple[int, int, int]:
    """Defaults: eps0 from the precision claim, eps1/eps2 from their orders.

    eps1 and eps2 are mutually dependent through T = T0 + eps2, so the
    default solves the linear fixpoint
        eps1 = 2*eps0 + 4*rho*(T0 + 2*eps1) + 2*d_max_ticks,  eps2 = 2*eps1
    exactly and rounds up to ticks.  Requires rho < 1/8.
    """
    dmt = _d_max_ticks(p)
    eps0 = p.eps0 if p.eps0 is not None else math.ceil(3 * (1 + p.rho) * dmt)
    if p.eps1 is not None:
        eps1 = p.eps1
    else:
        if p.rho >= Fraction(1, 8):
            raise ConfigurationError("default eps1 needs rho < 1/8; set eps1/eps2 explicitly")
        eps1 = math.ceil((2 * eps0 + 4 * p.rho * p.T0 + 2 * dmt) / (1 - 8 * p.rho))
    eps2 = p.eps2 if p.eps2 is not None else 2 * eps1
    return eps0, eps1, eps2


def validate(params: SystemParams, sched: TTSchedule) -> ValidationReport:
    """Report-style check of every static invariant."""
    v: list[str] = []
    p = params
    if not p.n0 > 3 * p.f0:
        v.append(f"n0>3f0 violated: n0={p.n0}, f0={p.f0}")
    if not p.n1 > 2 * p.f1:
        v.append(f"n1>2f1 violated: n1={p.n1}, f1={p.f1}")
    if not (0 <= p.rho < 1):
        v.append(f"rho must be in [0,1): {p.rho}")
    if not p.d_max > 0:
        v.append(f"d_max must be positive: {p.d_max}")
    if p.T_H <= 0:
        v.append(f"T_H must be positive: {p.T_H}")
    if p.a0 < 1:
        v.append(f"a0 must be >= 1: {p.a0}")
    if not (0 <= p.min_delay < p.d_max):
        v.append(f"min_delay must be in [0, d_max): {p.min_delay}")
    if p.q0 is not None and not (0 <= p.q0 <= 1):
        v.append(f"q0 outside [0,1]: {p.q0}")
    if p.p0 is not None and not (0 <= p.p0 <= 1):
        v.append(f"p0 outside [0,1]: {p.p0}")

    try:
        eps0, eps1, eps2 = _resolve_eps(p)
        if not (eps2 >= eps1 >= eps0 > 0):
            v.append(f"eps2 >= eps1 >= eps0 > 0 violated: {eps0}, {eps1}, {eps2}")
        T = p.T0 + eps2
        if not p.tau_max >= 4 * T:
            v.append(f"tau_max >= 4T violated: tau_max={p.tau_max}, T={T}")
    except ConfigurationError as e:
        v.append(str(e))

    b = sched.bounds()
    if any(x < 0 for x in b) or b[-1] > p.T0:
        v.append(f"schedule must lie within [0, T0={p.T0}]: {b}")
    if b != sorted(b):
        v.append(f"schedule slot ordering violated: {b}")
    dmt = _d_max_ticks(p)
    if sched.mc_recv[1] - sched.vc_send[0] <= dmt:
        v.append(
            "vc_send->mc_recv gap must exceed "
            f"d_max ticks ({dmt}): {sched.vc_send} -> {sched.mc_recv}"
        )
    if sched.c_recv[1] - sched.c_send[0] <= dmt:
        v.append(
            "c_send->c_recv gap must exceed "
            f"d_max ticks ({dmt}): {sched.c_send} -> {sched.c_recv}"
        )
    return ValidationReport(ok=not v, violations=tuple(v))


def derive(params: SystemParams, sched: TTSchedule) -> DerivedParams:
    """Compute every derived constant from the closed forms.

    T first (it does not depend on k0), then k0, then g0 and the
    probabilities; this matches the dependency order of the formulas.
    """
    rep = validate(params, sched)
    if not rep.ok:
        raise ConfigurationError(str(rep))
    p = params
    warnings: list[str] = []
    dmt = _d_max_ticks(p)
    eps0, eps1, eps2 = _resolve_eps(p)
    T = p.T0 + eps2

    if p.f0 == 0:
        c0: int | None = None
        k0 = 1
        warnings.append("f0=0: contraction base undefined, k0 fixed at 1")
    else:
        c0 = (p.n0 - 2 * p.f0 - 1) // p.f0 + 1
        if c0 < 2:
            raise ConfigurationError(f"contraction base c0={c0} < 2: MSR cannot contract")
        ratio = Fraction(2 * eps2 + 8 * p.rho * (1 + p.rho) * T, eps0)
        if ratio <= 1:
            k0 = 1
            warnings.append(f"eps0 >= 2*eps2 + 8*rho*(1+rho)*T (ratio {ratio} <= 1); k0 set to 1")
        else:
            k0 = 1
            acc = Fraction(c0)
            while acc < ratio:
                acc *= c0
                k0 += 1

    if p.tau_max % T != 0:
        # One round per ring wrap is tau_max mod T ticks short, which upsets
        # the accuracy filters periodically.
        warnings.append(f"tau_max={p.tau_max} is not a multiple of T={T}: "
                        "signal cadence is nonuniform at the ring wrap")

    g0 = p.a0 + k0
    q0 = p.q0 if p.q0 is not None else Fraction(1, 2 * g0 + 1)
    p0 = p.p0 if p.p0 is not None else 1 - Fraction(1, g0 + 1)
    q1_bound = q0 * (1 - q0) ** (2 * g0) * p0**g0 * (1 - p0) / 2

    tm = p.tau_max
    d0 = wrap_sub(sched.c_send[1] % tm, sched.c_recv[0] % tm, tm)
    d1 = wrap_sub(sched.c_send[1] % tm, sched.vc_send[0] % tm, tm)
    d2 = wrap_sub(sched.c_recv[1] % tm, sched.c_send[1] % tm, tm)
    d3 = wrap_sub(sched.c_send[1] % tm, sched.mc_recv[1] % tm, tm)

    t_max = 2 * T * (1 + p.rho)
    stb_exp = (2 / q1_bound + 4) if q1_bound > 0 else Fraction(0)
    eps_rnd = p.eps_rnd if p.eps_rnd is not None else Fraction(p.d_max)

    return DerivedParams(
        c0=c0, k0=k0, g0=g0, q0=q0, p0=p0, T=T,
        delta_tt0=d0, delta_tt1=d1, delta_tt2=d2, delta_tt3=d3,
        q1_bound=q1_bound, T_max=t_max, stb_exp_windows=stb_exp,
        eps0=eps0, eps1=eps1, eps2=eps2, d_max_ticks=dmt,
        eps_rnd=eps_rnd, warnings=tuple(warnings),
    )


def q1_closed_form_floor(g0: int) -> float:
    """Closed-form floor of the per-attempt stabilization probability.

    With q0 = 1/(2*g0+1) and p0 = 1 - 1/(g0+1), the exact product
    q0*(1-q0)^(2g0)*p0^g0*(1-p0)/2 is bounded below by
    1 / (2*e^2*(2*g0+1)*(g0+1)); for g0 = 4 this is 1/(90*e^2).
    """
    return 1.0 / (2.0 * math.e**2 * (2 * g0 + 1) * (g0 + 1))


@dataclass(frozen=True)
class Resolved:
    """SystemParams + TTSchedule + DerivedParams bundled for the hot paths."""

    sys: SystemParams
    sched: TTSchedule
    dv: DerivedParams = field(repr=False)

    # Shorthands used throughout the fault-tolerant core.
    @property
    def n0(self) -> int: return self.sys.n0
    @property
    def n1(self) -> int: return self.sys.n1
    @property
    def f0(self) -> int: return self.sys.f0
    @property
    def f1(self) -> int: return self.sys.f1
    @property
    def tau_max(self) -> int: return self.sys.tau_max
    @property
    def a0(self) -> int: return self.sys.a0
    @property
    def rho(self) -> Fraction: return self.sys.rho
    @property
    def T(self) -> int: return self.dv.T
    @property
    def eps0(self) -> int: return self.dv.eps0
    @property
    def eps1(self) -> int: return self.dv.eps1
    @property
    def eps2(self) -> int: return self.dv.eps2
    @property
    def d_max_ticks(self) -> int: return self.dv.d_max_ticks


def resolve(params: SystemParams, sched: TTSchedule) -> Resolved:
    return Resolved(sys=params, sched=sched, dv=derive(params, sched))


_SYSTEM_KEYS = {
    "n0", "n1", "f0", "f1", "tau_max", "T_H", "rho", "d_max", "T0", "a0",
    "eps0", "eps1", "eps2", "eps_rnd", "min_delay", "q0", "p0",
}
_FRACTION_KEYS = {"T_H", "rho", "d_max", "eps_rnd", "min_delay", "q0", "p0"}
_SCHEDULE_KEYS = {"vc_send", "mc_recv", "c_send", "c_recv"}


def parse_system_section(data: dict, strict: bool = True) -> SystemParams:
    unknown = set(data) - _SYSTEM_KEYS
    if unknown and strict:
        raise ConfigurationError(f"unknown system keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for k in _SYSTEM_KEYS & set(data):
        val = data[k]
        kwargs[k] = as_fraction(val) if (k in _FRACTION_KEYS and val is not None) else val
    try:
        return SystemParams(**kwargs)
    except TypeError as e:
        raise ConfigurationError(f"bad system section: {e}") from e


def parse_schedule_section(data: dict, strict: bool = True) -> TTSchedule:
    unknown = set(data) - _SCHEDULE_KEYS
    if unknown and strict:
        raise ConfigurationError(f"unknown schedule keys: {sorted(unknown)}")
    missing = _SCHEDULE_KEYS - set(data)
    if missing:
        raise ConfigurationError(f"missing schedule keys: {sorted(missing)}")
    slots = {}
    for k in _SCHEDULE_KEYS:
        pair = data[k]
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigurationError(f"schedule slot {k} must be [begin, end]: {pair!r}")
        slots[k] = (int(pair[0]), int(pair[1]))
    return TTSchedule(**slots)


def load_system_config(path: str | None = None, strict: bool = True) -> tuple[SystemParams, TTSchedule, dict]:
    """Load a YAML config; path may come from the environment override.

    Returns the parsed system/schedule plus the raw document (the harness
    reads the remaining scenario sections from it).
    """
    if path is None:
        path = os.environ.get(SCENARIO_ENV_VAR)
    if path is None:
        raise ConfigurationError(f"no config path given and {SCENARIO_ENV_VAR} unset")
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config root must be a mapping: {path}")
    if "system" not in doc or "schedule" not in doc:
        raise ConfigurationError("config must contain 'system' and 'schedule' sections")
    params = parse_system_section(doc["system"], strict=strict)
    sched = parse_schedule_section(doc["schedule"], strict=strict)
    return params, sched, doc
