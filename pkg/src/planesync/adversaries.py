"""Built-in adversary strategies.

An adversary owns every nondeterministic knob of a run: per-node tick rates
(clamped to the drift bound), per-message delivery delays in (0, d_max],
per-member round-start skews in [0, eps_rnd], and the complete behavior of
faulty components.  All rates are quantized so event timestamps stay on the
global subtick grid; delays and skews are chosen as integer quantum counts.

Faulty planes act through three World hooks: faulty_sig starts a round at
the terminals, adv_deliver_down injects arbitrary per-recipient clock
values, and schedule_adv runs strategy code at chosen instants.  Faulty
terminals inject upward messages through adv_send_up.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import ConfigurationError
from .params import Resolved
from .protocol import TTMessageUp
from .ring import wrap_add
from .simnet import DRIFT_DENOM, QUANT, World

__all__ = ["Adversary", "Silent", "RandomNoise", "MaxSkew", "SplitBrain", "make_adversary"]


class Adversary:
    """Neutral baseline: nominal rates, random mid-range delays and skews,
    faulty components completely silent."""

    name = "silent"

    def __init__(self, params: dict | None = None) -> None:
        self.params = dict(params or {})
        self.world: World | None = None

    # -- wiring ------------------------------------------------------------

    def bind(self, world: World) -> None:
        self.world = world
        self.rp: Resolved = world.rp
        self.rng = world.adv_rng

    def setup(self) -> None:
        pass

    # -- physical knobs ------------------------------------------------------

    def choose_period(self, key) -> Fraction:
        return self.rp.sys.T_H

    def choose_phase(self, key) -> int:
        return self.rng.randrange(QUANT)

    def choose_skew(self, i: int, p: int) -> int:
        return self.rng.randrange(QUANT + 1)

    def choose_delay(self, sender, p: int) -> int:
        return self.rng.randrange(1, QUANT + 1)

    # -- faulty-component behavior -------------------------------------------

    def on_sig(self, p: int, t: int) -> None:
        pass

    def faulty_mes_round(self, i: int, p: int, anchor: int) -> None:
        pass

    def on_up_to_faulty(self, i: int, p: int, msg: TTMessageUp, send_t: int) -> None:
        pass


class Silent(Adversary):
    name = "silent"


class RandomNoise(Adversary):
    """Uniform chaos: random constant drifts, random payloads and timings
    from every faulty component."""

    name = "random_noise"

    def bind(self, world: World) -> None:
        super().bind(world)
        frac = self.rp.rho * DRIFT_DENOM
        span = int(frac)  # rho is validated rational with denominator | DRIFT_DENOM
        self._rates = {}
        for key in [("mws", q) for q in range(self.rp.n1)] + \
                    [("mes", j) for j in range(self.rp.n0)]:
            r = self.rng.randint(-span, span)
            self._rates[key] = self.rp.sys.T_H * Fraction(DRIFT_DENOM + r, DRIFT_DENOM)

    def choose_period(self, key) -> Fraction:
        return self._rates[key]

    def setup(self) -> None:
        for p in sorted(self.world.faulty_planes):
            self._arm_faulty_plane(p)

    def _arm_faulty_plane(self, p: int) -> None:
        w = self.world
        T_ticks = self.rp.T
        gap = w.THL * self.rng.randrange(T_ticks // 2, 3 * T_ticks // 2)
        t_sig = w.engine.now + gap

        def fire(p=p):
            w.faulty_sig(p, w.engine.now)
            sc = self.rp.sched
            for i in sorted(w.honest_mes):
                off = sc.c_send[0] * QUANT + self.rng.randrange(0, 4 * QUANT)
                arrival = w.engine.now + off * (w.THL // QUANT) + \
                    self.rng.randrange(1, QUANT + 1) * w.delay_quantum
                w.adv_deliver_down(p, i, self.rng.randrange(self.rp.tau_max), arrival)
            self._arm_faulty_plane(p)

        w.schedule_adv(t_sig, fire)

    def faulty_mes_round(self, i: int, p: int, anchor: int) -> None:
        w = self.world
        if p in w.faulty_planes:
            return
        rp = self.rp
        sc = rp.sched
        send_t = anchor + (sc.vc_send[0] * QUANT + self.rng.randrange(0, 4 * QUANT)) * \
            (w.THL // QUANT)

        def blast(i=i, p=p, send_t=send_t):
            tau = rp.tau_max
            pick = lambda: self.rng.randrange(tau) if self.rng.random() < 0.8 else None
            msg = TTMessageUp(
                sender=i,
                c_vec=tuple(pick() for _ in range(rp.n1)),
                a_vec=tuple(self.rng.randrange(rp.a0 + 1) for _ in range(rp.n1)),
                m_vec=tuple(pick() for _ in range(rp.n1)),
            )
            w.adv_send_up(i, p, msg, send_t)

        w.schedule_adv(send_t, blast)


class MaxSkew(Adversary):
    """Everything at the bound, signs chosen to pull clocks apart: honest
    planes at opposite drift extremes, terminals split, delays at d_max,
    alternating anchor skews.  Faulty components stay silent."""

    name = "max_skew"

    def choose_period(self, key) -> Fraction:
        T_H, rho = self.rp.sys.T_H, self.rp.rho
        kind, idx = key
        ranked = sorted(self.world.honest_planes) if kind == "mws" else \
            sorted(self.world.honest_mes)
        if idx not in ranked:
            return T_H
        return T_H * (1 + rho) if ranked.index(idx) % 2 == 0 else T_H * (1 - rho)

    def choose_skew(self, i: int, p: int) -> int:
        return QUANT if (i + p) % 2 == 0 else 0

    def choose_delay(self, sender, p: int) -> int:
        return QUANT


class SplitBrain(Adversary):
    """The faulty plane shadows the first honest plane and distributes that
    clock plus a bias hovering at the stability window boundary.

    One update per cycle, with a bias toggling across the eps1 boundary in
    steps below the accuracy bound, so terminal accuracy counters for the
    faulty row stay maxed while the row moves in and out of the window.
    The update is injected strictly between the two honest planes' upward
    relay instants, so the earlier plane collects the previous bias and the
    later one the new bias: whenever the faulty row is the deciding one,
    one switch judges the ensemble stable while the other does not."""

    name = "split_brain"

    def bind(self, world: World) -> None:
        super().bind(world)
        rp = self.rp
        self.bias_lo = (3 * rp.eps1) // 4
        self.bias_hi = min(self.bias_lo + 2 * rp.eps0 - 4, rp.eps1 + 3 * rp.eps0)
        self._hi = False
        self.tracked = min(world.honest_planes)
        self._last: tuple[int, int] | None = None  # first SIG of the pair
        # Shadow-round anchor offset: the terminals' receive slot must be
        # open around the next cycle's relay instants (anchor + vc_send).
        mid = rp.T + rp.sched.vc_send[0] + 1
        self._anchor_off = mid - (rp.sched.c_recv[0] + rp.sched.c_recv[1]) // 2

    def choose_skew(self, i: int, p: int) -> int:
        return 0  # relay instants must be predictable to place the update

    def on_sig(self, p: int, t: int) -> None:
        w = self.world
        if not w.faulty_planes:
            return
        half = (self.rp.T // 2) * w.THL
        if self._last is not None and self._last[1] != p and t - self._last[0] <= half:
            t1, _p1 = self._last
            self._last = None
            self._inject_between(t1, t)
            for pf in sorted(w.faulty_planes):
                w.schedule_adv(t1 + self._anchor_off * w.THL,
                               lambda pf=pf: w.faulty_sig(pf, w.engine.now))
        else:
            self._last = (t, p)

    def _inject_between(self, t1: int, t2: int) -> None:
        w = self.world
        rp = self.rp
        self._hi = not self._hi
        bias = self.bias_hi if self._hi else self.bias_lo
        for pf in sorted(w.faulty_planes):
            for i in sorted(w.honest_mes):
                period = w.clocks[("mes", i)].period
                r1 = t1 + rp.sched.vc_send[0] * period
                r2 = t2 + rp.sched.vc_send[0] * period
                u = max(w.engine.now, r1) + w.delay_quantum
                if u >= r2:
                    u = (max(w.engine.now, r1) + r2) // 2  # best effort
                base = w.read_clock(("mws", self.tracked), u)
                m = wrap_add(wrap_add(base, rp.dv.delta_tt0, rp.tau_max),
                             bias, rp.tau_max)
                w.adv_deliver_down(pf, i, m, u)


_BUILTINS = {a.name: a for a in (Silent, RandomNoise, MaxSkew, SplitBrain)}


def make_adversary(name: str, params: dict | None = None) -> Adversary:
    try:
        cls = _BUILTINS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown adversary {name!r}; built-ins: {sorted(_BUILTINS)}") from None
    return cls(params)
