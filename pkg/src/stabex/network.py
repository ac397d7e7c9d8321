"""Network ingestion, power flow, Kron reduction and fault application.

The classical reduced model: loads become constant admittances at the
pre-fault operating point, generator internal nodes are appended behind
the transient reactances, and the admittance matrix is Schur-complemented
down to the internal nodes.  Dynamics are expressed in the
center-of-inertia (COI) frame with state (theta_1..theta_n,
omega_1..omega_n); uniform damping ratio keeps the COI mode decoupled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import SystemModel
from .energy import multimachine_energy_function
from .equilibria import newton_refine
from .errors import NetworkDataError
from .models import FaultScenario, StudySystem


@dataclass(frozen=True)
class Bus:
    id: int
    type: str  # slack | PV | PQ
    voltage: float = 1.0
    load_p: float = 0.0
    load_q: float = 0.0
    angle: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 0.0  # 0 means no transformer (ratio 1)
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    inertia: float  # M_i, s^2/rad on system base
    damping: float = 0.0
    xd_prime: float = 0.05
    p_mech: float = 0.0


@dataclass(frozen=True)
class NetworkData:
    """Validated static network description."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkDataError("duplicate bus ids")
        slacks = [b for b in self.buses if b.type == "slack"]
        if len(slacks) != 1:
            raise NetworkDataError(f"need exactly one slack bus, got {len(slacks)}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise NetworkDataError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
            if br.x <= 0:
                raise NetworkDataError(f"branch {br.from_bus}-{br.to_bus} needs positive reactance")
        for g in self.generators:
            if g.bus not in known:
                raise NetworkDataError(f"generator at unknown bus {g.bus}")
            if g.inertia <= 0:
                raise NetworkDataError(f"generator at bus {g.bus} needs positive inertia")
            if g.xd_prime <= 0:
                raise NetworkDataError(f"generator at bus {g.bus} needs positive xd'")
        # connectivity over in-service branches
        adj: dict[int, set[int]] = {i: set() for i in ids}
        for br in self.branches:
            if br.in_service:
                adj[br.from_bus].add(br.to_bus)
                adj[br.to_bus].add(br.from_bus)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if seen != known:
            raise NetworkDataError("network graph is not connected")

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == "slack")

    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}


def load_network(path: str | Path) -> NetworkData:
    """Read the UTF-8 JSON network file (angles in rad unless angle_unit=deg)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return network_from_dict(raw)


def network_from_dict(raw: dict) -> NetworkData:
    to_rad = math.pi / 180.0 if raw.get("angle_unit", "rad") == "deg" else 1.0
    try:
        buses = tuple(
            Bus(
                id=int(b["id"]),
                type=str(b["type"]),
                voltage=float(b.get("voltage", 1.0)),
                load_p=float(b.get("load_p", 0.0)),
                load_q=float(b.get("load_q", 0.0)),
                angle=float(b.get("angle", 0.0)) * to_rad,
            )
            for b in raw["buses"]
        )
        branches = tuple(
            Branch(
                from_bus=int(br["from"]),
                to_bus=int(br["to"]),
                r=float(br.get("r", 0.0)),
                x=float(br["x"]),
                b=float(br.get("b", 0.0)),
                tap=float(br.get("tap", 0.0)),
                in_service=bool(br.get("in_service", True)),
            )
            for br in raw["branches"]
        )
        generators = tuple(
            Generator(
                bus=int(g["bus"]),
                inertia=float(g["inertia"]),
                damping=float(g.get("damping", 0.0)),
                xd_prime=float(g["xd_prime"]),
                p_mech=float(g.get("p_mech", 0.0)),
            )
            for g in raw["generators"]
        )
    except KeyError as exc:
        raise NetworkDataError(f"missing field {exc} in network file") from None
    return NetworkData(
        buses=buses,
        branches=branches,
        generators=generators,
        base_mva=float(raw.get("base_mva", 100.0)),
        name=str(raw.get("name", "")),
    )


def admittance_matrix(net: NetworkData) -> np.ndarray:
    """Bus admittance matrix with line charging and magnitude-only taps."""
    idx = net.bus_index()
    n = len(net.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        tap = br.tap if br.tap else 1.0
        Y[f, f] += (y + ysh) / tap**2
        Y[t, t] += y + ysh
        Y[f, t] -= y / tap
        Y[t, f] -= y / tap
    return Y


@dataclass(frozen=True)
class PowerFlowSolution:
    voltages: np.ndarray  # complex bus voltages, net.buses order
    p_injection: np.ndarray
    q_injection: np.ndarray
    iterations: int


def solve_power_flow(net: NetworkData, tol: float = 1e-10, max_iter: int = 30) -> PowerFlowSolution:
    """Newton-Raphson power flow in polar coordinates."""
    idx = net.bus_index()
    n = len(net.buses)
    Y = admittance_matrix(net)
    types = [b.type for b in net.buses]
    slack = types.index("slack")
    pv = [k for k, t in enumerate(types) if t == "PV"]
    pq = [k for k, t in enumerate(types) if t == "PQ"]

    V = np.array([b.voltage if b.type in ("PV", "slack") else 1.0 for b in net.buses])
    th = np.array([b.angle for b in net.buses])
    p_sched = -np.array([b.load_p for b in net.buses])
    for g in net.generators:
        p_sched[idx[g.bus]] += g.p_mech
    q_sched = -np.array([b.load_q for b in net.buses])

    non_slack = [k for k in range(n) if k != slack]
    for it in range(max_iter):
        Vc = V * np.exp(1j * th)
        S = Vc * np.conj(Y @ Vc)
        dP = p_sched[non_slack] - S.real[non_slack]
        dQ = q_sched[pq] - S.imag[pq]
        mism = np.concatenate([dP, dQ])
        if np.max(np.abs(mism)) < tol:
            return PowerFlowSolution(Vc, S.real, S.imag, it)

        # polar Jacobian blocks
        dS_dth = 1j * np.diag(Vc) @ (np.diag(np.conj(Y @ Vc)) - np.conj(Y) @ np.diag(np.conj(Vc)))
        dS_dV = np.diag(Vc / V) @ np.diag(np.conj(Y @ Vc)) + np.diag(Vc) @ np.conj(Y) @ np.diag(
            np.conj(Vc) / V
        )
        J11 = dS_dth.real[np.ix_(non_slack, non_slack)]
        J12 = dS_dV.real[np.ix_(non_slack, pq)]
        J21 = dS_dth.imag[np.ix_(pq, non_slack)]
        J22 = dS_dV.imag[np.ix_(pq, pq)]
        J = np.block([[J11, J12], [J21, J22]])
        try:
            step = np.linalg.solve(J, mism)
        except np.linalg.LinAlgError:
            raise NetworkDataError("power flow Jacobian is singular") from None
        th[non_slack] += step[: len(non_slack)]
        V[pq] += step[len(non_slack):]
    raise NetworkDataError(f"power flow did not converge in {max_iter} iterations")


# --- reduction to generator internal nodes ---------------------------------

def schur_reduce(Y: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Schur complement onto the ``keep`` nodes, eliminating the rest."""
    keep = np.asarray(keep)
    n = Y.shape[0]
    drop = np.setdiff1d(np.arange(n), keep)
    if drop.size == 0:
        return Y[np.ix_(keep, keep)].copy()
    Ybb = Y[np.ix_(drop, drop)]
    try:
        X = np.linalg.solve(Ybb, Y[np.ix_(drop, keep)])
    except np.linalg.LinAlgError:
        raise NetworkDataError("islanded or degenerate network") from None
    if not np.all(np.isfinite(X)):
        raise NetworkDataError("islanded or degenerate network")
    return Y[np.ix_(keep, keep)] - Y[np.ix_(keep, drop)] @ X


@dataclass(frozen=True)
class ReductionContext:
    """Operating-point data shared by the pre-fault and faulted reductions."""

    net: NetworkData
    pf: PowerFlowSolution
    emf: np.ndarray        # complex internal EMFs
    y_load: np.ndarray     # constant-admittance loads per bus
    y_gen: np.ndarray      # 1/(j xd') per generator
    p_mech: np.ndarray     # mechanical powers at the operating point


def reduction_context(net: NetworkData, pf: PowerFlowSolution | None = None) -> ReductionContext:
    pf = pf or solve_power_flow(net)
    idx = net.bus_index()
    Vc = pf.voltages
    load_p = np.array([b.load_p for b in net.buses])
    load_q = np.array([b.load_q for b in net.buses])
    y_load = (load_p - 1j * load_q) / np.abs(Vc) ** 2

    emf = np.zeros(len(net.generators), dtype=complex)
    y_gen = np.zeros(len(net.generators), dtype=complex)
    for k, g in enumerate(net.generators):
        i = idx[g.bus]
        s_gen = complex(pf.p_injection[i] + load_p[i], pf.q_injection[i] + load_q[i])
        i_gen = np.conj(s_gen / Vc[i])
        emf[k] = Vc[i] + 1j * g.xd_prime * i_gen
        y_gen[k] = 1.0 / (1j * g.xd_prime)

    Yred = _reduce_internal(net, y_load, y_gen, grounded_bus=None)
    p_mech = (emf * np.conj(Yred @ emf)).real
    return ReductionContext(net, pf, emf, y_load, y_gen, p_mech)


def _reduce_internal(
    net: NetworkData,
    y_load: np.ndarray,
    y_gen: np.ndarray,
    grounded_bus: int | None,
) -> np.ndarray:
    """Augment with internal nodes, optionally ground one bus, and reduce."""
    idx = net.bus_index()
    nb = len(net.buses)
    ng = len(net.generators)
    Y = np.zeros((nb + ng, nb + ng), dtype=complex)
    Y[:nb, :nb] = admittance_matrix(net) + np.diag(y_load)
    for k, g in enumerate(net.generators):
        i = idx[g.bus]
        j = nb + k
        Y[i, i] += y_gen[k]
        Y[j, j] += y_gen[k]
        Y[i, j] -= y_gen[k]
        Y[j, i] -= y_gen[k]
    keep_nodes = np.arange(nb, nb + ng)
    if grounded_bus is not None:
        gi = idx[grounded_bus]
        mask = np.ones(nb + ng, dtype=bool)
        mask[gi] = False
        Y = Y[np.ix_(mask, mask)]
        keep_nodes = keep_nodes - 1
    return schur_reduce(Y, keep_nodes)


# --- reduced machine model ---------------------------------------------------

@dataclass(frozen=True)
class ReducedMachineModel:
    """Classical second-order machine model on the reduced network, COI frame.

    ``P`` holds the net injections (mechanical power minus the E^2 G_ii
    short-circuit conductance term); ``G`` therefore has a zero diagonal and
    is entirely zero off-diagonal in the lossless variant.  ``theta_s`` is
    the COI angle vector of the stable equilibrium used by the energy
    function (the post-fault SEP).
    """

    n: int
    M: np.ndarray
    D: np.ndarray
    P: np.ndarray
    E: np.ndarray
    B: np.ndarray
    G: np.ndarray
    theta_s: np.ndarray
    lossless: bool
    name: str = ""

    def __post_init__(self):
        if not np.allclose(self.B, self.B.T, atol=1e-12):
            raise NetworkDataError("B must be symmetric")
        if not np.allclose(self.G, self.G.T, atol=1e-12):
            raise NetworkDataError("G must be symmetric")
        ratios = self.D / self.M
        if self.D.any() and np.ptp(ratios) > 1e-9 * (1 + np.max(np.abs(ratios))):
            raise NetworkDataError("damping must have uniform D_i/M_i ratio (COI frame)")

    @property
    def m_total(self) -> float:
        return float(np.sum(self.M))

    def electrical_power(self, theta: np.ndarray) -> np.ndarray:
        """Net electrical power drawn through the couplings, per machine."""
        theta = np.asarray(theta, dtype=float)
        d = theta[..., :, None] - theta[..., None, :]
        EE = self.E[:, None] * self.E[None, :]
        return np.sum(EE * (self.G * np.cos(d) + self.B * np.sin(d)), axis=-1)

    def accelerating_power(self, theta: np.ndarray) -> np.ndarray:
        """P - Pe - COI share; zero exactly at equilibria of the full model."""
        pe = self.electrical_power(theta)
        p_coi = np.sum(self.P - pe, axis=-1)
        return self.P - pe - (self.M / self.m_total) * p_coi[..., None]

    def field(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        th = x[..., : self.n]
        om = x[..., self.n:]
        lam = self.D / self.M
        acc = self.accelerating_power(th) / self.M - lam * om
        return np.concatenate([om, acc], axis=-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        th = x[: self.n]
        n = self.n
        J = np.zeros((2 * n, 2 * n))
        J[:n, n:] = np.eye(n)
        J[n:, :n] = self.gradient_jacobian(th) / self.M[:, None]
        J[n:, n:] = -np.diag(self.D / self.M)
        return J

    def gradient_field(self, theta: np.ndarray) -> np.ndarray:
        """Angle-space descent dynamics with unit scaling per angle."""
        return self.accelerating_power(theta)

    def gradient_jacobian(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        d = theta[:, None] - theta[None, :]
        EE = self.E[:, None] * self.E[None, :]
        H = EE * (self.B * np.cos(d) - self.G * np.sin(d))
        np.fill_diagonal(H, 0.0)
        dpe = -H.copy()
        np.fill_diagonal(dpe, H.sum(axis=1))
        col = -2.0 * np.sum(EE * self.G * np.sin(d), axis=1)
        return -dpe + np.outer(self.M / self.m_total, col)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Re-center angles and speeds onto the COI manifold."""
        x = np.asarray(x, dtype=float).copy()
        n = self.n
        x[:n] -= np.dot(self.M, x[:n]) / self.m_total
        x[n:] -= np.dot(self.M, x[n:]) / self.m_total
        return x

    def project_angles(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).copy()
        return theta - np.dot(self.M, theta) / self.m_total

    def spectrum_basis(self) -> np.ndarray:
        n = self.n
        C = np.zeros((2 * n, 2))
        C[:n, 0] = self.M
        C[n:, 1] = self.M
        Q, _ = np.linalg.qr(C, mode="complete")
        return Q[:, 2:]

    def system(self) -> SystemModel:
        return SystemModel(
            dimension=2 * self.n,
            field=self.field,
            jacobian=self.jacobian,
            name=self.name,
            project=self.project,
            spectrum_basis=self.spectrum_basis(),
        )

    def gradient_system(self) -> SystemModel:
        n = self.n
        C = np.zeros((n, 1))
        C[:, 0] = self.M
        Q, _ = np.linalg.qr(C, mode="complete")
        return SystemModel(
            dimension=n,
            field=self.gradient_field,
            jacobian=self.gradient_jacobian,
            name=self.name + "-gradient",
            project=self.project_angles,
            spectrum_basis=Q[:, 1:],
        )

    def spread(self, state: np.ndarray) -> float:
        th = np.asarray(state)[..., : self.n]
        return float(np.max(th[..., :, None] - th[..., None, :]))

    def study(self) -> StudySystem:
        return StudySystem(
            system=self.system(),
            energy=multimachine_energy_function(self),
            n_angles=self.n,
            sep=np.concatenate([self.theta_s, np.zeros(self.n)]),
            gradient_system=self.gradient_system(),
            spread=self.spread,
            name=self.name,
        )


def _build_variant(
    ctx: ReductionContext,
    Yred: np.ndarray,
    lossless: bool,
    damping_ratio: float,
    theta_s: np.ndarray,
    name: str,
) -> ReducedMachineModel:
    """Package one reduced admittance matrix as a machine model.

    The short-circuit conductance term E_i^2 G_ii is always folded into the
    net injection.  The lossless variant additionally folds the real power
    carried by the transfer conductances at the pre-fault EMF angles, the
    constant-power equivalent that keeps the operating point an exact
    equilibrium once those conductances are dropped (plain dropping leaves
    the load power with no path and destroys the equilibrium entirely).
    """
    G = Yred.real.copy()
    B = Yred.imag.copy()
    E = np.abs(ctx.emf)
    P = ctx.p_mech - E**2 * np.diag(G)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(B, 0.0)
    if lossless:
        delta0 = np.angle(ctx.emf)
        d = delta0[:, None] - delta0[None, :]
        EE = np.outer(E, E)
        P = P - np.sum(EE * G * np.cos(d), axis=1)
        G = np.zeros_like(G)
    M = np.array([g.inertia for g in ctx.net.generators])
    return ReducedMachineModel(
        n=len(E),
        M=M,
        D=damping_ratio * M,
        P=P,
        E=E,
        B=B,
        G=G,
        theta_s=np.asarray(theta_s, dtype=float),
        lossless=lossless,
        name=name,
    )


def kron_reduce(
    net: NetworkData,
    pf: PowerFlowSolution | None = None,
    lossless: bool = False,
    damping_ratio: float = 0.0,
) -> ReducedMachineModel:
    """Reduce the network to machine internal nodes at the operating point.

    The returned model's ``theta_s`` is its stable equilibrium, the
    COI-shifted EMF angles; both variants preserve it exactly by
    construction (Newton refinement only polishes floating-point residue).
    """
    ctx = reduction_context(net, pf)
    Yred = _reduce_internal(net, ctx.y_load, ctx.y_gen, grounded_bus=None)
    delta = np.angle(ctx.emf)
    M = np.array([g.inertia for g in ctx.net.generators])
    theta0 = delta - np.dot(M, delta) / np.sum(M)
    name = (net.name or "network") + ("-lossless" if lossless else "-lossy")
    model = _build_variant(ctx, Yred, lossless, damping_ratio, theta0, name)
    state = newton_refine(model.system(), np.concatenate([theta0, np.zeros(model.n)]), tol=1e-13)
    return _build_variant(ctx, Yred, lossless, damping_ratio, state[: model.n], name)


def apply_fault(
    net: NetworkData,
    bus: int,
    pf: PowerFlowSolution | None = None,
    lossless: bool = False,
    damping_ratio: float = 0.0,
    theta_s: np.ndarray | None = None,
) -> ReducedMachineModel:
    """Fault-on reduced model with the faulted bus grounded.

    The grounded bus is eliminated as a zero-voltage node before the Schur
    reduction; mechanical powers stay at their pre-fault values.  Grounding
    the slack bus (or referencing a generator internal node) is rejected.
    """
    ids = {b.id for b in net.buses}
    if bus not in ids:
        raise NetworkDataError(f"invalid fault location: unknown bus {bus}")
    if bus == net.slack_bus:
        raise NetworkDataError(f"invalid fault location: bus {bus} is the slack/internal node")
    ctx = reduction_context(net, pf)
    Yf = _reduce_internal(net, ctx.y_load, ctx.y_gen, grounded_bus=bus)
    if theta_s is None:
        delta = np.angle(ctx.emf)
        M = np.array([g.inertia for g in ctx.net.generators])
        theta_s = delta - np.dot(M, delta) / np.sum(M)
    name = (net.name or "network") + f"-fault-{bus}" + ("-lossless" if lossless else "-lossy")
    return _build_variant(ctx, Yf, lossless, damping_ratio, theta_s, name)


def build_scenario(
    net: NetworkData,
    bus: int,
    lossless: bool = False,
    damping_ratio: float = 0.0,
) -> FaultScenario:
    """Self-clearing three-phase fault scenario (post-fault == pre-fault)."""
    pf = solve_power_flow(net)
    pre = kron_reduce(net, pf, lossless=lossless, damping_ratio=damping_ratio)
    fault = apply_fault(
        net, bus, pf, lossless=lossless, damping_ratio=damping_ratio, theta_s=pre.theta_s
    )
    pre_study = pre.study()
    return FaultScenario(
        pre=pre_study,
        fault_on=fault.study(),
        post=pre_study,
        x0_pre=pre_study.sep.copy(),
        faulted_bus=bus,
    )


def candidate_uep_angles(model: ReducedMachineModel) -> list[np.ndarray]:
    """Mirror-image Newton seeds for boundary UEP searches.

    For each machine the stable angle is reflected through the phase
    opposition point (delta -> pi - delta relative to the COI), the classic
    mode-of-disturbance guess for type-1 boundary UEPs.
    """
    seeds = []
    for i in range(model.n):
        th = model.theta_s.copy()
        th[i] = math.pi - th[i]
        seeds.append(model.project_angles(th))
        th2 = model.theta_s.copy()
        th2[i] = -math.pi - th2[i]
        seeds.append(model.project_angles(th2))
    return seeds


def data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


def load_builtin_network(name: str = "ieee39") -> NetworkData:
    return load_network(data_path(name))
