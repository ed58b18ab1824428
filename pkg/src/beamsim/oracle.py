"""Exact evaluation machinery for small instances.

Enumerates the Markov chain a fixed policy induces on the zone-augmented
state (the oracle must track the zone to be exact even though the learner's
table does not), computes long-run average rewards through the limiting
matrix, checks irreducibility, and solves small MDPs by value iteration.

Trips wrap around: leaving the road transitions straight into a fresh
arrival, so the chain's reward rate equals the per-trip time average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .baselines import EpochView, ObservationPrivilege
from .dynamics import SystemState, num_states
from .scenario import BeamId, Scenario, VIRTUAL_BEAM


class ChainState(NamedTuple):
    zone: int
    rssi_level: int
    beam: BeamId
    speed: int
    direction: int

    def paper_state(self) -> SystemState:
        return SystemState(self.rssi_level, self.beam, self.speed, self.direction)


@dataclass
class EnumeratedChain:
    """Explicit (P, r, y) triple for a fixed policy on a small instance."""

    states: list[ChainState]
    transition: np.ndarray  # row-stochastic
    reward: np.ndarray      # expected Gbit per epoch
    sojourn: np.ndarray     # expected epoch duration, seconds

    def __post_init__(self) -> None:
        rows = self.transition.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-9:
            raise ValueError("transition rows must sum to 1")
        if np.any(self.sojourn <= 0):
            raise ValueError("sojourn times must be positive")

    def dump_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("from_state,to_state,prob\n")
            src, dst = np.nonzero(self.transition)
            for i, j in zip(src, dst):
                fh.write(f"{i},{j},{self.transition[i, j]!r}\n")


def _speed_set(scenario: Scenario) -> list[int]:
    lo = max(1, scenario.mean_speed_mps - 2)
    hi = min(scenario.max_speed_mps, scenario.mean_speed_mps + 2)
    return list(range(lo, hi + 1))


def _check_oracle_instance(scenario: Scenario, cap: int) -> None:
    if scenario.rate_jitter:
        raise ValueError("exact enumeration needs the deterministic rate map (rate_jitter off)")
    total = num_states(scenario) * scenario.num_zones
    if total > cap:
        raise ValueError(f"augmented state space {total} exceeds cap {cap}")
    xi_min = scenario.zone_length_m / max(_speed_set(scenario))
    if scenario.handover_time_s > xi_min + 1e-12:
        raise ValueError(
            "handover residuals would arise (h > z/v_fast); the closed-form "
            "chain requires handovers to finish within one epoch")


def _spawn_states(scenario: Scenario) -> list[tuple[ChainState, float]]:
    speeds = _speed_set(scenario)
    p = 1.0 / (2 * len(speeds))
    out = []
    for d in (0, 1):
        zone = 0 if d == 0 else scenario.num_zones - 1
        for v in speeds:
            out.append((ChainState(zone, 0, VIRTUAL_BEAM, v, d), p))
    return out


def _outcomes_for_beam(scenario: Scenario, beam: BeamId, zone: int) -> list[tuple[int, float, float]]:
    """Possible (level, rate, prob) realizations of one beam at one zone."""
    rt = scenario.runtime()
    bi = scenario.beam_index(beam)
    omega = float(rt.omega[bi])
    out = []
    if omega > 0.0:
        out.append((0, 0.0, omega))
    if omega < 1.0:
        point = rt.point_level.get((bi, zone))
        if point is not None:
            out.append((point, float(rt.rates[point]), 1.0 - omega))
        else:
            levels, cums = rt.level_law[(bi, zone)]
            probs = np.diff(cums, prepend=0.0)
            for level, p in zip(levels, probs):
                if p > 0:
                    out.append((int(level), float(rt.rates[level]), (1.0 - omega) * float(p)))
    return out


def _joint_realizations(scenario: Scenario, zone: int, limit: int = 65536):
    """Product distribution over the realized outcome of every covering beam."""
    rt = scenario.runtime()
    beams = rt.covering_ids[zone]
    combos: list[tuple[float, dict[BeamId, tuple[int, float]]]] = [(1.0, {VIRTUAL_BEAM: (0, 0.0)})]
    for beam in beams:
        nxt = []
        for p, assign in combos:
            for level, rate, q in _outcomes_for_beam(scenario, beam, zone):
                d = dict(assign)
                d[beam] = (level, rate)
                nxt.append((p * q, d))
        combos = nxt
        if len(combos) > limit:
            raise ValueError(f"joint realization space at zone {zone} exceeds {limit}")
    return combos


def _realization_free(policy) -> bool:
    return getattr(policy, "privilege", None) in (
        ObservationPrivilege.BLOCKAGE_PROBS, ObservationPrivilege.NONE)


def _action_weights(policy, state: SystemState, actions, view) -> list[tuple[BeamId, float]]:
    if getattr(policy, "uniform_random", False):
        w = 1.0 / len(actions)
        return [(a, w) for a in actions]
    return [(policy.select(state, actions, view), 1.0)]


def enumerate_chain(scenario: Scenario, policy, cap: int = 5000) -> EnumeratedChain:
    """Build the exact chain induced by ``policy`` over reachable augmented states."""
    _check_oracle_instance(scenario, cap)
    rt = scenario.runtime()
    h = scenario.handover_time_s
    z = scenario.zone_length_m
    speeds = _speed_set(scenario)
    pv = 1.0 / len(speeds)
    spawn = _spawn_states(scenario)
    omega_view = {b: float(rt.omega[scenario.beam_index(b)]) for bp in scenario.beams for b in [bp.id]}
    omega_view[VIRTUAL_BEAM] = 1.0

    index: dict[ChainState, int] = {}
    states: list[ChainState] = []
    rows: list[dict[int, float]] = []
    rewards: list[float] = []
    sojourns: list[float] = []

    def intern(x: ChainState) -> int:
        if x not in index:
            index[x] = len(states)
            states.append(x)
            rows.append({})
            rewards.append(0.0)
            sojourns.append(0.0)
        return index[x]

    for x, _ in spawn:
        intern(x)

    cursor = 0
    while cursor < len(states):
        x = states[cursor]
        i = cursor
        cursor += 1
        xi = z / x.speed
        sojourns[i] = xi
        actions = list(rt.actions_by_zone[x.zone])
        paper = x.paper_state()
        next_zone = x.zone + (1 if x.direction == 0 else -1)
        departs = not (0 <= next_zone < scenario.num_zones)

        if _realization_free(policy):
            view = EpochView(blockage={b: omega_view[b] for b in actions},
                             epoch_s=xi, handover_time_s=h)
            chosen = _action_weights(policy, paper, actions, view)
            branches = []
            for a, w in chosen:
                if a.is_virtual:
                    branches.append((w, a, 0, 0.0))
                else:
                    for level, rate, q in _outcomes_for_beam(scenario, a, x.zone):
                        branches.append((w * q, a, level, rate))
        elif getattr(policy, "probe_based", False):
            # Selection sees an independent probe; the epoch outcome redraws.
            weights: dict[BeamId, float] = {}
            for p_out, realized in _joint_realizations(scenario, x.zone):
                view = EpochView(realized=realized, epoch_s=xi, handover_time_s=h)
                for a, w in _action_weights(policy, paper, actions, view):
                    weights[a] = weights.get(a, 0.0) + p_out * w
            branches = []
            for a, w in weights.items():
                if a.is_virtual:
                    branches.append((w, a, 0, 0.0))
                else:
                    for level, rate, q in _outcomes_for_beam(scenario, a, x.zone):
                        branches.append((w * q, a, level, rate))
        else:
            branches = []
            for p_out, realized in _joint_realizations(scenario, x.zone):
                view = EpochView(realized=realized, epoch_s=xi, handover_time_s=h)
                for a, w in _action_weights(policy, paper, actions, view):
                    level, rate = realized[a]
                    branches.append((p_out * w, a, level, rate))

        row = rows[i]
        r_acc = 0.0
        for p, a, level, rate in branches:
            if p <= 0.0:
                continue
            handover = (not a.is_virtual and not x.beam.is_virtual and a.mmbs != x.beam.mmbs)
            effective = xi - h if handover else xi
            r_acc += p * effective * rate
            if departs:
                for xs, ps in spawn:
                    j = intern(xs)
                    row[j] = row.get(j, 0.0) + p * ps
            else:
                for v2 in speeds:
                    xn = ChainState(next_zone, level, a, v2, x.direction)
                    j = intern(xn)
                    row[j] = row.get(j, 0.0) + p * pv
        rewards[i] = r_acc

    n = len(states)
    P = np.zeros((n, n))
    for i, row in enumerate(rows):
        for j, p in row.items():
            P[i, j] = p
    return EnumeratedChain(states, P, np.array(rewards), np.array(sojourns))


def _renormalize_rows(M: np.ndarray) -> np.ndarray:
    """Clip float dust and rescale rows to sum exactly to 1."""
    M = np.clip(M, 0.0, None)
    return M / M.sum(axis=1, keepdims=True)


def cesaro_limit(P: np.ndarray, tol: float = 1e-10, max_terms: float = 2.0 ** 60) -> np.ndarray:
    """Limiting matrix lim (1/N) sum_{n<N} P^n via doubling of running averages.

    With A_k the average of the first 2^k powers and B_k = P^(2^k),
    A_{k+1} = (A_k + B_k A_k) / 2 — so the plain running average is evaluated
    at N = 2^k and converges for periodic chains too.  Rows are renormalized
    after each doubling to keep repeated squaring from drifting.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("P must be square")
    if np.any(P < -1e-12):
        raise ValueError("P must be nonnegative")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("rows of P must sum to 1")
    A = np.eye(P.shape[0])
    B = P.copy()
    terms = 1.0
    while terms < max_terms:
        A_next = _renormalize_rows(0.5 * (A + B @ A))
        terms *= 2.0
        if np.max(np.abs(A_next - A)) < tol:
            A = A_next
            break
        A = A_next
        B = _renormalize_rows(B @ B)
    else:
        raise ValueError(f"Cesaro average did not settle within {max_terms:g} terms")
    if np.max(np.abs(A @ P - A)) > 10.0 * tol:
        raise ValueError("limiting matrix failed the fixed-point check")
    return A


def average_reward(chain: EnumeratedChain, tol: float = 1e-12) -> np.ndarray:
    """Long-run Gbit/s per starting state: (L r) / (L y) with L the limiting matrix."""
    L = cesaro_limit(chain.transition, tol=tol)
    num = L @ chain.reward
    den = L @ chain.sojourn
    if np.any(den <= 0):
        raise ValueError("limiting sojourn must be positive")
    return num / den


def communicating_classes(P: np.ndarray) -> list[set[int]]:
    """Strongly connected components of the support digraph, by smallest member."""
    P = np.asarray(P, dtype=float)
    n_comp, labels = connected_components(csr_matrix(P > 0), directed=True, connection="strong")
    classes: dict[int, set[int]] = {}
    for state, lab in enumerate(labels):
        classes.setdefault(int(lab), set()).add(state)
    return sorted(classes.values(), key=min)


def irreducible(P: np.ndarray) -> bool:
    return len(communicating_classes(P)) == 1


# -- action-conditioned models and value iteration ---------------------------

@dataclass
class MdpModel:
    """Small explicit MDP: per-state action sets with exact rewards/transitions."""

    n_states: int
    n_actions: int
    available: list[tuple[int, ...]]
    rewards: dict[tuple[int, int], float]
    transitions: dict[tuple[int, int], np.ndarray]
    state_labels: Optional[list] = None

    def sample(self, state: int, action: int, rng: np.random.Generator) -> tuple[float, int]:
        p = self.transitions[(state, action)]
        nxt = int(rng.choice(self.n_states, p=p))
        return self.rewards[(state, action)], nxt


def q_star(model: MdpModel, gamma: float, tol: float = 1e-12,
           max_iters: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Value iteration on Q; returns (Q, greedy policy).

    Unavailable actions hold 0 and are excluded from every max; the greedy
    policy breaks ties toward the smallest action index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must lie in [0, 1)")
    Q = np.zeros((model.n_states, model.n_actions))
    for _ in range(max_iters):
        V = np.array([max(Q[s, a] for a in model.available[s]) for s in range(model.n_states)])
        delta = 0.0
        for s in range(model.n_states):
            for a in model.available[s]:
                new = model.rewards[(s, a)] + gamma * float(model.transitions[(s, a)] @ V)
                delta = max(delta, abs(new - Q[s, a]))
                Q[s, a] = new
        if delta < tol:
            break
    else:
        raise ValueError("value iteration did not converge")
    policy = np.zeros(model.n_states, dtype=int)
    for s in range(model.n_states):
        best = max(Q[s, a] for a in model.available[s])
        policy[s] = min(a for a in model.available[s] if Q[s, a] == best)
    return Q, policy


def enumerate_mdp(scenario: Scenario, cap: int = 5000) -> MdpModel:
    """Action-conditioned exact model over the reachable augmented states."""
    _check_oracle_instance(scenario, cap)
    rt = scenario.runtime()
    h = scenario.handover_time_s
    z = scenario.zone_length_m
    speeds = _speed_set(scenario)
    pv = 1.0 / len(speeds)
    spawn = _spawn_states(scenario)

    index: dict[ChainState, int] = {}
    states: list[ChainState] = []

    def intern(x: ChainState) -> int:
        if x not in index:
            index[x] = len(states)
            states.append(x)
        return index[x]

    for x, _ in spawn:
        intern(x)

    entries: list[tuple[int, BeamId, float, list[tuple[ChainState, float]]]] = []
    cursor = 0
    while cursor < len(states):
        x = states[cursor]
        i = cursor
        cursor += 1
        xi = z / x.speed
        next_zone = x.zone + (1 if x.direction == 0 else -1)
        departs = not (0 <= next_zone < scenario.num_zones)
        for a in rt.actions_by_zone[x.zone]:
            handover = (not a.is_virtual and not x.beam.is_virtual and a.mmbs != x.beam.mmbs)
            effective = xi - h if handover else xi
            outcomes = ([(0, 0.0, 1.0)] if a.is_virtual
                        else _outcomes_for_beam(scenario, a, x.zone))
            reward = sum(p * effective * rate for _, rate, p in outcomes)
            succ: list[tuple[ChainState, float]] = []
            for level, _, p in outcomes:
                if departs:
                    succ.extend((xs, p * ps) for xs, ps in spawn)
                else:
                    succ.extend((ChainState(next_zone, level, a, v2, x.direction), p * pv)
                                for v2 in speeds)
            for xn, _ in succ:
                intern(xn)
            entries.append((i, a, reward, succ))

    n = len(states)
    available: list[list[int]] = [[] for _ in range(n)]
    rewards: dict[tuple[int, int], float] = {}
    transitions: dict[tuple[int, int], np.ndarray] = {}
    for i, a, reward, succ in entries:
        ai = scenario.beam_index(a)
        available[i].append(ai)
        rewards[(i, ai)] = reward
        vec = np.zeros(n)
        for xn, p in succ:
            vec[index[xn]] += p
        transitions[(i, ai)] = vec
    return MdpModel(n, scenario.num_actions, [tuple(sorted(v)) for v in available],
                    rewards, transitions, state_labels=states)


def toy_mdp() -> MdpModel:
    """Four-state, two-action deterministic ring used to validate learning.

    Action 0 follows the ring for a small reward; action 1 jumps across it,
    trading immediate reward for position.  Deterministic dynamics keep the
    update targets noise-free, so tabular learning can reach tight tolerances
    within a modest budget.
    """
    n = 4
    ring_reward = [1.0, 0.0, 2.0, 0.5]
    jump_to = [2, 3, 0, 1]
    jump_reward = [0.0, 2.5, 0.25, 0.0]
    rewards: dict[tuple[int, int], float] = {}
    transitions: dict[tuple[int, int], np.ndarray] = {}
    for s in range(n):
        for a, (r, t) in enumerate((
                (ring_reward[s], (s + 1) % n),
                (jump_reward[s], jump_to[s]))):
            rewards[(s, a)] = r
            vec = np.zeros(n)
            vec[t] = 1.0
            transitions[(s, a)] = vec
    return MdpModel(n, 2, [(0, 1)] * n, rewards, transitions)
