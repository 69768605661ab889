"""Communication protocols between workers.

Every step function is pure and simultaneous: it reads a frozen snapshot of
all parameter vectors and returns fresh arrays for the workers it touches
(pass-through workers keep their input array). Accumulations always run in
ascending rank order so results are reproducible bit for bit.

Methods:
  none            no exchange, workers drift apart
  all_reduce      gradients averaged across all workers every round
  easgd           workers pull toward a shared center, center pulls back
  pull_gossip     each worker averages with one chosen peer
  push_gossip     each worker averages everything pushed at it plus itself
  elastic_gossip  symmetric pairwise pull on chosen peer plus inbound choosers
  full_consensus  pull toward every other worker at once

The moving rate alpha scales the pull strength where a method uses one.
alpha=0 leaves everyone in place, alpha=1 on a mutual pair swaps the two
workers outright, and alpha=1/workers under full_consensus lands everyone on
the mean.
"""

from dataclasses import dataclass

import numpy as np

METHODS = (
    "none",
    "all_reduce",
    "easgd",
    "pull_gossip",
    "push_gossip",
    "elastic_gossip",
    "full_consensus",
)

ALPHA_METHODS = frozenset({"easgd", "elastic_gossip", "full_consensus"})
SCHEDULED_METHODS = frozenset(
    {"easgd", "pull_gossip", "push_gossip", "elastic_gossip", "full_consensus"}
)


@dataclass(frozen=True)
class ProtocolSpec:
    """Which protocol runs, how strongly it pulls, and when it fires.

    Scheduled methods take exactly one of tau (communicate when the shared
    clock t satisfies t mod tau == 0, so t=0 fires) or comm_probability
    (each worker draws an independent Bernoulli every round).
    """

    method: str
    alpha: float = None
    tau: int = None
    comm_probability: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, pick one of {METHODS}")
        if self.method in ALPHA_METHODS:
            if self.alpha is None:
                raise ValueError(f"method {self.method!r} requires alpha")
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError(f"method {self.method!r} does not take alpha")
        has_tau = self.tau is not None
        has_p = self.comm_probability is not None
        if self.method in SCHEDULED_METHODS:
            if has_tau == has_p:
                raise ValueError(
                    f"method {self.method!r} needs exactly one of tau and "
                    f"comm_probability"
                )
            if has_tau and (not isinstance(self.tau, int) or self.tau < 1):
                raise ValueError(f"tau must be a positive integer, got {self.tau!r}")
            if has_p and not 0.0 < self.comm_probability <= 1.0:
                raise ValueError(
                    f"comm_probability must be in (0, 1], got {self.comm_probability}"
                )
        elif has_tau or has_p:
            raise ValueError(f"method {self.method!r} takes no schedule")


def should_communicate(spec, t, rng):
    """Decide whether a worker with clock t communicates this round.

    Period mode never touches rng; probability mode consumes exactly one
    draw from the worker's schedule stream per round.
    """
    if spec.tau is not None:
        return t % spec.tau == 0
    return rng.random() < spec.comm_probability


def select_peers(workers, rng, ranks=None):
    """Each communicating worker picks one peer uniformly from the others.

    rng is either one generator (drawn in ascending rank order) or a
    sequence of per-rank generators so each worker consumes only its own
    stream. Returns {rank: peer}; never self-selecting.
    """
    if workers < 2:
        raise ValueError(f"peer selection needs at least 2 workers, got {workers}")
    ranks = range(workers) if ranks is None else sorted(ranks)
    per_rank = not isinstance(rng, np.random.Generator)
    sel = {}
    for i in ranks:
        r = rng[i] if per_rank else rng
        k = int(r.integers(workers - 1))
        sel[i] = k if k < i else k + 1  # skip self
    return sel


def build_gossip_sets(selections, variant, workers=None):
    """Turn one round of peer selections into per-worker exchange sets.

    elastic: K_i = {i's choice} plus everyone who chose i; the relation is
        symmetric (k in K_i iff i in K_k), which is what makes the update
        conserve the parameter sum. Workers with empty sets are omitted.
    push: K_i = {i} plus everyone who chose i, for all `workers` ranks; a
        worker nobody chose averages only itself, i.e. stays put.
    """
    if variant == "elastic":
        members = {}
        for i, k in selections.items():
            members.setdefault(i, set()).add(k)
            members.setdefault(k, set()).add(i)
        return {i: tuple(sorted(m)) for i, m in members.items()}
    if variant == "push":
        if workers is None:
            raise ValueError("push sets need the worker count")
        members = {i: {i} for i in range(workers)}
        for i, k in selections.items():
            members[k].add(i)
        return {i: tuple(sorted(m)) for i, m in members.items()}
    raise ValueError(f"unknown gossip variant {variant!r}")


def elastic_gossip_step(params, sets, alpha):
    """theta_i <- theta_i - alpha * sum_{k in K_i} (theta_i - theta_k).

    A singleton set reduces to the two-point form (1-alpha)*theta_i +
    alpha*theta_k, which keeps the alpha=1 swap and alpha-linearity exact in
    float64; larger sets accumulate the summed differences in rank order.
    """
    out = list(params)
    if alpha == 0.0:
        return out
    for i, K in sets.items():
        if len(K) == 1:
            out[i] = (1.0 - alpha) * params[i] + alpha * params[K[0]]
        else:
            s = params[i] - params[K[0]]
            for k in K[1:]:
                s = s + (params[i] - params[k])
            out[i] = params[i] - alpha * s
    return out


def pull_gossip_step(params, selections):
    """theta_i <- (theta_i + theta_peer)/2 for each selecting worker.

    One-sided: the peer is read, not written, so the parameter sum is not
    conserved in general.
    """
    out = list(params)
    for i, k in selections.items():
        out[i] = (params[i] + params[k]) / 2.0
    return out


def push_gossip_step(params, sets):
    """theta_i <- mean of the snapshot over K_i (self plus inbound pushes)."""
    out = list(params)
    for i, K in sets.items():
        s = params[K[0]].copy()
        for k in K[1:]:
            s += params[k]
        out[i] = s / len(K)
    return out


def easgd_step(params, center, alpha, ranks=None):
    """Symmetric pull between each participating worker and a shared center.

    z_i = alpha*(theta_i - center); workers move by -z_i and the center by
    +sum z_i, all computed from the pre-step snapshot, so the total over
    workers plus center is conserved.
    """
    out = list(params)
    if alpha == 0.0:
        return out, center
    ranks = range(len(params)) if ranks is None else sorted(ranks)
    total = np.zeros_like(center)
    for i in ranks:
        z = alpha * (params[i] - center)
        out[i] = params[i] - z
        total += z
    return out, center + total


def full_consensus_step(params, alpha, ranks=None):
    """Every participant pulls toward every other participant at once.

    Equivalent to an elastic step whose sets are complete: K_i is all other
    participants. alpha = 1/participants lands everyone on their mean.
    """
    ranks = list(range(len(params))) if ranks is None else sorted(ranks)
    sets = {
        i: tuple(k for k in ranks if k != i) for i in ranks if len(ranks) > 1
    }
    return elastic_gossip_step(params, sets, alpha)


def allreduce_mean(vectors):
    """Mean of the workers' vectors, accumulated in rank order."""
    s = vectors[0].copy()
    for v in vectors[1:]:
        s += v
    return s / len(vectors)
