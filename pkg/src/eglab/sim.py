"""Deterministic multi-worker training rounds.

All workers advance in lock step. One round is:

1. every worker computes a minibatch gradient at its current parameters,
2. the communication step, if it fires, rewrites parameters from a
   snapshot of the whole round,
3. the optimizer applies the step-1 gradient to the post-communication
   parameters and the worker clock advances.

The gradient is deliberately stale with respect to communication: it was
taken before the exchange and is applied after it.

Every random decision comes from a named per-worker stream derived from
the single master seed, so results are reproducible bit for bit and do
not depend on thread count.
"""

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data, metrics, nn, protocols

PURPOSES = ("init", "data", "dropout", "peer", "schedule")

DIVERGENCE_LIMIT = 1e12

CHECKPOINT_MAGIC = b"EGLCKPT1"


class ConfigError(ValueError):
    """An experiment configuration that cannot be run."""


class DivergenceError(RuntimeError):
    """Training blew up; carries the step and the records gathered so far."""

    def __init__(self, message, step, records):
        super().__init__(message)
        self.step = step
        self.records = records


# --- seed derivation ----------------------------------------------------------

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(x):
    """64-bit avalanche: every input bit flips each output bit w.p. ~1/2."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_key(master_seed, rank, purpose):
    """Stream key for one (worker, purpose) pair.

    mix64 is a bijection, so distinct (seed, rank, purpose) triples in the
    usable range can never collide on the key itself.
    """
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}, want one of {PURPOSES}")
    x = mix64((int(master_seed) + _GAMMA) & _MASK)
    x = mix64((x + (rank + 1) * _GAMMA) & _MASK)
    return mix64((x + (PURPOSES.index(purpose) + 1) * _GAMMA) & _MASK)


class RngStreams:
    """Lazy cache of per-(rank, purpose) generators for one master seed.

    Streams are stateful: asking for the same (rank, purpose) twice returns
    the same generator, mid-consumption. Consuming one stream never moves
    any other.
    """

    def __init__(self, master_seed, workers):
        self.master_seed = int(master_seed)
        self.workers = int(workers)
        self._gens = {}

    def stream(self, rank, purpose):
        if not 0 <= rank < self.workers:
            raise ValueError(f"rank {rank} out of range for {self.workers} workers")
        key = derive_key(self.master_seed, rank, purpose)
        if (rank, purpose) not in self._gens:
            self._gens[rank, purpose] = np.random.Generator(np.random.PCG64(key))
        return self._gens[rank, purpose]


def derive_rng_streams(master_seed, workers):
    return RngStreams(master_seed, workers)


# --- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSpec:
    eta: float
    mu: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0.0):
            raise ConfigError(f"eta must be positive and finite, got {self.eta}")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"mu must be in [0, 1), got {self.mu}")


@dataclass(frozen=True)
class DataConfig:
    """Where samples come from and how they are split across workers."""

    source: str
    holdout: int
    n: int = 0
    dims: int = 0
    classes: int = 0
    spread: float = 0.0
    images: str = ""
    labels: str = ""
    partition_mode: str = "uniform"
    majority_share: float = 0.8
    sample_order: str = "shuffled"

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "synthetic":
            if self.n < 1 or self.dims < 1 or self.classes < 2:
                raise ConfigError(
                    "synthetic source needs n >= 1, dims >= 1, classes >= 2, got "
                    f"n={self.n} dims={self.dims} classes={self.classes}"
                )
            if not (np.isfinite(self.spread) and self.spread >= 0.0):
                raise ConfigError(f"spread must be nonnegative, got {self.spread}")
        else:
            if not self.images or not self.labels:
                raise ConfigError("idx source needs images and labels paths")
        if self.holdout < 1:
            raise ConfigError(
                f"holdout must be at least 1 (the validation set cannot be "
                f"empty), got {self.holdout}"
            )
        if self.partition_mode not in ("uniform", "class_biased", "strided"):
            raise ConfigError(f"unknown partition_mode {self.partition_mode!r}")
        if self.partition_mode == "class_biased" and not 0.0 < self.majority_share <= 1.0:
            raise ConfigError(
                f"majority_share must be in (0, 1], got {self.majority_share}"
            )
        if self.sample_order not in ("shuffled", "sequential"):
            raise ConfigError(f"unknown sample_order {self.sample_order!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: nn.MlpSpec
    protocol: protocols.ProtocolSpec
    optimizer: OptimizerSpec
    data: DataConfig
    workers: int
    effective_batch: int
    steps: int
    seed: int
    eval_every: int = 100

    def __post_init__(self):
        for name in ("workers", "effective_batch", "steps", "eval_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.effective_batch % self.workers != 0:
            raise ConfigError(
                f"effective_batch {self.effective_batch} not divisible by "
                f"workers {self.workers}"
            )
        if self.workers < 2 and self.protocol.method in protocols.SCHEDULED_METHODS:
            raise ConfigError(
                f"method {self.protocol.method!r} needs at least 2 workers"
            )
        if self.data.source == "synthetic":
            sizes = self.model.layer_sizes
            if sizes[0] != self.data.dims or sizes[-1] != self.data.classes:
                raise ConfigError(
                    f"model layer_sizes {sizes} do not match synthetic data "
                    f"({self.data.dims} features, {self.data.classes} classes)"
                )

    @property
    def per_worker_batch(self):
        return self.effective_batch // self.workers


# --- data plumbing ---------------------------------------------------------------


def prepare_data(config, streams):
    """Load, split, normalize and partition; returns (train, val, partitions).

    All shared randomness (validation split, partition shuffles) comes from
    rank 0's data stream so the result is identical for every worker count
    that shares a master seed.
    """
    dc = config.data
    if dc.source == "synthetic":
        full = data.make_synthetic(config.seed, dc.n, dc.dims, dc.classes, dc.spread)
    else:
        full = data.load_idx(dc.images, dc.labels)
        sizes = config.model.layer_sizes
        if full.features.shape[1] != sizes[0] or full.class_count != sizes[-1]:
            raise ConfigError(
                f"model layer_sizes {sizes} do not match idx data "
                f"({full.features.shape[1]} features, {full.class_count} classes)"
            )
    rng = streams.stream(0, "data")
    train, val = data.split_validation(full, dc.holdout, rng)
    train, (val,), _ = data.fit_apply_normalizer(train, (val,))
    parts = data.partition_dataset(
        train, config.workers, dc.partition_mode, rng, dc.majority_share
    )
    short = min(len(p.indices) for p in parts)
    if short < config.per_worker_batch:
        raise ConfigError(
            f"smallest partition holds {short} samples, fewer than the "
            f"per-worker batch {config.per_worker_batch}"
        )
    return train, val, parts


# --- worker state ------------------------------------------------------------------


@dataclass
class WorkerState:
    rank: int
    params: np.ndarray
    velocity: np.ndarray
    clock: int
    sampler: data.MinibatchSampler
    dropout_rng: np.random.Generator
    peer_rng: np.random.Generator
    schedule_rng: np.random.Generator


def worker_tick(state, gradient, post_comm_params, optimizer):
    """Apply the pre-communication gradient to post-communication params."""
    state.params, state.velocity = nn.nag_update(
        post_comm_params, state.velocity, gradient, optimizer.eta, optimizer.mu
    )
    state.clock += 1


def _worker_gradient(config, state, train, use_dropout):
    x, y = state.sampler.sample(train)
    masks = None
    if use_dropout:
        masks = nn.dropout_masks(config.model, state.dropout_rng, x.shape[0])
    logits, cache = nn.forward(config.model, state.params, x, masks)
    loss, dlogits = nn.softmax_ce(logits, y)
    grad = nn.backward(config.model, state.params, cache, dlogits)
    return grad, float(loss)


def _communicate(config, states, center):
    """One communication step over the round's parameter snapshot.

    Returns (post_params, center). In period mode all clocks agree, so the
    exchange is all-or-nothing; in probability mode each worker draws its
    own coin every round, and only the resulting subset participates.
    """
    spec = config.protocol
    snapshot = [s.params for s in states]
    if spec.method in ("none", "all_reduce"):
        return snapshot, center
    comm = [
        s.rank
        for s in states
        if protocols.should_communicate(spec, s.clock, s.schedule_rng)
    ]
    if spec.method == "easgd":
        if comm:
            out, center = protocols.easgd_step(snapshot, center, spec.alpha, ranks=comm)
            return out, center
        return snapshot, center
    if spec.method == "full_consensus":
        if comm:
            return protocols.full_consensus_step(snapshot, spec.alpha, ranks=comm), center
        return snapshot, center
    if not comm:
        return snapshot, center
    sel = protocols.select_peers(
        config.workers, [s.peer_rng for s in states], ranks=comm
    )
    if spec.method == "pull_gossip":
        return protocols.pull_gossip_step(snapshot, sel), center
    if spec.method == "push_gossip":
        sets = protocols.build_gossip_sets(sel, "push", config.workers)
        return protocols.push_gossip_step(snapshot, sets), center
    sets = protocols.build_gossip_sets(sel, "elastic")
    return protocols.elastic_gossip_step(snapshot, sets, spec.alpha), center


# --- the experiment loop --------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    final_params: list
    final_center: np.ndarray = None


def _thread_count():
    raw = os.environ.get("EGL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigError(f"EGL_THREADS must be a positive integer, got {raw!r}")
    return threads


def _make_record(config, states, val, n_train, train_losses):
    params = [s.params for s in states]
    pairs = [metrics.evaluate(config.model, p, val) for p in params]
    val_loss = tuple(loss for loss, _ in pairs)
    val_acc = tuple(acc for _, acc in pairs)
    _, agg_acc = metrics.evaluate(config.model, metrics.aggregate_model(params), val)
    step = states[0].clock
    return metrics.MetricsRecord(
        step=step,
        epoch=step * config.effective_batch / n_train,
        train_loss_mean=sum(train_losses) / len(train_losses),
        rank0_acc=val_acc[0],
        aggregate_acc=agg_acc,
        pairwise_disagreement=metrics.pairwise_disagreement(params),
        val_loss=val_loss,
        val_acc=val_acc,
    )


def run_experiment(config):
    """Run the configured experiment to completion.

    Raises DivergenceError if any worker's loss stops being finite or its
    parameters leave [-DIVERGENCE_LIMIT, DIVERGENCE_LIMIT]; the partial
    metric records ride along on the exception.
    """
    streams = derive_rng_streams(config.seed, config.workers)
    train, val, parts = prepare_data(config, streams)
    theta0 = nn.kaiming_init(config.model, streams.stream(0, "init"))
    states = [
        WorkerState(
            rank=i,
            params=theta0.copy(),
            velocity=np.zeros_like(theta0),
            clock=0,
            sampler=data.MinibatchSampler(
                parts[i].indices,
                streams.stream(i, "data"),
                config.per_worker_batch,
                config.data.sample_order,
            ),
            dropout_rng=streams.stream(i, "dropout"),
            peer_rng=streams.stream(i, "peer"),
            schedule_rng=streams.stream(i, "schedule"),
        )
        for i in range(config.workers)
    ]
    center = theta0.copy() if config.protocol.method == "easgd" else None
    use_dropout = config.model.input_dropout > 0 or config.model.hidden_dropout > 0
    threads = min(_thread_count(), config.workers)
    records = []
    loss_buffer = []

    def gradient_phase(pool):
        job = lambda s: _worker_gradient(config, s, train, use_dropout)
        if pool is None:
            return [job(s) for s in states]
        return list(pool.map(job, states))

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(config.steps):
            results = gradient_phase(pool)
            losses = [loss for _, loss in results]
            if not all(np.isfinite(losses)):
                raise DivergenceError(
                    f"non-finite training loss at step {t}", t, records
                )
            grads = [grad for grad, _ in results]
            if config.protocol.method == "all_reduce":
                grads = [protocols.allreduce_mean(grads)] * config.workers
            post, center = _communicate(config, states, center)
            for state, grad, p in zip(states, grads, post):
                worker_tick(state, grad, p, config.optimizer)
            loss_buffer.append(sum(losses) / len(losses))
            clock = t + 1
            for state in states:
                peak = float(np.abs(state.params).max())
                if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
                    raise DivergenceError(
                        f"worker {state.rank} parameters reached {peak:.3e} "
                        f"at step {clock}",
                        clock,
                        records,
                    )
            if clock % config.eval_every == 0 or clock == config.steps:
                records.append(_make_record(config, states, val, len(train), loss_buffer))
                loss_buffer = []
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentResult(
        config=config,
        records=records,
        final_params=[s.params for s in states],
        final_center=center,
    )


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, params_list, digest):
    """Binary snapshot of all workers' parameters plus a config digest."""
    if not params_list:
        raise ValueError("nothing to checkpoint")
    plen = len(params_list[0])
    if any(len(p) != plen for p in params_list):
        raise ValueError("workers disagree on parameter count")
    digest_b = str(digest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQH", len(params_list), plen, len(digest_b)))
        fh.write(digest_b)
        for p in params_list:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back; returns (params_list, digest)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = len(CHECKPOINT_MAGIC) + struct.calcsize("<IQH")
    if len(raw) < head or not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    workers, plen, dlen = struct.unpack_from("<IQH", raw, len(CHECKPOINT_MAGIC))
    expect = head + dlen + workers * plen * 8
    if len(raw) != expect:
        raise ValueError(f"checkpoint {path} holds {len(raw)} bytes, expected {expect}")
    digest = raw[head : head + dlen].decode("utf-8")
    params = [
        np.frombuffer(raw, dtype="<f8", count=plen, offset=head + dlen + w * plen * 8).copy()
        for w in range(workers)
    ]
    return params, digest
