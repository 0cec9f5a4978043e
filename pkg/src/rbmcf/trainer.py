"""Mini-batch contrastive-divergence training with data-parallel gradient averaging.

Every worker walks the same shuffled sequence of global batches, computes CD
statistics on its own shard, and applies the allreduced mean. Because each
user draws from its own random stream and per-user statistics sit on an exact
dyadic grid, the update is bit-identical for any worker count.
"""

from dataclasses import dataclass, field
import hashlib
import logging
import threading
import time

import numpy as np

from .errors import ConsistencyError, NumericOverflowError, ShapeError, TransportError
from .model import Gradients, RbmParams, exact_nll
from .parallel import InProcessHub, LocalComm, ReduceBuffer, shard_batch
from .rng import PURPOSE_INIT, PURPOSE_SHUFFLE, RngStream
from .sampling import cd_sums

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_hidden: int = 100
    n_levels: int = 5
    gibbs_steps: int = 1
    learning_rate: float = 0.001
    global_batch: int = 512
    epochs: int = 100
    seed: int = 0
    workers: int = 1
    init_sigma: float = 0.01
    shuffle: bool = True
    track_nll: bool = False
    check_consistency: bool = False

    def __post_init__(self):
        for name in ("n_hidden", "n_levels", "gibbs_steps", "global_batch", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.learning_rate > 0 or not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a positive finite number")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be non-negative")
        if self.global_batch < self.workers:
            raise ValueError(f"global_batch ({self.global_batch}) must be >= workers ({self.workers})")


@dataclass
class EpochRecord:
    epoch: int
    seconds: float
    recon_err: float
    nll: float = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        if record.seconds < 0:
            raise ValueError("negative epoch time")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_csv(self, fh):
        fh.write("epoch,seconds,recon_err,nll_or_blank\n")
        for r in self.records:
            nll = "" if r.nll is None else repr(r.nll)
            fh.write(f"{r.epoch},{r.seconds!r},{r.recon_err!r},{nll}\n")


def init_params(cfg, m, rng):
    """Weights from N(0, init_sigma^2); biases start at zero."""
    if m < 1:
        raise ValueError("need at least one item")
    gen = rng.generator()
    W = gen.normal(0.0, cfg.init_sigma, size=(m, cfg.n_hidden, cfg.n_levels))
    return RbmParams(W, np.zeros((m, cfg.n_levels)), np.zeros(cfg.n_hidden))


def _first_bad(name, a):
    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        return name, tuple(int(x) for x in bad[0])
    return None


def apply_update(p, g, eta):
    """Return ``p + eta * g``; raise if any entry becomes non-finite."""
    g.check_compatible(p)
    if not np.isfinite(eta):
        raise ValueError("learning rate must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        W = p.W + eta * g.dW
        b = p.b + eta * g.db
        c = p.c + eta * g.dc
    for name, a in (("W", W), ("b", b), ("c", c)):
        where = _first_bad(name, a)
        if where is not None:
            raise NumericOverflowError(f"non-finite parameter {where[0]}{list(where[1])} after update", index=where)
    return RbmParams(W, b, c)


def params_digest(p):
    return hashlib.sha256(p.tobytes()).hexdigest()


class Trainer:
    """One worker's view of a training run."""

    def __init__(self, data, cfg, comm=None, params=None):
        self.data = data
        self.cfg = cfg
        self.comm = comm if comm is not None else LocalComm()
        if self.comm.size != cfg.workers:
            raise ValueError(f"communicator has {self.comm.size} workers, config says {cfg.workers}")
        if data.K != cfg.n_levels:
            raise ShapeError(f"dataset has K={data.K}, config has n_levels={cfg.n_levels}")
        self.users = data.active_users()
        if self.users.size == 0:
            raise ValueError("no user has any training rating")
        self._visible = {int(u): data.user(u) for u in self.users}
        self.stream = RngStream(cfg.seed)
        if params is None:
            params = init_params(cfg, data.n_items, self.stream.derive(PURPOSE_INIT))
        elif params.W.shape != (data.n_items, cfg.n_hidden, cfg.n_levels):
            raise ShapeError("initial parameters do not match data/config dimensions")
        self.params = params
        self.history = TrainHistory()
        self.epoch = 0
        self._nll_data = None
        if cfg.track_nll:
            self._nll_data = [self._visible[int(u)] for u in self.users]

    @property
    def rank(self):
        return self.comm.rank

    def batches(self, epoch):
        order = self.users
        if self.cfg.shuffle:
            order = self.stream.derive(PURPOSE_SHUFFLE, epoch).generator().permutation(order)
        gb = self.cfg.global_batch
        return [order[i:i + gb] for i in range(0, order.size, gb)]

    def step(self, batch, epoch):
        """One collective optimizer step; returns the batch-mean reconstruction error."""
        p = self.params
        shard = shard_batch(batch, self.comm.size)[self.comm.rank]
        acc, recon = cd_sums([self._visible[int(u)] for u in shard], p, self.cfg.gibbs_steps,
                             self.stream, user_ids=shard, epoch=epoch)
        local = ReduceBuffer.from_sum(np.concatenate([acc.to_flat(), [recon]]), len(shard))
        mean = self.comm.allreduce_weighted_mean(local)
        grad = Gradients.from_flat(mean[:-1], p.m, p.F, p.K)
        self.params = apply_update(p, grad, self.cfg.learning_rate)
        return float(mean[-1])

    def run_epoch(self):
        epoch = self.epoch
        t0 = time.perf_counter()
        recon_total, seen = 0.0, 0
        for batch in self.batches(epoch):
            recon_total += self.step(batch, epoch) * len(batch)
            seen += len(batch)
        seconds = time.perf_counter() - t0
        if self.cfg.check_consistency:
            self.check_consistency()
        nll = exact_nll(self._nll_data, self.params) if self._nll_data is not None else None
        record = EpochRecord(epoch, seconds, recon_total / seen, nll)
        self.history.append(record)
        self.epoch += 1
        log.debug("rank %d epoch %d: %.3fs recon_err=%.4f", self.rank, epoch, seconds, record.recon_err)
        return record

    def check_consistency(self):
        """Verify every worker holds bit-identical parameters."""
        if self.comm.size == 1:
            return
        # 48-bit digest prefix: P copies sum exactly in float64, so the mean is exact
        mine = float(int(params_digest(self.params)[:12], 16))
        agreed = self.comm.allreduce_weighted_mean(ReduceBuffer.from_sum([mine], 1.0))[0]
        if agreed != mine:
            raise ConsistencyError(f"rank {self.rank}: parameters diverged from other workers at epoch {self.epoch}")

    def fit(self, epochs=None):
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            self.run_epoch()
        return self.params, self.history


def train(data, cfg, comm=None, params=None):
    """Train for ``cfg.epochs`` epochs; returns ``(params, history)`` on this worker."""
    return Trainer(data, cfg, comm, params).fit()


def train_inprocess(data, cfg, timeout=30.0):
    """Run ``cfg.workers`` worker threads against an in-process reducer.

    Returns rank 0's ``(params, history)`` after checking that all workers
    finished with identical parameters.
    """
    P = cfg.workers
    if P == 1:
        return train(data, cfg)
    hub = InProcessHub(P, timeout=timeout)
    results = [None] * P
    errors = []

    def work(rank):
        try:
            results[rank] = train(data, cfg, hub.comm(rank))
        except Exception as exc:
            errors.append(exc)
            hub.abort()

    threads = [threading.Thread(target=work, args=(r,), daemon=True) for r in range(P)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        first = next((e for e in errors if not isinstance(e, TransportError)), errors[0])
        raise first
    digests = {params_digest(r[0]) for r in results}
    if len(digests) != 1:
        raise ConsistencyError("in-process workers finished with different parameters")
    return results[0]
