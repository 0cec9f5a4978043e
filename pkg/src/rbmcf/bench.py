"""Timing, speedup arithmetic and scaling-report assembly."""

from dataclasses import dataclass, field
import statistics
import time

STRONG_GLOBAL_BATCH = 512
WEAK_PER_WORKER = 100


@dataclass
class TimingSample:
    label: str
    seconds: float
    repetitions: int
    raw: list = field(default_factory=list)

    def __post_init__(self):
        if not self.seconds > 0:
            raise ValueError(f"timing must be positive, got {self.seconds}")


def speedup(t1, tP):
    if not (t1 > 0 and tP > 0):
        raise ValueError("timings must be positive")
    return t1 / tP


def efficiency(s, P):
    return s / P


def time_epoch(run, warmup=1, reps=3, label="epoch", clock=time.perf_counter):
    """Run ``warmup`` untimed calls, then ``reps`` timed ones; report the median."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for _ in range(warmup):
        run()
    raw = []
    for _ in range(reps):
        t0 = clock()
        run()
        raw.append(clock() - t0)
    return TimingSample(label, statistics.median(raw), reps, raw)


def batch_sizes(mode, P, strong_batch=STRONG_GLOBAL_BATCH, weak_per_worker=WEAK_PER_WORKER):
    """(global batch, per-worker batch) for a scaling mode at P workers."""
    if mode == "strong":
        return strong_batch, -(-strong_batch // P)
    if mode == "weak":
        return weak_per_worker * P, weak_per_worker
    raise ValueError(f"unknown scaling mode {mode!r}")


@dataclass
class ScalingRow:
    workers: int
    mode: str
    global_batch: int
    per_worker_batch: int
    sample: TimingSample = None
    error: str = ""

    @property
    def ok(self):
        return self.sample is not None


@dataclass
class ScalingReport:
    """Rows keep raw samples; speedup and efficiency are recomputed on demand."""

    mode: str
    rows: list = field(default_factory=list)

    @property
    def partial(self):
        return any(not r.ok for r in self.rows)

    def baseline(self):
        ok = [r for r in self.rows if r.ok]
        if not ok:
            return None
        return min(ok, key=lambda r: r.workers)

    def speedup(self, row):
        base = self.baseline()
        if base is None or not row.ok:
            return None
        # relative to the smallest worker count run; that is P=1 whenever it is present
        return speedup(base.sample.seconds, row.sample.seconds) * base.workers

    def efficiency(self, row):
        s = self.speedup(row)
        return None if s is None else efficiency(s, row.workers)

    def row(self, P):
        return next(r for r in self.rows if r.workers == P)

    def to_csv(self, fh):
        fh.write("# timing scope: epoch loop only (data loading, process start-up and model "
                 "serialization excluded); median over repetitions after warm-up\n")
        if self.partial:
            fh.write("# PARTIAL REPORT: one or more rows failed\n")
        fh.write("workers,mode,global_batch,per_worker_batch,epoch_seconds,speedup,efficiency,"
                 "status,raw_seconds,raw_repetitions\n")
        for r in self.rows:
            if r.ok:
                eff = self.efficiency(r)
                status = "ok" if eff <= 1.5 else "superlinear"
                raw = ";".join(repr(x) for x in r.sample.raw)
                fh.write(f"{r.workers},{r.mode},{r.global_batch},{r.per_worker_batch},"
                         f"{r.sample.seconds!r},{self.speedup(r)!r},{eff!r},{status},{raw},"
                         f"{r.sample.repetitions}\n")
            else:
                err = r.error.replace(",", ";").replace("\n", " ")
                fh.write(f"{r.workers},{r.mode},{r.global_batch},{r.per_worker_batch},,,,"
                         f"failed: {err},,\n")
