"""Local multi-process launch and supervision for socket-ring workers."""

import logging
import os
import subprocess
import sys
import time

from .parallel import local_endpoints

log = logging.getLogger(__name__)


def format_endpoints(endpoints):
    return ",".join(f"{h}:{p}" for h, p in endpoints)


def spawn_local(build_args, P, grace=5.0, env=None):
    """Start P ``rbmcf`` worker processes on localhost and wait for all of them.

    ``build_args(rank, endpoints_text)`` returns the CLI argument list for one
    rank. If any worker fails, the others are given ``grace`` seconds to notice
    through the transport and are then terminated. Returns the exit codes.
    """
    endpoints = format_endpoints(local_endpoints(P))
    cmd = [sys.executable, "-m", "rbmcf.cli"]
    procs = [subprocess.Popen(cmd + list(build_args(r, endpoints)), env=env or os.environ.copy())
             for r in range(P)]
    failed_at = None
    while True:
        codes = [p.poll() for p in procs]
        if all(c is not None for c in codes):
            break
        if failed_at is None and any(c not in (None, 0) for c in codes):
            failed_at = time.monotonic()
            log.warning("worker exited with %s; waiting for peers", codes)
        if failed_at is not None and time.monotonic() - failed_at > grace:
            for p in procs:
                if p.poll() is None:
                    p.terminate()
        time.sleep(0.05)
    return [p.returncode for p in procs]


def combined_exit_code(codes):
    """First nonzero code, preferring a worker's own diagnosis over a kill signal."""
    bad = [c for c in codes if c != 0]
    if not bad:
        return 0
    own = [c for c in bad if c > 0]
    return own[0] if own else 3
