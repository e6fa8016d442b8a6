"""Eager-copy fork oracle and a random-interleaving trial runner, shared by
the unit tests and the acceptance suite.

The oracle duplicates every page at fork time; the lazy implementation must
be observationally equivalent to it byte-for-byte.
"""

import random

from enclavesim.enclave_runtime import DB_BASE, EnclaveRuntime
from enclavesim.host_kernel import Kernel
from enclavesim.sgx_core import Machine, PAGE_SIZE


class EagerForkOracle:
    def __init__(self, pages):
        self.views = {}
        self._initial = {va: bytes(content) for va, content in pages.items()}

    def fork(self, parent_pid, child_pid):
        base = {va: bytearray(c) for va, c in self._initial.items()}
        self.views[parent_pid] = base
        self.views[child_pid] = {va: bytearray(c)
                                 for va, c in self._initial.items()}

    def write(self, pid, va, value, offset=0):
        self.views[pid][va][offset:offset + len(value)] = value

    def read(self, pid, va):
        return bytes(self.views[pid][va])


def build_forked_runtime(n_db_pages, epc_capacity=4096):
    machine = Machine(epc_capacity_pages=epc_capacity)
    kernel = Kernel(machine)
    runtime = EnclaveRuntime(machine, kernel)
    runtime.runtime_init(runtime_pages=1, tcs_count=4)
    runtime.load_db(n_db_pages)
    parent_pid = runtime.creator.pid
    runtime.enter(parent_pid)
    pair = runtime.fork_cow(parent_pid)
    return machine, runtime, pair


def run_cow_trial(seed, max_pages=16, max_ops=200):
    """One random interleaving; returns None on success, else a message."""
    rng = random.Random(seed)
    n_pages = rng.randint(1, max_pages)
    machine, runtime, pair = build_forked_runtime(n_pages)
    parent, child = pair.parent_pid, pair.child_pid
    baseline = machine.epc_used

    pages = {va: machine.pages[runtime.enclave.pages[va]].content
             for va in runtime.db_vas()}
    oracle = EagerForkOracle(pages)
    oracle.fork(parent, child)

    for op_idx in range(rng.randint(1, max_ops)):
        pid = parent if rng.random() < 0.5 else child
        va = DB_BASE + rng.randrange(n_pages)
        if rng.random() < 0.6:
            offset = rng.randrange(PAGE_SIZE - 8)
            value = bytes(rng.randrange(256) for _ in range(8))
            runtime.cow_write(pair, pid, va, value, offset)
            oracle.write(pid, va, value, offset)
        else:
            got = runtime.cow_read(pair, pid, va)
            want = oracle.read(pid, va)
            if got != want:
                return f"seed {seed} op {op_idx}: view mismatch at {va:#x}"
        extra = machine.epc_used - baseline
        if extra != pair.dirty_count:
            return (f"seed {seed} op {op_idx}: extra pages {extra} != "
                    f"dirty_count {pair.dirty_count}")

    # Full-view comparison for both sides before the snapshot.
    for pid in (parent, child):
        for va in runtime.db_vas():
            if runtime.cow_read(pair, pid, va) != oracle.read(pid, va):
                return f"seed {seed}: final view mismatch pid {pid} va {va:#x}"

    runtime.snapshot(pair, child)
    if machine.epc_used != baseline:
        return f"seed {seed}: occupancy not restored after snapshot"
    # Parent's view must survive the merge.
    for va in runtime.db_vas():
        got = bytes(machine.pages[runtime.enclave.pages[va]].content)
        if got != oracle.read(parent, va):
            return f"seed {seed}: parent view lost after snapshot at {va:#x}"
    return None
