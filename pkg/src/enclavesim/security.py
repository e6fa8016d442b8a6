"""Adversary probe suites: exhaustive remap enumeration, randomized kernel
adversary schedules, TCS exclusivity schedules and environment-swap
detection. Each probe returns (trials, failures) where failures lists a
description per undetected violation; an empty list means the suite holds.
"""

from __future__ import annotations

import random
from typing import List, Tuple

from . import errors
from .enclave_runtime import DB_BASE, EnclaveRuntime, InstanceState
from .host_kernel import Kernel
from .sgx_core import (
    Access,
    Machine,
    NON_ENCLAVE,
    PAGE_SIZE,
    PageType,
    TcsState,
    enclave_mode,
)


def _page(tag: int) -> bytes:
    return bytes([tag & 0xFF]) * PAGE_SIZE


def remap_enumeration(n_pages: int = 4, n_spaces: int = 3) -> Tuple[int, List[str]]:
    """Exhaustively point every (space, va) at every physical page and check
    that enclave-mode access succeeds exactly for the EPCM-recorded pair."""
    machine = Machine(epc_capacity_pages=64)
    kernel = Kernel(machine)
    victim = machine.ecreate(1)
    other = machine.ecreate(2)
    victim_vas = [0x10 + i for i in range(n_pages)]
    for i, va in enumerate(victim_vas):
        machine.eadd(victim, va, _page(i))
    machine.einit(victim)
    # Foreign pages sharing the same virtual addresses as the victim's.
    for i, va in enumerate(victim_vas[:2]):
        machine.eadd(other, va, _page(0xA0 + i))
    machine.einit(other)
    plain = machine.alloc_plain_page(b"untrusted")

    spaces = [kernel.create_container(f"/c{i}").address_space
              for i in range(n_spaces)]
    all_pas = sorted(machine.pages)
    mode = enclave_mode(1)

    trials = 0
    failures: List[str] = []
    for space in spaces:
        for va in victim_vas:
            for pa in all_pas:
                space.page_table.clear()
                space.page_table[va] = pa
                honest = machine.epcm.get(pa)
                expect_ok = (honest is not None and honest.valid
                             and honest.enclave_id == 1 and honest.va == va)
                trials += 1
                try:
                    got = machine.translate_access(space, va, Access.READ, mode)
                    if not machine.pages[got].is_epc:
                        # Hardware lets the enclave touch unprotected memory;
                        # the runtime's sandbox check flags it for these
                        # enclave-private addresses.
                        if expect_ok:
                            failures.append(
                                f"honest va {va:#x} resolved to plain page")
                    elif not expect_ok or got != pa:
                        failures.append(
                            f"va {va:#x} -> pa {pa:#x} accessed undetected")
                except errors.Fault:
                    if expect_ok:
                        failures.append(
                            f"honest mapping va {va:#x} -> pa {pa:#x} faulted")
    del plain
    return trials, failures


def random_adversary_schedules(n_schedules: int = 1000,
                               seed: int = 0) -> Tuple[int, List[str]]:
    """Randomized kernel schedules over a small shared enclave; every read
    must either fault, trip the runtime sandbox check, or return exactly the
    bytes an honest shadow copy predicts."""
    rng = random.Random(seed)
    failures: List[str] = []
    for schedule in range(n_schedules):
        machine = Machine(epc_capacity_pages=64)
        kernel = Kernel(machine)
        runtime = EnclaveRuntime(machine, kernel)
        runtime.runtime_init(runtime_pages=3, tcs_count=2)
        runtime.load_db(3)
        reader = runtime.creator
        second = kernel.create_container("/c2")
        runtime.attach_container(second)
        containers = [reader, second]
        plain = machine.alloc_plain_page(b"\x66" * 16)

        vas = runtime.db_vas()
        shadow = {va: bytes(machine.pages[runtime.enclave.pages[va]].content)
                  for va in vas}
        mode = enclave_mode(runtime.enclave.enclave_id)
        honest = {va: runtime.enclave.pages[va] for va in vas}
        all_pas = sorted(machine.pages)

        for _ in range(20):
            op = rng.randrange(4)
            container = containers[rng.randrange(len(containers))]
            va = vas[rng.randrange(len(vas))]
            if op == 0:  # honest in-enclave write via the creator's view
                value = bytes([rng.randrange(256)]) * 8
                try:
                    pa = machine.translate_access(reader.address_space, va,
                                                  Access.WRITE, mode)
                    if not machine.pages[pa].is_epc:
                        continue  # runtime sandbox check: caught
                    machine.write_page(reader.address_space, va, value, mode)
                except errors.Fault:
                    continue  # writer's own view was remapped: caught
                shadow[va] = bytes(
                    machine.pages[honest[va]].content)
            elif op == 1:  # adversary remap to an arbitrary physical page
                kernel.adversary_remap(container.address_space, va,
                                       all_pas[rng.randrange(len(all_pas))])
            elif op == 2:  # kernel restores the honest mapping
                container.address_space.map(va, honest[va])
            else:  # read through the runtime's sandboxed path
                try:
                    pa = machine.translate_access(container.address_space, va,
                                                  Access.READ, mode)
                    if va in runtime.private_vas and \
                            not machine.pages[pa].is_epc:
                        raise errors.IsolationFault("non-protected backing")
                    got = bytes(machine.pages[pa].content)
                    if got != shadow[va]:
                        failures.append(
                            f"schedule {schedule}: wrong bytes at va {va:#x}")
                except (errors.Fault, errors.IsolationFault):
                    pass  # detected
        del plain
    return n_schedules, failures


def tcs_exclusivity_schedules(n_schedules: int = 1000,
                              seed: int = 0) -> Tuple[int, List[str]]:
    """Randomized acquire/enter/aex/resume/exit schedules; after every step
    each TCS must be bound to at most one live thread and the kernel table
    must agree with the hardware state."""
    rng = random.Random(seed)
    failures: List[str] = []
    for schedule in range(n_schedules):
        machine = Machine(epc_capacity_pages=32)
        kernel = Kernel(machine)
        runtime = EnclaveRuntime(machine, kernel)
        runtime.runtime_init(runtime_pages=1, tcs_count=3)
        pids = [runtime.creator.pid]
        for i in range(2):
            c = kernel.create_container(f"/c{i}")
            runtime.attach_container(c)
            pids.append(c.pid)
        suspended = {}

        def check() -> bool:
            live_by_tcs = {}
            for pid, (thread, tcs_va) in runtime.threads.items():
                if thread.live:
                    live_by_tcs.setdefault(tcs_va, []).append(pid)
            for tcs_va, holders in live_by_tcs.items():
                if len(holders) > 1:
                    return False
            for row in runtime.tcs_table.rows:
                tcs = runtime.enclave.tcs_for(row.tcs_va)
                busy = tcs.state is TcsState.BUSY
                if (row.holder is not None) != busy:
                    return False
            return True

        for _ in range(25):
            pid = pids[rng.randrange(len(pids))]
            has_thread = pid in runtime.threads
            action = rng.randrange(3)
            try:
                if not has_thread and action != 2:
                    runtime.enter(pid)
                elif has_thread and pid in suspended and action == 0:
                    # resume from the saved context
                    thread, tcs_va = runtime.threads[pid]
                    container = kernel.containers[pid]
                    new = machine.eresume(container.address_space, tcs_va)
                    runtime.threads[pid] = (new, tcs_va)
                    del suspended[pid]
                elif has_thread and pid not in suspended and action == 0:
                    thread, tcs_va = runtime.threads[pid]
                    machine.aex(thread)
                    suspended[pid] = True
                elif has_thread and pid not in suspended:
                    runtime.exit(pid)
                    suspended.pop(pid, None)
            except (errors.Fault, errors.NoFreeTcs):
                pass
            if not check():
                failures.append(f"schedule {schedule}: exclusivity broken")
                break
    return n_schedules, failures


def environment_swap_detection(n_cases: int = 50,
                               seed: int = 0) -> Tuple[int, List[str]]:
    """Namespace-swap attacks with divergent file content must always be
    flagged by the in-enclave integrity check; identical content stays
    undetectable (and harmless)."""
    rng = random.Random(seed)
    failures: List[str] = []
    for case in range(n_cases):
        machine = Machine(epc_capacity_pages=64)
        kernel = Kernel(machine)
        runtime = EnclaveRuntime(machine, kernel, fs_root="/root-a")
        runtime.runtime_init(runtime_pages=2, tcs_count=2)
        instance = runtime.instance_create(runtime.creator.pid, 1)
        secret = bytes([rng.randrange(256) for _ in range(32)])
        runtime.fs_create(instance, "secret.bin", secret)

        divergent = bytearray(secret)
        divergent[rng.randrange(len(divergent))] ^= 0xFF
        kernel.hostfs.put("/root-evil", "secret.bin", bytes(divergent))
        kernel.adversary_swap_environment(runtime.creator.pid, "/root-evil")
        try:
            runtime.fs_open(runtime.creator.pid, "secret.bin")
            failures.append(f"case {case}: divergent swap not detected")
        except errors.FsIntegrityMismatch:
            pass

        # Identical content under the swapped root is indistinguishable.
        kernel.hostfs.put("/root-same", "secret.bin", secret)
        kernel.adversary_swap_environment(runtime.creator.pid, "/root-same")
        if runtime.fs_open(runtime.creator.pid, "secret.bin") != secret:
            failures.append(f"case {case}: identical swap corrupted read")
    return n_cases, failures


def run_all(seed: int = 0, schedules: int = 1000):
    """Run every probe suite; returns {name: (trials, failures)}."""
    return {
        "remap_enumeration": remap_enumeration(),
        "adversary_schedules": random_adversary_schedules(schedules, seed),
        "tcs_exclusivity": tcs_exclusivity_schedules(schedules, seed + 1),
        "environment_swap": environment_swap_detection(50, seed + 2),
    }
