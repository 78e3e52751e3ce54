"""SWF trace ingestion, synthetic workload generation and job to VM-type mapping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np

from .domain import VM_TABLE, VmType

logger = logging.getLogger(__name__)

SUBMIT_INTERVAL_S = 600
SWF_FIELDS = 18
TYPE_SHARES = {
    VmType.TYPE_1: 0.40,
    VmType.TYPE_2: 0.30,
    VmType.TYPE_3: 0.20,
    VmType.TYPE_4: 0.08,
    VmType.TYPE_5: 0.02,
}
MIN_RUN_S = 600.0
MAX_RUN_S = 6 * 3600.0


class SwfField(IntEnum):
    JOB_ID = 0
    SUBMITTED = 1
    WAIT_TIME = 2
    RUN_TIME = 3
    ALLOC_PROCS = 4
    AVG_CPU = 5
    USED_MEM = 6
    REQ_PROCS = 7
    REQ_TIME = 8
    REQ_MEM = 9
    STATUS = 10
    USER_ID = 11
    GROUP_ID = 12
    EXECUTABLE = 13
    QUEUE = 14
    PARTITION = 15
    PRECEDING_JOB = 16
    THINK_TIME = 17


class SwfParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class Job:
    job_id: int
    submit_time_s: float
    run_time_s: float
    pes: int
    mem_req: Optional[float] = None  # GB, total over all processors

    def __post_init__(self):
        if self.run_time_s <= 0:
            raise ValueError(f"job {self.job_id}: run time must be positive")
        if self.pes < 1:
            raise ValueError(f"job {self.job_id}: needs at least one PE")


@dataclass(frozen=True)
class Cloudlet:
    job: Job
    vm_type: VmType
    batch_index: int

    def to_dict(self) -> dict:
        return {
            "job_id": self.job.job_id,
            "submit_time_s": self.job.submit_time_s,
            "run_time_s": self.job.run_time_s,
            "pes": self.job.pes,
            "mem_req": self.job.mem_req,
            "vm_type": int(self.vm_type),
            "batch_index": self.batch_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Cloudlet:
        job = Job(d["job_id"], d["submit_time_s"], d["run_time_s"], d["pes"], d.get("mem_req"))
        return cls(job, VmType(d["vm_type"]), d["batch_index"])


def batch_index(submit_time_s: float, interval_s: float = SUBMIT_INTERVAL_S) -> int:
    return int(math.floor(submit_time_s / interval_s))


def _number(text: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise SwfParseError(line_no, f"not a number: {text!r}") from None


def parse_swf(lines: Iterable[str]) -> list[Job]:
    """Read jobs from SWF text, skipping ';' comment lines.

    Jobs with a non-positive run time or processor count are dropped (a
    warning reports how many).
    """
    jobs = []
    dropped = 0
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith(";"):
            continue
        fields = text.split()
        if len(fields) < SWF_FIELDS:
            raise SwfParseError(line_no, f"expected {SWF_FIELDS} fields, got {len(fields)}")
        values = [_number(f, line_no) for f in fields[:SWF_FIELDS]]
        pes = int(values[SwfField.ALLOC_PROCS])
        if pes == -1:
            pes = int(values[SwfField.REQ_PROCS])
        run = values[SwfField.RUN_TIME]
        if run <= 0 or pes <= 0:
            dropped += 1
            continue
        req_mem = values[SwfField.REQ_MEM]
        # SWF memory is KB per processor
        mem_gb = req_mem * pes / 2**20 if req_mem > 0 else None
        jobs.append(Job(int(values[SwfField.JOB_ID]), values[SwfField.SUBMITTED], run, pes, mem_gb))
    if dropped:
        logger.warning("dropped %d SWF jobs with non-positive run time or processors", dropped)
    return jobs


def parse_swf_file(path) -> list[Job]:
    with open(path) as fh:
        return parse_swf(fh)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def to_swf_line(job: Job) -> str:
    row = ["-1"] * SWF_FIELDS
    row[SwfField.JOB_ID] = str(job.job_id)
    row[SwfField.SUBMITTED] = _fmt(job.submit_time_s)
    row[SwfField.RUN_TIME] = _fmt(job.run_time_s)
    row[SwfField.ALLOC_PROCS] = str(job.pes)
    row[SwfField.REQ_PROCS] = str(job.pes)
    if job.mem_req is not None:
        row[SwfField.REQ_MEM] = _fmt(job.mem_req * 2**20 / job.pes)
    row[SwfField.STATUS] = "1"
    return " ".join(row)


def vm_type_for(pes: int) -> VmType:
    """Smallest VM type with at least ``pes`` cores, capped at the largest type."""
    if pes < 1:
        raise ValueError("pes must be >= 1")
    for vm_type in VmType:
        if VM_TABLE[vm_type][0] >= pes:
            return vm_type
    return VmType.TYPE_5


def cloudlets_from_jobs(jobs: Iterable[Job], interval_s: float = SUBMIT_INTERVAL_S) -> list[Cloudlet]:
    out = [Cloudlet(j, vm_type_for(j.pes), batch_index(j.submit_time_s, interval_s)) for j in jobs]
    return sorted(out, key=lambda c: (c.job.submit_time_s, c.job.job_id))


def type_counts(n: int) -> dict:
    """Largest-remainder apportionment of ``n`` over the type shares.

    Remainder ties go to the type with the larger share.
    """
    quotas = {t: n * share for t, share in TYPE_SHARES.items()}
    counts = {t: int(math.floor(q)) for t, q in quotas.items()}
    left = n - sum(counts.values())
    by_remainder = sorted(TYPE_SHARES, key=lambda t: (-(quotas[t] - counts[t]), -TYPE_SHARES[t], t))
    for t in by_remainder[:left]:
        counts[t] += 1
    return counts


def synthesize(n: int, duration_s: float = 86_400.0, seed: int = 0,
               interval_s: float = SUBMIT_INTERVAL_S) -> list[Cloudlet]:
    """``n`` cloudlets with the reference type mix, arrivals spread over ``duration_s``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([int(seed), 0x5717])
    types = [t for t, c in type_counts(n).items() for _ in range(c)]
    types = [types[i] for i in rng.permutation(n)]
    arrivals = rng.uniform(0.0, duration_s, n)
    runs = np.exp(rng.uniform(math.log(MIN_RUN_S), math.log(MAX_RUN_S), n))
    rows = []
    for k in range(n):
        submit = math.floor(arrivals[k] / interval_s) * interval_s
        pes = VM_TABLE[types[k]][0]
        job = Job(k + 1, float(submit), float(runs[k]), pes)
        rows.append(Cloudlet(job, types[k], batch_index(submit, interval_s)))
    return sorted(rows, key=lambda c: (c.job.submit_time_s, c.job.job_id))


def save_cloudlets(cloudlets: Iterable[Cloudlet], path) -> None:
    with open(path, "w") as fh:
        for c in cloudlets:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")


def load_cloudlets(path) -> list[Cloudlet]:
    with open(path) as fh:
        return [Cloudlet.from_dict(json.loads(line)) for line in fh if line.strip()]
