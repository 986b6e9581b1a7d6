"""Variant x repetition sweeps and their CSV / JSON reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from ..model import NetworkConfig
from .data import Dataset
from .protocol import KS, EvalSplit, Factory, RepResult, evaluate_once, make_split, mean

log = logging.getLogger(__name__)

CSV_HEADER = ("dataset", "variant", "repetition", "n1", "n5", "n10")


@dataclass
class SweepResult:
    dataset: str
    seed: int
    repetitions: int
    results: dict[str, list[RepResult]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def averages(self, variant: str) -> dict[int, float]:
        return {k: mean(r.ndcg[k] for r in self.results[variant]) for k in KS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for variant, reps in self.results.items():
            for r in reps:
                w.writerow([self.dataset, variant, r.repetition] + [f"{r.ndcg[k]:.10f}" for k in KS])
            avg = self.averages(variant)
            w.writerow([self.dataset, variant, "mean"] + [f"{avg[k]:.10f}" for k in KS])
        return buf.getvalue()

    def to_json(self) -> str:
        variants = {}
        for variant, reps in self.results.items():
            avg = self.averages(variant)
            variants[variant] = {
                **{f"n{k}": avg[k] for k in KS},
                "repetitions": [
                    {"repetition": r.repetition, **{f"n{k}": r.ndcg[k] for k in KS}, "report": r.report}
                    for r in reps
                ],
            }
        doc = {
            "dataset": self.dataset,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "variants": variants,
            "failures": dict(sorted(self.failures.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'variant':<14} {'NDCG@1':>8} {'NDCG@5':>8} {'NDCG@10':>8}"]
        for variant in self.results:
            avg = self.averages(variant)
            lines.append(f"{variant:<14} {avg[1]:>8.4f} {avg[5]:>8.4f} {avg[10]:>8.4f}")
        for variant, err in sorted(self.failures.items()):
            lines.append(f"{variant:<14} FAILED: {err}")
        return "\n".join(lines)


def sweep(
    ds: Dataset,
    variants: Sequence[str],
    config: NetworkConfig,
    repetitions: int = 3,
    parallelism: int = 1,
    split: EvalSplit | None = None,
    factory: Factory | None = None,
) -> SweepResult:
    """One private engine per (variant, repetition); a failing variant is reported, not raised."""
    split = split or make_split(ds, config.seed, repetitions)
    jobs = [(v, r) for v in variants for r in range(repetitions)]

    def run(job: tuple[str, int]) -> RepResult | Exception:
        variant, rep = job
        try:
            return evaluate_once(ds, split, config.with_(variant=variant), rep, factory)
        except Exception as exc:  # isolate per variant
            log.error("variant %s repetition %d failed: %s", variant, rep, exc)
            return exc

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    result = SweepResult(ds.name, config.seed, repetitions)
    for (variant, _), out in zip(jobs, outcomes):
        if variant in result.failures:
            continue
        if isinstance(out, Exception):
            result.failures[variant] = f"{type(out).__name__}: {out}"
            result.results.pop(variant, None)
        else:
            result.results.setdefault(variant, []).append(out)
    return result
