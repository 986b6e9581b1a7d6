"""Golden run reports: re-run each fixture under the mock backend and byte-compare.

Goldens are written only on explicit request and never overwritten unless
forced, so a semantic change always shows up as a reviewable diff.
"""

from __future__ import annotations

import argparse
import difflib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import load_config
from .errors import GoldenMismatch
from .runner import run_config

DEFAULT_ROOT = Path(__file__).resolve().parents[2] / "fixtures"


@dataclass(frozen=True)
class GoldenResult:
    fixture: str
    status: str  # "pass" | "fail" | "unverified"
    diff: tuple[str, ...] = ()


def fixture_names(root: Path = DEFAULT_ROOT) -> list[str]:
    return sorted(p.parent.name for p in root.glob("*/config.json"))


def render_report(root: Path, name: str) -> str:
    cfg = load_config(root / name / "config.json").with_overrides({"backend": "mock"})
    engine = run_config(cfg)
    return json.dumps(engine.report(), indent=2, sort_keys=True) + "\n"


def golden_path(root: Path, name: str) -> Path:
    return root / "goldens" / f"{name}.run_report.json"


def check_fixture(root: Path, name: str) -> GoldenResult:
    path = golden_path(root, name)
    if not path.exists():
        return GoldenResult(name, "unverified")
    expected = path.read_text(encoding="utf-8")
    actual = render_report(root, name)
    if actual == expected:
        return GoldenResult(name, "pass")
    diff = difflib.unified_diff(
        expected.splitlines(), actual.splitlines(), f"golden/{name}", f"actual/{name}", lineterm=""
    )
    return GoldenResult(name, "fail", tuple(diff))


def verify_goldens(root: Path = DEFAULT_ROOT, strict: bool = False) -> list[GoldenResult]:
    """Check every fixture in parallel; with ``strict`` the first failure raises."""
    names = fixture_names(root)
    with ThreadPoolExecutor(max_workers=max(1, len(names))) as pool:
        results = list(pool.map(lambda n: check_fixture(root, n), names))
    if strict:
        for r in results:
            if r.status == "fail":
                raise GoldenMismatch(r.fixture, list(r.diff))
    return results


def write_golden(root: Path, name: str, force: bool = False) -> Path:
    path = golden_path(root, name)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; review the diff and pass force=True to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(root, name), encoding="utf-8")
    return path


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description="verify or write golden run reports")
    p.add_argument("--root", type=Path, default=DEFAULT_ROOT)
    p.add_argument("--write", nargs="*", metavar="FIXTURE", help="write goldens for fixtures lacking one")
    p.add_argument("--force", action="store_true", help="replace existing goldens")
    args = p.parse_args(argv)
    if args.write is not None:
        for name in args.write or fixture_names(args.root):
            if args.force or not golden_path(args.root, name).exists():
                print(f"wrote {write_golden(args.root, name, args.force)}")
        return 0
    failed = 0
    for r in verify_goldens(args.root):
        print(f"{r.fixture}: {r.status}")
        for line in r.diff:
            print("  " + line)
        failed += r.status == "fail"
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
