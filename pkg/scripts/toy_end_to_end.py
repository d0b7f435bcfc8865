"""Generate a toy portfolio and run every CLI step on it.

Usage: python3 scripts/toy_end_to_end.py OUT_DIR [--n-claims N] [--seed S]
"""

import argparse
import sys
from pathlib import Path

from microres.cli import main as cli


def run(*args: str) -> None:
    print("microres", " ".join(args), flush=True)
    code = cli(list(args))
    if code:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--n-claims", type=int, default=5_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--as-of", default="2012-12-31")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    root = Path(args.out_dir)
    data, run_dir = root / "data", root / "run"
    tx = str(data / "transactions.csv")
    run("generate", "--seed", str(args.seed), "--n-claims", str(args.n_claims), "--as-of", args.as_of,
        "--out-dir", str(data), "--force")
    run("ingest", "--transactions", tx, "--as-of", args.as_of, "--out-dir", str(data), "--force")
    run("fit", "--transactions", tx, "--as-of", args.as_of, "--out-dir", str(run_dir), "--force")
    run("simulate", "--transactions", tx, "--as-of", args.as_of, "--seed", str(args.seed), "--workers",
        str(args.workers), "--payment-mode", "sample", "--out-dir", str(run_dir), "--force")
    run("evaluate", "--claim-draws", str(run_dir / "claim_draws.csv"), "--truth", str(data / "truth.csv"),
        "--out-dir", str(run_dir), "--force")
    run("chainladder", "--triangle", str(data / "triangle.csv"), "--bootstrap", "1000", "--seed", str(args.seed),
        "--out-dir", str(run_dir), "--force")
    run("ibnr", "--triangle", str(data / "triangle.csv"), "--seed", str(args.seed), "--out-dir", str(run_dir),
        "--force")
    run("binning", "--out-dir", str(run_dir), "--force")
    run("report", "--out-dir", str(run_dir), "--force")
    print((run_dir / "report.txt").read_text())


if __name__ == "__main__":
    main()
