#!/usr/bin/env python3
"""Recompute per-head and combined accuracy from an `iagn eval --dump-logits` file.

Uses only the standard library so it shares no code with the evaluator.
"""

import argparse
import json
import sys


def argmax(values):
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def recompute(dump):
    heads = dump["heads"]
    correct = {h: 0 for h in heads}
    combined = 0
    samples = dump["samples"]
    for s in samples:
        total = None
        for h in heads:
            logits = s["logits"][h]
            correct[h] += argmax(logits) == s["label"]
            total = list(logits) if total is None else [a + b for a, b in zip(total, logits)]
        combined += argmax(total) == s["label"]
    n = len(samples)
    return {
        "count": n,
        "accuracy": {h: correct[h] / n for h in heads},
        "combined_accuracy": combined / n,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dump", help="JSON written by --dump-logits")
    parser.add_argument("--report", help="eval report to compare against")
    parser.add_argument("--tol", type=float, default=1e-12)
    args = parser.parse_args()

    with open(args.dump) as f:
        result = recompute(json.load(f))
    if args.report:
        with open(args.report) as f:
            report = json.load(f)
        ok = abs(report["combined_accuracy"] - result["combined_accuracy"]) <= args.tol and all(
            abs(report["accuracy"][h] - v) <= args.tol for h, v in result["accuracy"].items()
        )
        result["matches_report"] = ok
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0 if result.get("matches_report", True) else 1


if __name__ == "__main__":
    sys.exit(main())
