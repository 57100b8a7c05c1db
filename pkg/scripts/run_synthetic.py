"""Self-consistency experiment on a known NL-LFR, driven through CSV files and the CLI.

    python3 scripts/run_synthetic.py --out runs/synthetic

Writes estimation and test records of a stable two-state NL-LFR (one tanh
neuron in the loop), a matching configuration, then runs ``lfrid pipeline``.
The fitted model should reproduce the test output to well below 1% of its
RMS value.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from lfrid.cli import main as cli_main
from lfrid.nllfr import NeuralNet, NlLfrModel, simulate
from lfrid.pipeline import read_metrics
from lfrid.signals import MultisineSpec, SignalRecord, gen_multisine, save_record


def truth() -> NlLfrModel:
    A = np.array([[0.7, 0.3], [-0.3, 0.7]])
    return NlLfrModel(A, [[1.0], [0.5]], [[0.8], [-0.6]], [[1.0, 0.5]], [[1.0, -0.4]],
                      [[0.3]], [[0.1]], [[0.5]], NeuralNet([[1.5]], [0.2], [[1.0]], [0.0]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n", type=int, default=4096, help="samples per period")
    ap.add_argument("--restarts", type=int, default=5)
    args = ap.parse_args()
    data = args.out / "input"
    data.mkdir(parents=True, exist_ok=True)

    model = truth()
    for name, seed in (("est", 0), ("test", 1)):
        f = gen_multisine(MultisineSpec(args.n, 1.0, 0.5 / args.n, 0.4, 1.0, seed))
        # three periods from rest; keep the last one as steady state
        y = simulate(model, np.vstack([f.u] * 3))[0][-args.n:]
        save_record(SignalRecord(f.u, y, 1.0, 1, "multisine"), data / name)

    cfg = {"name": "synthetic",
           "data": {"source": "csv", "estimation_path": "est.csv", "n_u": 1, "n_y": 1,
                    "tests": [{"name": "test", "mode": "steady-state", "path": "test.csv"}]},
           "bla": {"n_x": 2},
           "model": {"structures": [[1, 1]], "restarts": args.restarts},
           "lm": {"max_iter": 200}}
    (data / "config.json").write_text(json.dumps(cfg, indent=2))
    code = cli_main(["pipeline", "--config", str(data / "config.json"),
                     "--out", str(args.out / "run"), "-v"])
    if code:
        raise SystemExit(code)
    for r in read_metrics(args.out / "run" / "metrics.csv"):
        print(f"{r['model']:<6} seed={r['seed']!s:<5} selected={r['selected']!s:<6} "
              f"test RMSE {r['rmse_test']:.3e}")


if __name__ == "__main__":
    main()
