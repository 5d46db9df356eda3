"""How the init gain and the member count shape ensemble diversity.

Trains the MLP on overlapping Gaussian blobs for a grid of gains (rho) and
member counts (M) and prints accuracy, calibration and diversity per cell,
averaged over seeds. Larger rho spreads the initial FiLM rows further apart;
more members give more pairs that can disagree.

    python3 demos/diversity_sweep.py --epochs 20 --seeds 1,2
"""

import argparse

import numpy as np

from filmens import ModelConfig, OptimizerConfig, TrainConfig, build_model, evaluate, gen_overlap_blobs, train
from filmens import train_test_split
from filmens.metrics import accuracy, disagreement, ece, pairwise_kl


def run(M, rho, seed, epochs):
    ds = gen_overlap_blobs(4, 750, seed=seed)
    tr, te = train_test_split(ds, 1 / 3, seed=seed)
    model = build_model(ModelConfig("mlp", (2,), 4, M=M, rho=rho), seed=seed)
    model, _ = train(model, tr, TrainConfig(OptimizerConfig(epochs=epochs), seed=seed))
    p = evaluate(model, te)
    div = (disagreement(p), pairwise_kl(p)) if M > 1 else (0.0, 0.0)
    return accuracy(p), ece(p), *div


def table(title, cells, epochs, seeds):
    print(f"\n{title}")
    print(f"{'M':>3} {'rho':>6} {'acc':>7} {'ece':>7} {'disagree':>9} {'kl':>9}")
    for M, rho in cells:
        acc, e, d, kl = np.mean([run(M, rho, s, epochs) for s in seeds], axis=0)
        print(f"{M:>3} {rho:>6g} {acc:>7.4f} {e:>7.4f} {d:>9.4f} {kl:>9.5f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seeds", default="1,2,3")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    table("gain sweep (M=4)", [(4, rho) for rho in (0.01, 1.0, 2.0, 4.0)], args.epochs, seeds)
    table("member sweep (rho=2)", [(M, 2.0) for M in (1, 2, 4, 8)], args.epochs, seeds)


if __name__ == "__main__":
    main()
