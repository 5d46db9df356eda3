"""Walk through one FiLM-ensemble forward pass by hand.

A batch is copied once per member (member-major), normalized with statistics
shared by every member, then each member block gets its own (gamma, beta).
The same network therefore produces M different predictions while only the
FiLM rows are duplicated.

    python3 demos/film_mechanics.py --members 4
"""

import argparse

import numpy as np

from filmens import ModelConfig, build_model, count_parameters, no_grad, replicate_batch, split_members
from filmens import tensor as T


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--members", type=int, default=4)
    ap.add_argument("--rho", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    M = args.members

    x = np.random.default_rng(args.seed).standard_normal((3, 2)).astype(np.float32)
    rep = replicate_batch(T.Tensor(x), M)
    print(f"input batch {x.shape} -> replicated {rep.shape}; rows [m*3, (m+1)*3) belong to member m")
    blocks = split_members(rep, M)
    print("every block is a copy of the input:", all((b.data == x).all() for b in blocks))

    model = build_model(ModelConfig("mlp", (2,), 4, M=M, rho=args.rho), seed=args.seed)
    first = model.film_layers()[0]
    print(f"\nfirst FiLM layer: gamma {first.film.gamma.shape}, beta {first.film.beta.shape}")
    print("per-member gamma[:, :4]:\n", np.round(first.film.gamma.data[:, :4], 3))

    with no_grad():
        logits = model(x, "eval")
    probs = [T.softmax_np(l.data) for l in logits]
    print("\nclass probabilities for sample 0, one row per member:")
    for m, p in enumerate(probs):
        print(f"  member {m}: {np.round(p[0], 3)}")
    print(f"  ensemble: {np.round(np.mean([p[0] for p in probs], axis=0), 3)}")

    budget = count_parameters(model)
    print(f"\nshared weights {budget.shared_count}, extra for {M} members {budget.extra_vs_single} "
          f"({100 * budget.overhead_ratio:.2f}% of a single model)")
    small = count_parameters(build_model(ModelConfig("conv2d_small", (3, 32, 32), 10, M=16)))
    print(f"conv2d_small with 16 members: {small.extra_vs_single} extra parameters "
          f"({100 * small.overhead_ratio:.2f}% overhead)")


if __name__ == "__main__":
    main()
