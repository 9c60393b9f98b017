"""Power of the sup-score test as a function of the number of grid points.

The column ``true`` evaluates Z only at the generating (gamma0, gamma1), the
best case when the selection parameters are known.

    python scripts/grid_size_power.py --rho 0.6 --points 1,9,100 --replicates 200
"""
import argparse
import sys

import numpy as np

from copas_bias.rng import spawn
from copas_bias.scoretest import bootstrap_pvalue, fixed_grid
from copas_bias.sim import SimConfig, generate


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--points", default="1,9,100")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--b-boot", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--alpha", type=float, default=0.05)
    args = p.parse_args(argv)

    cfg = SimConfig(n=args.n, rho=args.rho)
    sizes = [int(v) for v in args.points.split(",")]
    truth = np.array([[cfg.gamma0, cfg.gamma1]])
    pvals = {k: [] for k in [*sizes, "true"]}
    for r, child in enumerate(spawn(args.seed, args.replicates)):
        data_ss, grid_ss, boot_ss = spawn(child, 3)
        data = generate(cfg, np.random.default_rng(data_ss))
        grid_seed = int(grid_ss.generate_state(1)[0])
        for k in sizes:
            pvals[k].append(bootstrap_pvalue(data, fixed_grid(k, grid_seed), args.b_boot,
                                             seed=boot_ss).p_value)
        pvals["true"].append(bootstrap_pvalue(data, truth, args.b_boot, seed=boot_ss).p_value)
        if (r + 1) % 20 == 0:
            print(f"{r + 1}/{args.replicates}", file=sys.stderr)
    print("points,rejection_rate")
    for k, v in pvals.items():
        print(f"{k},{np.mean(np.array(v) <= args.alpha):.4f}")


if __name__ == "__main__":
    main()
