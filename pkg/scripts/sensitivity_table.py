"""Adjusted pooled mean over a (gamma0, gamma1) sweep, printed as a table.

    python scripts/sensitivity_table.py studies.csv
"""
import argparse

import numpy as np
from scipy.special import ndtr

from copas_bias.dataio import read_csv
from copas_bias.estimation import fit_null, sensitivity_sweep


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("input")
    p.add_argument("--gamma0", default="-2,-1,0,1,2")
    p.add_argument("--gamma1", default="0,0.5,1,1.5,2")
    args = p.parse_args(argv)

    data = read_csv(args.input)
    g0 = [float(v) for v in args.gamma0.split(",")]
    g1 = [float(v) for v in args.gamma1.split(",")]
    null = fit_null(data)
    fits = sensitivity_sweep(data, g0, g1)
    print(f"random-effects fit: mu={null.mu_hat:.4f} tau2={null.tau2_hat:.4f} (n={data.n})")
    print("gamma0 gamma1  P(select)    mu_adj  95% CI                rho_hat")
    for f in fits:
        # average selection probability of the observed studies
        prob = float(np.mean(ndtr(f.gamma0 + f.gamma1 / data.s)))
        flag = " *" if f.warnings else ""
        print(f"{f.gamma0:6.2f} {f.gamma1:6.2f}  {prob:9.3f}  {f.mu_adj:8.4f}  "
              f"({f.mu_ci[0]:8.4f}, {f.mu_ci[1]:8.4f})  {f.rho_hat:7.3f}{flag}")


if __name__ == "__main__":
    main()
