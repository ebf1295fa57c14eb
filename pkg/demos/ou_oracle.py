"""Monte Carlo semigroup estimates against the Ornstein-Uhlenbeck closed form.

    python3 demos/ou_oracle.py [paths]
"""
import sys

import numpy as np

from invlab.sde import SimConfig
from invlab.semigroup import GaussianObservable, OUSpec, estimate_Ptf, ou_semigroup


def main(paths: int = 20_000):
    spec = OUSpec(np.eye(2), -np.eye(2))
    f = GaussianObservable(1.0)
    x = (1.0, 1.0)
    print(f"{'t':>5}  {'estimate':>9}  {'exact':>9}  {'SE':>8}  {'z':>6}")
    for t in (0.1, 0.25, 0.5, 1.0, 2.0):
        est = estimate_Ptf(spec.coefficients(), f, x, t, SimConfig(x=x, t=t, h=1e-3, paths=paths, seed=0))
        exact = ou_semigroup(spec, f, x, t)
        print(f"{t:>5g}  {est.value:>9.5f}  {exact:>9.5f}  {est.se:>8.1e}  {(est.value - exact) / est.se:>+6.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20_000)
