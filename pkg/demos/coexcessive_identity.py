"""The dual semigroup leaves h = rho / rho_tilde unchanged, while its total mass leaks.

Uses the one-coordinate case with drift (1/2 + e^{-x}/2), rho = e^x and
rho_tilde = e^{x - e^{-x}}, so h = exp(-e^{-x}).

    python3 demos/coexcessive_identity.py [paths]
"""
import sys

import numpy as np

from invlab.gallery import instantiate
from invlab.sde import SimConfig
from invlab.semigroup import coexcessive_check, estimate_dual_Ptf


def main(paths: int = 20_000):
    case = instantiate("dual-nonconservative", d=1, i=1)
    co = case.extras["coexcessive"]
    sim = SimConfig(x=co["points"][0], t=co["t"], h=1e-3, scheme="adaptive", R_kill=10.0, paths=paths, seed=0)
    for r in coexcessive_check(case.cf, co["rho"], co["rho_tilde"], co["points"], co["t"], sim, h=co["h"]):
        print(f"x = {r.x[0]:>4g}: h = {r.h:.5f}, dual estimate {r.estimate:.5f} +- {r.se:.1e}, "
              f"killed {r.killed_fraction:.3f}, {'pass' if r.passed else 'fail'}")
    one = lambda Y: np.ones(len(Y))  # noqa: E731
    for t in (0.25, 1.0, 2.0):
        est = estimate_dual_Ptf(case.cf, co["rho_tilde"], one, (0.0,), t, sim.replace(t=t))
        print(f"dual mass at t = {t:g} from 0: {est.value:.4f} +- {est.se:.1e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20_000)
