"""Relative invariance residuals of the registered densities and a negative control.

    python3 demos/weak_form_residuals.py
"""
from invlab.gallery import instantiate, list_cases
from invlab.weak_form import default_battery, invariance_residual


def main():
    for case_id, _ in list_cases():
        case = instantiate(case_id)
        for m in case.measures:
            tests = default_battery(case.cf.d, seed=0, **m.battery)
            rep = invariance_residual(case.cf, m.density, tests, tol=1e-6)
            print(f"{case_id:<40} {m.role:<9} {m.density.name:<28} max rel {rep.max_relative:9.2e}  {rep.verdict}")
    case = instantiate("constant-drift-two-measures")
    rep = invariance_residual(case.cf, case.extras["negative_control"], default_battery(2, seed=0), tol=1e-6)
    print(f"{'negative control exp(<c,x>)':<50} max rel {rep.max_relative:9.2e}  {rep.verdict}")


if __name__ == "__main__":
    main()
