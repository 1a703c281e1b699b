"""How the final partition depends on reward magnitude and charger layout.

Regions are split until u+ - u- <= eps_abs, so compression depends on the
spread of values relative to eps_abs.  This sweep scales each model's reward
parameters and reports |R|, the space metric and the value range; scale 1
uses the magnitudes +1 / -0.05 for planning and the matching tenfold values
of the package defaults for the other models.

    python3 scripts/reward_scale_sensitivity.py
    python3 scripts/reward_scale_sensitivity.py --scales 0.05 0.1 0.5 1
"""
import argparse
import time

from mla.discounted import DiscountedConfig, mla_discounted
from mla.models import gen_inventory, gen_machine, gen_planning


def builders(scale):
    return {
        "planning (lattice)": lambda: gen_planning(64, charge=1.0 * scale,
                                                   move_cost=0.05 * scale),
        "planning (diagonal)": lambda: gen_planning(64, chargers="diagonal", charge=1.0 * scale,
                                                    move_cost=0.05 * scale),
        "machine": lambda: gen_machine(63, 63, replace_cost=0.5 * scale, earn_slope=1.0 * scale),
        "inventory": lambda: gen_inventory(63, 63, price=0.1 * scale, cost=0.05 * scale),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", type=float, nargs="+", default=[0.1, 1.0])
    ap.add_argument("--eps-abs", type=float, default=0.01)
    ap.add_argument("--eps-float", type=float, default=1e-4)
    args = ap.parse_args(argv)
    cfg = DiscountedConfig(eps_abs=args.eps_abs, eps_float=args.eps_float)
    print("| model | scale | states | regions | space | space < states | value range | s |")
    print("|---|---|---|---|---|---|---|---|")
    for scale in args.scales:
        for name, build in builders(scale).items():
            graph = build()
            t0 = time.perf_counter()
            rep = mla_discounted(graph, cfg)
            elapsed = time.perf_counter() - t0
            lo, hi = rep.state_bounds()
            spread = float(hi.max() - lo.min())
            print(f"| {name} | {scale:g} | {graph.n_states} | {rep.regions} | {rep.space_metric} "
                  f"| {rep.space_metric < graph.n_states} | {spread:.3f} | {elapsed:.1f} |")


if __name__ == "__main__":
    main()
