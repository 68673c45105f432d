"""Grid oracles for the single-pair closed forms used in the tests.

Best-response iteration on a 1e-4 price grid for the duopoly, and a plain
grid argmax for the monopoly.  Deliberately does not import the package.
"""
import numpy as np

GRID = np.round(np.arange(0, 10001) * 1e-4, 10)


def duopoly_profit(p_own, p_rival, D, c, p_max=1.0):
    demand = np.maximum(D * (0.5 - p_own / p_max + p_rival / (2 * p_max)), 0.0)
    return (p_own - c) * demand


def best_response_iteration(D=40.0, c=0.0, iters=200):
    p1 = p2 = 1.0
    for _ in range(iters):
        p1_new = GRID[np.argmax(duopoly_profit(GRID, p2, D, c))]
        p2_new = GRID[np.argmax(duopoly_profit(GRID, p1_new, D, c))]
        if p1_new == p1 and p2_new == p2:
            break
        p1, p2 = p1_new, p2_new
    return p1, p2


def monopoly_grid(D=40.0, c=0.1, p_max=1.0):
    profit = (GRID - c) * D * (1 - GRID / p_max)
    return GRID[np.argmax(profit)]


if __name__ == "__main__":
    for c in (0.0, 0.1):
        print(f"duopoly c={c}: best-response fixed point", best_response_iteration(c=c))
    print("monopoly c=0.1: grid argmax", monopoly_grid())
    # demand scale: the argmax does not move with D
    for D in (10.0, 40.0, 80.0):
        print(f"duopoly c=0.1 D={D}:", best_response_iteration(D=D, c=0.1))
