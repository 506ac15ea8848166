"""How far the data residual R^n sits from the projected reaction P F(u(t_n)).

Sweeps the recording step tau at a fixed horizon and prints the mean relative
gap, its fitted order in tau, and the gap for the semi-implicit identity
R^n = P F(u^{n-1}) that the reference data satisfy exactly.
"""

import argparse

import numpy as np

from leno.dataset import project_trajectories
from leno.metrics import fit_order
from leno.pde_lab import builtin_problem, generate
from leno.spectral_basis import build_basis


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=256)
    ap.add_argument("--P", type=int, default=64)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--horizon", type=float, default=0.04)
    ap.add_argument("--taus", default="0.01,0.005,0.002,0.001")
    args = ap.parse_args()
    prob = builtin_problem("kpp", {"resolution": args.resolution})
    basis = build_basis(prob.domain, "dirichlet", P=args.P)
    taus = [float(t) for t in args.taus.split(",")]
    gaps = []
    print(f"{'tau':>8} {'|R - PF(u^n)|':>14} {'|R - PF(u^n-1)|':>16}")
    for tau in taus:
        traj = generate(prob, args.M, seed=2, n_records=round(args.horizon / tau), tau=tau)
        ds = project_trajectories(traj, [basis])
        F = prob.F(traj.samples)[:, :, 0]
        now = basis.reconstruct(ds.residuals - basis.project(F[:, 1:]))
        lag = basis.reconstruct(ds.residuals - basis.project(F[:, :-1]))
        gap = np.mean(basis.norm(now) / basis.norm(F[:, 1:]))
        ident = np.mean(basis.norm(lag) / basis.norm(F[:, :-1]))
        gaps.append(gap)
        print(f"{tau:8.4f} {gap:14.4e} {ident:16.2e}")
    slope, r2 = fit_order(np.array(taus), np.array(gaps))
    print(f"order in tau: {slope:.3f} (r2 {r2:.4f})")


if __name__ == "__main__":
    main()
