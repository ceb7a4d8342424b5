"""Finite-difference gradient checks for every loss in the library.

Every objective (barriers, informed, finite-group matching in all three
strategies, Euclidean, orthogonal, unitary, conformal, invariance, and
the two decomposition modes) is differentiated through the tape and
compared against central finite differences on small random instances.
"""
from equicode.gradcheck import CASES, run_gradcheck

if __name__ == "__main__":
    results = run_gradcheck(instances=5, seed=0)
    print(f"{'loss':<20} {'max relative error':>20}")
    for name in sorted(CASES):
        err = results[name]
        print(f"{name:<20} {err:>20.3e}   {'ok' if err < 1e-4 else 'FAIL'}")
