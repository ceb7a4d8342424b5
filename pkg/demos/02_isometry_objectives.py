"""The symmetry losses vanish exactly at their group's fixed points.

Random rigid motions leave the Euclidean loss at numerical zero,
rotations leave the inner-product loss at zero, and similarity
transforms (including pure dilations) leave the conformal loss at zero —
while generic perturbations do not.
"""
import numpy as np

from equicode.objectives import (conformal_loss, euclidean_loss,
                                 orthogonal_loss)

rng = np.random.default_rng(0)
z0 = rng.normal(size=(16, 3))


def rigid(z):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return z @ q.T + rng.normal(size=3)


if __name__ == "__main__":
    iso = np.stack([z0, rigid(z0), rigid(z0)])
    print(f"euclidean loss under rigid motions:  {euclidean_loss(iso).item():.3e}")
    print(f"conformal loss under rigid motions:  {conformal_loss(iso).item():.3e}")

    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rot = np.stack([z0, z0 @ q.T])
    print(f"orthogonal loss under a rotation:    {orthogonal_loss(rot).item():.3e}")

    dil = np.stack([z0, 3.0 * z0])
    print(f"conformal loss under a dilation:     {conformal_loss(dil).item():.3e}")
    print(f"euclidean loss under the same dilation (not an isometry): "
          f"{euclidean_loss(dil).item():.3e}")

    noisy = np.stack([z0, z0 + 0.1 * rng.normal(size=z0.shape)])
    print(f"euclidean loss under random noise:   {euclidean_loss(noisy).item():.3e}")
