"""Shared fixtures: random rigid object sequences with wrists that come into contact."""
import numpy as np
from scipy.spatial.transform import Rotation

from hoisynth.geometry import ObjectSequence, icosphere, box_mesh


def random_object_sequence(rng: np.random.Generator, frames: int = 20) -> ObjectSequence:
    if rng.random() < 0.5:
        mesh = icosphere(2, float(rng.uniform(0.1, 0.3)))
    else:
        mesh = box_mesh(rng.uniform(0.15, 0.5, size=3), spacing=0.05)
    start = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angles = np.cumsum(rng.uniform(0, 0.1, size=frames))
    rots = np.stack([Rotation.from_rotvec(a * axis).as_matrix() @ start for a in angles])
    trans = np.cumsum(rng.normal(scale=0.03, size=(frames, 3)), axis=0) + [0, 0, 0.8]
    return ObjectSequence(mesh, rots, trans)


def approaching_hands(rng: np.random.Generator, seq: ObjectSequence) -> np.ndarray:
    """(T, 6) wrists: far from the object, then near a random vertex from a random frame on."""
    t_count = len(seq)
    hands = np.zeros((t_count, 2, 3))
    for h in range(2):
        vi = int(rng.integers(len(seq.mesh.vertices)))
        k0 = int(rng.integers(1, t_count)) if rng.random() < 0.85 else t_count
        for t in range(t_count):
            v = seq.vertices(t)[vi]
            if t < k0:
                hands[t, h] = seq.translations[t] + [0.0, 0.0, 1.5] + rng.normal(scale=0.05, size=3)
            else:
                hands[t, h] = v + rng.normal(scale=0.01, size=3)
    return hands.reshape(t_count, 6)
