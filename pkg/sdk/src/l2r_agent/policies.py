"""Built-in reference policies: a smoke-test randomizer and a lane centerer."""

import random

TARGET_SPEED = 8.0  # m/s
ACCEL_GAIN = 0.25
STEER_GAIN = 2.0  # above 1 so a band hugging the raster edge saturates steering


class RandomPolicy:
    """Uniform actions in [-1, 1]^2, seedable for reproducible smoke runs."""

    def __init__(self, seed=None):
        self._rng = random.Random(seed)

    def __call__(self, obs):
        return self._rng.uniform(-1.0, 1.0), self._rng.uniform(-1.0, 1.0)


random_policy = RandomPolicy()


def center_policy(obs):
    """Steer toward the drivable band's centroid, cruise at TARGET_SPEED.

    Steering is proportional to the centroid's lateral offset in the front
    raster, normalized to [-1, 1] with positive meaning left. Anything
    malformed about the observation earns a zero action, never a crash.
    """
    try:
        raster = obs["cameras"]["front"]
        speed = float(obs["speed"])
        half = (len(raster[0]) - 1) / 2.0
        count = 0
        weighted = 0.0
        for row in raster:
            for j, cell in enumerate(row):
                if cell:
                    count += 1
                    weighted += half - j  # columns count rightward from the left edge
        if count == 0 or half <= 0:
            return 0.0, 0.0
        offset = weighted / (count * half)
        steering = max(-1.0, min(1.0, STEER_GAIN * offset))
        acceleration = max(-1.0, min(1.0, ACCEL_GAIN * (TARGET_SPEED - speed)))
        return steering, acceleration
    except (KeyError, IndexError, TypeError, ValueError):
        return 0.0, 0.0
