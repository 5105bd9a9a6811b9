import numpy as np

from oadet.enums.random_stream import RandomStream


def derive_rng(seed: int, stream: RandomStream, *keys: int) -> np.random.Generator:
    """
    Derive an independent generator from the run seed.

    The generator only depends on its arguments, so a resumed run draws the
    same numbers as an uninterrupted one.

    :param seed: The run seed.
    :param stream: The purpose of the stream.
    :param keys: Extra integers (epoch, batch index, ...) mixed into the seed.
    :return: A fresh numpy generator.
    """
    return np.random.default_rng([seed, int(stream), *keys])
