from enum import IntEnum


class RandomStream(IntEnum):
    """Independent random streams derived from one run seed."""

    INIT = 0
    OFFSET = 1
    SHUFFLE = 2
    NOISE = 3
    SYNTHETIC = 4
