BACKGROUND_CLASS = 0
UNLABELED = 0xFFFF

PROBABILITY_FLOOR = 1e-12
UNIFORM_CLAMP = 1e-12

SEQUENCE_MAGIC = b"LAPF"
SEQUENCE_VERSION = 1
CHECKPOINT_MAGIC = b"LAPC"
CHECKPOINT_VERSION = 1

TRAIN_SPLIT = "train"
TEST_SPLIT = "test"
