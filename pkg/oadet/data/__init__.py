from .chunking import (
    TrainingSample,
    chunk_training_samples,
    draw_offset,
    future_features,
    future_labels,
)
from .manifest import Dataset, DatasetManifest, load_dataset, load_split, write_dataset
from .sequence import FeatureSequence, decode_sequence, encode_sequence, load_sequence, save_sequence
from .synthetic import SyntheticConfig, generate_synthetic, synthetic_prototypes
