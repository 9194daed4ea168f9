from .augment import (
    IDENTITY_AUGMENT,
    AugmentedPair,
    AugmentParams,
    apda_arrays,
    make_apda_batch,
    standard_augment,
)
from .corruptions import CORRUPTIONS, SEVERITY_GRID, corrupt, corrupt_batch
from .dataset import TRAIN, VAL, DatasetError, DomainSample, MultiDomainDataset, load_folder_dataset
from .synth import DOMAIN_TRANSFORMS, SynthSpec, synth_domains

__all__ = [
    "AugmentParams",
    "AugmentedPair",
    "CORRUPTIONS",
    "DOMAIN_TRANSFORMS",
    "DatasetError",
    "DomainSample",
    "IDENTITY_AUGMENT",
    "MultiDomainDataset",
    "SEVERITY_GRID",
    "SynthSpec",
    "TRAIN",
    "VAL",
    "apda_arrays",
    "corrupt",
    "corrupt_batch",
    "load_folder_dataset",
    "make_apda_batch",
    "standard_augment",
    "synth_domains",
]
