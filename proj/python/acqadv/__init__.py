"""LeNet MNIST classifier, FGS/FGV adversarial examples and the acquisition
transforms that undo them."""

from ._core import (
    GRID_ROWS,
    ConfigError,
    ConsistencyError,
    ContractError,
    Dataset,
    FormatError,
    IoError,
    LeNet,
    TrainingError,
    add_noise,
    binarize,
    blur,
    crop_resize,
    evaluate,
    fgs_step,
    fgv_step,
    find_minimal_adversarial,
    five_crops,
    load_dataset,
    load_idx,
    otsu_threshold,
    perturbation_metrics,
    risk_majority_tail,
    risk_single_term,
    save_dataset,
    train,
    transform,
    translate_right,
)

__all__ = [name for name in dir() if not name.startswith("_")]
