"""Volumetric pretext training, encoder transfer and evaluation on 3-D volumes.

Volumes are numpy arrays shaped (X, Y, Z); ``arr[i, j, k]`` is voxel (i, j, k).
Intensity volumes are float32, label maps uint8 with values 0-3
(background, white matter, grey matter, CSF).
"""

from ._core import (
    ConfigError,
    MetricError,
    NiftiError,
    PretextModel,
    Settings,
    classification_metrics,
    config_keys,
    evaluate_classification,
    phantom,
    pretrain,
    read_nifti,
    read_nifti_labels,
    reconstruction_metrics,
    segmentation_metrics,
    write_nifti,
    write_phantom_dataset,
)


def settings(**overrides):
    """Settings with dotted keys given as keyword arguments, ``__`` standing for ``.``.

    >>> s = settings(model__width_factor=0.125, train__pretext__epochs=1)
    """
    s = Settings()
    for key, value in overrides.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        s.set(key.replace("__", "."), str(value))
    s.validate()
    return s


__all__ = [
    "ConfigError",
    "MetricError",
    "NiftiError",
    "PretextModel",
    "Settings",
    "classification_metrics",
    "config_keys",
    "evaluate_classification",
    "phantom",
    "pretrain",
    "read_nifti",
    "read_nifti_labels",
    "reconstruction_metrics",
    "segmentation_metrics",
    "settings",
    "write_nifti",
    "write_phantom_dataset",
]
